//! Equirectangular local tangent plane around a reference coordinate.

use serde::{Deserialize, Serialize};

use super::MapError;
use crate::geom::Vec2;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub ref_lat: f64,
    pub ref_lon: f64,
    pub earth_radius: f64,
}

impl Projection {
    pub fn new(ref_lat: f64, ref_lon: f64) -> Self {
        Self { ref_lat, ref_lon, earth_radius: EARTH_RADIUS_M }
    }

    /// x grows east, y grows north, both in meters.
    pub fn project(&self, lat: f64, lon: f64) -> Result<Vec2, MapError> {
        check_domain(lat, lon)?;
        let x = self.earth_radius * self.ref_lat.to_radians().cos() * (lon - self.ref_lon).to_radians();
        let y = self.earth_radius * (lat - self.ref_lat).to_radians();
        Ok(Vec2::new(x, y))
    }

    /// Inverse of [`Projection::project`]; returns (lat, lon) in degrees.
    pub fn unproject(&self, p: Vec2) -> (f64, f64) {
        let lat = self.ref_lat + (p.y / self.earth_radius).to_degrees();
        let lon = self.ref_lon + (p.x / (self.earth_radius * self.ref_lat.to_radians().cos())).to_degrees();
        (lat, lon)
    }
}

fn check_domain(lat: f64, lon: f64) -> Result<(), MapError> {
    if !(lat.abs() <= 90.0) || !(lon.abs() <= 180.0) {
        return Err(MapError::Domain { lat, lon });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_maps_to_origin() {
        let p = Projection::new(40.0, -83.0);
        assert_eq!(p.project(40.0, -83.0).unwrap(), Vec2::new(0.0, 0.0));
    }

    #[test]
    fn northward_offset() {
        let p = Projection::new(40.0, -83.0);
        let v = p.project(40.001, -83.0).unwrap();
        // 6 371 000 * 0.001 * pi / 180
        assert!((v.y - 111.194_926_644_558_73).abs() < 1e-6);
        assert_eq!(v.x, 0.0);
    }

    #[test]
    fn eastward_offset_scaled_by_latitude() {
        let p = Projection::new(40.0, 10.0);
        let v = p.project(40.0, 10.001).unwrap();
        let expected = 6_371_000.0 * 0.001_f64.to_radians() * 40.0_f64.to_radians().cos();
        assert!((v.x - expected).abs() < 1e-9);
        assert!((v.x - 85.180).abs() < 1e-3);
    }

    #[test]
    fn out_of_range_rejected() {
        let p = Projection::new(0.0, 0.0);
        assert!(matches!(p.project(91.0, 0.0), Err(MapError::Domain { .. })));
        assert!(matches!(p.project(0.0, -180.5), Err(MapError::Domain { .. })));
        assert!(p.project(f64::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_10km(ref_lat in -60.0f64..60.0, ref_lon in -170.0f64..170.0,
                                  dlat in -0.09f64..0.09, dlon in -0.09f64..0.09) {
            let proj = Projection::new(ref_lat, ref_lon);
            let (lat, lon) = (ref_lat + dlat, ref_lon + dlon);
            let p = proj.project(lat, lon).unwrap();
            prop_assume!(p.norm() <= 10_000.0);
            let (lat2, lon2) = proj.unproject(p);
            prop_assert!((lat - lat2).abs() < 1e-9);
            prop_assert!((lon - lon2).abs() < 1e-9);
        }

        #[test]
        fn y_increases_with_latitude(ref_lat in -80.0f64..80.0, a in -5.0f64..5.0, b in -5.0f64..5.0) {
            prop_assume!(a < b);
            let proj = Projection::new(ref_lat, 0.0);
            let ya = proj.project(ref_lat + a, 0.0).unwrap().y;
            let yb = proj.project(ref_lat + b, 0.0).unwrap().y;
            prop_assert!(ya < yb);
        }
    }
}
