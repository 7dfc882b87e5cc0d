pub mod fixtures;
pub mod geom;
pub mod guidance;
pub mod interface;
pub mod map_ingest;
pub mod ndt;
pub mod perception;
pub mod scenario;
pub mod sensors;
pub mod sim;
pub mod world;
