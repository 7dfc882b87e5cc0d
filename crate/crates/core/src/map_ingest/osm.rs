//! OSM XML (v0.6 subset) reader: `node`, `way`, `nd`, `tag`, `bounds`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::MapError;

pub type Tags = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmNode {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    pub tags: Tags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmWay {
    pub id: i64,
    pub node_refs: Vec<i64>,
    pub tags: Tags,
}

impl OsmWay {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    pub fn is_closed(&self) -> bool {
        self.node_refs.len() >= 2 && self.node_refs.first() == self.node_refs.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OsmDocument {
    pub bounds: Option<GeoBounds>,
    pub nodes: Vec<OsmNode>,
    pub ways: Vec<OsmWay>,
}

impl OsmDocument {
    /// Bounds from the `<bounds>` element, falling back to the node extent.
    pub fn extent(&self) -> Option<GeoBounds> {
        if self.bounds.is_some() {
            return self.bounds;
        }
        let first = self.nodes.first()?;
        let mut b = GeoBounds { min_lat: first.lat, min_lon: first.lon, max_lat: first.lat, max_lon: first.lon };
        for n in &self.nodes {
            b.min_lat = b.min_lat.min(n.lat);
            b.max_lat = b.max_lat.max(n.lat);
            b.min_lon = b.min_lon.min(n.lon);
            b.max_lon = b.max_lon.max(n.lon);
        }
        Some(b)
    }
}

fn line_of(doc: &roxmltree::Document, node: roxmltree::Node) -> u32 {
    doc.text_pos_at(node.range().start).row
}

fn attr<'a>(doc: &roxmltree::Document, node: roxmltree::Node<'a, 'a>, name: &str) -> Result<&'a str, MapError> {
    node.attribute(name).ok_or_else(|| MapError::Element {
        line: line_of(doc, node),
        message: format!("<{}> missing attribute '{}'", node.tag_name().name(), name),
    })
}

fn num_attr<T: std::str::FromStr>(doc: &roxmltree::Document, node: roxmltree::Node, name: &str) -> Result<T, MapError> {
    let raw = attr(doc, node, name)?;
    raw.trim().parse().map_err(|_| MapError::Element {
        line: line_of(doc, node),
        message: format!("attribute '{name}' is not a number: {raw:?}"),
    })
}

fn read_tags(doc: &roxmltree::Document, node: roxmltree::Node) -> Result<Tags, MapError> {
    let mut tags = Tags::new();
    for child in node.children().filter(|c| c.has_tag_name("tag")) {
        let k = attr(doc, child, "k")?;
        let v = attr(doc, child, "v")?;
        tags.insert(k.to_string(), v.to_string());
    }
    Ok(tags)
}

/// Parses an OSM XML document and checks referential integrity.
pub fn parse_osm(xml_text: &str) -> Result<OsmDocument, MapError> {
    let doc = roxmltree::Document::parse(xml_text)
        .map_err(|e| MapError::Xml { line: e.pos().row, message: e.to_string() })?;
    let root = doc.root_element();
    if !root.has_tag_name("osm") {
        return Err(MapError::Element {
            line: line_of(&doc, root),
            message: format!("expected <osm> root, found <{}>", root.tag_name().name()),
        });
    }

    let mut out = OsmDocument::default();
    let mut seen = HashSet::new();
    for el in root.children().filter(|c| c.is_element()) {
        match el.tag_name().name() {
            "bounds" => {
                out.bounds = Some(GeoBounds {
                    min_lat: num_attr(&doc, el, "minlat")?,
                    min_lon: num_attr(&doc, el, "minlon")?,
                    max_lat: num_attr(&doc, el, "maxlat")?,
                    max_lon: num_attr(&doc, el, "maxlon")?,
                });
            }
            "node" => {
                let id: i64 = num_attr(&doc, el, "id")?;
                if !seen.insert(id) {
                    return Err(MapError::DuplicateNode(id));
                }
                out.nodes.push(OsmNode {
                    id,
                    lat: num_attr(&doc, el, "lat")?,
                    lon: num_attr(&doc, el, "lon")?,
                    tags: read_tags(&doc, el)?,
                });
            }
            "way" => {
                let mut node_refs = Vec::new();
                for nd in el.children().filter(|c| c.has_tag_name("nd")) {
                    node_refs.push(num_attr(&doc, nd, "ref")?);
                }
                out.ways.push(OsmWay { id: num_attr(&doc, el, "id")?, node_refs, tags: read_tags(&doc, el)? });
            }
            // relations and anything else are outside the consumed subset
            _ => {}
        }
    }

    let missing: BTreeSet<i64> = out
        .ways
        .iter()
        .flat_map(|w| w.node_refs.iter().copied())
        .filter(|r| !seen.contains(r))
        .collect();
    if !missing.is_empty() {
        return Err(MapError::DanglingRefs { missing: missing.into_iter().collect() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR_NODES: &str = r#"<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="40.0" lon="-83.0"/>
  <node id="2" lat="40.0001" lon="-83.0"/>
  <node id="3" lat="40.0002" lon="-83.0"><tag k="highway" v="stop"/></node>
  <node id="4" lat="40.0003" lon="-83.0"/>
  <way id="10">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/>
    <tag k="highway" v="residential"/>
    <tag k="surface" v="asphalt"/>
  </way>
</osm>"#;

    #[test]
    fn counts_and_tags() {
        let doc = parse_osm(FOUR_NODES).unwrap();
        assert_eq!(doc.nodes.len(), 4);
        assert_eq!(doc.ways.len(), 1);
        assert_eq!(doc.ways[0].tag("highway"), Some("residential"));
        // tags outside the consumed set survive
        assert_eq!(doc.ways[0].tag("surface"), Some("asphalt"));
        assert_eq!(doc.nodes[2].tags.get("highway").map(String::as_str), Some("stop"));
    }

    #[test]
    fn empty_root() {
        let doc = parse_osm("<osm/>").unwrap();
        assert!(doc.nodes.is_empty() && doc.ways.is_empty());
    }

    #[test]
    fn dangling_reference_names_missing_id() {
        let xml = r#"<osm><node id="1" lat="0" lon="0"/><way id="5"><nd ref="1"/><nd ref="999"/></way></osm>"#;
        match parse_osm(xml) {
            Err(MapError::DanglingRefs { missing }) => assert_eq!(missing, vec![999]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_xml_reports_line() {
        let xml = "<osm>\n<node id=\"1\" lat=\"0\" lon=\"0\">\n</osm>";
        match parse_osm(xml) {
            Err(MapError::Xml { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_element_line() {
        let xml = "<osm>\n\n<node id=\"1\" lat=\"north\" lon=\"0\"/></osm>";
        match parse_osm(xml) {
            Err(MapError::Element { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_node_rejected() {
        let xml = r#"<osm><node id="1" lat="0" lon="0"/><node id="1" lat="1" lon="0"/></osm>"#;
        assert!(matches!(parse_osm(xml), Err(MapError::DuplicateNode(1))));
    }
}
