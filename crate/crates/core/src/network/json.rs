//! JSON network format.
//!
//! The first entry of `nodes` is the slack. Line orientation is derived from
//! the slack, so `from`/`to` may be given either way round unless the line
//! has an off-nominal tap, which sits at the `from` end.

use serde::{Deserialize, Serialize};

use super::{EdgeSpec, NodeSpec, RadialNetwork};
use crate::error::{LfError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct NetworkDoc {
    base_mva: f64,
    v0: f64,
    nodes: Vec<NodeDoc>,
    lines: Vec<LineDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    id: i64,
    p: f64,
    q: f64,
    #[serde(default)]
    g_shunt: f64,
    #[serde(default)]
    b_shunt: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LineDoc {
    from: i64,
    to: i64,
    r: f64,
    x: f64,
    #[serde(default = "unit_tap")]
    tap: f64,
    #[serde(default)]
    b_charging: f64,
}

fn unit_tap() -> f64 {
    1.0
}

pub fn parse_network_json(text: &str) -> Result<RadialNetwork> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: NetworkDoc = serde_path_to_error::deserialize(de).map_err(|e| LfError::SchemaError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if doc.nodes.is_empty() {
        return Err(LfError::SchemaError {
            path: "nodes".into(),
            message: "at least the slack node is required".into(),
        });
    }
    let nodes: Vec<NodeSpec> = doc
        .nodes
        .iter()
        .map(|n| NodeSpec {
            id: n.id,
            p: n.p,
            q: n.q,
            g: n.g_shunt,
            b: n.b_shunt,
        })
        .collect();
    let edges: Vec<EdgeSpec> = doc
        .lines
        .iter()
        .map(|l| EdgeSpec {
            from: l.from,
            to: l.to,
            r: l.r,
            x: l.x,
            tap: l.tap,
            b_charging: l.b_charging,
        })
        .collect();
    RadialNetwork::from_specs(doc.base_mva, doc.v0, &nodes, &edges)
}

/// Serialize with shunts already aggregated per node and zero line charging.
pub fn serialize_network_json(net: &RadialNetwork) -> String {
    let ids = net.node_ids();
    let mut nodes = vec![NodeDoc {
        id: ids[0],
        p: 0.0,
        q: 0.0,
        g_shunt: 0.0,
        b_shunt: 0.0,
    }];
    nodes.extend((0..net.j()).map(|k| NodeDoc {
        id: ids[k + 1],
        p: net.p_inj()[k],
        q: net.q_inj()[k],
        g_shunt: net.shunt_g()[k],
        b_shunt: net.shunt_b()[k],
    }));
    let lines = net
        .lines()
        .iter()
        .enumerate()
        .map(|(k, l)| LineDoc {
            from: ids[l.upstream],
            to: ids[k + 1],
            r: l.r,
            x: l.x,
            tap: l.tap,
            b_charging: 0.0,
        })
        .collect();
    let doc = NetworkDoc {
        base_mva: net.base_mva(),
        v0: net.v0(),
        nodes,
        lines,
    };
    serde_json::to_string_pretty(&doc).expect("network documents always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS_JSON: &str = r#"{
        "base_mva": 1.0, "v0": 1.0,
        "nodes": [
            {"id": 0, "p": 0.0, "q": 0.0, "g_shunt": 0.0, "b_shunt": 0.0},
            {"id": 1, "p": -0.1, "q": -0.05, "g_shunt": 0.0, "b_shunt": 0.0}
        ],
        "lines": [{"from": 0, "to": 1, "r": 0.1, "x": 0.1, "tap": 1.0, "b_charging": 0.0}]
    }"#;

    #[test]
    fn two_bus_round_trip() {
        let net = parse_network_json(TWO_BUS_JSON).unwrap();
        assert_eq!(net.j(), 1);
        assert_eq!(net, crate::network::tests::two_bus());
        let again = parse_network_json(&serialize_network_json(&net)).unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn negative_resistance_is_accepted() {
        let text = TWO_BUS_JSON.replace("\"r\": 0.1", "\"r\": -0.1");
        let net = parse_network_json(&text).unwrap();
        assert_eq!(net.line(0).r, -0.1);
    }

    #[test]
    fn duplicate_id_is_schema_error() {
        let text = TWO_BUS_JSON.replace("{\"id\": 1,", "{\"id\": 0,");
        assert!(matches!(parse_network_json(&text), Err(LfError::SchemaError { .. })));
    }

    #[test]
    fn wrong_type_reports_path() {
        let text = TWO_BUS_JSON.replace("\"x\": 0.1", "\"x\": \"big\"");
        match parse_network_json(&text).unwrap_err() {
            LfError::SchemaError { path, .. } => assert_eq!(path, "lines[0].x"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_field_reports_path() {
        let text = TWO_BUS_JSON.replace("\"v0\": 1.0,", "");
        assert!(matches!(parse_network_json(&text), Err(LfError::SchemaError { .. })));
    }
}
