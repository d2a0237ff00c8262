//! Per-unit model of a rooted radial feeder.
//!
//! Nodes are numbered `0..=J` with the slack at node 0. Line `k` (zero based,
//! `k in 0..J`) always ends at node `k + 1`, so the per-node arrays below are
//! indexed by the line that feeds the node.

mod json;
mod matpower;

use std::collections::{HashMap, VecDeque};

use crate::error::{LfError, Result};

pub use json::{parse_network_json, serialize_network_json};
pub use matpower::{parse_matpower, RawBranch, RawBus, RawCase, RawGen};

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// Upstream node (0 is the slack).
    pub upstream: usize,
    pub r: f64,
    pub x: f64,
    /// Off-nominal tap ratio, located at the upstream end.
    pub tap: f64,
}

impl Line {
    /// `r^2 + x^2`
    pub fn z2(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }

    /// Index of the line feeding the upstream node, if that node is not the slack.
    pub fn parent_line(&self) -> Option<usize> {
        self.upstream.checked_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoOrder {
    /// Line indices, each line after the line feeding its upstream node.
    pub forward: Vec<usize>,
    /// `children[n]` lists the lines whose upstream node is `n`, for `n in 0..=J`.
    pub children: Vec<Vec<usize>>,
}

impl TopoOrder {
    /// Lines fed directly by the downstream node of line `k`.
    pub fn children_of_line(&self, k: usize) -> &[usize] {
        &self.children[k + 1]
    }

    pub fn backward(&self) -> impl Iterator<Item = usize> + '_ {
        self.forward.iter().rev().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialNetwork {
    base_mva: f64,
    v0: f64,
    lines: Vec<Line>,
    /// Shunt conductance `G` at node `k + 1`, consuming `G v`.
    shunt_g: Vec<f64>,
    /// Shunt susceptance `B` at node `k + 1`, injecting `B v` (capacitive when positive).
    shunt_b: Vec<f64>,
    p_inj: Vec<f64>,
    q_inj: Vec<f64>,
    /// External identifiers of nodes `0..=J`.
    node_ids: Vec<i64>,
    topo: TopoOrder,
}

/// Node description used when assembling a network from file data.
#[derive(Debug, Clone)]
pub(crate) struct NodeSpec {
    pub id: i64,
    pub p: f64,
    pub q: f64,
    pub g: f64,
    pub b: f64,
}

/// Undirected branch description; orientation is derived from the slack.
#[derive(Debug, Clone)]
pub(crate) struct EdgeSpec {
    pub from: i64,
    pub to: i64,
    pub r: f64,
    pub x: f64,
    pub tap: f64,
    pub b_charging: f64,
}

impl RadialNetwork {
    /// Build a network from lines already in canonical form.
    ///
    /// `lines[k]` must end at node `k + 1`; the per-node vectors follow the
    /// same indexing. `node_ids` has `J + 1` entries (slack first).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base_mva: f64,
        v0: f64,
        lines: Vec<Line>,
        shunt_g: Vec<f64>,
        shunt_b: Vec<f64>,
        p_inj: Vec<f64>,
        q_inj: Vec<f64>,
        node_ids: Vec<i64>,
    ) -> Result<Self> {
        let j = lines.len();
        for len in [shunt_g.len(), shunt_b.len(), p_inj.len(), q_inj.len()] {
            if len != j {
                return Err(LfError::DimensionMismatch { expected: j, got: len });
            }
        }
        if node_ids.len() != j + 1 {
            return Err(LfError::DimensionMismatch {
                expected: j + 1,
                got: node_ids.len(),
            });
        }
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(LfError::InvalidConfig(format!(
                "slack voltage v0 = {v0} must be positive"
            )));
        }
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return Err(LfError::InvalidConfig(format!(
                "base_mva = {base_mva} must be positive"
            )));
        }
        for (k, line) in lines.iter().enumerate() {
            if !(line.tap > 0.0 && line.tap.is_finite()) {
                return Err(LfError::BadTap {
                    branch: k + 1,
                    tap: line.tap,
                });
            }
            if line.upstream > j || line.upstream == k + 1 {
                return Err(LfError::NotRadial(format!(
                    "line {} has invalid upstream node {}",
                    k + 1,
                    line.upstream
                )));
            }
            if !(line.z2() > 0.0) || !line.r.is_finite() || !line.x.is_finite() {
                return Err(LfError::UnsupportedFeature(format!(
                    "line {} has zero or non-finite impedance",
                    k + 1
                )));
            }
            if line.r < 0.0 {
                log::warn!("line {} has negative resistance {}", k + 1, line.r);
            }
        }
        let topo = build_topo(&lines)?;
        Ok(Self {
            base_mva,
            v0,
            lines,
            shunt_g,
            shunt_b,
            p_inj,
            q_inj,
            node_ids,
            topo,
        })
    }

    /// Number of non-slack nodes, equal to the number of lines.
    pub fn j(&self) -> usize {
        self.lines.len()
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    /// Squared slack voltage magnitude.
    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, k: usize) -> &Line {
        &self.lines[k]
    }

    pub fn shunt_g(&self) -> &[f64] {
        &self.shunt_g
    }

    pub fn shunt_b(&self) -> &[f64] {
        &self.shunt_b
    }

    pub fn p_inj(&self) -> &[f64] {
        &self.p_inj
    }

    pub fn q_inj(&self) -> &[f64] {
        &self.q_inj
    }

    pub fn node_ids(&self) -> &[i64] {
        &self.node_ids
    }

    pub fn topo(&self) -> &TopoOrder {
        &self.topo
    }

    /// Copy of the network with all injections multiplied by `factor`.
    pub fn scale_loads(&self, factor: f64) -> RadialNetwork {
        assert!(factor > 0.0 && factor.is_finite(), "load factor must be positive");
        let mut out = self.clone();
        out.p_inj.iter_mut().for_each(|p| *p *= factor);
        out.q_inj.iter_mut().for_each(|q| *q *= factor);
        out
    }

    /// Assemble from unoriented file data. `nodes[0]` is the slack; its
    /// injection and shunt are dropped because the slack absorbs them.
    pub(crate) fn from_specs(base_mva: f64, v0: f64, nodes: &[NodeSpec], edges: &[EdgeSpec]) -> Result<Self> {
        let n = nodes.len();
        if n < 2 {
            return Err(LfError::NotRadial("network needs at least one non-slack node".into()));
        }
        let mut index = HashMap::with_capacity(n);
        for (k, node) in nodes.iter().enumerate() {
            if index.insert(node.id, k).is_some() {
                return Err(LfError::SchemaError {
                    path: format!("nodes[{k}].id"),
                    message: format!("duplicate node id {}", node.id),
                });
            }
        }
        if edges.len() != n - 1 {
            return Err(LfError::NotRadial(format!(
                "{} in-service branches for {} buses (a tree needs {})",
                edges.len(),
                n,
                n - 1
            )));
        }
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (e, edge) in edges.iter().enumerate() {
            let lookup = |id: i64| {
                index
                    .get(&id)
                    .copied()
                    .ok_or_else(|| LfError::NotRadial(format!("branch {} references unknown bus {id}", e + 1)))
            };
            let (f, t) = (lookup(edge.from)?, lookup(edge.to)?);
            if f == t {
                return Err(LfError::NotRadial(format!("branch {} is a self loop", e + 1)));
            }
            adj[f].push((t, e));
            adj[t].push((f, e));
        }

        // BFS from the slack; the tree edge into each node becomes its line.
        let mut parent_edge: Vec<Option<usize>> = vec![None; n];
        let mut parent_node = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &(w, e) in &adj[u] {
                if Some(e) == parent_edge[u] {
                    continue;
                }
                if seen[w] {
                    return Err(LfError::NotRadial(format!(
                        "branch {} closes a cycle at bus {}",
                        e + 1,
                        nodes[w].id
                    )));
                }
                seen[w] = true;
                parent_edge[w] = Some(e);
                parent_node[w] = u;
                queue.push_back(w);
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(LfError::NotRadial(format!(
                "bus {} is not connected to the slack",
                nodes[k].id
            )));
        }

        let j = n - 1;
        let mut lines = Vec::with_capacity(j);
        let mut g = vec![0.0; n];
        let mut b = vec![0.0; n];
        for (k, node) in nodes.iter().enumerate() {
            g[k] = node.g;
            b[k] = node.b;
        }
        for node in 1..n {
            let e = parent_edge[node].expect("all non-slack nodes have a tree edge");
            let edge = &edges[e];
            let up = parent_node[node];
            let tap = if edge.tap == 0.0 { 1.0 } else { edge.tap };
            if tap <= 0.0 || !tap.is_finite() {
                return Err(LfError::BadTap { branch: e + 1, tap });
            }
            let reversed = index[&edge.from] != up;
            if reversed && tap != 1.0 {
                return Err(LfError::UnsupportedFeature(format!(
                    "branch {} carries tap {tap} on its downstream end",
                    e + 1
                )));
            }
            b[node] += edge.b_charging / 2.0;
            b[up] += edge.b_charging / (2.0 * tap * tap);
            lines.push(Line {
                upstream: up,
                r: edge.r,
                x: edge.x,
                tap,
            });
        }
        RadialNetwork::new(
            base_mva,
            v0,
            lines,
            g[1..].to_vec(),
            b[1..].to_vec(),
            nodes[1..].iter().map(|s| s.p).collect(),
            nodes[1..].iter().map(|s| s.q).collect(),
            nodes.iter().map(|s| s.id).collect(),
        )
    }
}

fn build_topo(lines: &[Line]) -> Result<TopoOrder> {
    let j = lines.len();
    let mut children = vec![Vec::new(); j + 1];
    for (k, line) in lines.iter().enumerate() {
        children[line.upstream].push(k);
    }
    let mut forward = Vec::with_capacity(j);
    let mut stack: Vec<usize> = children[0].iter().rev().copied().collect();
    while let Some(k) = stack.pop() {
        forward.push(k);
        stack.extend(children[k + 1].iter().rev().copied());
    }
    if forward.len() != j {
        let mut reached = vec![false; j];
        forward.iter().for_each(|&k| reached[k] = true);
        let k = reached.iter().position(|r| !r).unwrap_or(0);
        return Err(LfError::NotRadial(format!(
            "node {} is not reachable from the slack",
            k + 1
        )));
    }
    Ok(TopoOrder { forward, children })
}

/// Topological order of the network's lines.
pub fn topo_order(net: &RadialNetwork) -> TopoOrder {
    net.topo().clone()
}

/// Normalize a parsed MATPOWER case into the radial per-unit model.
///
/// The slack becomes node 0 and the remaining buses keep their file order.
pub fn to_radial(raw: &RawCase) -> Result<RadialNetwork> {
    let slack = raw
        .buses
        .iter()
        .position(|b| b.bus_type == 3)
        .ok_or_else(|| LfError::UnsupportedFeature("no reference bus (type 3)".into()))?;
    let base = raw.base_mva;
    let spec = |bus: &RawBus| NodeSpec {
        id: bus.id,
        p: -bus.pd / base,
        q: -bus.qd / base,
        g: bus.gs / base,
        b: bus.bs / base,
    };
    let mut nodes = Vec::with_capacity(raw.buses.len());
    nodes.push(spec(&raw.buses[slack]));
    nodes.extend(
        raw.buses
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != slack)
            .map(|(_, b)| spec(b)),
    );
    let slack_id = raw.buses[slack].id;
    for gen in raw.gens.iter().filter(|g| g.status && g.bus != slack_id) {
        log::warn!("generator at non-slack bus {} ignored", gen.bus);
    }
    let vm = raw
        .gens
        .iter()
        .find(|g| g.status && g.bus == slack_id)
        .map_or(raw.buses[slack].vm, |g| g.vg);
    let edges: Vec<EdgeSpec> = raw
        .branches
        .iter()
        .map(|br| EdgeSpec {
            from: br.from,
            to: br.to,
            r: br.r,
            x: br.x,
            tap: br.tap,
            b_charging: br.b_charging,
        })
        .collect();
    RadialNetwork::from_specs(base, vm * vm, &nodes, &edges)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Path graph 0 - 1 - ... - n with identical lines.
    pub(crate) fn path_network(n: usize, p: f64, q: f64) -> RadialNetwork {
        RadialNetwork::new(
            1.0,
            1.0,
            (0..n)
                .map(|k| Line {
                    upstream: k,
                    r: 0.01,
                    x: 0.02,
                    tap: 1.0,
                })
                .collect(),
            vec![0.0; n],
            vec![0.0; n],
            vec![p; n],
            vec![q; n],
            (0..=n as i64).collect(),
        )
        .unwrap()
    }

    pub(crate) fn two_bus() -> RadialNetwork {
        RadialNetwork::new(
            1.0,
            1.0,
            vec![Line {
                upstream: 0,
                r: 0.1,
                x: 0.1,
                tap: 1.0,
            }],
            vec![0.0],
            vec![0.0],
            vec![-0.1],
            vec![-0.05],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn two_bus_topology() {
        let t = topo_order(&two_bus());
        assert_eq!(t.forward, vec![0]);
        assert!(t.children_of_line(0).is_empty());
    }

    #[test]
    fn path_topology_is_unique() {
        let t = topo_order(&path_network(3, 0.0, 0.0));
        assert_eq!(t.forward, vec![0, 1, 2]);
    }

    #[test]
    fn scale_loads_arithmetic() {
        let net = two_bus().scale_loads(3.5);
        assert!((net.p_inj()[0] + 0.35).abs() < 1e-15);
        assert!((net.q_inj()[0] + 0.175).abs() < 1e-15);
        assert_eq!(two_bus().scale_loads(1.0), two_bus());
    }

    #[test]
    fn cycle_is_rejected() {
        let mut lines = path_network(3, 0.0, 0.0).lines().to_vec();
        lines[0].upstream = 3;
        let err = RadialNetwork::new(
            1.0,
            1.0,
            lines,
            vec![0.0; 3],
            vec![0.0; 3],
            vec![0.0; 3],
            vec![0.0; 3],
            vec![0, 1, 2, 3],
        )
        .unwrap_err();
        assert!(matches!(err, LfError::NotRadial(_)), "{err}");
    }

    fn specs() -> (Vec<NodeSpec>, Vec<EdgeSpec>) {
        let node = |id| NodeSpec {
            id,
            p: -0.1,
            q: -0.05,
            g: 0.0,
            b: 0.0,
        };
        let edge = |from, to| EdgeSpec {
            from,
            to,
            r: 0.1,
            x: 0.1,
            tap: 0.0,
            b_charging: 0.0,
        };
        (vec![node(1), node(2), node(3)], vec![edge(1, 2), edge(3, 2)])
    }

    #[test]
    fn orientation_follows_the_slack() {
        let (nodes, edges) = specs();
        let net = RadialNetwork::from_specs(1.0, 1.0, &nodes, &edges).unwrap();
        assert_eq!(net.line(0).upstream, 0);
        assert_eq!(net.line(1).upstream, 1);
        assert_eq!(net.line(0).tap, 1.0);
    }

    #[test]
    fn loop_and_disconnect_reported() {
        let (nodes, mut edges) = specs();
        edges[1].from = 1;
        edges[1].to = 2;
        let err = RadialNetwork::from_specs(1.0, 1.0, &nodes, &edges).unwrap_err();
        assert!(matches!(err, LfError::NotRadial(ref m) if m.contains("cycle")), "{err}");

        let (nodes, mut edges) = specs();
        edges.pop();
        let err = RadialNetwork::from_specs(1.0, 1.0, &nodes, &edges).unwrap_err();
        assert!(matches!(err, LfError::NotRadial(_)));
    }

    #[test]
    fn reversed_tap_and_bad_tap() {
        let (nodes, mut edges) = specs();
        edges[1].tap = 0.95;
        assert!(matches!(
            RadialNetwork::from_specs(1.0, 1.0, &nodes, &edges),
            Err(LfError::UnsupportedFeature(_))
        ));
        let (nodes, mut edges) = specs();
        edges[0].tap = -1.0;
        assert!(matches!(
            RadialNetwork::from_specs(1.0, 1.0, &nodes, &edges),
            Err(LfError::BadTap { .. })
        ));
    }

    #[test]
    fn line_charging_split_between_endpoints() {
        let (nodes, mut edges) = specs();
        edges[1].b_charging = 0.02;
        edges[1].from = 2;
        edges[1].to = 3;
        edges[1].tap = 0.5;
        let net = RadialNetwork::from_specs(1.0, 1.0, &nodes, &edges).unwrap();
        assert!((net.shunt_b()[1] - 0.01).abs() < 1e-15);
        assert!((net.shunt_b()[0] - 0.01 / 0.25).abs() < 1e-15);
    }
}
