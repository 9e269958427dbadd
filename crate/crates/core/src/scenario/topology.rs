use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::net::{LinkSpec, NodeId, NodeKind, PortId};

use super::ScenarioError;

pub const LINK_100_MBPS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
}

/// One switch hop on a route: the switch and the port it forwards out of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub switch: NodeId,
    pub out_port: PortId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub name: String,
    pub hosts: Vec<NodeSpec>,
    pub switches: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

impl TopologySpec {
    pub fn node_name(&self, id: NodeId) -> Option<&str> {
        self.hosts
            .iter()
            .chain(&self.switches)
            .find(|n| n.id == id)
            .map(|n| n.name.as_str())
    }

    pub fn host(&self, name: &str) -> Option<NodeId> {
        self.hosts.iter().find(|n| n.name == name).map(|n| n.id)
    }

    /// Ports of `node` with the link each one attaches to, in port order.
    pub fn ports_of(&self, node: NodeId) -> Vec<(PortId, &LinkSpec)> {
        let mut ports: Vec<(PortId, &LinkSpec)> = self
            .links
            .iter()
            .flat_map(|l| {
                [l.a, l.b]
                    .into_iter()
                    .filter(move |(n, _)| *n == node)
                    .map(move |(_, p)| (p, l))
            })
            .collect();
        ports.sort_by_key(|(p, _)| *p);
        ports
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut ids = BTreeSet::new();
        for n in &self.hosts {
            if n.id.kind != NodeKind::Host {
                return Err(ScenarioError::Topology(format!("{} listed as host", n.id)));
            }
            if !ids.insert(n.id) {
                return Err(ScenarioError::Topology(format!("duplicate node {}", n.id)));
            }
        }
        for n in &self.switches {
            if n.id.kind != NodeKind::Switch {
                return Err(ScenarioError::Topology(format!(
                    "{} listed as switch",
                    n.id
                )));
            }
            if !ids.insert(n.id) {
                return Err(ScenarioError::Topology(format!("duplicate node {}", n.id)));
            }
        }
        let mut ends = BTreeSet::new();
        for l in &self.links {
            if l.capacity_bps == 0 {
                return Err(ScenarioError::Topology("zero-capacity link".into()));
            }
            for end in [l.a, l.b] {
                if !ids.contains(&end.0) {
                    return Err(ScenarioError::Topology(format!("unknown node {}", end.0)));
                }
                if !ends.insert(end) {
                    return Err(ScenarioError::Topology(format!(
                        "port {} of {} used twice",
                        end.1, end.0
                    )));
                }
            }
        }
        for sw in &self.switches {
            let ports = self.ports_of(sw.id);
            for (i, (p, _)) in ports.iter().enumerate() {
                if p.0 as usize != i {
                    return Err(ScenarioError::Topology(format!(
                        "switch {} ports must be numbered 0..n",
                        sw.id
                    )));
                }
            }
        }
        for h in &self.hosts {
            let ports = self.ports_of(h.id);
            if ports.len() != 1 || ports[0].0 != PortId(0) {
                return Err(ScenarioError::Topology(format!(
                    "host {} needs exactly one link on port 0",
                    h.id
                )));
            }
            if ports[0].1.peer((h.id, PortId(0))).map(|(n, _)| n.kind) != Some(NodeKind::Switch) {
                return Err(ScenarioError::Topology(format!(
                    "host {} must attach to a switch",
                    h.id
                )));
            }
        }
        // Connectivity.
        if let Some(first) = self.hosts.first().or(self.switches.first()) {
            let mut seen = BTreeSet::from([first.id]);
            let mut todo = VecDeque::from([first.id]);
            while let Some(n) = todo.pop_front() {
                for (p, l) in self.ports_of(n) {
                    if let Some((m, _)) = l.peer((n, p)) {
                        if seen.insert(m) {
                            todo.push_back(m);
                        }
                    }
                }
            }
            if seen.len() != ids.len() {
                return Err(ScenarioError::Topology("topology is not connected".into()));
            }
        }
        Ok(())
    }

    /// Shortest path from `src` to `dst` as switch hops. Breadth-first,
    /// exploring ports in order, so the choice among equal-length paths is
    /// fixed.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<Hop>, ScenarioError> {
        let no_route = || ScenarioError::NoRoute(src, dst);
        if src == dst || !src.is_host() || !dst.is_host() {
            return Err(no_route());
        }
        // node -> (previous node, port on previous node)
        let mut prev: BTreeMap<NodeId, (NodeId, PortId)> = BTreeMap::new();
        let mut todo = VecDeque::from([src]);
        let mut seen = BTreeSet::from([src]);
        while let Some(n) = todo.pop_front() {
            if n == dst {
                break;
            }
            if n != src && n.is_host() {
                continue;
            }
            for (p, l) in self.ports_of(n) {
                if let Some((m, _)) = l.peer((n, p)) {
                    if seen.insert(m) {
                        prev.insert(m, (n, p));
                        todo.push_back(m);
                    }
                }
            }
        }
        if !prev.contains_key(&dst) {
            return Err(no_route());
        }
        let mut hops = Vec::new();
        let mut at = dst;
        while let Some(&(from, port)) = prev.get(&at) {
            if from != src {
                hops.push(Hop {
                    switch: from,
                    out_port: port,
                });
            }
            at = from;
        }
        hops.reverse();
        Ok(hops)
    }
}

/// Assigns port numbers in attachment order.
struct Builder {
    spec: TopologySpec,
    next_port: BTreeMap<NodeId, u16>,
}

impl Builder {
    fn new(name: &str) -> Self {
        Builder {
            spec: TopologySpec {
                name: name.into(),
                hosts: vec![],
                switches: vec![],
                links: vec![],
            },
            next_port: BTreeMap::new(),
        }
    }

    fn host(&mut self, name: &str) -> NodeId {
        let id = NodeId::host(self.spec.hosts.len() as u16);
        self.spec.hosts.push(NodeSpec {
            id,
            name: name.into(),
        });
        id
    }

    fn switch(&mut self, name: &str) -> NodeId {
        let id = NodeId::switch(self.spec.switches.len() as u16);
        self.spec.switches.push(NodeSpec {
            id,
            name: name.into(),
        });
        id
    }

    fn port(&mut self, n: NodeId) -> PortId {
        let p = self.next_port.entry(n).or_default();
        let id = PortId(*p);
        *p += 1;
        id
    }

    fn link(&mut self, a: NodeId, b: NodeId) {
        let pa = self.port(a);
        let pb = self.port(b);
        self.spec
            .links
            .push(LinkSpec::new((a, pa), (b, pb), LINK_100_MBPS));
    }

    fn build(self) -> TopologySpec {
        self.spec
    }
}

/// One switch with senders S1-S3 and receiver R1.
pub fn build_topology1() -> TopologySpec {
    let mut b = Builder::new("t1");
    let sw = b.switch("SW1");
    for name in ["S1", "S2", "S3", "R1"] {
        let h = b.host(name);
        b.link(h, sw);
    }
    b.build()
}

/// Dumbbell: S1-S3 on one switch, R1-R3 on the other, one shared trunk.
pub fn build_topology2() -> TopologySpec {
    let mut b = Builder::new("t2");
    let left = b.switch("SW1");
    let right = b.switch("SW2");
    for name in ["S1", "S2", "S3"] {
        let h = b.host(name);
        b.link(h, left);
    }
    for name in ["R1", "R2", "R3"] {
        let h = b.host(name);
        b.link(h, right);
    }
    b.link(left, right);
    b.build()
}

/// Seven-switch tree: edge switches E1{H1,H2,H3}, E2{H4,H5,H6},
/// E3{H7,H8,H9}, E4{H10,H11}; aggregation A1{E1,E2}, A2{E3,E4}; core C1.
pub fn build_topology3() -> TopologySpec {
    let mut b = Builder::new("t3");
    let e: Vec<NodeId> = ["E1", "E2", "E3", "E4"]
        .iter()
        .map(|n| b.switch(n))
        .collect();
    let a1 = b.switch("A1");
    let a2 = b.switch("A2");
    let c1 = b.switch("C1");
    let edge_of = |i: usize| match i {
        1..=3 => 0,
        4..=6 => 1,
        7..=9 => 2,
        _ => 3,
    };
    for i in 1..=11 {
        let h = b.host(&format!("H{i}"));
        b.link(h, e[edge_of(i)]);
    }
    b.link(e[0], a1);
    b.link(e[1], a1);
    b.link(e[2], a2);
    b.link(e[3], a2);
    b.link(a1, c1);
    b.link(a2, c1);
    b.build()
}

pub fn named_topology(name: &str) -> Result<TopologySpec, ScenarioError> {
    match name {
        "t1" | "topology1" => Ok(build_topology1()),
        "t2" | "topology2" => Ok(build_topology2()),
        "t3" | "topology3" => Ok(build_topology3()),
        other => Err(ScenarioError::UnknownTopology(other.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn switch_path(t: &TopologySpec, src: &str, dst: &str) -> Vec<String> {
        t.route(t.host(src).unwrap(), t.host(dst).unwrap())
            .unwrap()
            .iter()
            .map(|h| t.node_name(h.switch).unwrap().to_string())
            .collect()
    }

    #[test]
    fn topology1_shape() {
        let t = build_topology1();
        t.validate().unwrap();
        assert_eq!(t.links.len(), 4);
        assert_eq!(switch_path(&t, "S1", "R1"), vec!["SW1"]);
        assert!(t.links.iter().all(|l| l.capacity_bps == LINK_100_MBPS));
    }

    #[test]
    fn topology2_shape() {
        let t = build_topology2();
        t.validate().unwrap();
        assert_eq!(t.links.len(), 7);
        assert_eq!(switch_path(&t, "S2", "R2"), vec!["SW1", "SW2"]);
        // Every sender-receiver route crosses the trunk out of SW1.
        let trunk: Vec<Hop> = ["S1", "S2", "S3"]
            .iter()
            .zip(["R1", "R2", "R3"])
            .map(|(s, r)| t.route(t.host(s).unwrap(), t.host(r).unwrap()).unwrap()[0])
            .collect();
        assert!(trunk.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn topology3_shape() {
        let t = build_topology3();
        t.validate().unwrap();
        assert_eq!(t.links.len(), 17);
        assert_eq!(t.switches.len(), 7);
        assert_eq!(t.hosts.len(), 11);
        let p1 = switch_path(&t, "H1", "H7");
        let p2 = switch_path(&t, "H4", "H8");
        assert_eq!(p1, vec!["E1", "A1", "C1", "A2", "E3"]);
        assert_eq!(p2, vec!["E2", "A1", "C1", "A2", "E3"]);
        let r1 = t
            .route(t.host("H1").unwrap(), t.host("H7").unwrap())
            .unwrap();
        let r2 = t
            .route(t.host("H4").unwrap(), t.host("H8").unwrap())
            .unwrap();
        // Shared A1 -> C1 -> A2 hops.
        assert_eq!(r1[1..4], r2[1..4]);
    }

    #[test]
    fn validation_catches_bad_topologies() {
        let mut t = build_topology1();
        t.links.pop();
        assert!(t.validate().is_err());

        let mut t = build_topology2();
        t.links.pop(); // drop the trunk
        assert!(t.validate().is_err());

        let mut t = build_topology1();
        t.links[0].capacity_bps = 0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn unknown_topology_name() {
        assert!(named_topology("t9").is_err());
        assert_eq!(named_topology("topology2").unwrap().name, "t2");
    }
}
