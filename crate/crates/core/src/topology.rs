//! Flat upper-tier topologies (Ring, Flattened Butterfly) with attached hosts
//! and deterministic shortest-path routing over packet links.
//!
//! Every physical link is modeled as two directed links. Link ids are dense:
//! packet links come first, then one uplink and one downlink per host. Circuit
//! links are not part of the static link table; each ordered switch pair owns a
//! reserved id past the static range so the engine can attach a circuit link
//! whenever the corresponding optical circuit is established.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwitchId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl SwitchId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl HostId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "H{}", self.0)
    }
}

/// Link endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Switch(SwitchId),
    Host(HostId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Packet,
    Circuit,
    Host,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub src: Node,
    pub dst: Node,
    /// bits/second
    pub capacity: f64,
    pub kind: LinkKind,
}

/// Ordered list of directed links from a source host to a destination host.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path(pub Vec<LinkId>);

impl Path {
    pub fn links(&self) -> &[LinkId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Fbfly,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("source and destination are the same host ({0})")]
    SameHost(HostId),
    #[error("no packet route from {0} to {1}")]
    Disconnected(SwitchId, SwitchId),
}

/// Link rates shared by the generators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRates {
    /// Upper-tier packet link rate, bits/s.
    pub packet: f64,
    /// Host attachment rate, bits/s. Defaults to the packet rate.
    pub host: Option<f64>,
    /// Optical circuit rate, bits/s.
    pub circuit: f64,
}

impl LinkRates {
    pub fn new(packet: f64, circuit: f64) -> Self {
        Self {
            packet,
            host: None,
            circuit,
        }
    }

    pub fn with_host(mut self, host: f64) -> Self {
        self.host = Some(host);
        self
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub name: String,
    switch_count: u32,
    links: Vec<Link>,
    /// Hosts attached to each switch, indexed by switch.
    hosts: Vec<Vec<HostId>>,
    host_switch: Vec<SwitchId>,
    /// OCS-facing ports per switch (per direction).
    ocs_ports: Vec<u32>,
    circuit_rate: f64,
    packet_rate: f64,
    /// Outgoing packet links per switch, sorted by neighbor id.
    adjacency: Vec<Vec<(SwitchId, LinkId)>>,
    /// `next_hop[src][dst]`: next switch on the default route.
    next_hop: Vec<Vec<u32>>,
    distance: Vec<Vec<u32>>,
}

impl Topology {
    /// Ring of `n` switches; switch `i` links to `i±1 (mod n)`.
    pub fn ring(n: u32, hosts_per_switch: u32, rates: LinkRates) -> Result<Self, TopologyError> {
        if n < 3 {
            return Err(TopologyError::Invalid(format!("ring needs at least 3 switches, got {n}")));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, (i + 1) % n));
        }
        Self::assemble(TopologyKind::Ring, format!("ring{n}"), n, &edges, hosts_per_switch, rates)
    }

    /// `k`-ary `n`-flat flattened butterfly: `k^(n-1)` switches on an
    /// `(n-1)`-dimensional grid of side `k`, fully connected along every dimension.
    pub fn fbfly(k: u32, n: u32, hosts_per_switch: u32, rates: LinkRates) -> Result<Self, TopologyError> {
        if k < 2 || n < 2 {
            return Err(TopologyError::Invalid(format!("fbfly needs k >= 2 and n >= 2, got k={k} n={n}")));
        }
        let dims = n - 1;
        let count = k
            .checked_pow(dims)
            .filter(|&c| c <= 1 << 16)
            .ok_or_else(|| TopologyError::Invalid(format!("fbfly {k}-ary {n}-flat is too large")))?;
        let mut edges = Vec::new();
        for s in 0..count {
            let mut stride = 1;
            for _ in 0..dims {
                let digit = (s / stride) % k;
                for other in digit + 1..k {
                    edges.push((s, s + (other - digit) * stride));
                }
                stride *= k;
            }
        }
        Self::assemble(
            TopologyKind::Fbfly,
            format!("fbfly{k}x{n}"),
            count,
            &edges,
            hosts_per_switch,
            rates,
        )
    }

    fn assemble(
        kind: TopologyKind,
        name: String,
        n: u32,
        undirected: &[(u32, u32)],
        hosts_per_switch: u32,
        rates: LinkRates,
    ) -> Result<Self, TopologyError> {
        if hosts_per_switch == 0 {
            return Err(TopologyError::Invalid("hosts_per_switch must be at least 1".into()));
        }
        let host_rate = rates.host.unwrap_or(rates.packet);
        for (what, v) in [("packet", rates.packet), ("host", host_rate), ("circuit", rates.circuit)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TopologyError::Invalid(format!("{what} link rate must be positive, got {v}")));
            }
        }

        let mut links = Vec::new();
        let mut adjacency = vec![Vec::new(); n as usize];
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b) in undirected {
            if a == b {
                return Err(TopologyError::Invalid(format!("self-loop on S{a}")));
            }
            for (s, d) in [(a, b), (b, a)] {
                if !seen.insert((s, d)) {
                    return Err(TopologyError::Invalid(format!("duplicate link S{s}->S{d}")));
                }
                let id = LinkId(links.len() as u32);
                links.push(Link {
                    id,
                    src: Node::Switch(SwitchId(s)),
                    dst: Node::Switch(SwitchId(d)),
                    capacity: rates.packet,
                    kind: LinkKind::Packet,
                });
                adjacency[s as usize].push((SwitchId(d), id));
            }
        }
        for adj in &mut adjacency {
            adj.sort();
        }

        let mut hosts = vec![Vec::new(); n as usize];
        let mut host_switch = Vec::new();
        for s in 0..n {
            for _ in 0..hosts_per_switch {
                let h = HostId(host_switch.len() as u32);
                host_switch.push(SwitchId(s));
                hosts[s as usize].push(h);
            }
        }
        // Host uplink at 2h, downlink at 2h+1 (offset by packet link count).
        for (h, &s) in host_switch.iter().enumerate() {
            let h = HostId(h as u32);
            let up = LinkId(links.len() as u32);
            links.push(Link {
                id: up,
                src: Node::Host(h),
                dst: Node::Switch(s),
                capacity: host_rate,
                kind: LinkKind::Host,
            });
            let down = LinkId(links.len() as u32);
            links.push(Link {
                id: down,
                src: Node::Switch(s),
                dst: Node::Host(h),
                capacity: host_rate,
                kind: LinkKind::Host,
            });
        }

        let mut topo = Topology {
            kind,
            name,
            switch_count: n,
            links,
            hosts,
            host_switch,
            ocs_ports: vec![1; n as usize],
            circuit_rate: rates.circuit,
            packet_rate: rates.packet,
            adjacency,
            next_hop: Vec::new(),
            distance: Vec::new(),
        };
        topo.compute_routes()?;
        Ok(topo)
    }

    /// Overrides the number of OCS ports per switch (per direction).
    pub fn with_ocs_ports(mut self, ports: u32) -> Result<Self, TopologyError> {
        if ports == 0 {
            return Err(TopologyError::Invalid("every switch needs at least one OCS port".into()));
        }
        self.ocs_ports = vec![ports; self.switch_count as usize];
        Ok(self)
    }

    // BFS from every destination, then walk greedily from each source picking the
    // smallest-id neighbor that is one hop closer: this yields the
    // lexicographically smallest switch sequence among all shortest paths.
    fn compute_routes(&mut self) -> Result<(), TopologyError> {
        let n = self.switch_count as usize;
        let mut reverse = vec![Vec::new(); n];
        for (s, adj) in self.adjacency.iter().enumerate() {
            for &(d, _) in adj {
                reverse[d.index()].push(s);
            }
        }
        let mut distance = vec![vec![u32::MAX; n]; n];
        for dst in 0..n {
            let dist = &mut distance[dst];
            dist[dst] = 0;
            let mut queue = VecDeque::from([dst]);
            while let Some(v) = queue.pop_front() {
                for &u in &reverse[v] {
                    if dist[u] == u32::MAX {
                        dist[u] = dist[v] + 1;
                        queue.push_back(u);
                    }
                }
            }
        }
        // distance[dst][src] -> transpose into distance[src][dst]
        let mut dist_sd = vec![vec![0; n]; n];
        let mut next_hop = vec![vec![u32::MAX; n]; n];
        for src in 0..n {
            for dst in 0..n {
                let d = distance[dst][src];
                if d == u32::MAX {
                    return Err(TopologyError::Invalid(format!(
                        "packet-link graph is disconnected (S{src} cannot reach S{dst})"
                    )));
                }
                dist_sd[src][dst] = d;
                if src != dst {
                    let hop = self.adjacency[src]
                        .iter()
                        .find(|(nb, _)| distance[dst][nb.index()] + 1 == d)
                        .map(|(nb, _)| nb.0)
                        .expect("bfs distance implies a closer neighbor");
                    next_hop[src][dst] = hop;
                }
            }
        }
        self.distance = dist_sd;
        self.next_hop = next_hop;
        Ok(())
    }

    pub fn switch_count(&self) -> usize {
        self.switch_count as usize
    }

    pub fn switches(&self) -> impl Iterator<Item = SwitchId> {
        (0..self.switch_count).map(SwitchId)
    }

    pub fn host_count(&self) -> usize {
        self.host_switch.len()
    }

    pub fn hosts_of(&self, s: SwitchId) -> &[HostId] {
        &self.hosts[s.index()]
    }

    pub fn host_switch(&self, h: HostId) -> Result<SwitchId, TopologyError> {
        self.host_switch
            .get(h.index())
            .copied()
            .ok_or(TopologyError::UnknownHost(h))
    }

    pub fn ocs_ports(&self, s: SwitchId) -> u32 {
        self.ocs_ports[s.index()]
    }

    pub fn circuit_rate(&self) -> f64 {
        self.circuit_rate
    }

    pub fn packet_rate(&self) -> f64 {
        self.packet_rate
    }

    /// Static links (packet and host).
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn packet_links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(|l| l.kind == LinkKind::Packet)
    }

    /// Upper bound (exclusive) on every link id, circuit links included.
    pub fn link_id_bound(&self) -> usize {
        self.links.len() + self.switch_count() * self.switch_count()
    }

    fn packet_link_count(&self) -> usize {
        self.links.len() - 2 * self.host_count()
    }

    pub fn host_uplink(&self, h: HostId) -> LinkId {
        LinkId((self.packet_link_count() + 2 * h.index()) as u32)
    }

    pub fn host_downlink(&self, h: HostId) -> LinkId {
        LinkId((self.packet_link_count() + 2 * h.index() + 1) as u32)
    }

    /// Reserved id of the circuit link `src -> dst`.
    pub fn circuit_link(&self, src: SwitchId, dst: SwitchId) -> LinkId {
        LinkId((self.links.len() + src.index() * self.switch_count() + dst.index()) as u32)
    }

    /// Describes any link id, including reserved circuit ids.
    pub fn link(&self, id: LinkId) -> Option<Link> {
        if let Some(l) = self.links.get(id.index()) {
            return Some(*l);
        }
        let off = id.index().checked_sub(self.links.len())?;
        let n = self.switch_count();
        if off >= n * n {
            return None;
        }
        let (s, d) = (off / n, off % n);
        if s == d {
            return None;
        }
        Some(Link {
            id,
            src: Node::Switch(SwitchId(s as u32)),
            dst: Node::Switch(SwitchId(d as u32)),
            capacity: self.circuit_rate,
            kind: LinkKind::Circuit,
        })
    }

    pub fn capacity(&self, id: LinkId) -> f64 {
        match self.links.get(id.index()) {
            Some(l) => l.capacity,
            None => self.circuit_rate,
        }
    }

    pub fn is_circuit_link(&self, id: LinkId) -> bool {
        id.index() >= self.links.len()
    }

    /// `(src, dst)` endpoints of a circuit link id.
    pub fn circuit_endpoints(&self, id: LinkId) -> Option<(SwitchId, SwitchId)> {
        match self.link(id)? {
            Link {
                kind: LinkKind::Circuit,
                src: Node::Switch(s),
                dst: Node::Switch(d),
                ..
            } => Some((s, d)),
            _ => None,
        }
    }

    pub fn packet_link(&self, src: SwitchId, dst: SwitchId) -> Option<LinkId> {
        self.adjacency
            .get(src.index())?
            .iter()
            .find(|(nb, _)| *nb == dst)
            .map(|&(_, id)| id)
    }

    pub fn neighbors(&self, s: SwitchId) -> impl Iterator<Item = SwitchId> + '_ {
        self.adjacency[s.index()].iter().map(|&(nb, _)| nb)
    }

    pub fn degree(&self, s: SwitchId) -> usize {
        self.adjacency[s.index()].len()
    }

    /// Upper-tier hop count between two switches.
    pub fn hops(&self, src: SwitchId, dst: SwitchId) -> u32 {
        self.distance[src.index()][dst.index()]
    }

    /// Switch sequence of the default route, both endpoints included.
    pub fn switch_route(&self, src: SwitchId, dst: SwitchId) -> Vec<SwitchId> {
        let mut route = vec![src];
        let mut cur = src;
        while cur != dst {
            cur = SwitchId(self.next_hop[cur.index()][dst.index()]);
            route.push(cur);
        }
        route
    }

    /// Default route between two hosts over packet links only.
    pub fn default_path(&self, src: HostId, dst: HostId) -> Result<Path, TopologyError> {
        if src == dst {
            return Err(TopologyError::SameHost(src));
        }
        let s = self.host_switch(src)?;
        let d = self.host_switch(dst)?;
        let route = self.switch_route(s, d);
        let mut links = Vec::with_capacity(route.len() + 1);
        links.push(self.host_uplink(src));
        for w in route.windows(2) {
            let id = self
                .packet_link(w[0], w[1])
                .ok_or(TopologyError::Disconnected(w[0], w[1]))?;
            links.push(id);
        }
        links.push(self.host_downlink(dst));
        Ok(Path(links))
    }

    /// Switch sequence traversed by a path (circuits included).
    pub fn path_switches(&self, path: &Path) -> Vec<SwitchId> {
        let mut out = Vec::with_capacity(path.len());
        for &id in path.links() {
            if let Some(link) = self.link(id) {
                if let Node::Switch(s) = link.src {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Adjacency list as CSV: `src_switch,dst_switch,capacity_bps`.
    pub fn adjacency_csv(&self) -> String {
        let mut out = String::from("src_switch,dst_switch,capacity_bps\n");
        for l in self.packet_links() {
            if let (Node::Switch(s), Node::Switch(d)) = (l.src, l.dst) {
                out.push_str(&format!("{},{},{}\n", s.0, d.0, l.capacity));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: f64 = 1e9;

    fn rates() -> LinkRates {
        LinkRates::new(10.0 * G, 100.0 * G)
    }

    #[test]
    fn ring_shape() {
        let t = Topology::ring(10, 40, rates()).unwrap();
        assert_eq!(t.switch_count(), 10);
        assert_eq!(t.host_count(), 400);
        for s in t.switches() {
            assert_eq!(t.degree(s), 2);
            assert_eq!(t.hosts_of(s).len(), 40);
        }
        let t3 = Topology::ring(3, 1, rates()).unwrap();
        assert_eq!(t3.packet_links().count(), 6);
    }

    #[test]
    fn degenerate_ring_rejected() {
        assert!(matches!(Topology::ring(2, 1, rates()), Err(TopologyError::Invalid(_))));
    }

    #[test]
    fn fbfly_shape() {
        let t = Topology::fbfly(3, 3, 1, rates()).unwrap();
        assert_eq!(t.switch_count(), 9);
        let t2 = Topology::fbfly(2, 2, 1, rates()).unwrap();
        assert_eq!(t2.switch_count(), 2);
        assert_eq!(t2.packet_links().count(), 2);
        assert!(Topology::fbfly(1, 3, 1, rates()).is_err());
        assert!(Topology::fbfly(3, 1, 1, rates()).is_err());
    }

    #[test]
    fn fbfly_degree_matches_enumeration() {
        // Brute force: count switches whose base-k coordinates differ in exactly one digit.
        let (k, n) = (3u32, 3u32);
        let t = Topology::fbfly(k, n, 1, rates()).unwrap();
        let digits = |mut v: u32| {
            let mut d = Vec::new();
            for _ in 0..n - 1 {
                d.push(v % k);
                v /= k;
            }
            d
        };
        for a in t.switches() {
            let da = digits(a.0);
            let expected = t
                .switches()
                .filter(|b| {
                    let db = digits(b.0);
                    da.iter().zip(&db).filter(|(x, y)| x != y).count() == 1
                })
                .count();
            assert_eq!(expected, 4);
            assert_eq!(t.degree(a), expected);
        }
    }

    #[test]
    fn ring_paths() {
        let t = Topology::ring(10, 40, rates()).unwrap();
        let h0 = t.hosts_of(SwitchId(0))[0];
        let h5 = t.hosts_of(SwitchId(5))[0];
        let h3 = t.hosts_of(SwitchId(3))[0];
        let p = t.default_path(h0, h5).unwrap();
        assert_eq!(p.len(), 5 + 2);
        let p = t.default_path(h0, h3).unwrap();
        assert_eq!(
            t.path_switches(&p),
            vec![SwitchId(0), SwitchId(1), SwitchId(2), SwitchId(3)]
        );
        assert_eq!(t.default_path(h0, h0), Err(TopologyError::SameHost(h0)));
        assert!(t.default_path(h0, HostId(10_000)).is_err());
    }

    #[test]
    fn ring_tie_breaks_lexicographically() {
        let t = Topology::ring(10, 1, rates()).unwrap();
        assert_eq!(t.switch_route(SwitchId(0), SwitchId(5))[1], SwitchId(1));
        assert_eq!(t.switch_route(SwitchId(5), SwitchId(0))[1], SwitchId(4));
    }

    #[test]
    fn max_hop_distance() {
        for n in 3..=16 {
            let t = Topology::ring(n, 1, rates()).unwrap();
            let max = t
                .switches()
                .flat_map(|a| t.switches().map(move |b| (a, b)))
                .map(|(a, b)| t.hops(a, b))
                .max()
                .unwrap();
            assert_eq!(max, n / 2);
        }
        for (k, n) in [(2, 2), (3, 3), (4, 3), (2, 4), (3, 4)] {
            let t = Topology::fbfly(k, n, 1, rates()).unwrap();
            let max = t
                .switches()
                .flat_map(|a| t.switches().map(move |b| (a, b)))
                .map(|(a, b)| t.hops(a, b))
                .max()
                .unwrap();
            assert_eq!(max, n - 1);
        }
    }

    #[test]
    fn fbfly_paths_match_bfs_oracle() {
        let t = Topology::fbfly(3, 3, 2, rates()).unwrap();
        // Independent BFS over the adjacency CSV.
        let n = t.switch_count();
        let mut adj = vec![Vec::new(); n];
        for line in t.adjacency_csv().lines().skip(1) {
            let f: Vec<usize> = line.split(',').take(2).map(|x| x.parse().unwrap()).collect();
            adj[f[0]].push(f[1]);
        }
        for a in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[a] = 0;
            let mut q = VecDeque::from([a]);
            while let Some(v) = q.pop_front() {
                for &u in &adj[v] {
                    if dist[u] == usize::MAX {
                        dist[u] = dist[v] + 1;
                        q.push_back(u);
                    }
                }
            }
            for (b, &d) in dist.iter().enumerate() {
                assert!(d <= 2);
                assert_eq!(t.hops(SwitchId(a as u32), SwitchId(b as u32)) as usize, d);
                if a != b {
                    let ha = t.hosts_of(SwitchId(a as u32))[0];
                    let hb = t.hosts_of(SwitchId(b as u32))[1];
                    let p = t.default_path(ha, hb).unwrap();
                    assert_eq!(p.len(), d + 2);
                }
            }
        }
    }

    #[test]
    fn path_links_are_contiguous() {
        let t = Topology::ring(7, 3, rates()).unwrap();
        for a in 0..t.host_count() as u32 {
            for b in 0..t.host_count() as u32 {
                if a == b {
                    continue;
                }
                let p = t.default_path(HostId(a), HostId(b)).unwrap();
                let links: Vec<Link> = p.links().iter().map(|&id| t.link(id).unwrap()).collect();
                assert_eq!(links[0].src, Node::Host(HostId(a)));
                assert_eq!(links.last().unwrap().dst, Node::Host(HostId(b)));
                for w in links.windows(2) {
                    assert_eq!(w[0].dst, w[1].src);
                }
                let sw = t.path_switches(&p);
                let mut dedup = sw.clone();
                dedup.sort();
                dedup.dedup();
                assert_eq!(dedup.len(), sw.len());
            }
        }
    }

    #[test]
    fn circuit_link_ids() {
        let t = Topology::ring(4, 1, rates()).unwrap();
        let id = t.circuit_link(SwitchId(2), SwitchId(1));
        assert!(t.is_circuit_link(id));
        assert_eq!(t.circuit_endpoints(id), Some((SwitchId(2), SwitchId(1))));
        assert_eq!(t.capacity(id), 100.0 * G);
        assert!(id.index() < t.link_id_bound());
        assert_eq!(t.link(t.circuit_link(SwitchId(1), SwitchId(1))), None);
    }
}
