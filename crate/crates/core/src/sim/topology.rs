use std::collections::VecDeque;

use thiserror::Error;

use super::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    BorderRouter,
    Router,
    Leaf,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::BorderRouter => "border-router",
            Role::Router => "router",
            Role::Leaf => "leaf",
        }
    }
}

/// Builtin topology shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum TopologySpec {
    /// `hops` wireless hops: node 0 is the border router, node `hops` the
    /// far end (a leaf).
    Chain { hops: usize },
    /// Undirected edges between external labels; `root` becomes the border
    /// router. Nodes listed in `leaves` get the leaf role, and when the list
    /// is empty every childless node does.
    Tree {
        root: u32,
        edges: Vec<(u32, u32)>,
        leaves: Vec<u32>,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("topology is disconnected: node {0} unreachable from the border router")]
    Disconnected(u32),
    #[error("topology has no nodes")]
    Empty,
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("leaf {0} is not part of the topology")]
    UnknownLeaf(u32),
    #[error("root {0} does not appear in any edge")]
    UnknownRoot(u32),
    #[error("interference range must be 1 or 2 hops, got {0}")]
    BadInterference(u8),
}

/// Connectivity, interference and routing for one scenario.
#[derive(Clone, Debug)]
pub struct Topology {
    labels: Vec<u32>,
    roles: Vec<Role>,
    /// comm[a] = (b, delivery probability of frames a -> b)
    comm: Vec<Vec<(NodeId, f64)>>,
    /// interferers[r] = nodes whose transmissions corrupt receptions at r
    interferers: Vec<Vec<NodeId>>,
    /// affects[s] = receivers whose receptions s corrupts (inverse of above)
    affects: Vec<Vec<NodeId>>,
    /// next_hop[src][dst]
    next_hop: Vec<Vec<Option<NodeId>>>,
    hops: Vec<Vec<u32>>,
    parent: Vec<Option<NodeId>>,
}

fn bfs(adj: &[Vec<NodeId>], from: NodeId) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adj.len()];
    let mut q = VecDeque::new();
    dist[from as usize] = 0;
    q.push_back(from);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u as usize] {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = dist[u as usize] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// Builds a topology with uniform per-link delivery probability and
/// interference reaching `interference_hops` (1 or 2) comm hops.
pub fn build_topology(
    spec: &TopologySpec,
    delivery: f64,
    interference_hops: u8,
) -> Result<Topology, TopologyError> {
    if !(1..=2).contains(&interference_hops) {
        return Err(TopologyError::BadInterference(interference_hops));
    }
    let (labels, edges, roles) = match spec {
        TopologySpec::Chain { hops } => {
            if *hops == 0 {
                return Err(TopologyError::Empty);
            }
            let n = hops + 1;
            let labels: Vec<u32> = (0..n as u32).collect();
            let edges: Vec<(usize, usize)> = (0..*hops).map(|i| (i, i + 1)).collect();
            let mut roles = vec![Role::Router; n];
            roles[0] = Role::BorderRouter;
            roles[n - 1] = Role::Leaf;
            (labels, edges, roles)
        }
        TopologySpec::Tree {
            root,
            edges,
            leaves,
        } => {
            let mut labels: Vec<u32> = Vec::new();
            for &(a, b) in edges {
                if a == b {
                    return Err(TopologyError::SelfLoop(a));
                }
                for x in [a, b] {
                    if !labels.contains(&x) {
                        labels.push(x);
                    }
                }
            }
            if labels.is_empty() {
                return Err(TopologyError::Empty);
            }
            if !labels.contains(root) {
                return Err(TopologyError::UnknownRoot(*root));
            }
            labels.sort_unstable();
            let idx = |l: u32| labels.iter().position(|&x| x == l).expect("label");
            let e: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (idx(a), idx(b))).collect();
            let mut roles = vec![Role::Router; labels.len()];
            roles[idx(*root)] = Role::BorderRouter;
            for &l in leaves {
                if !labels.contains(&l) {
                    return Err(TopologyError::UnknownLeaf(l));
                }
                roles[idx(l)] = Role::Leaf;
            }
            (labels, e, roles)
        }
    };

    let n = labels.len();
    let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for &(a, b) in &edges {
        if !adj[a].contains(&(b as NodeId)) {
            adj[a].push(b as NodeId);
            adj[b].push(a as NodeId);
        }
    }
    for v in adj.iter_mut() {
        v.sort_unstable();
    }

    let br = roles
        .iter()
        .position(|r| *r == Role::BorderRouter)
        .expect("border router") as NodeId;
    let hops: Vec<Vec<u32>> = (0..n).map(|i| bfs(&adj, i as NodeId)).collect();
    if let Some(bad) = hops[br as usize].iter().position(|&d| d == u32::MAX) {
        return Err(TopologyError::Disconnected(labels[bad]));
    }

    let mut roles = roles;
    if let TopologySpec::Tree { leaves, .. } = spec {
        if leaves.is_empty() {
            for i in 0..n {
                let deeper = adj[i]
                    .iter()
                    .any(|&j| hops[br as usize][j as usize] > hops[br as usize][i]);
                if i != br as usize && !deeper {
                    roles[i] = Role::Leaf;
                }
            }
        }
    }

    let comm: Vec<Vec<(NodeId, f64)>> = adj
        .iter()
        .map(|ns| ns.iter().map(|&j| (j, delivery)).collect())
        .collect();
    let interferers: Vec<Vec<NodeId>> = (0..n)
        .map(|r| {
            (0..n as NodeId)
                .filter(|&s| {
                    let d = hops[r][s as usize];
                    s as usize != r && d <= interference_hops as u32
                })
                .collect()
        })
        .collect();
    let mut affects: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for (r, ints) in interferers.iter().enumerate() {
        for &s in ints {
            affects[s as usize].push(r as NodeId);
        }
    }

    // shortest-path next hops, lowest index wins ties
    let mut next_hop = vec![vec![None; n]; n];
    for src in 0..n {
        for dst in 0..n {
            if src == dst {
                continue;
            }
            let d = hops[src][dst];
            next_hop[src][dst] = adj[src]
                .iter()
                .copied()
                .find(|&nb| hops[nb as usize][dst] + 1 == d);
        }
    }
    let parent = (0..n)
        .map(|i| {
            if i == br as usize {
                None
            } else {
                next_hop[i][br as usize]
            }
        })
        .collect();

    Ok(Topology {
        labels,
        roles,
        comm,
        interferers,
        affects,
        next_hop,
        hops,
        parent,
    })
}

impl Topology {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.labels.len() as NodeId
    }

    /// External label of a node (chain index or tree node number).
    pub fn label(&self, n: NodeId) -> u32 {
        self.labels[n as usize]
    }

    pub fn by_label(&self, label: u32) -> Option<NodeId> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map(|i| i as NodeId)
    }

    pub fn role(&self, n: NodeId) -> Role {
        self.roles[n as usize]
    }

    pub fn border_router(&self) -> NodeId {
        self.roles
            .iter()
            .position(|r| *r == Role::BorderRouter)
            .expect("border router") as NodeId
    }

    /// Nodes `n` can exchange frames with.
    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.comm[n as usize].iter().map(|&(m, _)| m)
    }

    /// Frame delivery probability on the directed link, if one exists.
    pub fn delivery(&self, from: NodeId, to: NodeId) -> Option<f64> {
        self.comm[from as usize]
            .iter()
            .find(|&&(m, _)| m == to)
            .map(|&(_, p)| p)
    }

    pub fn set_delivery(&mut self, from: NodeId, to: NodeId, p: f64) {
        if let Some(e) = self.comm[from as usize].iter_mut().find(|e| e.0 == to) {
            e.1 = p;
        }
    }

    pub fn can_hear(&self, receiver: NodeId, sender: NodeId) -> bool {
        self.comm[sender as usize].iter().any(|&(m, _)| m == receiver)
    }

    pub fn interferers(&self, receiver: NodeId) -> &[NodeId] {
        &self.interferers[receiver as usize]
    }

    /// Receivers disturbed when `sender` transmits.
    pub fn affected_by(&self, sender: NodeId) -> &[NodeId] {
        &self.affects[sender as usize]
    }

    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        self.next_hop[from as usize][to as usize]
    }

    pub fn hop_distance(&self, a: NodeId, b: NodeId) -> u32 {
        self.hops[a as usize][b as usize]
    }

    /// Next hop toward the border router.
    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent[n as usize]
    }

    pub fn depth(&self, n: NodeId) -> u32 {
        self.hop_distance(n, self.border_router())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reference_tree() -> TopologySpec {
        TopologySpec::Tree {
            root: 1,
            edges: vec![
                (1, 2),
                (1, 3),
                (2, 4),
                (2, 5),
                (3, 6),
                (4, 7),
                (5, 8),
                (6, 9),
                (7, 10),
                (8, 11),
                (9, 12),
                (10, 13),
                (11, 14),
                (10, 15),
            ],
            leaves: vec![12, 13, 14, 15],
        }
    }

    #[test]
    fn chain2_ends_hidden_at_relay() {
        let t = build_topology(&TopologySpec::Chain { hops: 2 }, 1.0, 2).unwrap();
        assert!(!t.can_hear(0, 2));
        assert!(!t.can_hear(2, 0));
        assert!(t.interferers(1).contains(&0));
        assert!(t.interferers(1).contains(&2));
        assert_eq!(t.next_hop(2, 0), Some(1));
    }

    #[test]
    fn chain1_only_peer() {
        let t = build_topology(&TopologySpec::Chain { hops: 1 }, 1.0, 2).unwrap();
        assert_eq!(t.interferers(0), &[1]);
        assert_eq!(t.interferers(1), &[0]);
        assert_eq!(t.role(0), Role::BorderRouter);
    }

    #[test]
    fn one_hop_interference_shrinks_map() {
        let t = build_topology(&TopologySpec::Chain { hops: 3 }, 1.0, 1).unwrap();
        assert_eq!(t.interferers(1), &[0, 2]);
        let t2 = build_topology(&TopologySpec::Chain { hops: 3 }, 1.0, 2).unwrap();
        assert_eq!(t2.interferers(1), &[0, 2, 3]);
    }

    #[test]
    fn comm_edges_within_interference() {
        for h in 1..=2 {
            let t = build_topology(&reference_tree(), 0.9, h).unwrap();
            for a in t.nodes() {
                for b in t.neighbors(a) {
                    assert!(t.interferers(b).contains(&a));
                }
            }
        }
    }

    #[test]
    fn reference_tree_shape() {
        let t = build_topology(&reference_tree(), 1.0, 2).unwrap();
        let br = t.border_router();
        assert_eq!(t.label(br), 1);
        let max_depth = t.nodes().map(|n| t.depth(n)).max().unwrap();
        assert!(max_depth <= 5);
        for l in [12, 13, 14, 15] {
            assert_eq!(t.role(t.by_label(l).unwrap()), Role::Leaf);
        }
        assert_eq!(t.nodes().filter(|&n| t.role(n) == Role::BorderRouter).count(), 1);
    }

    #[test]
    fn disconnected_rejected() {
        let spec = TopologySpec::Tree {
            root: 1,
            edges: vec![(1, 2), (3, 4)],
            leaves: vec![],
        };
        assert_eq!(
            build_topology(&spec, 1.0, 2).unwrap_err(),
            TopologyError::Disconnected(3)
        );
    }

    #[test]
    fn default_leaves_are_childless() {
        let spec = TopologySpec::Tree {
            root: 1,
            edges: vec![(1, 2), (2, 3), (1, 4)],
            leaves: vec![],
        };
        let t = build_topology(&spec, 1.0, 2).unwrap();
        assert_eq!(t.role(t.by_label(3).unwrap()), Role::Leaf);
        assert_eq!(t.role(t.by_label(4).unwrap()), Role::Leaf);
        assert_eq!(t.role(t.by_label(2).unwrap()), Role::Router);
    }
}
