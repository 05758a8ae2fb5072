//! Skeleton graph parsing into a labelled branch tree.

use std::collections::{BTreeMap, HashMap, VecDeque};

use super::MetricError;
use crate::grid::{adjacent_26, neighbor_offsets_26, Grid3, Voxel};
use crate::tree::{Branch, TreeGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    /// Terminal branches with fewer voxels than this are treated as thinning
    /// spurs and removed before labelling. 0 disables pruning.
    pub min_spur_len: usize,
    /// Maximum Euclidean distance between the root hint and the root end point.
    pub root_tolerance: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            min_spur_len: 3,
            root_tolerance: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Edge {
    a: usize,
    b: usize,
    /// Interior voxels ordered from `a` to `b`.
    path: Vec<usize>,
    alive: bool,
}

struct Graph {
    voxels: Vec<Voxel>,
    adj: Vec<Vec<usize>>,
    /// Voxel ids of each node (one id for an end point, a blob for a junction).
    nodes: Vec<Vec<usize>>,
    node_alive: Vec<bool>,
    edges: Vec<Edge>,
}

/// Parses a one-component skeleton into a tree rooted at the end point
/// nearest `root_hint` (default: the skeleton voxel with the largest z).
pub fn parse_tree(skeleton: &Grid3<u8>, root_hint: Option<Voxel>) -> Result<TreeGraph, MetricError> {
    parse_tree_with(skeleton, root_hint, ParseOptions::default())
}

pub fn parse_tree_with(
    skeleton: &Grid3<u8>,
    root_hint: Option<Voxel>,
    opts: ParseOptions,
) -> Result<TreeGraph, MetricError> {
    let voxels: Vec<Voxel> = (0..skeleton.len())
        .filter(|&i| skeleton.as_slice()[i] != 0)
        .map(|i| skeleton.voxel(i))
        .collect();
    if voxels.is_empty() {
        return Err(MetricError::EmptySkeleton);
    }
    let id_of: HashMap<Voxel, usize> = voxels.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let adj: Vec<Vec<usize>> = voxels
        .iter()
        .map(|v| {
            neighbor_offsets_26()
                .filter_map(|o| {
                    let p = [v[0] as i64 + o[0], v[1] as i64 + o[1], v[2] as i64 + o[2]];
                    if p.iter().any(|&c| c < 0) {
                        return None;
                    }
                    id_of.get(&[p[0] as usize, p[1] as usize, p[2] as usize]).copied()
                })
                .collect()
        })
        .collect();

    let components = count_components(&adj);
    if components != 1 {
        return Err(MetricError::Disconnected { components });
    }
    let root_hint = root_hint.unwrap_or_else(|| {
        *voxels
            .iter()
            .max_by(|a, b| a[0].cmp(&b[0]).then(b[1].cmp(&a[1])).then(b[2].cmp(&a[2])))
            .expect("non-empty")
    });
    if voxels.len() == 1 {
        return Ok(TreeGraph {
            branches: vec![Branch {
                label: 1,
                parent_label: 0,
                centerline: voxels,
            }],
        });
    }

    let mut g = build_graph(voxels, adj)?;
    if opts.min_spur_len > 0 {
        g.prune_spurs(opts.min_spur_len);
    }
    g.check_acyclic()?;

    let root = g
        .end_nodes()
        .into_iter()
        .map(|n| (n, dist(g.voxels[g.nodes[n][0]], root_hint)))
        .filter(|&(_, d)| d <= opts.root_tolerance)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(n, _)| n)
        .ok_or(MetricError::RootNotFound { hint: root_hint })?;
    Ok(g.label_from(root))
}

fn dist(a: Voxel, b: Voxel) -> f64 {
    (0..3)
        .map(|i| (a[i] as f64 - b[i] as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn count_components(adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut count = 0;
    for s in 0..adj.len() {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(p) = stack.pop() {
            for &q in &adj[p] {
                if !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    count
}

fn build_graph(voxels: Vec<Voxel>, adj: Vec<Vec<usize>>) -> Result<Graph, MetricError> {
    let n = voxels.len();
    let mut node_of: Vec<Option<usize>> = vec![None; n];
    let mut nodes: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        if node_of[v].is_some() {
            continue;
        }
        match adj[v].len() {
            1 => {
                node_of[v] = Some(nodes.len());
                nodes.push(vec![v]);
            }
            d if d >= 3 => {
                // Flood the blob of adjacent junction voxels.
                let id = nodes.len();
                let mut blob = vec![v];
                node_of[v] = Some(id);
                let mut k = 0;
                while k < blob.len() {
                    let p = blob[k];
                    k += 1;
                    for &q in &adj[p] {
                        if node_of[q].is_none() && adj[q].len() >= 3 {
                            node_of[q] = Some(id);
                            blob.push(q);
                        }
                    }
                }
                blob.sort_unstable();
                nodes.push(blob);
            }
            _ => {}
        }
    }
    if nodes.is_empty() {
        // Every voxel has exactly two neighbours: a closed loop.
        return Err(MetricError::Cyclic);
    }

    let mut edges: Vec<Edge> = Vec::new();
    let mut used = vec![false; n];
    let mut direct: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    for (a, members) in nodes.iter().enumerate() {
        for &u in members {
            for &v in &adj[u] {
                if let Some(b) = node_of[v] {
                    if b != a {
                        let key = (a.min(b), a.max(b));
                        if direct.insert(key, ()).is_none() {
                            edges.push(Edge {
                                a,
                                b,
                                path: vec![],
                                alive: true,
                            });
                        }
                    }
                    continue;
                }
                if used[v] {
                    continue;
                }
                let (mut prev, mut cur) = (u, v);
                let mut path = Vec::new();
                let end = loop {
                    if let Some(b) = node_of[cur] {
                        break b;
                    }
                    used[cur] = true;
                    path.push(cur);
                    let next = adj[cur]
                        .iter()
                        .copied()
                        .find(|&w| w != prev && !path.contains(&w));
                    match next {
                        Some(w) => {
                            prev = cur;
                            cur = w;
                        }
                        None => return Err(MetricError::Cyclic),
                    }
                };
                if end == a && path.len() <= 2 {
                    // Degenerate loop hugging a junction blob.
                    continue;
                }
                edges.push(Edge {
                    a,
                    b: end,
                    path,
                    alive: true,
                });
            }
        }
    }
    let node_alive = vec![true; nodes.len()];
    Ok(Graph {
        voxels,
        adj,
        nodes,
        node_alive,
        edges,
    })
}

impl Graph {
    fn incident(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&e| self.edges[e].alive && (self.edges[e].a == node || self.edges[e].b == node))
            .collect()
    }

    fn end_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&n| self.node_alive[n] && self.incident(n).len() == 1 && self.nodes[n].len() == 1)
            .collect()
    }

    fn prune_spurs(&mut self, min_len: usize) {
        let leaves: Vec<(usize, usize)> = (0..self.nodes.len())
            .filter(|&n| self.nodes[n].len() == 1 && self.adj[self.nodes[n][0]].len() == 1)
            .filter_map(|n| {
                let inc = self.incident(n);
                (inc.len() == 1).then(|| (n, inc[0]))
            })
            .collect();
        let alive_edges = self.edges.iter().filter(|e| e.alive).count();
        let mut removed = 0;
        for (leaf, e) in leaves {
            let other = if self.edges[e].a == leaf { self.edges[e].b } else { self.edges[e].a };
            if self.is_junction(other) && self.edges[e].path.len() + 1 < min_len && removed + 1 < alive_edges {
                self.edges[e].alive = false;
                self.node_alive[leaf] = false;
                removed += 1;
            }
        }
        // A junction whose branches were all pruned becomes an end point.
        for j in 0..self.nodes.len() {
            if !self.node_alive[j] || !self.is_junction(j) {
                continue;
            }
            let inc = self.incident(j);
            if inc.len() != 1 || self.edges[inc[0]].a == self.edges[inc[0]].b {
                continue;
            }
            let e = inc[0];
            let from = self
                .oriented_to(e, j)
                .last()
                .copied()
                .unwrap_or(self.nodes[self.far(e, j)][0]);
            let tip = self
                .nodes[j]
                .iter()
                .copied()
                .find(|&v| adjacent_26(self.voxels[v], self.voxels[from]))
                .unwrap_or(self.nodes[j][0]);
            self.nodes[j] = vec![tip];
        }
        // Junctions left with two edges become ordinary path voxels.
        loop {
            let Some(j) = (0..self.nodes.len()).find(|&n| {
                self.node_alive[n] && self.is_junction(n) && {
                    let inc = self.incident(n);
                    inc.len() == 2 && inc.iter().all(|&e| self.edges[e].a != self.edges[e].b)
                }
            }) else {
                break;
            };
            let inc = self.incident(j);
            let (e1, e2) = (inc[0], inc[1]);
            let first = self.oriented_to(e1, j);
            let second = self.oriented_from(e2, j);
            let from = first.last().copied().unwrap_or(self.nodes[self.far(e1, j)][0]);
            let to = second.first().copied().unwrap_or(self.nodes[self.far(e2, j)][0]);
            let bridge = self.walk_blob(j, from, to);
            let (a, b) = (self.far(e1, j), self.far(e2, j));
            let mut path = first;
            path.extend(bridge);
            path.extend(second);
            self.edges[e1].alive = false;
            self.edges[e2].alive = false;
            self.node_alive[j] = false;
            self.edges.push(Edge {
                a,
                b,
                path,
                alive: true,
            });
        }
    }

    fn is_junction(&self, node: usize) -> bool {
        self.nodes[node].len() > 1 || self.adj[self.nodes[node][0]].len() >= 3
    }

    fn far(&self, e: usize, node: usize) -> usize {
        if self.edges[e].a == node {
            self.edges[e].b
        } else {
            self.edges[e].a
        }
    }

    /// Interior path of `e` ordered away from `node`.
    fn oriented_from(&self, e: usize, node: usize) -> Vec<usize> {
        let edge = &self.edges[e];
        if edge.a == node {
            edge.path.clone()
        } else {
            edge.path.iter().rev().copied().collect()
        }
    }

    fn oriented_to(&self, e: usize, node: usize) -> Vec<usize> {
        let mut p = self.oriented_from(e, node);
        p.reverse();
        p
    }

    /// Shortest route through a junction blob from a voxel adjacent to
    /// `from` to a voxel adjacent to `to`.
    fn walk_blob(&self, node: usize, from: usize, to: usize) -> Vec<usize> {
        let blob = &self.nodes[node];
        let near = |a: usize, b: usize| adjacent_26(self.voxels[a], self.voxels[b]);
        let starts: Vec<usize> = blob.iter().copied().filter(|&v| near(v, from)).collect();
        let mut prev: HashMap<usize, usize> = HashMap::new();
        let mut queue: VecDeque<usize> = starts.iter().copied().collect();
        for &s in &starts {
            prev.insert(s, s);
        }
        while let Some(p) = queue.pop_front() {
            if near(p, to) {
                let mut route = vec![p];
                let mut c = p;
                while prev[&c] != c {
                    c = prev[&c];
                    route.push(c);
                }
                route.reverse();
                return route;
            }
            for &q in &self.adj[p] {
                if blob.binary_search(&q).is_ok() && !prev.contains_key(&q) {
                    prev.insert(q, p);
                    queue.push_back(q);
                }
            }
        }
        blob.first().map(|&v| vec![v]).unwrap_or_default()
    }

    fn check_acyclic(&self) -> Result<(), MetricError> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for e in self.edges.iter().filter(|e| e.alive) {
            let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
            if ra == rb {
                return Err(MetricError::Cyclic);
            }
            parent[ra] = rb;
        }
        Ok(())
    }

    fn label_from(&self, root: usize) -> TreeGraph {
        let mut branches = Vec::new();
        let mut queue: VecDeque<(usize, usize, u32)> = VecDeque::new();
        let first = self.incident(root)[0];
        queue.push_back((first, root, 0));
        while let Some((e, from, parent_label)) = queue.pop_front() {
            let label = branches.len() as u32 + 1;
            let to = self.far(e, from);
            let mut ids: Vec<usize> = Vec::new();
            if from == root {
                ids.push(self.nodes[root][0]);
            }
            ids.extend(self.oriented_from(e, from));
            let to_is_end = self.nodes[to].len() == 1 && self.incident(to).len() == 1;
            if to_is_end {
                ids.push(self.nodes[to][0]);
            } else {
                let last = ids.last().copied().unwrap_or(self.nodes[from][0]);
                ids.extend(self.walk_blob(to, last, last).into_iter().take(1));
            }
            branches.push(Branch {
                label,
                parent_label,
                centerline: ids.iter().map(|&i| self.voxels[i]).collect(),
            });
            if !to_is_end {
                let mut children: Vec<(Voxel, usize)> = self
                    .incident(to)
                    .into_iter()
                    .filter(|&c| c != e)
                    .map(|c| {
                        let p = self.oriented_from(c, to);
                        let key = p
                            .first()
                            .map(|&i| self.voxels[i])
                            .unwrap_or(self.voxels[self.nodes[self.far(c, to)][0]]);
                        (key, c)
                    })
                    .collect();
                children.sort();
                for (_, c) in children {
                    queue.push_back((c, to, label));
                }
            }
        }
        TreeGraph { branches }
    }
}
