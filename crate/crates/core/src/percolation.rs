//! Percolation of open edges (edges traversed by some loop): clusters,
//! loop-distance shells, arm and crossing events, chain sets and cluster
//! capacity.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{guard, invalid, Result};
use crate::green::{capacity_mc, CapacityEstimate, CapacityMethod};
use crate::lattice::{RngStream, Site};
use crate::sampler::{Scope, SoupSample};

/// Largest chain length accepted by [`u_set_count`].
pub const MAX_CHAIN: usize = 4;

/// Undirected open edges, stored with the smaller index first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpenEdgeSet {
    edges: HashSet<(u32, u32)>,
}

impl OpenEdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn is_subset(&self, other: &OpenEdgeSet) -> bool {
        self.edges.is_subset(&other.edges)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(u32, u32)> {
        self.edges.iter()
    }
}

pub fn open_edges(sample: &SoupSample) -> OpenEdgeSet {
    let mut edges = HashSet::new();
    for l in &sample.loops {
        for (a, b) in l.edges() {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    OpenEdgeSet { edges }
}

/// Union-find over a compact id range, with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = self.parent[x as usize];
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }
}

/// Sites touched by the loops of a sample, with a compact id each, and the
/// union-find of open-edge connectivity over them.
pub struct SiteClusters {
    ids: HashMap<u32, u32>,
    sites: Vec<u32>,
    uf: UnionFind,
}

impl SiteClusters {
    pub fn build(sample: &SoupSample) -> Self {
        let mut ids = HashMap::new();
        let mut sites = Vec::new();
        for l in &sample.loops {
            for &s in &l.sites {
                ids.entry(s).or_insert_with(|| {
                    sites.push(s);
                    (sites.len() - 1) as u32
                });
            }
        }
        let mut uf = UnionFind::new(sites.len());
        for l in &sample.loops {
            for (a, b) in l.edges() {
                uf.union(ids[&a], ids[&b]);
            }
        }
        SiteClusters { ids, sites, uf }
    }

    /// Box indices of the cluster containing `x`; empty when `x` is on no loop.
    pub fn cluster(&mut self, x: u32) -> Vec<u32> {
        let Some(&id) = self.ids.get(&x) else {
            return Vec::new();
        };
        let root = self.uf.find(id);
        let mut out: Vec<u32> = (0..self.sites.len() as u32)
            .filter(|&i| self.uf.find(i) == root)
            .map(|i| self.sites[i as usize])
            .collect();
        out.sort_unstable();
        out
    }

    /// Representative of the cluster of box index `x`, if `x` is on a loop.
    pub fn find_root(&mut self, x: u32) -> Option<u32> {
        let id = *self.ids.get(&x)?;
        Some(self.uf.find(id))
    }

    /// Roots of all clusters with their member indices.
    pub fn components(&mut self) -> HashMap<u32, Vec<u32>> {
        let mut m: HashMap<u32, Vec<u32>> = HashMap::new();
        for i in 0..self.sites.len() as u32 {
            let r = self.uf.find(i);
            m.entry(r).or_default().push(self.sites[i as usize]);
        }
        m
    }
}

/// Loops as nodes, joined when they share a site.
pub struct LoopGraph {
    adjacency: Vec<Vec<usize>>,
    through: HashMap<u32, Vec<usize>>,
}

impl LoopGraph {
    pub fn build(sample: &SoupSample) -> Self {
        let mut through: HashMap<u32, Vec<usize>> = HashMap::new();
        for (k, l) in sample.loops.iter().enumerate() {
            for &s in &l.sites {
                let e = through.entry(s).or_default();
                if e.last() != Some(&k) {
                    e.push(k);
                }
            }
        }
        let mut adjacency: Vec<HashSet<usize>> = vec![HashSet::new(); sample.loops.len()];
        for ls in through.values() {
            for &a in ls {
                for &b in ls {
                    if a != b {
                        adjacency[a].insert(b);
                    }
                }
            }
        }
        let adjacency = adjacency
            .into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect();
        LoopGraph { adjacency, through }
    }

    pub fn neighbours(&self, k: usize) -> &[usize] {
        &self.adjacency[k]
    }

    pub fn loops_through(&self, site: u32) -> &[usize] {
        self.through.get(&site).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Loop-graph distance from the set of loops through `site` (those are at 1).
    pub fn distances_from(&self, site: u32) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::new();
        for &k in self.loops_through(site) {
            dist[k] = Some(1);
            queue.push_back(k);
        }
        while let Some(k) = queue.pop_front() {
            let dk = dist[k].unwrap();
            for &m in &self.adjacency[k] {
                if dist[m].is_none() {
                    dist[m] = Some(dk + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub origin: Vec<i32>,
    /// Box indices of the cluster, sorted.
    pub sites: Vec<u32>,
    pub size: usize,
    /// Largest sup-norm distance from `origin` reached by the cluster.
    pub reached_radius: u32,
    /// `shells[i]` is the number of sites at loop distance `i`; shell 0 is the
    /// origin itself when it lies on a loop.
    pub shells: Vec<usize>,
    pub capacity: Option<CapacityEstimate>,
}

impl ClusterReport {
    pub fn contains(&self, index: u32) -> bool {
        self.sites.binary_search(&index).is_ok()
    }

    /// `#C(0, 1)`: sites at loop distance exactly 1.
    pub fn first_shell(&self) -> usize {
        self.shells.get(1).copied().unwrap_or(0)
    }
}

fn check_scope_covers(sample: &SoupSample, x: u32) -> Result<()> {
    match &sample.scope {
        Scope::Full => Ok(()),
        Scope::Cluster { seeds, stopped_at: None } if seeds.contains(&x) => Ok(()),
        Scope::Cluster { seeds, stopped_at: Some(_) } if seeds.contains(&x) => Ok(()),
        _ => Err(invalid("the sample does not contain the whole cluster of this site")),
    }
}

/// Cluster of `x`, its loop-distance shells and reach. A site on no loop has
/// an empty cluster.
pub fn cluster_of(sample: &SoupSample, x: &Site) -> Result<ClusterReport> {
    let spec = sample.spec();
    let xi = spec.index_of(x).ok_or_else(|| invalid(format!("site {:?} outside the box", x.0)))? as u32;
    check_scope_covers(sample, xi)?;
    let graph = LoopGraph::build(sample);
    let dist = graph.distances_from(xi);
    let mut site_dist: HashMap<u32, usize> = HashMap::new();
    for (k, d) in dist.iter().enumerate() {
        if let Some(d) = *d {
            for &s in &sample.loops[k].sites {
                let e = site_dist.entry(s).or_insert(d);
                if d < *e {
                    *e = d;
                }
            }
        }
    }
    if !site_dist.is_empty() {
        site_dist.insert(xi, 0);
    }
    let mut sites: Vec<u32> = site_dist.keys().copied().collect();
    sites.sort_unstable();
    let max_d = site_dist.values().copied().max();
    let mut shells = vec![0usize; max_d.map_or(0, |m| m + 1)];
    for &d in site_dist.values() {
        shells[d] += 1;
    }
    let reached_radius = sites
        .iter()
        .map(|&s| spec.site_of(s as usize).offset(x).sup_norm() as u32)
        .max()
        .unwrap_or(0);
    Ok(ClusterReport {
        origin: x.0.clone(),
        size: sites.len(),
        sites,
        reached_radius,
        shells,
        capacity: None,
    })
}

fn check_truncation(sample: &SoupSample, radius: u32, lambda: f64) -> Result<()> {
    if !(lambda >= 1.0) {
        return Err(invalid("box factor lambda must be at least 1"));
    }
    if lambda * radius as f64 > sample.spec().radius as f64 + 1e-9 {
        return Err(guard(format!(
            "radius {radius} exceeds box radius {} / lambda {lambda}",
            sample.spec().radius
        )));
    }
    Ok(())
}

/// Whether the cluster of the origin reaches `sup-norm = n`.
pub fn one_arm(sample: &SoupSample, n: u32, lambda: f64) -> Result<bool> {
    check_truncation(sample, n, lambda)?;
    let o = Site::origin(sample.spec().dim);
    if let Scope::Cluster { stopped_at: Some(r), .. } = sample.scope {
        if n > r {
            return Err(invalid(format!("exploration stopped at radius {r}, cannot decide radius {n}")));
        }
    }
    Ok(cluster_of(sample, &o)?.reached_radius >= n)
}

/// Whether one cluster meets both `B(0,n)` and `sup-norm >= m`.
pub fn crossing(sample: &SoupSample, n: u32, m: u32, lambda: f64) -> Result<bool> {
    if n >= m {
        return Err(invalid("crossing needs n < m"));
    }
    check_truncation(sample, m, lambda)?;
    if sample.scope != Scope::Full {
        return Err(invalid("crossing needs a full soup"));
    }
    let spec = sample.spec();
    let mut sc = SiteClusters::build(sample);
    Ok(sc.components().values().any(|c| {
        let norms = c.iter().map(|&s| spec.sup_norm_of(s as usize));
        let (lo, hi) = norms.fold((u32::MAX, 0), |(lo, hi), r| (lo.min(r), hi.max(r)));
        lo <= n && hi >= m
    }))
}

/// Whether `x` is in the cluster of the origin.
pub fn two_point(sample: &SoupSample, x: &Site) -> Result<bool> {
    let spec = sample.spec();
    let xi = spec.index_of(x).ok_or_else(|| invalid("site outside the box"))? as u32;
    Ok(cluster_of(sample, &Site::origin(spec.dim))?.contains(xi))
}

/// `|U(0,K)|`: sites `x != 0` on the last loop of some chain of `K` distinct
/// loops with `0` on the first, consecutive loops intersecting and
/// non-consecutive loops disjoint.
pub fn u_set_count(sample: &SoupSample, k: usize) -> Result<usize> {
    if k == 0 || k > MAX_CHAIN {
        return Err(guard(format!("chain length must be in 1..={MAX_CHAIN}, got {k}")));
    }
    let spec = sample.spec();
    let o = spec.center_index() as u32;
    check_scope_covers(sample, o)?;
    let graph = LoopGraph::build(sample);
    let mut found: HashSet<u32> = HashSet::new();
    let mut chain = Vec::with_capacity(k);
    for &first in graph.loops_through(o) {
        chain.push(first);
        extend_chain(&graph, k, &mut chain, &mut |last| {
            for &s in &sample.loops[last].sites {
                if s != o {
                    found.insert(s);
                }
            }
        });
        chain.pop();
    }
    Ok(found.len())
}

fn extend_chain(graph: &LoopGraph, k: usize, chain: &mut Vec<usize>, emit: &mut dyn FnMut(usize)) {
    let last = *chain.last().unwrap();
    if chain.len() == k {
        emit(last);
        return;
    }
    for &next in graph.neighbours(last) {
        // `next` meets `last` by construction; it must miss every earlier loop.
        let earlier = &chain[..chain.len() - 1];
        if chain.contains(&next) || earlier.iter().any(|&e| graph.neighbours(e).binary_search(&next).is_ok()) {
            continue;
        }
        chain.push(next);
        extend_chain(graph, k, chain, emit);
        chain.pop();
    }
}

/// Capacity of the origin cluster of a soup in `B(0,k)`, escape radius twice
/// the cluster radius.
pub fn cluster_capacity(sample: &SoupSample, walkers: u64, stream: &RngStream) -> Result<CapacityEstimate> {
    let d = sample.spec().dim;
    if !(3..=4).contains(&d) {
        return Err(invalid(format!("cluster capacity experiments are defined for d in {{3,4}}, got {d}")));
    }
    let o = Site::origin(d);
    let report = cluster_of(sample, &o)?;
    if report.sites.is_empty() {
        return Ok(CapacityEstimate::zero(CapacityMethod::EscapeMc { radius: 0, walkers }));
    }
    let set: Vec<Site> = report.sites.iter().map(|&s| sample.spec().site_of(s as usize)).collect();
    let r = (2 * report.reached_radius).max(2);
    capacity_mc(&set, r, walkers, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;
    use crate::sampler::{sample_soup, SoupLoop, SoupParams};

    fn sample_with(spec: &LatticeSpec, loops: Vec<Vec<Vec<i32>>>) -> SoupSample {
        let p = SoupParams::new(spec, 1.0, RngStream::new(0, 0)).unwrap();
        let mut s = sample_soup(&p).unwrap();
        s.loops = loops
            .into_iter()
            .map(|l| SoupLoop { sites: l.into_iter().map(|c| spec.index_of(&Site(c)).unwrap() as u32).collect() })
            .collect();
        s
    }

    #[test]
    fn empty_soup() {
        let spec = LatticeSpec::new(2, 4, 0.0).unwrap();
        let s = sample_with(&spec, vec![]);
        assert!(open_edges(&s).is_empty());
        let c = cluster_of(&s, &Site::origin(2)).unwrap();
        assert_eq!((c.size, c.reached_radius), (0, 0));
        assert!(!one_arm(&s, 1, 2.0).unwrap());
        assert!(!crossing(&s, 1, 2, 2.0).unwrap());
        assert_eq!(u_set_count(&s, 2).unwrap(), 0);
    }

    #[test]
    fn single_two_site_loop() {
        let spec = LatticeSpec::new(2, 4, 0.0).unwrap();
        let s = sample_with(&spec, vec![vec![vec![0, 0], vec![1, 0]]]);
        let e = open_edges(&s);
        assert_eq!(e.len(), 1);
        let c = cluster_of(&s, &Site::origin(2)).unwrap();
        assert_eq!(c.shells, vec![1, 1]);
        assert_eq!(c.reached_radius, 1);
        assert!(one_arm(&s, 1, 2.0).unwrap());
        assert!(!one_arm(&s, 2, 2.0).unwrap());
        assert!(one_arm(&s, 3, 2.0).is_err());
        assert_eq!(u_set_count(&s, 1).unwrap(), 1);
    }

    #[test]
    fn chain_of_loops_gives_shells() {
        let spec = LatticeSpec::new(2, 6, 0.0).unwrap();
        let s = sample_with(
            &spec,
            vec![
                vec![vec![0, 0], vec![1, 0]],
                vec![vec![1, 0], vec![2, 0], vec![2, 1], vec![1, 1]],
                vec![vec![2, 1], vec![3, 1]],
                vec![vec![-3, -3], vec![-3, -2]],
            ],
        );
        let c = cluster_of(&s, &Site::origin(2)).unwrap();
        // 0 | (1,0) | (2,0),(2,1),(1,1) | (3,1)
        assert_eq!(c.shells, vec![1, 1, 3, 1]);
        assert_eq!(c.size, 6);
        assert_eq!(c.reached_radius, 3);
        let mut sc = SiteClusters::build(&s);
        assert_eq!(sc.cluster(spec.center_index() as u32), c.sites);
        assert_eq!(u_set_count(&s, 2).unwrap(), 4);
        assert_eq!(u_set_count(&s, 3).unwrap(), 2);
        assert_eq!(u_set_count(&s, 4).unwrap(), 0);
        assert!(crossing(&s, 2, 3, 2.0).unwrap());
        assert!(!crossing(&s, 0, 4, 1.0).unwrap());
        assert!(two_point(&s, &Site(vec![3, 1])).unwrap());
        assert!(!two_point(&s, &Site(vec![-3, -3])).unwrap());
    }

    #[test]
    fn chain_pattern_excludes_shortcuts() {
        // Three loops all through (1,0): a chain of length 3 would need the
        // first and third to be disjoint.
        let spec = LatticeSpec::new(2, 4, 0.0).unwrap();
        let s = sample_with(
            &spec,
            vec![
                vec![vec![0, 0], vec![1, 0]],
                vec![vec![1, 0], vec![2, 0]],
                vec![vec![1, 0], vec![1, 1]],
            ],
        );
        assert_eq!(u_set_count(&s, 3).unwrap(), 0);
        assert!(u_set_count(&s, 5).is_err());
    }
}
