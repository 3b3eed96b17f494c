//! Exact sampling of the loop soup `L_{alpha,kappa}` restricted to a box.
//!
//! Loops are grouped by their minimal vertex `v` in a vertex order and by
//! their number `j` of visits to `v`. For fixed `(v, j)` the soup loops form a
//! Poisson process of intensity `alpha F_v^j / j`, where `F_v` is the
//! probability that a walk from `v` returns to `v` before hitting an earlier
//! vertex, leaving the box or dying. Drawing `Poisson(alpha / j)` candidates
//! and keeping those whose `j` simulated excursions all return thins that
//! process exactly, and the kept excursions are the loop.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::path::Path;

use fixedbitset::FixedBitSet;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::{FreeGreen, GreenTable};
use crate::lattice::{KillSet, LatticeSpec, RngStream, Site, Terminal, Walker};
use crate::loopmeasure::canonical_form;

/// Largest residual intensity of loops dropped by the multiplicity cap.
pub const JMAX_RESIDUAL: f64 = 1e-12;

/// Boxes up to this many sites get an exact solve for the Green bound.
const BOUND_SOLVE_LIMIT: usize = 1 << 20;

pub const DEFAULT_LENGTH_BUDGET: usize = 50_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VertexOrder {
    Lexicographic,
    /// A permutation of the box indices.
    Custom(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoupParams {
    pub alpha: f64,
    pub spec: LatticeSpec,
    pub order: VertexOrder,
    pub jmax: usize,
    pub stream: RngStream,
    /// Total number of loop sites allowed before sampling aborts.
    pub length_budget: usize,
}

/// Upper bound on the diagonal Green function of any vertex of the box,
/// whatever the killed set: `G_{B(0,2M)}(0,0)` dominates since every `v + B(0,2M)`
/// contains the box. Large boxes with `d >= 3` use the free value instead.
pub fn green_upper_bound(spec: &LatticeSpec) -> Result<f64> {
    spec.validate()?;
    let doubled = spec.with_radius(spec.radius.saturating_mul(2));
    if spec.dim >= 3 && doubled.validate().map_or(true, |_| doubled.site_count() > BOUND_SOLVE_LIMIT) {
        return Ok(FreeGreen::new(spec.dim)?.origin());
    }
    doubled.validate()?;
    let table = GreenTable::new(&doubled, &[])?;
    Ok(table.column_by_index(doubled.center_index())?[doubled.center_index()])
}

/// Smallest `J` with `alpha Fbar^{J+1} / ((J+1)(1 - Fbar)) < JMAX_RESIDUAL`.
pub fn jmax_for(alpha: f64, green_bound: f64) -> usize {
    let f = (1.0 - 1.0 / green_bound).max(0.0);
    if f == 0.0 {
        return 1;
    }
    let mut j = 1usize;
    while alpha * f.powi(j as i32 + 1) / ((j + 1) as f64 * (1.0 - f)) >= JMAX_RESIDUAL {
        j += 1;
    }
    j
}

impl SoupParams {
    pub fn new(spec: &LatticeSpec, alpha: f64, stream: RngStream) -> Result<Self> {
        spec.validate()?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive and finite, got {alpha}")));
        }
        let jmax = jmax_for(alpha, green_upper_bound(spec)?);
        Ok(SoupParams {
            alpha,
            spec: spec.clone(),
            order: VertexOrder::Lexicographic,
            jmax,
            stream,
            length_budget: DEFAULT_LENGTH_BUDGET,
        })
    }

    pub fn with_order(mut self, order: VertexOrder) -> Result<Self> {
        if let VertexOrder::Custom(p) = &order {
            let n = self.spec.site_count();
            let mut seen = FixedBitSet::with_capacity(n);
            if p.len() != n {
                return Err(invalid("vertex order must list every box site once"));
            }
            for &v in p {
                if v as usize >= n || seen.put(v as usize) {
                    return Err(invalid("vertex order must be a permutation of the box"));
                }
            }
        }
        self.order = order;
        Ok(self)
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.length_budget = budget;
        self
    }

    pub fn with_stream(mut self, stream: RngStream) -> Self {
        self.stream = stream;
        self
    }

    pub fn kappa(&self) -> f64 {
        self.spec.kappa
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha must be positive and finite"));
        }
        if self.jmax == 0 {
            return Err(invalid("multiplicity cap must be at least 1"));
        }
        Ok(())
    }

    /// Check that `jmax` meets the residual-intensity target.
    pub fn check_jmax(&self) -> Result<()> {
        let f = 1.0 - 1.0 / green_upper_bound(&self.spec)?;
        let j = self.jmax as i32;
        if f > 0.0 && self.alpha * f.powi(j + 1) / ((j + 1) as f64 * (1.0 - f)) >= JMAX_RESIDUAL {
            return Err(invalid(format!(
                "multiplicity cap {} leaves residual intensity above {JMAX_RESIDUAL}",
                self.jmax
            )));
        }
        Ok(())
    }
}

/// A soup loop as box indices, rooted at its minimal vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SoupLoop {
    pub sites: Vec<u32>,
}

impl SoupLoop {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Canonical rotation and multiplicity (index order is lexicographic).
    pub fn canonical(&self) -> (Vec<u32>, usize) {
        canonical_form(&self.sites)
    }

    /// Consecutive pairs including the closing one.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let n = self.sites.len();
        (0..n).map(move |i| (self.sites[i], self.sites[(i + 1) % n]))
    }
}

/// Which loops of the box soup a sample contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Every loop of the box.
    Full,
    /// Every loop through at least one seed.
    Seeds(Vec<u32>),
    /// Every loop connected to a seed through a chain of intersecting loops.
    /// `stopped_at = Some(r)` when exploration stopped once the cluster
    /// reached sup-norm `r`; the sample is then a sub-cluster.
    Cluster { seeds: Vec<u32>, stopped_at: Option<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub stream_id: u64,
    pub loop_count: usize,
    pub total_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoupSample {
    pub loops: Vec<SoupLoop>,
    pub params: SoupParams,
    pub scope: Scope,
    pub manifest: Manifest,
}

impl SoupSample {
    fn assemble(loops: Vec<SoupLoop>, params: &SoupParams, scope: Scope) -> Self {
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: params.stream.seed,
            stream_id: params.stream.stream_id,
            loop_count: loops.len(),
            total_length: loops.iter().map(|l| l.len()).sum(),
        };
        SoupSample { loops, params: params.clone(), scope, manifest }
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.params.spec
    }

    pub fn total_length(&self) -> usize {
        self.loops.iter().map(|l| l.len()).sum()
    }

    /// Whether some loop visits a site of `set` (indices).
    pub fn hits(&self, set: &[u32]) -> bool {
        self.loops.iter().any(|l| l.sites.iter().any(|s| set.contains(s)))
    }

    /// Whether a single loop visits every site of `set`.
    pub fn single_loop_visits_all(&self, set: &[u32]) -> bool {
        self.loops.iter().any(|l| set.iter().all(|s| l.sites.contains(s)))
    }
}

struct Budget<'a> {
    used: usize,
    limit: usize,
    shared: Option<&'a std::sync::atomic::AtomicUsize>,
}

impl Budget<'_> {
    fn charge(&mut self, n: usize) -> Result<()> {
        self.used += n;
        let total = match self.shared {
            Some(a) => a.fetch_add(n, std::sync::atomic::Ordering::Relaxed) + n,
            None => self.used,
        };
        if total > self.limit {
            return Err(Error::LengthBudget(self.limit));
        }
        Ok(())
    }
}

/// Loops with minimal vertex `v` given that the vertices flagged by
/// `earlier` come before `v`.
fn vertex_loops<K: KillSet + ?Sized, R: Rng + ?Sized>(
    v: usize,
    earlier: &K,
    walker: &mut Walker,
    alpha: f64,
    jmax: usize,
    rng: &mut R,
    budget: &mut Budget,
    out: &mut Vec<SoupLoop>,
) -> Result<()> {
    let kill = |i: usize| i == v || earlier.is_killed(i);
    let mut buf: Vec<u32> = Vec::new();
    let mut rec: Vec<u32> = Vec::new();
    for j in 1..=jmax {
        let mean = alpha / j as f64;
        let count = Poisson::new(mean).map_err(|e| invalid(e.to_string()))?.sample(rng) as u64;
        'candidates: for _ in 0..count {
            buf.clear();
            buf.push(v as u32);
            for _ in 0..j {
                walker.place(v);
                rec.clear();
                let (terminal, _) = walker.run(rng, &kill, Some(&mut rec))?;
                if terminal != Terminal::Killed || walker.index() != v {
                    continue 'candidates;
                }
                buf.extend_from_slice(&rec);
            }
            buf.pop();
            budget.charge(buf.len())?;
            out.push(SoupLoop { sites: buf.clone() });
        }
    }
    Ok(())
}

fn vertex_rng(params: &SoupParams, v: usize) -> rand_chacha::ChaCha8Rng {
    params.stream.derive(v as u64).rng()
}

/// One realization of the soup in the box. Vertices are processed in
/// parallel, each with its own child stream, so the result does not depend on
/// the worker count.
pub fn sample_soup(params: &SoupParams) -> Result<SoupSample> {
    params.validate()?;
    let spec = &params.spec;
    let n = spec.site_count();
    let rank: Vec<u32> = match &params.order {
        VertexOrder::Lexicographic => (0..n as u32).collect(),
        VertexOrder::Custom(p) => {
            let mut r = vec![0u32; n];
            for (pos, &v) in p.iter().enumerate() {
                r[v as usize] = pos as u32;
            }
            r
        }
    };
    let used = std::sync::atomic::AtomicUsize::new(0);
    let per_vertex: Vec<Result<Vec<SoupLoop>>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut rng = vertex_rng(params, v);
            let mut walker = Walker::new(spec);
            let rv = rank[v];
            let earlier = |i: usize| rank[i] < rv;
            let mut budget = Budget { used: 0, limit: params.length_budget, shared: Some(&used) };
            let mut out = Vec::new();
            vertex_loops(v, &earlier, &mut walker, params.alpha, params.jmax, &mut rng, &mut budget, &mut out)?;
            Ok(out)
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| rank[v]);
    let mut slots: Vec<Option<Vec<SoupLoop>>> = Vec::with_capacity(n);
    for r in per_vertex {
        slots.push(Some(r?));
    }
    let mut loops = Vec::new();
    for v in order {
        loops.extend(slots[v].take().unwrap());
    }
    Ok(SoupSample::assemble(loops, params, Scope::Full))
}

/// How far [`sample_cluster`] explores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Explore {
    /// Only loops through the seeds.
    SeedsOnly,
    /// All loops connected to the seeds.
    Component,
    /// As `Component`, but stop once a loop reaches this sup-norm radius.
    UntilRadius(u32),
}

/// Loops of the box soup reachable from `seeds`.
///
/// Vertices are processed in discovery order and each one is treated as the
/// minimal vertex of the loops through it that avoid all earlier processed
/// vertices. Since those loop families are disjoint, the restrictions of the
/// Poisson process to them are independent, and choosing the next vertex from
/// what has been seen keeps the output distributed as the soup restricted to
/// the loop cluster of the seeds.
pub fn sample_cluster(params: &SoupParams, seeds: &[Site], explore: Explore) -> Result<SoupSample> {
    sample_cluster_in(&mut ClusterWorkspace::default(), params, seeds, explore)
}

/// Scratch bitsets for [`sample_cluster_in`], reusable across replicas on the
/// same box so large boxes are not re-zeroed each time.
#[derive(Default)]
pub struct ClusterWorkspace {
    processed: FixedBitSet,
    queued: FixedBitSet,
    touched: Vec<u32>,
}

impl ClusterWorkspace {
    fn reset(&mut self, n: usize) {
        if self.processed.len() != n {
            self.processed = FixedBitSet::with_capacity(n);
            self.queued = FixedBitSet::with_capacity(n);
        } else {
            for &i in &self.touched {
                self.processed.set(i as usize, false);
                self.queued.set(i as usize, false);
            }
        }
        self.touched.clear();
    }
}

pub fn sample_cluster_in(
    ws: &mut ClusterWorkspace,
    params: &SoupParams,
    seeds: &[Site],
    explore: Explore,
) -> Result<SoupSample> {
    params.validate()?;
    let spec = &params.spec;
    let mut seed_idx = Vec::new();
    for s in seeds {
        let i = spec
            .index_of(s)
            .ok_or_else(|| invalid(format!("seed {:?} outside the box", s.0)))? as u32;
        if !seed_idx.contains(&i) {
            seed_idx.push(i);
        }
    }
    ws.reset(spec.site_count());
    let ClusterWorkspace { processed, queued, touched } = ws;
    let mut queue: VecDeque<u32> = VecDeque::new();
    for &i in &seed_idx {
        queued.insert(i as usize);
        touched.push(i);
        queue.push_back(i);
    }
    let mut walker = Walker::new(spec);
    let mut budget = Budget { used: 0, limit: params.length_budget, shared: None };
    let mut loops = Vec::new();
    let mut stopped_at = None;
    while let Some(v) = queue.pop_front() {
        let v = v as usize;
        let mut rng = vertex_rng(params, v);
        let start = loops.len();
        vertex_loops(v, &*processed, &mut walker, params.alpha, params.jmax, &mut rng, &mut budget, &mut loops)?;
        processed.insert(v);
        if explore == Explore::SeedsOnly {
            continue;
        }
        let mut reached = None;
        for l in &loops[start..] {
            for &s in &l.sites {
                if let Explore::UntilRadius(r) = explore {
                    if spec.sup_norm_of(s as usize) >= r {
                        reached = Some(r);
                    }
                }
                if !queued.put(s as usize) {
                    touched.push(s);
                    queue.push_back(s);
                }
            }
        }
        if reached.is_some() && !queue.is_empty() {
            stopped_at = reached;
            break;
        }
    }
    let scope = match explore {
        Explore::SeedsOnly => Scope::Seeds(seed_idx),
        _ => Scope::Cluster { seeds: seed_idx, stopped_at },
    };
    Ok(SoupSample::assemble(loops, params, scope))
}

/// Total number of visits of `x` across all loops.
pub fn occupation(sample: &SoupSample, x: &Site) -> u64 {
    match sample.spec().index_of(x) {
        Some(i) => {
            let i = i as u32;
            sample.loops.iter().map(|l| l.sites.iter().filter(|&&s| s == i).count() as u64).sum()
        }
        None => 0,
    }
}

/// Occupation of every box site.
pub fn occupation_field(sample: &SoupSample) -> Vec<u64> {
    let mut v = vec![0u64; sample.spec().site_count()];
    for l in &sample.loops {
        for &s in &l.sites {
            v[s as usize] += 1;
        }
    }
    v
}

/// Keep probability of a loop of length `n` when thinning `(alpha0, kappa0)`
/// to `(alpha1, kappa1)`.
pub fn keep_probability(alpha0: f64, kappa0: f64, alpha1: f64, kappa1: f64, n: usize) -> f64 {
    (alpha1 / alpha0) * ((1.0 + kappa0) / (1.0 + kappa1)).powi(n as i32)
}

/// Thin a soup to the soup with parameters `(alpha1, kappa1)`; the output
/// loops are a subset of the input loops.
pub fn thin_soup(sample: &SoupSample, alpha1: f64, kappa1: f64, stream: &RngStream) -> Result<SoupSample> {
    let (a0, k0) = (sample.params.alpha, sample.params.spec.kappa);
    if !(alpha1 > 0.0) || !(kappa1 >= k0) {
        return Err(invalid(format!("thinning needs alpha1 > 0 and kappa1 >= kappa0 = {k0}")));
    }
    let cap = a0 * ((1.0 + kappa1) / (1.0 + k0)).powi(2);
    if alpha1 > cap * (1.0 + 1e-12) {
        return Err(invalid(format!(
            "alpha1 = {alpha1} exceeds {cap}: the keep probability of length-2 loops would exceed 1"
        )));
    }
    let mut rng = stream.rng();
    let loops: Vec<SoupLoop> = sample
        .loops
        .iter()
        .filter(|l| rng.random::<f64>() < keep_probability(a0, k0, alpha1, kappa1, l.len()))
        .cloned()
        .collect();
    let mut params = sample.params.clone();
    params.alpha = alpha1;
    params.spec.kappa = kappa1;
    Ok(SoupSample::assemble(loops, &params, sample.scope.clone()))
}

/// Write loops as text, one per line: length then site indices.
pub fn write_loops<W: Write>(mut w: W, loops: &[SoupLoop]) -> Result<()> {
    for l in loops {
        write!(w, "{}", l.len())?;
        for s in &l.sites {
            write!(w, " {s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_loops<R: BufRead>(r: R) -> Result<Vec<SoupLoop>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums: std::result::Result<Vec<u64>, _> = line.split_whitespace().map(str::parse::<u64>).collect();
        let nums = nums.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let (len, sites) = nums.split_first().ok_or_else(|| Error::Parse(format!("line {}: empty", lineno + 1)))?;
        if *len as usize != sites.len() || sites.len() < 2 {
            return Err(Error::Parse(format!("line {}: length {} does not match {} sites", lineno + 1, len, sites.len())));
        }
        let sites = sites
            .iter()
            .map(|&s| u32::try_from(s).map_err(|_| Error::Parse(format!("line {}: index overflow", lineno + 1))))
            .collect::<Result<Vec<u32>>>()?;
        out.push(SoupLoop { sites });
    }
    Ok(out)
}

/// Read a soup written by [`write_sample`]: the loop file plus its manifest.
pub fn read_sample(loops_path: &Path, manifest_path: &Path) -> Result<SoupSample> {
    let meta = std::fs::read_to_string(manifest_path)?;
    let mut sample: SoupSample = serde_json::from_str(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    let f = std::io::BufReader::new(std::fs::File::open(loops_path)?);
    sample.loops = read_loops(f)?;
    let n = sample.spec().site_count();
    for l in &sample.loops {
        if l.sites.iter().any(|&s| s as usize >= n) {
            return Err(Error::Parse("loop site outside the box".into()));
        }
        for (a, b) in l.edges() {
            if !sample.spec().adjacent_indices(a as usize, b as usize) {
                return Err(Error::Parse("consecutive loop sites are not adjacent".into()));
            }
        }
    }
    if sample.loops.len() != sample.manifest.loop_count {
        return Err(Error::Parse("loop count does not match the manifest".into()));
    }
    Ok(sample)
}

/// Manifest JSON without the loop list (which goes to the text file).
pub fn manifest_json(sample: &SoupSample) -> Result<String> {
    let mut v = serde_json::to_value(sample).map_err(|e| Error::Parse(e.to_string()))?;
    v["loops"] = serde_json::Value::Array(Vec::new());
    serde_json::to_string_pretty(&v).map_err(|e| Error::Parse(e.to_string()))
}

/// Write `<stem>.loops` and `<stem>.json` atomically.
pub fn write_sample(dir: &Path, stem: &str, sample: &SoupSample) -> Result<()> {
    let mut text = Vec::new();
    write_loops(&mut text, &sample.loops)?;
    crate::io::write_atomic(&dir.join(format!("{stem}.loops")), &text)?;
    crate::io::write_atomic(&dir.join(format!("{stem}.json")), manifest_json(sample)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_site_box_is_empty() {
        let spec = LatticeSpec::new(3, 0, 0.0).unwrap();
        for seed in 0..20 {
            let p = SoupParams::new(&spec, 3.0, RngStream::new(seed, 0)).unwrap();
            assert!(sample_soup(&p).unwrap().loops.is_empty());
        }
    }

    #[test]
    fn loops_are_closed_lattice_loops_in_the_box() {
        let spec = LatticeSpec::new(2, 3, 0.1).unwrap();
        let p = SoupParams::new(&spec, 2.0, RngStream::new(5, 1)).unwrap();
        let s = sample_soup(&p).unwrap();
        assert!(!s.loops.is_empty());
        for l in &s.loops {
            assert!(l.len() >= 2);
            for (a, b) in l.edges() {
                assert!(spec.adjacent_indices(a as usize, b as usize));
            }
            // Rooted at its minimal vertex in lexicographic order.
            assert_eq!(l.sites[0], *l.sites.iter().min().unwrap());
        }
        let total: u64 = occupation_field(&s).iter().sum();
        assert_eq!(total as usize, s.total_length());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = LatticeSpec::new(3, 2, 0.0).unwrap();
        let p = SoupParams::new(&spec, 1.0, RngStream::new(9, 4)).unwrap();
        assert_eq!(sample_soup(&p).unwrap(), sample_soup(&p).unwrap());
        let c = sample_cluster(&p, &[Site::origin(3)], Explore::Component).unwrap();
        assert_eq!(c, sample_cluster(&p, &[Site::origin(3)], Explore::Component).unwrap());
    }

    #[test]
    fn jmax_meets_residual() {
        for (a, g) in [(1.0, 1.5), (5.0, 3.0), (0.1, 1.01)] {
            let j = jmax_for(a, g);
            let f: f64 = 1.0 - 1.0 / g;
            assert!(a * f.powi(j as i32 + 1) / ((j + 1) as f64 * (1.0 - f)) < JMAX_RESIDUAL);
            if j > 1 {
                assert!(a * f.powi(j as i32) / (j as f64 * (1.0 - f)) >= JMAX_RESIDUAL);
            }
        }
        assert_eq!(jmax_for(1.0, 1.0), 1);
    }

    #[test]
    fn thinning_keep_probabilities() {
        assert_eq!(keep_probability(1.0, 0.0, 1.0, 0.0, 7), 1.0);
        assert!((keep_probability(1.0, 0.0, 4.0, 1.0, 2) - 1.0).abs() < 1e-15);
        assert!((keep_probability(1.0, 0.0, 4.0, 1.0, 3) - 0.5).abs() < 1e-15);
        let spec = LatticeSpec::new(2, 2, 0.0).unwrap();
        let s = sample_soup(&SoupParams::new(&spec, 1.0, RngStream::new(1, 1)).unwrap()).unwrap();
        assert!(thin_soup(&s, 4.0, 1.0, &RngStream::new(2, 2)).is_ok());
        assert!(thin_soup(&s, 4.1, 1.0, &RngStream::new(2, 2)).is_err());
        assert!(thin_soup(&s, 0.5, -0.1, &RngStream::new(2, 2)).is_err());
        let same = thin_soup(&s, 1.0, 0.0, &RngStream::new(2, 2)).unwrap();
        assert_eq!(same.loops, s.loops);
    }

    #[test]
    fn text_format_roundtrip() {
        let spec = LatticeSpec::new(2, 2, 0.0).unwrap();
        let s = sample_soup(&SoupParams::new(&spec, 2.0, RngStream::new(3, 3)).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sample(dir.path(), "soup", &s).unwrap();
        let back = read_sample(&dir.path().join("soup.loops"), &dir.path().join("soup.json")).unwrap();
        assert_eq!(back, s);
        assert!(read_loops("3 1 2\n".as_bytes()).is_err());
        assert!(read_loops("2 1 x\n".as_bytes()).is_err());
    }

    #[test]
    fn length_budget_is_enforced() {
        let spec = LatticeSpec::new(2, 6, 0.0).unwrap();
        let p = SoupParams::new(&spec, 5.0, RngStream::new(1, 1)).unwrap().with_budget(10);
        assert!(matches!(sample_soup(&p), Err(Error::LengthBudget(10))));
    }

    #[test]
    fn custom_order_must_be_a_permutation() {
        let spec = LatticeSpec::new(1, 1, 0.0).unwrap();
        let p = SoupParams::new(&spec, 1.0, RngStream::new(1, 1)).unwrap();
        assert!(p.clone().with_order(VertexOrder::Custom(vec![0, 0, 1])).is_err());
        assert!(p.with_order(VertexOrder::Custom(vec![1, 2, 0])).is_ok());
    }
}
