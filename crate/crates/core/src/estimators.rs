//! Experiment drivers: replicated soups turned into estimates with standard
//! errors, and weighted log-log slope fits.
//!
//! Every experiment is a list of tasks (one per size, or a single task), each
//! producing a fixed-length vector of per-replica statistics. Replicas are
//! processed in blocks; a block's sums are accumulated in replica order, so
//! results depend only on the seed and the block boundaries, never on the
//! number of workers. Replica `r` of task `n` draws from the stream keyed by
//! `(kind, n, r)`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::time::Instant;

use fixedbitset::FixedBitSet;
use rand::Rng;
use rand_distr::{Distribution, Zeta};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::green::{FreeGreen, GreenTable};
use crate::lattice::{LatticeSpec, RngStream, Site, StepOutcome, Walker, STEP_CAP};
use crate::loopmeasure::expected_first_shell_with;
use crate::percolation::{cluster_capacity, cluster_of, crossing, one_arm};
use crate::sampler::{
    sample_cluster_in, sample_soup, thin_soup, ClusterWorkspace, Explore, SoupParams,
};

pub const CSV_HEADER: &str = "kind,d,alpha,kappa,n,value,stderr,replicas,walltime_s";

/// The tail prefactor is read at the largest threshold with at least this
/// many exceedances.
pub const PREFACTOR_MIN_EXCEEDANCES: u64 = 1000;

/// Replicas per block (also the checkpoint granularity).
pub const BLOCK: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OneArm,
    TwoPoint,
    ClusterTail,
    ExcursionTail,
    CrossingScan,
    FirstShell,
    CapacityGrowth,
    GwProgeny,
}

impl ExperimentKind {
    pub fn label(&self) -> &'static str {
        match self {
            ExperimentKind::OneArm => "one-arm",
            ExperimentKind::TwoPoint => "two-point",
            ExperimentKind::ClusterTail => "cluster-tail",
            ExperimentKind::ExcursionTail => "excursion-tail",
            ExperimentKind::CrossingScan => "crossing-scan",
            ExperimentKind::FirstShell => "first-shell",
            ExperimentKind::CapacityGrowth => "capacity-growth",
            ExperimentKind::GwProgeny => "gw-progeny",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dim: usize,
    pub alpha: f64,
    pub kappa: f64,
    /// Radii, offsets or thresholds, increasing.
    pub sizes: Vec<u32>,
    /// Truncation factor: radius-`n` events are simulated in `B(0, lambda n)`.
    pub box_factor: f64,
    /// Fixed box radius for single-task experiments (tails, first shell).
    pub box_radius: u32,
    pub replicas: u64,
    pub seed: u64,
    /// Walkers per boundary site in capacity estimates.
    pub walkers: u64,
    /// Intensity grid of the crossing scan.
    pub alphas: Vec<f64>,
    /// Crossing from `B(0,n)` to `sup-norm = ceil(beta n)`.
    pub beta: f64,
    /// Crossing probability level reported by the scan.
    pub level: f64,
    /// Dimensions for the first-shell threshold proxy.
    pub dims: Vec<usize>,
    /// Cube radius of the exact first-shell orbit sum.
    pub truncation_radius: u32,
    /// Cluster tail: explore only the loops through the origin.
    pub first_shell_only: bool,
    /// Smallest size entering slope fits.
    pub fit_min: f64,
    /// Offspring tail exponent `a` of the Galton-Watson experiment.
    pub tail_exponent: f64,
    pub offspring_mean: f64,
    pub generations: u32,
    /// One-arm: compute the single-loop lower bound by exact Green solves.
    pub exact_lower_bound: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            kind: ExperimentKind::OneArm,
            dim: 5,
            alpha: 1.0,
            kappa: 0.0,
            sizes: vec![2, 3, 4, 6],
            box_factor: 2.0,
            box_radius: 20,
            replicas: 10_000,
            seed: 1,
            walkers: 1,
            alphas: vec![0.05, 0.1, 0.2, 0.4],
            beta: 2.0,
            level: 0.5,
            dims: vec![6, 8, 10],
            truncation_radius: 4,
            first_shell_only: true,
            fit_min: 1.0,
            tail_exponent: 1.5,
            offspring_mean: 0.5,
            generations: 10,
            exact_lower_bound: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicas < 100 {
            return Err(invalid(format!("replicas must be at least 100, got {}", self.replicas)));
        }
        if self.kind != ExperimentKind::FirstShell || !self.sizes.is_empty() {
            if self.sizes.is_empty() {
                return Err(invalid("sizes must be nonempty"));
            }
            if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("sizes must be strictly increasing"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) && self.kind != ExperimentKind::GwProgeny {
            return Err(invalid("alpha must be positive"));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(invalid(format!("kappa must be finite and >= 0 (kappa < 0 is unsupported), got {}", self.kappa)));
        }
        if !(self.box_factor >= 1.0) {
            return Err(invalid("box factor must be at least 1"));
        }
        match self.kind {
            ExperimentKind::ClusterTail | ExperimentKind::FirstShell if self.dim < 3 => {
                Err(invalid("cluster experiments need d >= 3"))
            }
            ExperimentKind::FirstShell if self.dim < 5 => {
                Err(invalid("the first-shell expectation is finite only for d >= 5"))
            }
            ExperimentKind::ExcursionTail if self.dim < 3 => Err(invalid("excursion statistics need d >= 3")),
            ExperimentKind::CapacityGrowth if !(3..=4).contains(&self.dim) => {
                Err(invalid("capacity growth is defined for d in {3, 4}"))
            }
            ExperimentKind::CrossingScan if self.beta < 2.0 => Err(invalid("crossing scan needs beta >= 2")),
            ExperimentKind::GwProgeny => {
                if !(self.tail_exponent > 1.0) {
                    return Err(invalid("offspring tail exponent must exceed 1"));
                }
                if !(self.offspring_mean >= 0.0 && self.offspring_mean < 1.0) {
                    return Err(invalid(format!(
                        "offspring mean must be in [0, 1) (subcritical), got {}",
                        self.offspring_mean
                    )));
                }
                let zmean = zeta(self.tail_exponent) / zeta(self.tail_exponent + 1.0);
                if self.offspring_mean > zmean {
                    return Err(invalid("offspring mean exceeds the zeta mean"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn master(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }

    fn replica_stream(&self, n: u32, replica: u64) -> RngStream {
        self.master().derive_keyed(self.kind.label(), n as u64, replica)
    }

    fn truncated_box(&self, radius: u32) -> Result<LatticeSpec> {
        LatticeSpec::new(self.dim, (self.box_factor * radius as f64).ceil() as u32, self.kappa)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub kind: String,
    pub d: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub n: f64,
    pub value: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub walltime_s: f64,
}

impl EstimateRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.kind, self.d, self.alpha, self.kappa, self.n, self.value, self.stderr, self.replicas, self.walltime_s
        )
    }
}

pub fn rows_to_csv(rows: &[EstimateRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn rows_from_csv(text: &str) -> Result<Vec<EstimateRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse("missing or wrong CSV header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Parse(format!("expected 9 fields: {l}")));
            }
            Ok(EstimateRow {
                kind: f[0].to_string(),
                d: f[1].parse().map_err(|_| Error::Parse(format!("bad d: {}", f[1])))?,
                alpha: num(f[2])?,
                kappa: num(f[3])?,
                n: num(f[4])?,
                value: num(f[5])?,
                stderr: num(f[6])?,
                replicas: f[7].parse().map_err(|_| Error::Parse(format!("bad replicas: {}", f[7])))?,
                walltime_s: num(f[8])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// Whether the smallest size was dropped for a relative SE above 20%.
    pub excluded_smallest: bool,
}

/// Weighted straight-line fit; `weights = None` fits unweighted and takes the
/// slope error from the residuals.
fn weighted_line(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> (f64, f64, f64) {
    let n = xs.len();
    let w: Vec<f64> = weights.map_or(vec![1.0; n], |w| w.to_vec());
    let sw: f64 = w.iter().sum();
    let mx = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).zip(&w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if weights.is_some() {
        (1.0 / sxx).sqrt()
    } else if n > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, se, intercept)
}

/// Weighted least squares of `log value` on `log n` with weights
/// `1/relSE^2`. Points are `(n, value, stderr)`. The smallest `n` is dropped
/// when its relative SE exceeds 20% (and at least three points remain).
pub fn fit_log_log(points: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("slope fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.1 > 0.0) || !(p.0 > 0.0)) {
        return Err(Error::InsufficientData(format!("slope fit needs positive values, got {} at n={}", p.1, p.0)));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut excluded = false;
    if pts.len() > 3 && pts[0].2 / pts[0].1 > 0.2 {
        pts.remove(0);
        excluded = true;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let rel: Vec<f64> = pts.iter().map(|p| p.2 / p.1).collect();
    let (slope, slope_se, intercept) = if rel.iter().all(|&r| r > 0.0) {
        let w: Vec<f64> = rel.iter().map(|r| 1.0 / (r * r)).collect();
        weighted_line(&xs, &ys, Some(&w))
    } else {
        weighted_line(&xs, &ys, None)
    };
    Ok(SlopeFit { slope, slope_se, intercept, points_used: pts.len(), excluded_smallest: excluded })
}

/// Per-statistic running sums over replicas.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accum {
    pub replicas: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub walltime_s: f64,
}

impl Accum {
    pub fn new(stats: usize) -> Self {
        Accum { replicas: 0, sum: vec![0.0; stats], sum_sq: vec![0.0; stats], walltime_s: 0.0 }
    }

    fn push(&mut self, x: &[f64]) {
        self.replicas += 1;
        for (i, &v) in x.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
    }

    pub fn merge(&mut self, o: &Accum) {
        if self.sum.is_empty() {
            self.sum = vec![0.0; o.sum.len()];
            self.sum_sq = vec![0.0; o.sum.len()];
        }
        self.replicas += o.replicas;
        for i in 0..self.sum.len() {
            self.sum[i] += o.sum[i];
            self.sum_sq[i] += o.sum_sq[i];
        }
        self.walltime_s += o.walltime_s;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.replicas as f64
    }

    /// Standard error of the mean; equals `sqrt(p(1-p)/N)` for indicators.
    pub fn se(&self, i: usize) -> f64 {
        let n = self.replicas as f64;
        let m = self.mean(i);
        ((self.sum_sq[i] / n - m * m).max(0.0) / n).sqrt()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<EstimateRow>,
    pub fits: Vec<(String, SlopeFit)>,
    /// Kind-specific diagnostics (prefactors, exact comparisons, thresholds).
    pub extras: serde_json::Map<String, serde_json::Value>,
}

impl ExperimentOutput {
    pub fn fit(&self, label: &str) -> Option<&SlopeFit> {
        self.fits.iter().find(|(l, _)| l == label).map(|(_, f)| f)
    }

    pub fn rows_of(&self, kind: &str) -> Vec<&EstimateRow> {
        self.rows.iter().filter(|r| r.kind == kind).collect()
    }

    pub fn sidecar_json(&self, spec: &ExperimentSpec) -> Result<String> {
        let fits: Vec<serde_json::Value> = self
            .fits
            .iter()
            .map(|(l, f)| {
                let mut v = serde_json::to_value(f).unwrap();
                v["label"] = serde_json::Value::String(l.clone());
                v
            })
            .collect();
        let v = serde_json::json!({
            "kind": spec.kind.label(),
            "fits": fits,
            "extras": self.extras,
            "fit_policy": "weighted least squares on (log n, log value), weights 1/relSE^2; smallest n dropped when relSE > 20%",
        });
        serde_json::to_string_pretty(&v).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Riemann zeta for `s > 1` by Euler-Maclaurin summation.
pub fn zeta(s: f64) -> f64 {
    const N: usize = 12;
    const B: [f64; 6] = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0];
    let n = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    let mut rising = s;
    let mut fact = 2.0;
    for (j, b) in B.iter().enumerate() {
        let k = 2 * (j + 1);
        sum += b / fact * rising * n.powf(-s - k as f64 + 1.0);
        rising *= (s + k as f64 - 1.0) * (s + k as f64);
        fact *= ((k + 1) * (k + 2)) as f64;
    }
    sum
}

enum Context {
    OneArm { params: Vec<SoupParams> },
    TwoPoint { params: SoupParams, offsets: Vec<Site> },
    ClusterTail { params: SoupParams },
    Excursion { spec: LatticeSpec, green: Vec<f64>, griffin: Vec<u32> },
    Crossing { params: SoupParams, alphas: Vec<f64> },
    FirstShell { params: SoupParams },
    Capacity { params: Vec<SoupParams> },
    Gw { q: f64, zeta: Zeta<f64> },
}

/// A prepared experiment.
pub struct Runner {
    spec: ExperimentSpec,
    ctx: Context,
    tasks: Vec<(u32, usize)>,
}

fn soup_params(spec: &LatticeSpec, alpha: f64) -> Result<SoupParams> {
    SoupParams::new(spec, alpha, RngStream::new(0, 0))
}

impl Runner {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let s = spec;
        let (ctx, tasks) = match s.kind {
            ExperimentKind::OneArm => {
                let params = s
                    .sizes
                    .iter()
                    .map(|&n| soup_params(&s.truncated_box(n)?, s.alpha))
                    .collect::<Result<Vec<_>>>()?;
                (Context::OneArm { params }, s.sizes.iter().map(|&n| (n, 1)).collect())
            }
            ExperimentKind::TwoPoint => {
                let max = *s.sizes.last().unwrap();
                let params = soup_params(&s.truncated_box(max)?, s.alpha)?;
                let offsets: Vec<Site> = s
                    .sizes
                    .iter()
                    .map(|&n| {
                        let mut v = vec![0; s.dim];
                        v[0] = n as i32;
                        Site(v)
                    })
                    .collect();
                let k = offsets.len();
                (Context::TwoPoint { params, offsets }, vec![(0, 2 * k + 1)])
            }
            ExperimentKind::ClusterTail => {
                let params = soup_params(&LatticeSpec::new(s.dim, s.box_radius, s.kappa)?, s.alpha)?;
                let k = s.sizes.len();
                (Context::ClusterTail { params }, vec![(0, 2 * k + 2)])
            }
            ExperimentKind::ExcursionTail => {
                let box_spec = LatticeSpec::new(s.dim, s.box_radius, 0.0)?;
                let fg = FreeGreen::new(s.dim)?;
                let r = s.box_radius as usize + 1;
                // G(0,y)/G(0,0) on sup-norm R+1, indexed by sorted absolute coordinates.
                let g0 = fg.origin();
                let mut green = Vec::new();
                let q = fg.quadrature(r as u32)?;
                let side = r + 1;
                let mut coords = vec![0u32; s.dim];
                for idx in 0..side.pow(s.dim as u32) {
                    let mut t = idx;
                    for c in coords.iter_mut().rev() {
                        *c = (t % side) as u32;
                        t /= side;
                    }
                    if coords.iter().any(|&c| c as usize == r) {
                        green.push(q.green(&coords)?.value / g0);
                    } else {
                        green.push(0.0);
                    }
                }
                let griffin: Vec<u32> =
                    [1u32, 2, 3, 4, 5, 6, 8, 10].into_iter().filter(|&n| 2 * n <= s.box_radius).collect();
                let stats = 2 + griffin.len() + s.sizes.len();
                (Context::Excursion { spec: box_spec, green, griffin }, vec![(0, stats)])
            }
            ExperimentKind::CrossingScan => {
                let nmax = *s.sizes.last().unwrap();
                let m = (s.beta * nmax as f64).ceil() as u32;
                let mut alphas: Vec<f64> = s.alphas.iter().copied().filter(|&a| a > 0.0).collect();
                alphas.sort_by(|a, b| b.total_cmp(a));
                alphas.dedup();
                if alphas.is_empty() {
                    return Err(invalid("crossing scan needs a positive alpha grid"));
                }
                let params = soup_params(&s.truncated_box(m)?, alphas[0])?;
                let k = alphas.len() * s.sizes.len();
                (Context::Crossing { params, alphas }, vec![(0, k)])
            }
            ExperimentKind::FirstShell => {
                let params = soup_params(&LatticeSpec::new(s.dim, s.box_radius, s.kappa)?, s.alpha)?;
                (Context::FirstShell { params }, vec![(0, 1)])
            }
            ExperimentKind::CapacityGrowth => {
                let params = s
                    .sizes
                    .iter()
                    .map(|&k| soup_params(&LatticeSpec::new(s.dim, k, s.kappa)?, s.alpha))
                    .collect::<Result<Vec<_>>>()?;
                (Context::Capacity { params }, s.sizes.iter().map(|&k| (k, 2)).collect())
            }
            ExperimentKind::GwProgeny => {
                let a = s.tail_exponent;
                let q = s.offspring_mean / (zeta(a) / zeta(a + 1.0));
                let z = Zeta::new(a + 1.0).map_err(|e| invalid(e.to_string()))?;
                let stats = s.sizes.len() + s.generations as usize + 1;
                (Context::Gw { q, zeta: z }, vec![(0, stats)])
            }
        };
        Ok(Runner { spec: s.clone(), ctx, tasks })
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    /// `(label, statistics per replica)` for each task.
    pub fn tasks(&self) -> &[(u32, usize)] {
        &self.tasks
    }

    /// Replicas `[start, end)` of task `task`.
    pub fn block(&self, task: usize, start: u64, end: u64) -> Result<Accum> {
        let t0 = Instant::now();
        let (label, stats) = self.tasks[task];
        let results: Vec<Result<Vec<f64>>> = (start..end)
            .into_par_iter()
            .map_init(ClusterWorkspace::default, |ws, r| self.replica(task, label, r, ws))
            .collect();
        let mut acc = Accum::new(stats);
        for r in results {
            acc.push(&r?);
        }
        acc.walltime_s = t0.elapsed().as_secs_f64();
        Ok(acc)
    }

    fn replica(&self, task: usize, label: u32, r: u64, ws: &mut ClusterWorkspace) -> Result<Vec<f64>> {
        let s = &self.spec;
        let stream = s.replica_stream(label, r);
        let o = Site::origin(s.dim);
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match &self.ctx {
            Context::OneArm { params } => {
                let p = params[task].clone().with_stream(stream);
                let sample = sample_cluster_in(ws, &p, &[o], Explore::UntilRadius(label))?;
                Ok(vec![ind(one_arm(&sample, label, s.box_factor)?)])
            }
            Context::TwoPoint { params, offsets } => {
                let p = params.clone().with_stream(stream);
                let sample = sample_cluster_in(ws, &p, &[o.clone()], Explore::Component)?;
                let c = cluster_of(&sample, &o)?;
                let spec = sample.spec();
                let oi = spec.center_index() as u32;
                let mut out = Vec::with_capacity(2 * offsets.len() + 1);
                for x in offsets {
                    let xi = spec.index_of(x).unwrap() as u32;
                    out.push(ind(c.contains(xi)));
                    out.push(ind(sample.single_loop_visits_all(&[oi, xi])));
                }
                out.push(ind(c.size > 0));
                Ok(out)
            }
            Context::ClusterTail { params } => {
                let p = params.clone().with_stream(stream);
                let explore = if s.first_shell_only { Explore::SeedsOnly } else { Explore::Component };
                let sample = sample_cluster_in(ws, &p, &[o.clone()], explore)?;
                let first = first_shell_size(&sample);
                let total = if s.first_shell_only { 0 } else { cluster_of(&sample, &o)?.size };
                let mut out: Vec<f64> = s.sizes.iter().map(|&x| ind(first > x as usize)).collect();
                out.extend(s.sizes.iter().map(|&x| ind(total > x as usize)));
                out.push(first as f64);
                out.push(total as f64);
                Ok(out)
            }
            Context::Excursion { spec, green, griffin } => excursion_replica(s, spec, green, griffin, &stream),
            Context::Crossing { params, alphas } => {
                let p = params.clone().with_stream(stream);
                let mut sample = sample_soup(&p)?;
                let mut out = Vec::with_capacity(alphas.len() * s.sizes.len());
                for (k, &a) in alphas.iter().enumerate() {
                    if k > 0 {
                        sample = thin_soup(&sample, a, s.kappa, &stream.derive(k as u64))?;
                    }
                    for &n in &s.sizes {
                        let m = (s.beta * n as f64).ceil() as u32;
                        out.push(ind(crossing(&sample, n, m, s.box_factor)?));
                    }
                }
                Ok(out)
            }
            Context::FirstShell { params } => {
                let p = params.clone().with_stream(stream);
                let sample = sample_cluster_in(ws, &p, &[o], Explore::SeedsOnly)?;
                Ok(vec![first_shell_size(&sample) as f64])
            }
            Context::Capacity { params } => {
                let p = params[task].clone().with_stream(stream);
                let sample = sample_cluster_in(ws, &p, &[o.clone()], Explore::Component)?;
                let cap = cluster_capacity(&sample, s.walkers, &stream.derive(u64::MAX))?;
                Ok(vec![cap.value, ind(!sample.loops.is_empty())])
            }
            Context::Gw { q, zeta } => Ok(gw_replica(s, *q, zeta, &mut stream.rng())),
        }
    }

    /// Run every task to completion.
    pub fn run(&self) -> Result<ExperimentOutput> {
        let mut accs = Vec::new();
        for t in 0..self.tasks.len() {
            let mut acc = Accum::new(self.tasks[t].1);
            let mut start = 0;
            while start < self.spec.replicas {
                let end = (start + BLOCK).min(self.spec.replicas);
                acc.merge(&self.block(t, start, end)?);
                start = end;
            }
            accs.push(acc);
        }
        self.finish(&accs)
    }

    /// Turn per-task sums into rows, fits and diagnostics.
    pub fn finish(&self, accs: &[Accum]) -> Result<ExperimentOutput> {
        let s = &self.spec;
        let row = |kind: &str, n: f64, value: f64, se: f64, acc: &Accum| EstimateRow {
            kind: kind.to_string(),
            d: s.dim,
            alpha: s.alpha,
            kappa: s.kappa,
            n,
            value,
            stderr: se,
            replicas: acc.replicas,
            walltime_s: acc.walltime_s,
        };
        let mut out = ExperimentOutput::default();
        let fit_points = |rows: &[EstimateRow], shift: f64| -> Vec<(f64, f64, f64)> {
            rows.iter()
                .filter(|r| r.n + shift >= s.fit_min && r.value > 0.0)
                .map(|r| (r.n + shift, r.value, r.stderr))
                .collect()
        };
        match &self.ctx {
            Context::OneArm { .. } => {
                for (t, &(n, _)) in self.tasks.iter().enumerate() {
                    out.rows.push(row("one-arm", n as f64, accs[t].mean(0), accs[t].se(0), &accs[t]));
                }
                if let Ok(f) = fit_log_log(&fit_points(&out.rows, 0.0)) {
                    out.fits.push(("one-arm".into(), f));
                }
                if s.exact_lower_bound {
                    let mut lb = Vec::new();
                    for &n in &s.sizes {
                        let mu = one_loop_arm_mass(s, n)?;
                        lb.push(serde_json::json!({"n": n, "mu": mu, "p_single_loop": 1.0 - (-s.alpha * mu).exp()}));
                    }
                    out.extras.insert("single_loop_lower_bound".into(), lb.into());
                }
            }
            Context::TwoPoint { .. } => {
                let a = &accs[0];
                for (i, &n) in s.sizes.iter().enumerate() {
                    out.rows.push(row("two-point", n as f64, a.mean(2 * i), a.se(2 * i), a));
                    out.rows.push(row("two-point-single-loop", n as f64, a.mean(2 * i + 1), a.se(2 * i + 1), a));
                }
                let k = 2 * s.sizes.len();
                out.rows.push(row("two-point-nonempty", 0.0, a.mean(k), a.se(k), a));
                let tp: Vec<EstimateRow> = out.rows.iter().filter(|r| r.kind == "two-point").cloned().collect();
                // Fitted against log(|x|_inf + 1).
                if let Ok(f) = fit_log_log(&fit_points(&tp, 1.0)) {
                    out.fits.push(("two-point".into(), f));
                }
            }
            Context::ClusterTail { .. } => {
                let a = &accs[0];
                let k = s.sizes.len();
                let mut first = Vec::new();
                for (i, &x) in s.sizes.iter().enumerate() {
                    first.push(row("cluster-tail-first-shell", x as f64, a.mean(i), a.se(i), a));
                }
                let n = a.replicas as f64;
                let exceed = |i: usize| (a.mean(i) * n).round() as u64;
                let fit_rows: Vec<EstimateRow> =
                    first.iter().enumerate().filter(|(i, _)| exceed(*i) >= 10).map(|(_, r)| r.clone()).collect();
                if let Ok(f) = fit_log_log(&fit_points(&fit_rows, 0.0)) {
                    out.fits.push(("cluster-tail-first-shell".into(), f));
                }
                if let Some(i) = (0..k).rev().find(|&i| exceed(i) >= PREFACTOR_MIN_EXCEEDANCES) {
                    let x = s.sizes[i] as f64;
                    let d = s.dim as f64;
                    let pref = a.mean(i) * x.powf(d / 2.0 - 1.0);
                    let g00 = FreeGreen::new(s.dim)?.origin();
                    let predicted = s.alpha * d.powf(d / 2.0) / ((d / 2.0 - 1.0) * (2.0 * PI * g00).powf(d / 2.0));
                    out.extras.insert(
                        "first_shell_prefactor".into(),
                        serde_json::json!({"x": x, "empirical": pref, "stderr": a.se(i) * x.powf(d / 2.0 - 1.0),
                                           "predicted": predicted, "g00": g00, "exceedances": exceed(i)}),
                    );
                }
                out.rows.extend(first);
                out.rows.push(row("first-shell-mean", 0.0, a.mean(2 * k), a.se(2 * k), a));
                if !s.first_shell_only {
                    let mut whole = Vec::new();
                    for (i, &x) in s.sizes.iter().enumerate() {
                        whole.push(row("cluster-tail", x as f64, a.mean(k + i), a.se(k + i), a));
                    }
                    let fr: Vec<EstimateRow> =
                        whole.iter().enumerate().filter(|(i, _)| exceed(k + *i) >= 10).map(|(_, r)| r.clone()).collect();
                    if let Ok(f) = fit_log_log(&fit_points(&fr, 0.0)) {
                        out.fits.push(("cluster-tail".into(), f));
                    }
                    out.rows.extend(whole);
                }
            }
            Context::Excursion { griffin, .. } => {
                let a = &accs[0];
                let g00 = FreeGreen::new(s.dim)?.origin();
                let f_exact = 1.0 - 1.0 / g00;
                out.rows.push(row("return-probability", 0.0, a.mean(0), a.se(0), a));
                out.rows.push(row("return-before-exit", 0.0, a.mean(1), a.se(1), a));
                out.extras.insert("return_probability_exact".into(), f_exact.into());
                let d = s.dim as f64;
                let mut ratios = Vec::new();
                for (i, &n) in griffin.iter().enumerate() {
                    let p = a.mean(2 + i);
                    out.rows.push(row("return-time", n as f64, p, a.se(2 + i), a));
                    let asym = (1.0 - f_exact).powi(2) * 2.0 * d.powf(d / 2.0) / (4.0 * PI * n as f64).powf(d / 2.0);
                    ratios.push(serde_json::json!({"n": n, "empirical": p, "asymptotic": asym, "ratio": p / asym}));
                }
                out.extras.insert("return_time_vs_asymptotic".into(), ratios.into());
                let off = 2 + griffin.len();
                let mut tail = Vec::new();
                for (i, &x) in s.sizes.iter().enumerate() {
                    tail.push(row("excursion-range-tail", x as f64, a.mean(off + i) / f_exact, a.se(off + i) / f_exact, a));
                }
                let n = a.replicas as f64;
                let fr: Vec<EstimateRow> = tail
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| a.mean(off + *i) * n >= 10.0)
                    .map(|(_, r)| r.clone())
                    .collect();
                if let Ok(f) = fit_log_log(&fit_points(&fr, 0.0)) {
                    out.fits.push(("excursion-range-tail".into(), f));
                }
                let c = d.powf(d / 2.0) * (1.0 - f_exact).powf(d / 2.0 + 1.0)
                    / ((d / 2.0 - 1.0) * (2.0 * PI).powf(d / 2.0) * f_exact);
                out.extras.insert("excursion_range_tail_constant".into(), c.into());
                out.rows.extend(tail);
            }
            Context::Crossing { alphas, .. } => {
                let a = &accs[0];
                let k = s.sizes.len();
                let mut first_above = None;
                let mut scan = Vec::new();
                for (j, &al) in alphas.iter().enumerate().rev() {
                    let (best, bi) = (0..k)
                        .map(|i| (a.mean(j * k + i), i))
                        .fold((f64::MIN, 0), |acc, v| if v.0 > acc.0 { v } else { acc });
                    let mut r = row("crossing-scan", s.sizes[bi] as f64, best, a.se(j * k + bi), a);
                    r.alpha = al;
                    scan.push(r);
                    if first_above.is_none() && best > s.level {
                        first_above = Some(al);
                    }
                }
                out.rows.extend(scan);
                out.extras.insert(
                    "note".into(),
                    "proxy diagnostic: finite boxes cannot certify the limsup in the crossing threshold; this is not an estimate of it".into(),
                );
                out.extras.insert("first_alpha_above_level".into(), serde_json::json!(first_above));
                out.extras.insert("level".into(), s.level.into());
            }
            Context::FirstShell { .. } => {
                let a = &accs[0];
                out.rows.push(row("first-shell-mc", 0.0, a.mean(0), a.se(0), a));
                let fg = FreeGreen::new(s.dim)?;
                let exact = expected_first_shell_with(s.alpha, &fg, s.truncation_radius.max(8))?;
                out.rows.push(EstimateRow {
                    kind: "first-shell-exact".into(),
                    stderr: exact.tail_width,
                    value: exact.value,
                    walltime_s: 0.0,
                    ..row("", 0.0, 0.0, 0.0, a)
                });
                for &d in &s.dims {
                    let (lo, hi) = threshold_proxy(d, s.truncation_radius)?;
                    out.rows.push(EstimateRow {
                        kind: "threshold-proxy".into(),
                        d,
                        n: d as f64,
                        value: 0.5 * (lo + hi),
                        stderr: 0.5 * (hi - lo),
                        replicas: 0,
                        walltime_s: 0.0,
                        alpha: 0.0,
                        kappa: 0.0,
                    });
                }
            }
            Context::Capacity { .. } => {
                for (t, &(k, _)) in self.tasks.iter().enumerate() {
                    let a = &accs[t];
                    out.rows.push(row("capacity-growth", k as f64, a.mean(0), a.se(0), a));
                    out.rows.push(row("origin-on-loop", k as f64, a.mean(1), a.se(1), a));
                }
                let cg: Vec<EstimateRow> = out.rows.iter().filter(|r| r.kind == "capacity-growth").cloned().collect();
                if let Ok(f) = fit_log_log(&fit_points(&cg, 0.0)) {
                    out.fits.push(("capacity-growth".into(), f));
                }
                if s.dim == 4 {
                    // Growth in log k: slope of log E[Cap] against log log k.
                    let pts: Vec<(f64, f64, f64)> =
                        cg.iter().filter(|r| r.n > 1.0).map(|r| (r.n.ln(), r.value, r.stderr)).collect();
                    if let Ok(f) = fit_log_log(&pts) {
                        out.fits.push(("capacity-growth-loglog".into(), f));
                    }
                }
            }
            Context::Gw { q, .. } => {
                let a = &accs[0];
                let k = s.sizes.len();
                let mut tail = Vec::new();
                for (i, &x) in s.sizes.iter().enumerate() {
                    tail.push(row("gw-progeny-tail", x as f64, a.mean(i), a.se(i), a));
                }
                let n = a.replicas as f64;
                let fr: Vec<EstimateRow> =
                    tail.iter().enumerate().filter(|(i, _)| a.mean(*i) * n >= 10.0).map(|(_, r)| r.clone()).collect();
                if let Ok(f) = fit_log_log(&fit_points(&fr, 0.0)) {
                    out.fits.push(("gw-progeny-tail".into(), f));
                }
                out.rows.extend(tail);
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                let mut ws = Vec::new();
                for g in 1..=s.generations as usize {
                    let i = k + g - 1;
                    out.rows.push(row("gw-survival", g as f64, a.mean(i), a.se(i), a));
                    if a.mean(i) * n >= 10.0 {
                        xs.push(g as f64);
                        ys.push(a.mean(i).ln());
                        let rel = a.se(i) / a.mean(i);
                        ws.push(1.0 / (rel * rel));
                    }
                }
                if xs.len() >= 3 {
                    let (slope, slope_se, intercept) = weighted_line(&xs, &ys, Some(&ws));
                    out.fits.push((
                        "gw-survival-loglinear".into(),
                        SlopeFit { slope, slope_se, intercept, points_used: xs.len(), excluded_smallest: false },
                    ));
                }
                let m = k + s.generations as usize;
                out.rows.push(row("gw-progeny-mean", 0.0, a.mean(m), a.se(m), a));
                out.extras.insert("zeta_weight".into(), (*q).into());
            }
        }
        Ok(out)
    }
}

fn first_shell_size(sample: &crate::sampler::SoupSample) -> usize {
    let o = sample.spec().center_index() as u32;
    let mut set = HashSet::new();
    for l in &sample.loops {
        if l.sites.contains(&o) {
            set.extend(l.sites.iter().copied());
        }
    }
    set.remove(&o);
    set.len()
}

/// Mass of loops through 0 that reach `sup-norm = n` and stay in
/// `B(0, lambda n)`: `log G_{B(lambda n)}(0,0) - log G_{B(n-1)}(0,0)`.
pub fn one_loop_arm_mass(spec: &ExperimentSpec, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(invalid("arm radius must be >= 1"));
    }
    let diag = |b: LatticeSpec| -> Result<f64> {
        let t = GreenTable::new(&b, &[])?;
        Ok(t.column_by_index(b.center_index())?[b.center_index()])
    };
    let outer = diag(spec.truncated_box(n)?)?;
    let inner = diag(LatticeSpec::new(spec.dim, n - 1, spec.kappa)?)?;
    Ok(outer.ln() - inner.ln())
}

/// Bracket for the `alpha` solving `E[#C(0,1)] = 1` on `Z^d`.
pub fn threshold_proxy(dim: usize, radius: u32) -> Result<(f64, f64)> {
    let fg = FreeGreen::new(dim)?;
    let f = |a: f64| -> Result<(f64, f64)> {
        let e = expected_first_shell_with(a, &fg, radius)?;
        Ok((e.value - e.tail_width, e.value + e.tail_width))
    };
    // Solve the lower and upper envelopes separately.
    let solve = |use_hi: bool| -> Result<f64> {
        let (mut lo, mut hi) = (1e-6, 8.0 * dim as f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let (l, h) = f(mid)?;
            let v = if use_hi { h } else { l };
            if v < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    let a_hi = solve(false)?;
    let a_lo = solve(true)?;
    Ok((a_lo, a_hi))
}

fn excursion_replica(
    s: &ExperimentSpec,
    spec: &LatticeSpec,
    green: &[f64],
    griffin: &[u32],
    stream: &RngStream,
) -> Result<Vec<f64>> {
    thread_local! {
        static SEEN: std::cell::RefCell<(FixedBitSet, Vec<usize>)> = std::cell::RefCell::new((FixedBitSet::new(), Vec::new()));
    }
    let mut rng = stream.rng();
    let mut walker = Walker::new(spec);
    let origin = spec.center_index();
    walker.place(origin);
    let r = spec.radius as usize + 1;
    SEEN.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (seen, touched) = &mut *guard;
        if seen.len() != spec.site_count() {
            *seen = FixedBitSet::with_capacity(spec.site_count());
        }
        for &i in touched.iter() {
            seen.set(i, false);
        }
        touched.clear();
        seen.insert(origin);
        touched.push(origin);
        let mut steps = 0u64;
        let mut range = 1usize;
        let (returned, rb) = loop {
            steps += 1;
            if steps > STEP_CAP {
                return Err(Error::StepCap(STEP_CAP));
            }
            match walker.step(&mut rng) {
                StepOutcome::Moved => {
                    let i = walker.index();
                    if i == origin {
                        break (true, 1.0);
                    }
                    if !seen.put(i) {
                        touched.push(i);
                        range += 1;
                    }
                }
                StepOutcome::Exited => {
                    let y = walker.last_target();
                    let mut idx = 0usize;
                    for c in &y {
                        idx = idx * (r + 1) + c.unsigned_abs() as usize;
                    }
                    break (false, green[idx]);
                }
                StepOutcome::Died => unreachable!("excursion walks have kappa = 0"),
            }
        };
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        let mut out = vec![rb, ind(returned)];
        out.extend(griffin.iter().map(|&n| ind(returned && steps == 2 * n as u64)));
        out.extend(s.sizes.iter().map(|&x| ind(returned && range > x as usize)));
        Ok(out)
    })
}

fn gw_replica<R: Rng>(s: &ExperimentSpec, q: f64, zeta: &Zeta<f64>, rng: &mut R) -> Vec<f64> {
    const CAP: u64 = 1 << 40;
    let mut total: u64 = 1;
    let mut current: u64 = 1;
    let mut alive = Vec::with_capacity(s.generations as usize);
    let mut g = 0;
    while current > 0 && total < CAP {
        let mut next: u64 = 0;
        for _ in 0..current {
            if rng.random::<f64>() < q {
                next = next.saturating_add(zeta.sample(rng) as u64);
            }
        }
        g += 1;
        if g <= s.generations {
            alive.push(next > 0);
        }
        total = total.saturating_add(next);
        current = next;
    }
    alive.resize(s.generations as usize, false);
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let mut out: Vec<f64> = s.sizes.iter().map(|&x| ind(total > x as u64)).collect();
    out.extend(alive.into_iter().map(ind));
    out.push(total as f64);
    out
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    Runner::new(spec)?.run()
}

fn run_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<ExperimentOutput> {
    if spec.kind != kind {
        return Err(invalid(format!("expected a {} spec, got {}", kind.label(), spec.kind.label())));
    }
    run_experiment(spec)
}

pub fn run_one_arm(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::OneArm)
}

pub fn run_two_point(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::TwoPoint)
}

pub fn run_cluster_tail(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::ClusterTail)
}

pub fn run_excursion_tail(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::ExcursionTail)
}

pub fn run_crossing_scan(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::CrossingScan)
}

pub fn run_first_shell_and_threshold(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::FirstShell)
}

pub fn run_capacity_growth(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::CapacityGrowth)
}

pub fn run_gw_progeny(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    run_kind(spec, ExperimentKind::GwProgeny)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(f64, f64, f64)> = [2.0f64, 4.0, 8.0, 16.0].iter().map(|&n| (n, n.powi(-3), 0.0)).collect();
        let f = fit_log_log(&pts).unwrap();
        assert_relative_eq!(f.slope, -3.0, epsilon = 1e-12);
        assert!(f.slope_se < 1e-10);
        let flat: Vec<(f64, f64, f64)> = [1.0, 2.0, 3.0].iter().map(|&n| (n, 0.7, 0.01)).collect();
        assert_relative_eq!(fit_log_log(&flat).unwrap().slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_refusals() {
        assert!(fit_log_log(&[(1.0, 1.0, 0.1), (2.0, 0.5, 0.1)]).is_err());
        assert!(fit_log_log(&[(1.0, 1.0, 0.1), (2.0, 0.0, 0.1), (3.0, 0.2, 0.1)]).is_err());
    }

    #[test]
    fn noisy_smallest_point_is_dropped() {
        let pts = vec![(1.0, 1.0, 0.5), (2.0, 0.25, 0.01), (4.0, 0.0625, 0.001), (8.0, 0.015625, 0.0001)];
        let f = fit_log_log(&pts).unwrap();
        assert!(f.excluded_smallest);
        assert_eq!(f.points_used, 3);
    }

    #[test]
    fn zeta_values() {
        assert_relative_eq!(zeta(2.0), PI * PI / 6.0, max_relative = 1e-12);
        assert_relative_eq!(zeta(1.5), 2.612_375_348_685_488, max_relative = 1e-12);
        assert_relative_eq!(zeta(4.0), PI.powi(4) / 90.0, max_relative = 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![EstimateRow {
            kind: "one-arm".into(),
            d: 5,
            alpha: 1.0,
            kappa: 0.0,
            n: 2.0,
            value: 0.0175,
            stderr: 0.0004,
            replicas: 1000,
            walltime_s: 0.5,
        }];
        let text = rows_to_csv(&rows);
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
        assert!(rows_from_csv("a,b\n").is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = ExperimentSpec { replicas: 50, ..Default::default() };
        assert!(s.validate().is_err());
        s.replicas = 100;
        s.sizes = vec![3, 2];
        assert!(s.validate().is_err());
        s.sizes = vec![2, 3];
        s.kappa = -0.5;
        assert!(s.validate().is_err());
        let gw = ExperimentSpec { kind: ExperimentKind::GwProgeny, offspring_mean: 1.2, ..Default::default() };
        assert!(gw.validate().is_err());
    }

    #[test]
    fn degenerate_gw_has_unit_progeny() {
        let s = ExperimentSpec {
            kind: ExperimentKind::GwProgeny,
            offspring_mean: 0.0,
            sizes: vec![1, 2],
            replicas: 200,
            ..Default::default()
        };
        let out = run_gw_progeny(&s).unwrap();
        let mean = out.rows_of("gw-progeny-mean")[0];
        assert_eq!((mean.value, mean.stderr), (1.0, 0.0));
    }

    #[test]
    fn results_do_not_depend_on_block_layout() {
        let s = ExperimentSpec { dim: 3, sizes: vec![1, 2, 3], replicas: 300, ..Default::default() };
        let r = Runner::new(&s).unwrap();
        let whole = r.block(0, 0, 300).unwrap();
        let mut parts = r.block(0, 0, 120).unwrap();
        parts.merge(&r.block(0, 120, 300).unwrap());
        assert_eq!(whole.sum, parts.sum);
        assert_eq!(whole.replicas, parts.replicas);
    }
}
