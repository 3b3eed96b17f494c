//! The acceptance criteria as runnable checks, shared by the `acceptance`
//! test target and `loopsoup validate`.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::estimators::{fit_log_log, run_experiment, ExperimentKind, ExperimentSpec};
use crate::green::{capacity_mc, parseval_moment_mc, FreeGreen, GreenTable};
use crate::lattice::{LatticeSpec, RngStream, Site};
use crate::loopmeasure::{enumerate_loops, mu_hit_mass, mu_visit_all, prob_avoid};
use crate::percolation::{open_edges, SiteClusters};
use crate::sampler::{occupation, sample_cluster, sample_soup, thin_soup, Explore, SoupParams, SoupSample, VertexOrder};

pub const CRITERIA: std::ops::RangeInclusive<u32> = 1..=13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            _ => Err(invalid(format!("unknown level {s:?} (quick | full)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub details: Vec<String>,
    pub metrics: serde_json::Value,
    pub walltime_s: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {} ({:.1}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.walltime_s
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ValidationConfig {
    pub level: Level,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { level: Level::Full, seed: 20_240_601 }
    }
}

impl ValidationConfig {
    fn reps(&self, full: u64, quick: u64) -> u64 {
        match self.level {
            Level::Full => full,
            Level::Quick => quick,
        }
    }

    fn stream(&self, id: u32) -> RngStream {
        RngStream::new(self.seed, 1000 + id as u64)
    }
}

struct Report {
    passed: bool,
    details: Vec<String>,
    metrics: serde_json::Map<String, serde_json::Value>,
}

impl Report {
    fn new() -> Self {
        Report { passed: true, details: Vec::new(), metrics: serde_json::Map::new() }
    }

    fn check(&mut self, ok: bool, msg: String) {
        self.passed &= ok;
        self.details.push(format!("{} {msg}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, msg: String) {
        self.details.push(format!("     {msg}"));
    }

    fn metric(&mut self, key: &str, v: impl Serialize) {
        self.metrics.insert(key.into(), serde_json::to_value(v).unwrap());
    }
}

/// Run `f` over replicas in parallel; results come back in replica order.
pub fn replicate<T: Send>(n: u64, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

/// Mean and standard error of indicator outcomes.
pub fn proportion(hits: impl Iterator<Item = bool>) -> (f64, f64) {
    let (mut k, mut n) = (0u64, 0u64);
    for h in hits {
        k += h as u64;
        n += 1;
    }
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn idx(spec: &LatticeSpec, s: &Site) -> u32 {
    spec.index_of(s).expect("site inside box") as u32
}

fn small_box_sets(d: usize) -> Vec<(&'static str, Vec<Site>)> {
    let o = Site::origin(d);
    let e1 = Site::unit(d, 0, 1);
    let mut e12 = vec![0; d];
    e12[0] = 1;
    e12[1] = 1;
    vec![
        ("{0}", vec![o.clone()]),
        ("{0,e1}", vec![o.clone(), e1.clone()]),
        ("{0,e1,e1+e2}", vec![o, e1, Site(e12)]),
    ]
}

/// Compare avoidance frequencies of soups from `sampler` with
/// `det(G|_{F x F})^{-alpha}`. Shared with the mutation test.
pub fn avoidance_check(
    spec: &LatticeSpec,
    alpha: f64,
    reps: u64,
    sampler: &(dyn Fn(u64) -> Result<SoupSample> + Sync),
) -> Result<(bool, Vec<String>)> {
    let table = GreenTable::new(spec, &[])?;
    let sets = small_box_sets(spec.dim);
    let idx_sets: Vec<Vec<u32>> = sets.iter().map(|(_, s)| s.iter().map(|x| idx(spec, x)).collect()).collect();
    let hits = replicate(reps, |r| {
        let s = sampler(r)?;
        Ok(idx_sets.iter().map(|f| s.hits(f)).collect::<Vec<bool>>())
    })?;
    let mut ok = true;
    let mut lines = Vec::new();
    for (k, (name, set)) in sets.iter().enumerate() {
        let exact = prob_avoid(set, alpha, &table)?;
        let (p, se) = proportion(hits.iter().map(|h| !h[k]));
        let z = (p - exact) / se;
        ok &= z.abs() <= 3.0;
        lines.push(format!("P[avoid {name}] = {p:.5} ± {se:.5}, exact {exact:.5}, z = {z:+.2}"));
    }
    Ok((ok, lines))
}

fn c1(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let spec = LatticeSpec::new(3, 1, 0.0)?;
    let params = SoupParams::new(&spec, 1.0, cfg.stream(1))?;
    let reps = cfg.reps(100_000, 20_000);
    let base = cfg.stream(1);
    let (ok, lines) =
        avoidance_check(&spec, 1.0, reps, &|k| sample_soup(&params.clone().with_stream(base.derive(k))))?;
    r.metric("replicas", reps);
    for l in lines {
        r.note(l);
    }
    r.check(ok, "all avoidance probabilities within 3 sigma of the determinant".into());
    Ok(())
}

/// Negative binomial pmf `Gamma(a+k)/(Gamma(a) k!) (1-p)^a p^k`.
pub fn neg_binomial_pmf(a: f64, p: f64, k: u64) -> f64 {
    let k = k as f64;
    (ln_gamma(a + k) - ln_gamma(a) - ln_gamma(k + 1.0) + a * (1.0 - p).ln() + k * p.ln()).exp()
}

/// Pearson chi-square of counts against a pmf; bins with expectation below 5
/// are merged into the upper tail. Returns `(statistic, dof, p-value)`.
pub fn chi_square_pmf(counts: &HashMap<u64, u64>, total: u64, pmf: impl Fn(u64) -> f64) -> (f64, usize, f64) {
    let n = total as f64;
    let mut stat = 0.0;
    let mut bins = 0;
    let mut k = 0;
    let mut cum = 0.0;
    let mut seen = 0u64;
    loop {
        let e = n * pmf(k);
        let tail_e = n * (1.0 - cum - pmf(k));
        if e < 5.0 || tail_e < 5.0 {
            break;
        }
        let o = *counts.get(&k).unwrap_or(&0) as f64;
        stat += (o - e) * (o - e) / e;
        cum += pmf(k);
        seen += o as u64;
        bins += 1;
        k += 1;
    }
    let e = n * (1.0 - cum);
    let o = (total - seen) as f64;
    stat += (o - e) * (o - e) / e;
    bins += 1;
    let dof = bins - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    (stat, dof, p)
}

fn c2(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let alpha = 1.0;
    let spec = LatticeSpec::new(3, 1, 0.0)?;
    let v1 = spec.center_index() as u32;
    let mut order: Vec<u32> = vec![v1];
    order.extend((0..spec.site_count() as u32).filter(|&v| v != v1));
    let params = SoupParams::new(&spec, alpha, cfg.stream(2))?.with_order(VertexOrder::Custom(order))?;
    let g = GreenTable::new(&spec, &[])?.entry_by_index(v1 as usize, v1 as usize)?;
    let p = 1.0 - 1.0 / g;
    let reps = cfg.reps(100_000, 20_000);
    let base = cfg.stream(2);
    let center = Site::origin(3);
    let xi = replicate(reps, |k| Ok(occupation(&sample_soup(&params.clone().with_stream(base.derive(k)))?, &center)))?;
    let mut counts = HashMap::new();
    for &x in &xi {
        *counts.entry(x).or_insert(0u64) += 1;
    }
    let (stat, dof, pval) = chi_square_pmf(&counts, reps, |k| neg_binomial_pmf(alpha, p, k));
    r.metric("chi_square", stat);
    r.metric("dof", dof);
    r.metric("p_value", pval);
    r.check(pval > 0.01, format!("occupation of v1 vs NegBin({alpha}, {p:.5}): chi2 = {stat:.2}, dof = {dof}, p = {pval:.4}"));
    let (p0, se) = proportion(xi.iter().map(|&x| x == 0));
    let exact = g.powf(-alpha);
    let z = (p0 - exact) / se;
    r.check(z.abs() <= 3.0, format!("P[xi = 0] = {p0:.5} ± {se:.5}, G^-alpha = {exact:.5}, z = {z:+.2}"));
    Ok(())
}

fn c3(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let spec = LatticeSpec::new(2, 1, 0.0)?;
    let enumeration = enumerate_loops(&spec, &[], 12)?;
    let table = GreenTable::new(&spec, &[])?;
    let all: Vec<Site> = (0..spec.site_count()).map(|i| spec.site_of(i)).collect();
    let log_det = mu_hit_mass(&all, &table)?;
    let gap = log_det - enumeration.total_mass;
    r.metric("log_det", log_det);
    r.metric("enumerated_mass", enumeration.total_mass);
    r.metric("tail_bound", enumeration.tail_bound);
    r.check(
        gap >= -1e-12 && gap <= enumeration.tail_bound,
        format!(
            "log det G = {log_det:.10}, enumerated {:.10} ({} loops), gap {gap:.3e} <= tail bound {:.3e}",
            enumeration.total_mass,
            enumeration.loops.len(),
            enumeration.tail_bound
        ),
    );

    let alpha = 1.0;
    let top: Vec<(Vec<u32>, f64)> = enumeration
        .loops
        .iter()
        .take(10)
        .map(|lm| (lm.lp.canonical().iter().map(|s| idx(&spec, s)).collect(), lm.mass))
        .collect();
    let reps = cfg.reps(100_000, 20_000);
    let params = SoupParams::new(&spec, alpha, cfg.stream(3))?;
    let base = cfg.stream(3);
    let counts = replicate(reps, |k| {
        let s = sample_soup(&params.clone().with_stream(base.derive(k)))?;
        let mut c = vec![0.0f64; top.len()];
        for l in &s.loops {
            let (canon, _) = l.canonical();
            if let Some(j) = top.iter().position(|(t, _)| *t == canon) {
                c[j] += 1.0;
            }
        }
        Ok(c)
    })?;
    let mut all_ok = true;
    for (j, (seq, mass)) in top.iter().enumerate() {
        let col: Vec<f64> = counts.iter().map(|c| c[j]).collect();
        let (m, se) = mean_se(&col);
        let z = (m - alpha * mass) / se;
        all_ok &= z.abs() <= 3.0;
        r.note(format!("loop {seq:?}: mean count {m:.5} ± {se:.5}, alpha mu = {:.5}, z = {z:+.2}", alpha * mass));
    }
    r.check(all_ok, "top-10 loop counts within 3 sigma of alpha mu(loop)".into());
    Ok(())
}

fn c4(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let alpha = 0.5;
    let spec = LatticeSpec::new(3, 16, 0.0)?;
    let table = GreenTable::new(&spec, &[])?;
    let o = Site::origin(3);
    let xs: Vec<Site> = [1, 2, 4].iter().map(|&n| Site(vec![n, 0, 0])).collect();
    let reps = cfg.reps(100_000, 10_000);
    let params = SoupParams::new(&spec, alpha, cfg.stream(4))?;
    let base = cfg.stream(4);
    let oi = idx(&spec, &o);
    let xi: Vec<u32> = xs.iter().map(|x| idx(&spec, x)).collect();
    let hits = replicate(reps, |k| {
        let s = sample_cluster(&params.clone().with_stream(base.derive(k)), &[o.clone()], Explore::SeedsOnly)?;
        Ok(xi.iter().map(|&x| s.single_loop_visits_all(&[oi, x])).collect::<Vec<bool>>())
    })?;
    for (k, x) in xs.iter().enumerate() {
        let exact = 1.0 - (-alpha * mu_visit_all(&[o.clone(), x.clone()], &table)?).exp();
        let (p, se) = proportion(hits.iter().map(|h| h[k]));
        let z = (p - exact) / se;
        r.check(z.abs() <= 3.0, format!("x = {:?}: P = {p:.5} ± {se:.5}, exact {exact:.5}, z = {z:+.2}", x.0));
    }
    Ok(())
}

fn c5(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let spec = ExperimentSpec {
        kind: ExperimentKind::OneArm,
        dim: 5,
        alpha: 1.0,
        kappa: 0.0,
        sizes: vec![2, 3, 4, 6],
        box_factor: 2.0,
        replicas: cfg.reps(1_000_000, 100_000),
        seed: cfg.seed ^ 5,
        exact_lower_bound: true,
        ..Default::default()
    };
    let out = run_experiment(&spec)?;
    let rows = out.rows_of("one-arm");
    let lb = out.extras["single_loop_lower_bound"].as_array().unwrap().clone();
    for (row, b) in rows.iter().zip(&lb) {
        let bound = b["p_single_loop"].as_f64().unwrap();
        let rel = row.stderr / row.value;
        let ok = row.value >= bound * (1.0 - 3.0 * rel);
        r.check(
            ok,
            format!("n = {}: P = {:.6} ± {:.6}, single-loop bound {bound:.6}", row.n, row.value, row.stderr),
        );
    }
    match out.fit("one-arm") {
        Some(f) => {
            r.metric("slope", f.slope);
            r.metric("slope_se", f.slope_se);
            r.check(
                (f.slope + 3.0).abs() <= 0.6,
                format!("one-arm slope {:.3} ± {:.3} (target -3 ± 0.6)", f.slope, f.slope_se),
            );
        }
        None => r.check(false, "one-arm slope fit impossible (zero estimates)".into()),
    }
    Ok(())
}

fn c6(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let spec = ExperimentSpec {
        kind: ExperimentKind::ClusterTail,
        dim: 5,
        alpha: 1.0,
        sizes: (0..=10).map(|k| 1u32 << k).collect(),
        box_radius: 20,
        first_shell_only: true,
        fit_min: 16.0,
        replicas: cfg.reps(2_000_000, 200_000),
        seed: cfg.seed ^ 6,
        ..Default::default()
    };
    let out = run_experiment(&spec)?;
    match out.fit("cluster-tail-first-shell") {
        Some(f) => {
            r.metric("slope", f.slope);
            r.check(
                (f.slope + 1.5).abs() <= 0.2,
                format!("first-shell tail slope {:.3} ± {:.3} over {} sizes (target -1.5 ± 0.2)", f.slope, f.slope_se, f.points_used),
            );
        }
        None => r.check(false, "first-shell tail fit impossible".into()),
    }
    match out.extras.get("first_shell_prefactor") {
        Some(p) => {
            let emp = p["empirical"].as_f64().unwrap();
            let pred = p["predicted"].as_f64().unwrap();
            r.metric("prefactor", p.clone());
            r.check(
                (emp / pred - 1.0).abs() <= 0.25,
                format!("prefactor {emp:.4} at x = {} vs {pred:.4} (G(0,0) = {:.6})", p["x"], p["g00"].as_f64().unwrap()),
            );
        }
        None => r.check(false, "no bucket with enough exceedances for a prefactor".into()),
    }
    Ok(())
}

fn c7(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let n = cfg.reps(10_000_000, 1_000_000);
    for d in [8usize, 12, 16] {
        let est = parseval_moment_mc(d, n, &cfg.stream(7).derive(d as u64))?;
        let df = d as f64;
        let series = 1.0 + 3.0 / (2.0 * df) + 15.0 / (4.0 * df * df);
        let tol = (3.0 * est.std_error).max(2.0 / df.powi(3));
        r.check(
            (est.mean - series).abs() <= tol,
            format!(
                "d = {d}: E[(1-Z)^-2] = {:.6} ± {:.6}, series {series:.6}, |diff| {:.6} vs tolerance {tol:.6}",
                est.mean,
                est.std_error,
                (est.mean - series).abs()
            ),
        );
    }
    for d in [8usize, 10] {
        let (lo, hi) = crate::estimators::threshold_proxy(d, 4)?;
        let a = 0.5 * (lo + hi);
        let target = 2.0 * d as f64 - 6.0;
        r.check(
            (a / target - 1.0).abs() <= 0.15,
            format!("d = {d}: threshold proxy {a:.4} (bracket [{lo:.4}, {hi:.4}]) vs 2d-6 = {target}"),
        );
    }
    Ok(())
}

fn cube(d: usize, n: i32) -> Vec<Site> {
    let spec = LatticeSpec::new(d, n as u32, 0.0).unwrap();
    (0..spec.site_count()).map(|i| spec.site_of(i)).collect()
}

fn c8(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let g00 = FreeGreen::new(3)?.origin();
    let w = cfg.reps(1_000_000, 100_000);
    let c = capacity_mc(&[Site::origin(3)], 8, w, &cfg.stream(8))?;
    r.check(
        (c.value * g00 - 1.0).abs() <= 0.01,
        format!("Cap({{0}}) = {:.5} ± {:.5} vs 1/G(0,0) = {:.5}", c.value, c.std_error, 1.0 / g00),
    );
    let walkers = cfg.reps(1000, 50);
    let mut pts = Vec::new();
    for n in [2, 4, 8, 16] {
        let est = capacity_mc(&cube(3, n), 2 * n as u32, walkers, &cfg.stream(8).derive(n as u64))?;
        r.note(format!("Cap(B(0,{n})) = {:.4} ± {:.4}", est.value, est.std_error));
        pts.push((n as f64, est.value, est.std_error));
    }
    let f = fit_log_log(&pts)?;
    r.metric("box_slope", f.slope);
    r.check((f.slope - 1.0).abs() <= 0.1, format!("Cap(B(0,n)) slope {:.4} ± {:.4} (target 1 ± 0.1)", f.slope, f.slope_se));
    Ok(())
}

fn c9(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let d3 = ExperimentSpec {
        kind: ExperimentKind::ExcursionTail,
        dim: 3,
        box_radius: 10,
        sizes: vec![4, 8, 16],
        replicas: cfg.reps(100_000, 20_000),
        seed: cfg.seed ^ 9,
        ..Default::default()
    };
    let out = run_experiment(&d3)?;
    let ret = out.rows_of("return-probability")[0];
    let exact = out.extras["return_probability_exact"].as_f64().unwrap();
    let z = (ret.value - exact) / ret.stderr;
    r.check(z.abs() <= 3.0, format!("d = 3 return probability {:.5} ± {:.5}, 1 - 1/G(0,0) = {exact:.5}, z = {z:+.2}", ret.value, ret.stderr));
    let first = out.rows_of("return-time")[0];
    r.note(format!("P[return at time 2] = {:.5} ± {:.5} (1/(2d) = {:.5})", first.value, first.stderr, 1.0 / 6.0));

    let d5 = ExperimentSpec {
        kind: ExperimentKind::ExcursionTail,
        dim: 5,
        box_radius: 20,
        sizes: (2..=9).map(|k| 1u32 << k).collect(),
        fit_min: 16.0,
        replicas: cfg.reps(1_500_000, 200_000),
        seed: cfg.seed ^ 9,
        ..Default::default()
    };
    let out = run_experiment(&d5)?;
    match out.fit("excursion-range-tail") {
        Some(f) => {
            r.metric("slope", f.slope);
            r.check(
                (f.slope + 1.5).abs() <= 0.2,
                format!("d = 5 excursion range tail slope {:.3} ± {:.3} over {} sizes (target -1.5 ± 0.2)", f.slope, f.slope_se, f.points_used),
            );
        }
        None => r.check(false, "excursion tail fit impossible".into()),
    }
    if let Some(v) = out.extras.get("return_time_vs_asymptotic") {
        r.metric("return_time_ratios", v.clone());
    }
    Ok(())
}

fn c10(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let spec = LatticeSpec::new(3, 1, 0.0)?;
    let params = SoupParams::new(&spec, 1.0, cfg.stream(10))?;
    let reps = cfg.reps(100_000, 20_000);
    let base = cfg.stream(10);
    let violations = std::sync::atomic::AtomicU64::new(0);
    let sampler = |k: u64| -> Result<SoupSample> {
        let orig = sample_soup(&params.clone().with_stream(base.derive(k)))?;
        let thin = thin_soup(&orig, 0.5, 0.0, &base.derive(k).derive(1))?;
        if !is_sub_soup(&thin, &orig) {
            violations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        Ok(thin)
    };
    let (ok, lines) = avoidance_check(&spec, 0.5, reps, &sampler)?;
    let v = violations.into_inner();
    r.check(v == 0, format!("thinned soup and cluster contained in the original in all {reps} replicas ({v} violations)"));
    for l in lines {
        r.note(l);
    }
    r.check(ok, "thinned avoidance probabilities within 3 sigma of alpha = 0.5 values".into());
    Ok(())
}

/// Loops of `thin` form a sub-multiset of those of `orig`, and each of its
/// clusters lies inside one cluster of `orig`.
pub fn is_sub_soup(thin: &SoupSample, orig: &SoupSample) -> bool {
    let mut pool: HashMap<&[u32], usize> = HashMap::new();
    for l in &orig.loops {
        *pool.entry(&l.sites).or_insert(0) += 1;
    }
    for l in &thin.loops {
        match pool.get_mut(l.sites.as_slice()) {
            Some(c) if *c > 0 => *c -= 1,
            _ => return false,
        }
    }
    if !open_edges(thin).is_subset(&open_edges(orig)) {
        return false;
    }
    let mut oc = SiteClusters::build(orig);
    let mut tc = SiteClusters::build(thin);
    tc.components().values().all(|c| {
        let root = oc.find_root(c[0]);
        root.is_some() && c.iter().all(|&s| oc.find_root(s) == root)
    })
}

fn c11(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let spec = ExperimentSpec {
        kind: ExperimentKind::GwProgeny,
        tail_exponent: 1.5,
        offspring_mean: 0.5,
        sizes: (2..=12).map(|k| 1u32 << k).collect(),
        fit_min: 64.0,
        generations: 10,
        replicas: cfg.reps(10_000_000, 1_000_000),
        seed: cfg.seed ^ 11,
        ..Default::default()
    };
    let out = run_experiment(&spec)?;
    match out.fit("gw-progeny-tail") {
        Some(f) => r.check(
            (f.slope + 1.5).abs() <= 0.2,
            format!("total progeny tail slope {:.3} ± {:.3} over {} sizes (target -1.5 ± 0.2)", f.slope, f.slope_se, f.points_used),
        ),
        None => r.check(false, "progeny tail fit impossible".into()),
    }
    match out.fit("gw-survival-loglinear") {
        Some(f) => r.check(
            f.slope <= 0.5f64.ln() + 3.0 * f.slope_se,
            format!("log P[Z_k > 0] slope {:.4} ± {:.4} <= log 0.5 + 3 sigma = {:.4}", f.slope, f.slope_se, 0.5f64.ln() + 3.0 * f.slope_se),
        ),
        None => r.check(false, "survival fit impossible".into()),
    }
    Ok(())
}

fn c12(cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    let spec = ExperimentSpec {
        kind: ExperimentKind::CapacityGrowth,
        dim: 3,
        alpha: 1.0,
        sizes: vec![4, 8, 16, 32],
        walkers: 1,
        replicas: cfg.reps(20_000, 2_000),
        seed: cfg.seed ^ 12,
        ..Default::default()
    };
    let out = run_experiment(&spec)?;
    let rows = out.rows_of("capacity-growth");
    for w in rows.windows(2) {
        let diff = w[1].value - w[0].value;
        let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        r.check(
            diff > 3.0 * se,
            format!("E[Cap] k = {}: {:.4} ± {:.4} -> k = {}: {:.4} ± {:.4}", w[0].n, w[0].value, w[0].stderr, w[1].n, w[1].value, w[1].stderr),
        );
    }
    if let Some(f) = out.fit("capacity-growth") {
        r.metric("epsilon_hat", f.slope);
        r.check(f.slope > 0.0, format!("fitted growth exponent {:.3} ± {:.3}", f.slope, f.slope_se));
    }
    Ok(())
}

/// Criteria whose tolerance is out of reach at desk-scale sample sizes
/// (the d = 8 Parseval sum has infinite variance and the truncated series
/// misses the next-order terms). They still run and report FAIL.
pub const KNOWN_UNATTAINABLE: &[u32] = &[7];

pub const NOT_REPRODUCIBLE: &[&str] = &[
    "exact values of the critical intensities alpha_c, alpha_1, alpha_# and of kappa_c(alpha)",
    "the d = 3 capacity-growth exponent epsilon(alpha) and the d = 4 logarithmic corrections as sharp constants",
    "existence of an infinite cluster",
];

fn c13(_cfg: &ValidationConfig, r: &mut Report) -> Result<()> {
    for s in NOT_REPRODUCIBLE {
        r.note(format!("not reproducible at desk scale: {s}"));
    }
    r.note("covered only by property tests and the crossing-scan proxy, which is labelled as a proxy".into());
    r.check(true, "statement recorded".into());
    Ok(())
}

pub fn criterion_name(id: u32) -> &'static str {
    match id {
        1 => "determinant avoidance oracle",
        2 => "occupation law at the first vertex",
        3 => "enumerator against log det and empirical loop counts",
        4 => "two-point single-loop formula in a box",
        5 => "one-arm exponent in d = 5",
        6 => "first-shell tail in d = 5",
        7 => "high-dimensional expansion",
        8 => "capacity",
        9 => "excursion statistics",
        10 => "thinning and domination",
        11 => "Galton-Watson suite",
        12 => "capacity growth in d = 3",
        13 => "limits of desk-scale reproduction",
        _ => "unknown",
    }
}

pub fn run_criterion(id: u32, cfg: &ValidationConfig) -> Result<CriterionReport> {
    let t0 = Instant::now();
    let mut r = Report::new();
    let res = match id {
        1 => c1(cfg, &mut r),
        2 => c2(cfg, &mut r),
        3 => c3(cfg, &mut r),
        4 => c4(cfg, &mut r),
        5 => c5(cfg, &mut r),
        6 => c6(cfg, &mut r),
        7 => c7(cfg, &mut r),
        8 => c8(cfg, &mut r),
        9 => c9(cfg, &mut r),
        10 => c10(cfg, &mut r),
        11 => c11(cfg, &mut r),
        12 => c12(cfg, &mut r),
        13 => c13(cfg, &mut r),
        _ => return Err(invalid(format!("no criterion {id}"))),
    };
    if let Err(e) = res {
        r.check(false, format!("error: {e}"));
    }
    Ok(CriterionReport {
        id,
        name: criterion_name(id).into(),
        passed: r.passed,
        details: r.details,
        metrics: serde_json::Value::Object(r.metrics),
        walltime_s: t0.elapsed().as_secs_f64(),
    })
}

/// Criteria run at each level. Quick leaves out the high-dimensional
/// expansion, whose series tolerance is known to be unattainable.
pub fn default_selection(level: Level) -> Vec<u32> {
    match level {
        Level::Full => CRITERIA.collect(),
        Level::Quick => CRITERIA.filter(|&c| c != 7).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_binomial_sums_to_one() {
        let s: f64 = (0..400).map(|k| neg_binomial_pmf(0.7, 0.4, k)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((neg_binomial_pmf(1.0, 0.3, 0) - 0.7).abs() < 1e-14);
    }

    #[test]
    fn chi_square_accepts_exact_counts() {
        let total = 100_000u64;
        let pmf = |k: u64| 0.5f64.powi(k as i32 + 1);
        let counts: HashMap<u64, u64> = (0..30).map(|k| (k, (total as f64 * pmf(k)).round() as u64)).collect();
        let (_, dof, p) = chi_square_pmf(&counts, total, pmf);
        assert!(dof >= 5);
        assert!(p > 0.99);
    }

    #[test]
    fn statement_criterion_passes() {
        let rep = run_criterion(13, &ValidationConfig::default()).unwrap();
        assert!(rep.passed);
        assert!(rep.line().contains("PASS"));
    }
}
