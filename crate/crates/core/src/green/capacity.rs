//! Capacity of finite sets: escape-probability Monte Carlo with two-radius
//! extrapolation, and the exact value `1^T (G|_{F x F})^{-1} 1` from any
//! transient Green function.

use std::collections::HashSet;

use fixedbitset::FixedBitSet;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{guard, invalid, Error, Result};
use crate::lattice::{neighbors, LatticeSpec, RngStream, Site, StepOutcome, Walker, STEP_CAP};

use super::GreenFunction;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CapacityMethod {
    /// Escape to `R` and `2R`, extrapolated linearly in `R^{2-d}`.
    EscapeMc { radius: u32, walkers: u64 },
    ExactSolve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub set_size: usize,
    pub value: f64,
    pub std_error: f64,
    pub method: CapacityMethod,
    /// Uncorrected sums of escape-to-`R` and escape-to-`2R` frequencies.
    pub raw: Option<(f64, f64)>,
}

impl CapacityEstimate {
    pub fn zero(method: CapacityMethod) -> Self {
        CapacityEstimate { set_size: 0, value: 0.0, std_error: 0.0, method, raw: Some((0.0, 0.0)) }
    }
}

/// Sites of `set` with at least one lattice neighbour outside `set`.
pub fn inner_boundary(set: &[Site]) -> Vec<Site> {
    let members: HashSet<&Site> = set.iter().collect();
    let mut seen = HashSet::new();
    set.iter()
        .filter(|s| seen.insert((*s).clone()))
        .filter(|s| neighbors(s).iter().any(|n| !members.contains(n)))
        .cloned()
        .collect()
}

/// Monte Carlo capacity: for each boundary site, `walkers` walks record
/// whether they reach `sup-norm = R` and `sup-norm = 2R` before returning to
/// the set. Escape to a finite radius over-counts escape to infinity by
/// `O(R^{2-d})`; the per-walk combination `(q e_{2R} - e_R)/(q - 1)`,
/// `q = 2^{d-2}`, removes that leading term.
pub fn capacity_mc(set: &[Site], escape_radius: u32, walkers: u64, stream: &RngStream) -> Result<CapacityEstimate> {
    let method = CapacityMethod::EscapeMc { radius: escape_radius, walkers };
    if set.is_empty() {
        return Ok(CapacityEstimate::zero(method));
    }
    let d = set[0].dim();
    if d < 3 {
        return Err(invalid(format!("capacity needs a transient walk (d >= 3), got d={d}")));
    }
    if set.iter().any(|s| s.dim() != d) {
        return Err(invalid("mixed dimensions in set"));
    }
    if walkers == 0 {
        return Err(invalid("need at least one walker per site"));
    }
    let set_radius = set.iter().map(|s| s.sup_norm() as u32).max().unwrap_or(0);
    if escape_radius < (2 * set_radius).max(1) {
        return Err(guard(format!(
            "escape radius {escape_radius} below twice the set radius {set_radius}"
        )));
    }
    let r1 = escape_radius as i32;
    // Walking box: exiting it means reaching sup-norm 2R.
    let spec = LatticeSpec::new(d, 2 * escape_radius - 1, 0.0)?;
    let mut mask = FixedBitSet::with_capacity(spec.site_count());
    for s in set {
        mask.insert(spec.index_of(s).expect("set lies inside the walking box"));
    }
    let starts: Vec<usize> =
        inner_boundary(set).iter().map(|s| spec.index_of(s).unwrap()).collect();
    let q = 2f64.powi(d as i32 - 2);

    let per_site: Vec<Result<(f64, f64, f64, f64)>> = starts
        .par_iter()
        .map(|&start| {
            let mut rng = stream.derive(start as u64).rng();
            let mut walker = Walker::new(&spec);
            let (mut s1, mut s2, mut sc, mut sc2) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..walkers {
                walker.place(start);
                let mut reached_r = false;
                let mut steps = 0u64;
                let escaped = loop {
                    steps += 1;
                    if steps > STEP_CAP {
                        return Err(Error::StepCap(STEP_CAP));
                    }
                    match walker.step(&mut rng) {
                        StepOutcome::Exited => break true,
                        StepOutcome::Died => unreachable!("capacity walks have kappa = 0"),
                        StepOutcome::Moved => {
                            if mask.contains(walker.index()) {
                                break false;
                            }
                            if !reached_r && walker.last_axis_abs() >= r1 {
                                reached_r = true;
                            }
                        }
                    }
                };
                let e1 = reached_r as u8 as f64;
                let e2 = escaped as u8 as f64;
                let c = (q * e2 - e1) / (q - 1.0);
                s1 += e1;
                s2 += e2;
                sc += c;
                sc2 += c * c;
            }
            Ok((s1, s2, sc, sc2))
        })
        .collect();

    let w = walkers as f64;
    let (mut value, mut var, mut raw1, mut raw2) = (0.0, 0.0, 0.0, 0.0);
    for r in per_site {
        let (s1, s2, sc, sc2) = r?;
        let mean = sc / w;
        value += mean;
        if walkers > 1 {
            var += ((sc2 - w * mean * mean) / (w - 1.0)).max(0.0) / w;
        }
        raw1 += s1 / w;
        raw2 += s2 / w;
    }
    Ok(CapacityEstimate {
        set_size: set.len(),
        value,
        std_error: var.sqrt(),
        method,
        raw: Some((raw1, raw2)),
    })
}

/// Exact capacity `sum_{x,y in F} (G|_{F x F})^{-1}(x, y)` (equilibrium
/// measure identity) for the chain described by `green`.
pub fn capacity_exact<G: GreenFunction + ?Sized>(green: &G, set: &[Site]) -> Result<CapacityEstimate> {
    let mut uniq: Vec<Site> = set.to_vec();
    uniq.sort();
    uniq.dedup();
    let n = uniq.len();
    if n == 0 {
        return Ok(CapacityEstimate::zero(CapacityMethod::ExactSolve));
    }
    if n > 1000 {
        return Err(guard(format!("exact capacity limited to 1000 sites, got {n}")));
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let g = green.green(&uniq[i], &uniq[j])?;
            m[(i, j)] = g;
            m[(j, i)] = g;
        }
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Green submatrix for capacity".into()))?;
    let e = chol.solve(&DVector::from_element(n, 1.0));
    Ok(CapacityEstimate {
        set_size: n,
        value: e.sum(),
        std_error: 0.0,
        method: CapacityMethod::ExactSolve,
        raw: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeCapacityRow {
    pub n: u32,
    pub paths: usize,
    pub median: f64,
    pub mean: f64,
    pub std_error: f64,
    /// Fraction of paths with `Cap(range) > c F(d,n)`.
    pub exceed_fraction: f64,
    pub threshold: f64,
}

/// `F(d,n)`: `n` for d=3, `n^2/log n` for d=4, `n^2` for d >= 5.
pub fn range_scale(d: usize, n: u32) -> f64 {
    let n = n as f64;
    match d {
        3 => n,
        4 => n * n / n.ln().max(1.0),
        _ => n * n,
    }
}

/// Capacity of the range of a walk from 0 stopped on reaching sup-norm `n`.
pub fn range_capacity_experiment(
    d: usize,
    ns: &[u32],
    paths: usize,
    walkers: u64,
    c: f64,
    stream: &RngStream,
) -> Result<Vec<RangeCapacityRow>> {
    if d < 3 {
        return Err(invalid("range capacity needs d >= 3"));
    }
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == 0 {
            return Err(invalid("range radius must be >= 1"));
        }
        let spec = LatticeSpec::new(d, n - 1, 0.0)?;
        let caps: Vec<Result<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let s = stream.derive_keyed("range-capacity", n as u64, p as u64);
                let mut rng = s.rng();
                let mut walker = Walker::new(&spec);
                walker.place(spec.center_index());
                let mut range: HashSet<Vec<i32>> = HashSet::new();
                range.insert(walker.coords().to_vec());
                let mut steps = 0u64;
                loop {
                    steps += 1;
                    if steps > STEP_CAP {
                        return Err(Error::StepCap(STEP_CAP));
                    }
                    match walker.step(&mut rng) {
                        StepOutcome::Moved => {
                            range.insert(walker.coords().to_vec());
                        }
                        _ => {
                            // The exiting step lands on sup-norm n.
                            range.insert(walker.last_target());
                            break;
                        }
                    }
                }
                let set: Vec<Site> = range.into_iter().map(Site).collect();
                let cap = capacity_mc(&set, 2 * n, walkers, &s.derive(1))?;
                Ok(cap.value)
            })
            .collect();
        let mut vals = caps.into_iter().collect::<Result<Vec<f64>>>()?;
        vals.sort_by(|a, b| a.total_cmp(b));
        let m = vals.len();
        let median = if m % 2 == 1 { vals[m / 2] } else { 0.5 * (vals[m / 2 - 1] + vals[m / 2]) };
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        let threshold = c * range_scale(d, n);
        rows.push(RangeCapacityRow {
            n,
            paths: m,
            median,
            mean,
            std_error: (var / m as f64).sqrt(),
            exceed_fraction: vals.iter().filter(|&&v| v > threshold).count() as f64 / m as f64,
            threshold,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::FreeGreen;

    #[test]
    fn exact_capacity_of_point_is_inverse_green() {
        let fg = FreeGreen::new(3).unwrap();
        let c = capacity_exact(&fg, &[Site::origin(3)]).unwrap();
        assert!((c.value - 1.0 / fg.origin()).abs() < 1e-12);
    }

    #[test]
    fn exact_capacity_monotone_and_subadditive() {
        let fg = FreeGreen::new(3).unwrap();
        let a = vec![Site::origin(3)];
        let b = vec![Site::origin(3), Site::unit(3, 0, 1)];
        let c = vec![Site::origin(3), Site::unit(3, 0, 1), Site(vec![0, 3, 0])];
        let ca = capacity_exact(&fg, &a).unwrap().value;
        let cb = capacity_exact(&fg, &b).unwrap().value;
        let cc = capacity_exact(&fg, &c).unwrap().value;
        assert!(ca < cb && cb < cc);
        assert!(cc <= 3.0 * ca + 1e-12);
    }

    #[test]
    fn boundary_of_solid_cube() {
        let mut cube = Vec::new();
        for x in -2..=2 {
            for y in -2..=2 {
                for z in -2..=2 {
                    cube.push(Site(vec![x, y, z]));
                }
            }
        }
        assert_eq!(inner_boundary(&cube).len(), 125 - 27);
    }

    #[test]
    fn guards() {
        let s = RngStream::new(1, 1);
        assert!(capacity_mc(&[Site(vec![3, 0, 0])], 4, 10, &s).is_err());
        assert!(capacity_mc(&[Site(vec![0, 0])], 4, 10, &s).is_err());
        assert_eq!(capacity_mc(&[], 4, 10, &s).unwrap().value, 0.0);
    }
}
