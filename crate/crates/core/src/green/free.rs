//! Free-lattice Green function on Z^d, d >= 3.
//!
//! `G(0,x) = \int_0^\infty e^{-t} \prod_i I_{x_i}(t/d) dt` (continuous-time
//! walk with unit jump rate; each coordinate jumps at rate `1/d`). The
//! integrand is tabulated once per node with scaled Bessel functions, the
//! range `[0, T]` is covered by Gauss-Legendre panels in `log t`, and the
//! remainder `[T, inf)` is integrated termwise from the large-argument
//! expansion of `e^{-z} I_n(z)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};
use crate::lattice::{RngStream, Site};

use super::GreenFunction;

const TAIL_TERMS: usize = 8;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Coefficients `c_j` of `e^{-z} I_n(z) ~ (2 pi z)^{-1/2} sum_j c_j z^{-j}`.
fn bessel_asymptotic_coeffs(n: u32, terms: usize) -> Vec<f64> {
    let mu = 4.0 * (n as f64) * (n as f64);
    let mut c = Vec::with_capacity(terms);
    c.push(1.0);
    for j in 1..terms {
        let odd = (2 * j - 1) as f64;
        let prev = c[j - 1];
        c.push(-prev * (mu - odd * odd) / (8.0 * j as f64));
    }
    c
}

/// `e^{-z} I_n(z)` for `z >= 0`.
pub fn bessel_scaled(n: u32, z: f64) -> f64 {
    if z <= 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if z > 2.0 * nf * nf + 40.0 {
        let mut sum = 0.0;
        let mu = 4.0 * nf * nf;
        let mut term = 1.0;
        for j in 1..60 {
            sum += term;
            let odd = (2 * j - 1) as f64;
            let next = -term * (mu - odd * odd) / (8.0 * j as f64 * z);
            if next.abs() < 1e-17 * sum.abs() || next.abs() > term.abs() {
                sum += next;
                break;
            }
            term = next;
        }
        return sum / (2.0 * PI * z).sqrt();
    }
    // Trapezoid rule for (1/pi) \int_0^pi e^{z(cos t - 1)} cos(n t) dt; the
    // periodic integrand makes the rule spectrally accurate.
    let m = (nf + (70.0 * z).sqrt() + 30.0).ceil() as usize;
    let h = PI / m as f64;
    let f = |t: f64| (z * (t.cos() - 1.0)).exp() * (nf * t).cos();
    let mut s = 0.5 * (f(0.0) + f(PI));
    for k in 1..m {
        s += f(k as f64 * h);
    }
    s / m as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureValue {
    pub value: f64,
    pub error_estimate: f64,
}

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `table[n][k] = e^{-z_k} I_n(z_k)`, `z_k = t_k / d`.
    table: Vec<Vec<f64>>,
}

impl Rule {
    fn build(dim: usize, max_coord: u32, t_end: f64, per_panel: usize) -> Rule {
        let (gx, gw) = gauss_legendre(per_panel);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for p in 0..4 {
            let (a, b) = (p as f64 * 0.25, (p + 1) as f64 * 0.25);
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(0.5 * (a + b) + 0.5 * (b - a) * x);
                weights.push(0.5 * (b - a) * w);
            }
        }
        let u_end = t_end.ln();
        let panels = (u_end / 0.25).ceil() as usize;
        let h = u_end / panels as f64;
        for p in 0..panels {
            let (a, b) = (p as f64 * h, (p + 1) as f64 * h);
            for (x, w) in gx.iter().zip(&gw) {
                let t = (0.5 * (a + b) + 0.5 * (b - a) * x).exp();
                nodes.push(t);
                weights.push(0.5 * (b - a) * w * t);
            }
        }
        let d = dim as f64;
        let table = (0..=max_coord)
            .map(|n| nodes.iter().map(|&t| bessel_scaled(n, t / d)).collect())
            .collect();
        Rule { nodes, weights, table }
    }

    fn integrate(&self, coords: &[u32], extra_t: bool) -> f64 {
        let mut s = 0.0;
        for k in 0..self.nodes.len() {
            let mut f = self.weights[k];
            if extra_t {
                f *= self.nodes[k];
            }
            for &c in coords {
                f *= self.table[c as usize][k];
            }
            s += f;
        }
        s
    }
}

/// Tabulated quadrature for `G(0, x)` over all `x` with `|x_i| <= max_coord`.
pub struct BesselQuadrature {
    dim: usize,
    max_coord: u32,
    z_end: f64,
    fine: Rule,
    coarse: Rule,
    tail: Vec<Vec<f64>>,
}

impl BesselQuadrature {
    pub fn new(dim: usize, max_coord: u32) -> Result<Self> {
        if dim < 3 {
            return Err(invalid(format!("free Green function needs d >= 3 (transience), got d={dim}")));
        }
        let mc = max_coord as f64;
        let z_end = (60.0 * (mc * mc + 1.0)).max(1e4);
        let t_end = dim as f64 * z_end;
        Ok(BesselQuadrature {
            dim,
            max_coord,
            z_end,
            fine: Rule::build(dim, max_coord, t_end, 16),
            coarse: Rule::build(dim, max_coord, t_end, 10),
            tail: (0..=max_coord).map(|n| bessel_asymptotic_coeffs(n, TAIL_TERMS)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_coord(&self) -> u32 {
        self.max_coord
    }

    fn tail_series(&self, coords: &[u32]) -> Vec<f64> {
        let mut prod = vec![0.0; TAIL_TERMS];
        prod[0] = 1.0;
        for &c in coords {
            let s = &self.tail[c as usize];
            let mut next = vec![0.0; TAIL_TERMS];
            for (i, &a) in prod.iter().enumerate() {
                for (j, &b) in s.iter().enumerate().take(TAIL_TERMS - i) {
                    next[i + j] += a * b;
                }
            }
            prod = next;
        }
        prod
    }

    /// `\int_T^\infty t^{power} e^{-t} \prod I(t/d) dt` from the expansion.
    fn tail_integral(&self, coords: &[u32], power: i32) -> (f64, f64) {
        let d = self.dim as f64;
        let series = self.tail_series(coords);
        let pref = d.powi(power + 1) * (2.0 * PI).powf(-d / 2.0);
        let mut total = 0.0;
        let mut last = 0.0;
        for (j, c) in series.iter().enumerate() {
            let expo = d / 2.0 + j as f64 - power as f64 - 1.0;
            let term = pref * c * self.z_end.powf(-expo) / expo;
            total += term;
            last = term;
        }
        (total, last.abs())
    }

    fn check(&self, coords: &[u32]) -> Result<()> {
        if coords.len() != self.dim {
            return Err(invalid("coordinate count does not match the dimension"));
        }
        if coords.iter().any(|&c| c > self.max_coord) {
            return Err(invalid("coordinate beyond the tabulated range"));
        }
        Ok(())
    }

    /// `G(0, x)` for `x` given by absolute coordinates.
    pub fn green(&self, abs_coords: &[u32]) -> Result<QuadratureValue> {
        self.check(abs_coords)?;
        let (tail, tail_err) = self.tail_integral(abs_coords, 0);
        let fine = self.fine.integrate(abs_coords, false);
        let coarse = self.coarse.integrate(abs_coords, false);
        Ok(QuadratureValue { value: fine + tail, error_estimate: (fine - coarse).abs() + tail_err })
    }

    /// `sum_x G(0,x)^2 = \int_0^\infty t e^{-t} I_0(t/d)^d dt`, finite for d >= 5.
    pub fn square_sum(&self) -> Result<QuadratureValue> {
        if self.dim < 5 {
            return Err(invalid("sum of squared Green values diverges for d < 5"));
        }
        let zeros = vec![0u32; self.dim];
        let (tail, tail_err) = self.tail_integral(&zeros, 1);
        let fine = self.fine.integrate(&zeros, true);
        let coarse = self.coarse.integrate(&zeros, true);
        Ok(QuadratureValue { value: fine + tail, error_estimate: (fine - coarse).abs() + tail_err })
    }
}

fn abs_key(x: &Site) -> Vec<u32> {
    let mut k: Vec<u32> = x.0.iter().map(|c| c.unsigned_abs()).collect();
    k.sort_unstable_by(|a, b| b.cmp(a));
    k
}

/// `G(0, x)` on the free lattice by quadrature.
pub fn green_free_quadrature(dim: usize, x: &Site) -> Result<QuadratureValue> {
    if x.dim() != dim {
        return Err(invalid("site dimension mismatch"));
    }
    let key = abs_key(x);
    let q = BesselQuadrature::new(dim, key.first().copied().unwrap_or(0))?;
    q.green(&key)
}

/// Leading-order term `d Gamma(d/2) / ((d-2) pi^{d/2}) (|x|_2 + 1)^{2-d}`,
/// with the `+1` shift kept (it is not the classical form below).
pub fn green_free_asymptotic(dim: usize, x: &Site) -> Result<f64> {
    if dim < 3 {
        return Err(invalid("asymptotic Green function needs d >= 3"));
    }
    Ok(asymptotic_constant(dim) * (x.l2_norm() + 1.0).powf(2.0 - dim as f64))
}

/// Classical form `a_d |x|_2^{2-d}` (no shift); used for tail sums.
pub fn green_free_classical_asymptotic(dim: usize, r: f64) -> f64 {
    asymptotic_constant(dim) * r.powf(2.0 - dim as f64)
}

pub(crate) fn asymptotic_constant(dim: usize) -> f64 {
    let d = dim as f64;
    d * gamma(d / 2.0) / ((d - 2.0) * PI.powf(d / 2.0))
}

/// Deterministic `sum_x G(0,x)^2` on Z^d.
pub fn green_square_sum(dim: usize) -> Result<QuadratureValue> {
    BesselQuadrature::new(dim, 0)?.square_sum()
}

/// Free-lattice Green function with an orbit cache: values depend only on the
/// multiset of `|x_i|`.
pub struct FreeGreen {
    dim: usize,
    state: Mutex<FreeState>,
}

struct FreeState {
    quad: Option<Arc<BesselQuadrature>>,
    cache: HashMap<Vec<u32>, f64>,
}

impl FreeGreen {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(invalid(format!("free Green function needs d >= 3, got d={dim}")));
        }
        Ok(FreeGreen { dim, state: Mutex::new(FreeState { quad: None, cache: HashMap::new() }) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn quadrature(&self, max_coord: u32) -> Result<Arc<BesselQuadrature>> {
        let mut st = self.state.lock().unwrap();
        match &st.quad {
            Some(q) if q.max_coord() >= max_coord => Ok(q.clone()),
            prev => {
                let want = prev.as_ref().map_or(max_coord, |q| max_coord.max(2 * q.max_coord()));
                let q = Arc::new(BesselQuadrature::new(self.dim, want.max(4))?);
                st.quad = Some(q.clone());
                Ok(q)
            }
        }
    }

    /// `G(0, x)` for absolute coordinates sorted in any order.
    pub fn at_abs(&self, abs: &[u32]) -> Result<f64> {
        let mut key = abs.to_vec();
        key.sort_unstable_by(|a, b| b.cmp(a));
        if let Some(v) = self.state.lock().unwrap().cache.get(&key) {
            return Ok(*v);
        }
        let q = self.quadrature(key.first().copied().unwrap_or(0))?;
        let v = q.green(&key)?.value;
        self.state.lock().unwrap().cache.insert(key, v);
        Ok(v)
    }

    pub fn at(&self, x: &Site) -> Result<f64> {
        if x.dim() != self.dim {
            return Err(invalid("site dimension mismatch"));
        }
        self.at_abs(&abs_key(x))
    }

    pub fn origin(&self) -> f64 {
        self.at_abs(&vec![0; self.dim]).expect("origin is always tabulated")
    }
}

impl GreenFunction for FreeGreen {
    fn green(&self, x: &Site, y: &Site) -> Result<f64> {
        self.at(&x.offset(y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub dim: usize,
    pub samples: u64,
    pub mean: f64,
    pub std_error: f64,
}

const MOMENT_CHUNK: u64 = 1 << 16;

/// Monte Carlo mean of `(1 - Z_d)^{-2}`, `Z_d = (1/d) sum cos(U_i)`, `U_i`
/// uniform on `(-pi, pi)`. Equals `sum_x G(0,x)^2` by Parseval.
pub fn parseval_moment_mc(dim: usize, samples: u64, stream: &RngStream) -> Result<MomentEstimate> {
    if dim < 5 {
        return Err(invalid(format!("(1-Z_d)^-2 is not integrable for d={dim} < 5")));
    }
    if samples < 2 {
        return Err(invalid("need at least two samples"));
    }
    let chunks = samples.div_ceil(MOMENT_CHUNK);
    let d = dim as f64;
    let (sum, sumsq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = MOMENT_CHUNK.min(samples - c * MOMENT_CHUNK);
            let mut rng = stream.derive(c).rng();
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let mut z = 0.0;
                for _ in 0..dim {
                    z += (rng.random::<f64>() * 2.0 * PI - PI).cos();
                }
                let v = (1.0 - z / d).powi(-2);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MomentEstimate { dim, samples, mean, std_error: (var / n).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert_relative_eq!(s, 2.0 / 19.0, epsilon = 1e-14);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn scaled_bessel_regimes_agree() {
        // Series I_n(z) = sum (z/2)^{2k+n}/(k!(k+n)!) as an oracle at small z.
        let series = |n: u32, z: f64| {
            let mut s = 0.0;
            let mut term = (z / 2.0).powi(n as i32) / (1..=n).map(|k| k as f64).product::<f64>();
            for k in 0..200 {
                s += term;
                term *= (z / 2.0).powi(2) / ((k + 1) as f64 * (k + 1 + n) as f64);
            }
            s * (-z).exp()
        };
        for n in [0u32, 1, 2, 5] {
            for z in [0.01, 0.5, 3.0, 20.0, 35.0] {
                assert_relative_eq!(bessel_scaled(n, z), series(n, z), max_relative = 1e-12);
            }
        }
        // Continuity across the regime switch.
        for n in [0u32, 3] {
            let zc = 2.0 * (n * n) as f64 + 40.0;
            assert_relative_eq!(bessel_scaled(n, zc - 1e-12), bessel_scaled(n, zc + 1e-12), max_relative = 1e-12);
        }
    }

    #[test]
    fn watson_integral_d3() {
        // Reference value from an independent adaptive integration of the same
        // Bessel representation (scipy.integrate.quad with ive).
        let g = green_free_quadrature(3, &Site::origin(3)).unwrap();
        assert_relative_eq!(g.value, 1.516_386_059_151_980_4, max_relative = 1e-9);
        assert!(g.error_estimate < 1e-6);
    }

    #[test]
    fn d5_origin_value() {
        let g = green_free_quadrature(5, &Site::origin(5)).unwrap();
        assert_relative_eq!(g.value, 1.156_308_124_840_231_6, max_relative = 1e-9);
    }

    #[test]
    fn one_step_identity() {
        // G(0,0) = 1 + G(0,e1) for SRW.
        for d in [3usize, 4, 5, 7] {
            let fg = FreeGreen::new(d).unwrap();
            let g0 = fg.origin();
            let g1 = fg.at(&Site::unit(d, 0, 1)).unwrap();
            assert_relative_eq!(g0, 1.0 + g1, max_relative = 1e-10);
        }
    }

    #[test]
    fn harmonic_off_origin() {
        // G(0,x) = (1/2d) sum_{y~x} G(0,y) for x != 0.
        let fg = FreeGreen::new(3).unwrap();
        for x in [Site(vec![2, 1, 0]), Site(vec![5, 3, 1]), Site(vec![9, 0, 0])] {
            let avg: f64 = crate::lattice::neighbors(&x).iter().map(|y| fg.at(y).unwrap()).sum::<f64>() / 6.0;
            assert_relative_eq!(fg.at(&x).unwrap(), avg, max_relative = 1e-10);
        }
    }

    #[test]
    fn asymptotic_formula_values() {
        let a = green_free_asymptotic(3, &Site::origin(3)).unwrap();
        assert_relative_eq!(a, 3.0 / (2.0 * PI), max_relative = 1e-14);
        let far = green_free_asymptotic(3, &Site(vec![100, 0, 0])).unwrap();
        assert_relative_eq!(far, 3.0 / (2.0 * PI * 101.0), max_relative = 1e-14);
        assert!(green_free_asymptotic(2, &Site::origin(2)).is_err());
    }

    #[test]
    fn low_dimension_rejected() {
        assert!(green_free_quadrature(2, &Site::origin(2)).is_err());
        assert!(parseval_moment_mc(4, 100, &RngStream::new(0, 0)).is_err());
        assert!(green_square_sum(4).is_err());
    }

    #[test]
    fn square_sum_matches_reference() {
        // Independent adaptive quadrature of t e^{-t} I_0(t/d)^d (scipy).
        for (d, want) in [(8usize, 1.289_002_789_702_372_4), (12, 1.160_471_902_001_126), (16, 1.111_954_292_491_539)] {
            let s = green_square_sum(d).unwrap();
            assert_relative_eq!(s.value, want, max_relative = 1e-8);
        }
    }
}
