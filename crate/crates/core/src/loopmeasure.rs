//! The unrooted loop measure `mu_kappa`: canonical loops, per-loop masses,
//! determinant identities and a brute-force enumerator for tiny boxes.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{guard, invalid, Error, Result};
use crate::green::{FreeGreen, GreenFunction};
use crate::lattice::{LatticeSpec, Site};

/// Largest set handled by the determinant routines.
pub const MAX_DET_SET: usize = 1000;
/// Largest point list for inclusion-exclusion.
pub const MAX_VISIT_POINTS: usize = 20;

/// Start of the lexicographically least rotation (two-pointer scan).
pub fn least_rotation<T: Ord>(s: &[T]) -> usize {
    let n = s.len();
    let (mut i, mut j, mut k) = (0usize, 1usize, 0usize);
    while i < n && j < n && k < n {
        match s[(i + k) % n].cmp(&s[(j + k) % n]) {
            Ordering::Equal => k += 1,
            Ordering::Greater => {
                i += k + 1;
                if i <= j {
                    i = j + 1;
                }
                k = 0;
            }
            Ordering::Less => {
                j += k + 1;
                if j <= i {
                    j = i + 1;
                }
                k = 0;
            }
        }
    }
    i.min(j)
}

/// Largest `k` such that `s` is a `k`-fold repetition of a block.
pub fn multiplicity<T: Eq>(s: &[T]) -> usize {
    let n = s.len();
    if n == 0 {
        return 1;
    }
    let mut fail = vec![0usize; n];
    let mut k = 0;
    for i in 1..n {
        while k > 0 && s[i] != s[k] {
            k = fail[k - 1];
        }
        if s[i] == s[k] {
            k += 1;
        }
        fail[i] = k;
    }
    let p = n - fail[n - 1];
    if n % p == 0 {
        n / p
    } else {
        1
    }
}

/// Canonical rotation and multiplicity of a cyclic sequence.
pub fn canonical_form<T: Ord + Clone>(s: &[T]) -> (Vec<T>, usize) {
    let r = least_rotation(s);
    let mut out = Vec::with_capacity(s.len());
    out.extend_from_slice(&s[r..]);
    out.extend_from_slice(&s[..r]);
    let m = multiplicity(&out);
    (out, m)
}

/// A based loop `(x_1, ..., x_n)`: consecutive sites adjacent, `x_n ~ x_1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasedLoop {
    sites: Vec<Site>,
}

impl BasedLoop {
    pub fn new(sites: Vec<Site>) -> Result<Self> {
        if sites.len() < 2 {
            return Err(invalid("a loop needs at least two sites"));
        }
        let n = sites.len();
        for i in 0..n {
            if !sites[i].is_adjacent(&sites[(i + 1) % n]) {
                return Err(invalid(format!(
                    "sites {:?} and {:?} are not lattice neighbours",
                    sites[i].0,
                    sites[(i + 1) % n].0
                )));
            }
        }
        Ok(BasedLoop { sites })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// An unrooted loop held as its lexicographically least rotation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Loop {
    canonical: Vec<Site>,
    multiplicity: usize,
}

impl Loop {
    pub fn canonical(&self) -> &[Site] {
        &self.canonical
    }

    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.canonical[0].dim()
    }

    pub fn as_based(&self) -> BasedLoop {
        BasedLoop { sites: self.canonical.clone() }
    }
}

pub fn canonicalize(based: &BasedLoop) -> Loop {
    let (canonical, multiplicity) = canonical_form(&based.sites);
    Loop { canonical, multiplicity }
}

/// `mu_kappa` of a loop with `length` steps and multiplicity `m`.
pub fn mass_of(length: usize, multiplicity: usize, dim: usize, kappa: f64) -> f64 {
    (2.0 * dim as f64 * (1.0 + kappa)).powi(-(length as i32)) / multiplicity as f64
}

pub fn loop_mass(l: &Loop, dim: usize, kappa: f64) -> f64 {
    mass_of(l.len(), l.multiplicity(), dim, kappa)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMass {
    pub lp: Loop,
    pub mass: f64,
    pub kappa: f64,
    pub dim: usize,
}

fn green_matrix<G: GreenFunction + ?Sized>(g: &G, sites: &[Site]) -> Result<DMatrix<f64>> {
    let n = sites.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = g.green(&sites[i], &sites[j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn log_det_spd(m: DMatrix<f64>, what: &str) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = m.cholesky().ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

fn dedup(set: &[Site]) -> Vec<Site> {
    let mut v = set.to_vec();
    v.sort();
    v.dedup();
    v
}

/// `mu(loops hitting F) = log det G|_{F x F}`.
pub fn mu_hit_mass<G: GreenFunction + ?Sized>(set: &[Site], g: &G) -> Result<f64> {
    let f = dedup(set);
    if f.len() > MAX_DET_SET {
        return Err(guard(format!("determinant sets limited to {MAX_DET_SET} sites, got {}", f.len())));
    }
    log_det_spd(green_matrix(g, &f)?, "Green submatrix")
}

/// Mass of loops visiting every point, by inclusion-exclusion over subsets.
pub fn mu_visit_all<G: GreenFunction + ?Sized>(points: &[Site], g: &G) -> Result<f64> {
    let p = dedup(points);
    let k = p.len();
    if k > MAX_VISIT_POINTS {
        return Err(guard(format!("inclusion-exclusion limited to {MAX_VISIT_POINTS} points, got {k}")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let full = green_matrix(g, &p)?;
    if k == 2 {
        let r = full[(0, 1)] * full[(0, 1)] / (full[(0, 0)] * full[(1, 1)]);
        if !(full[(0, 0)] > 0.0 && full[(1, 1)] > 0.0 && r < 1.0) {
            return Err(Error::NotPositiveDefinite("two-point Green submatrix".into()));
        }
        return Ok(-(-r).ln_1p());
    }
    let mut total = 0.0;
    for mask in 1u32..(1u32 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| full[(idx[a], idx[b])]);
        let ld = log_det_spd(sub, "Green submatrix of a subset")?;
        if idx.len() % 2 == 1 {
            total += ld;
        } else {
            total -= ld;
        }
    }
    Ok(total)
}

/// `P[no loop of the soup hits F] = det(G|_{F x F})^{-alpha}`.
pub fn prob_avoid<G: GreenFunction + ?Sized>(set: &[Site], alpha: f64, g: &G) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha must be positive"));
    }
    Ok((-alpha * mu_hit_mass(set, g)?).exp())
}

/// `Cov(1{x on no loop}, 1{y on no loop})`.
pub fn cov_occupancy<G: GreenFunction + ?Sized>(x: &Site, y: &Site, alpha: f64, g: &G) -> Result<f64> {
    if x == y {
        return Err(invalid("covariance needs distinct sites"));
    }
    let gxx = g.green(x, x)?;
    let gyy = g.green(y, y)?;
    let gxy = g.green(x, y)?;
    let r = gxy * gxy / (gxx * gyy);
    Ok((gxx * gyy).powf(-alpha) * ((1.0 - r).powf(-alpha) - 1.0))
}

/// Probability that a single loop visits both `0` and `x`.
pub fn p_single_loop_two_point<G: GreenFunction + ?Sized>(x: &Site, alpha: f64, g: &G) -> Result<f64> {
    let o = Site::origin(x.dim());
    if *x == o {
        return Err(invalid("two-point probability needs x != 0"));
    }
    let g00 = g.green(&o, &o)?;
    let gxx = g.green(x, x)?;
    let g0x = g.green(&o, x)?;
    let r = g0x * g0x / (g00 * gxx);
    Ok(1.0 - (1.0 - r).powf(alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstShell {
    /// Truncated sum plus the midpoint of the tail bracket.
    pub value: f64,
    /// Half-width of the interval known to contain the full sum.
    pub tail_width: f64,
    pub truncated_sum: f64,
    pub radius: u32,
}

/// `E[#C(0,1)] = sum_{x != 0} 1 - (1 - (G(0,x)/G(0,0))^2)^alpha` on Z^d.
///
/// Terms with `|x|_inf <= R` are summed over coordinate orbits. The rest is
/// bracketed by `p ~ alpha r` up to second order in `r`, with `sum r` taken
/// from the classical asymptotic Green function integrated outside the balls
/// inscribed in and circumscribing the cube.
pub fn expected_first_shell(alpha: f64, dim: usize, radius: u32) -> Result<FirstShell> {
    expected_first_shell_with(alpha, &FreeGreen::new(dim)?, radius)
}

pub fn expected_first_shell_with(alpha: f64, fg: &FreeGreen, radius: u32) -> Result<FirstShell> {
    let dim = fg.dim();
    if dim <= 4 {
        return Err(invalid(format!(
            "expected first-shell size diverges for d <= 4 (sum of G^2 is infinite), got d={dim}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(invalid("alpha must be positive"));
    }
    let g00 = fg.origin();
    let quad = fg.quadrature(radius)?;
    let mut coords = vec![0u32; dim];
    let mut sum = 0.0;
    // Non-increasing coordinate tuples enumerate orbits of the hyperoctahedral group.
    visit_orbits(&mut coords, 0, radius, &mut |c| {
        if c[0] == 0 {
            return Ok(());
        }
        let g = quad.green(c)?.value;
        let r = (g / g00) * (g / g00);
        sum += orbit_size(c) * (1.0 - (1.0 - r).powf(alpha));
        Ok(())
    })?;
    let d = dim as f64;
    let a = crate::green::asymptotic_constant(dim);
    let sphere = 2.0 * PI.powf(d / 2.0) / gamma(d / 2.0);
    let outside_ball = |rho: f64| a * a * sphere * rho.powf(4.0 - d) / (d - 4.0) / (g00 * g00);
    let rho = radius as f64 + 0.5;
    // Largest ratio r outside the cube, with a factor 2 margin on the asymptotic form.
    let r_max = (2.0 * a * (radius as f64 + 1.0).powf(2.0 - d) / g00).powi(2).min(0.5);
    let lo_f = alpha * (1.0 - alpha * r_max / (2.0 * (1.0 - r_max).powi(2))).max(0.0);
    let hi_f = alpha / (1.0 - r_max);
    let lo = lo_f * outside_ball(rho * d.sqrt());
    let hi = hi_f * outside_ball(rho);
    Ok(FirstShell {
        value: sum + 0.5 * (lo + hi),
        tail_width: 0.5 * (hi - lo),
        truncated_sum: sum,
        radius,
    })
}

fn visit_orbits(
    c: &mut Vec<u32>,
    pos: usize,
    max: u32,
    f: &mut dyn FnMut(&[u32]) -> Result<()>,
) -> Result<()> {
    if pos == c.len() {
        return f(c);
    }
    let top = if pos == 0 { max } else { c[pos - 1] };
    for v in 0..=top {
        c[pos] = v;
        visit_orbits(c, pos + 1, max, f)?;
    }
    Ok(())
}

/// Number of lattice points with the given multiset of absolute coordinates.
fn orbit_size(c: &[u32]) -> f64 {
    let d = c.len();
    let mut size = (1..=d).map(|k| k as f64).product::<f64>();
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && c[j] == c[i] {
            j += 1;
        }
        size /= (1..=(j - i)).map(|k| k as f64).product::<f64>();
        i = j;
    }
    let nonzero = c.iter().filter(|&&v| v != 0).count();
    size * 2f64.powi(nonzero as i32)
}

/// Loops of a tiny box found by exhaustive search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Enumeration {
    pub loops: Vec<LoopMass>,
    pub total_mass: f64,
    /// Upper bound on the mass of all longer loops.
    pub tail_bound: f64,
    pub max_length: usize,
}

pub const ENUM_MAX_SITES: usize = 64;
pub const ENUM_MAX_LENGTH: usize = 14;

/// All loops of length `<= max_length` inside the box avoiding `killed`.
///
/// The tail bound uses `sum_{n > L} tr(P^n)/n <= |V| rho^{L+1} / ((L+1)(1-rho))`
/// with `rho` the spectral radius of the killed kernel `P`.
pub fn enumerate_loops(spec: &LatticeSpec, killed: &[Site], max_length: usize) -> Result<Enumeration> {
    spec.validate()?;
    let n = spec.site_count();
    if n > ENUM_MAX_SITES || max_length > ENUM_MAX_LENGTH {
        return Err(guard(format!(
            "enumerator limited to {ENUM_MAX_SITES} sites and length {ENUM_MAX_LENGTH}, got {n} sites and length {max_length}"
        )));
    }
    let mut allowed = vec![true; n];
    for s in killed {
        if let Some(i) = spec.index_of(s) {
            allowed[i] = false;
        }
    }
    let adj: Vec<Vec<usize>> =
        (0..n).map(|i| spec.neighbor_indices(i).filter(|&j| allowed[j]).collect()).collect();
    let dist = all_pairs_distance(&adj);
    let mut loops = Vec::new();
    let mut path = Vec::with_capacity(max_length);
    for v in (0..n).filter(|&v| allowed[v]) {
        path.clear();
        path.push(v);
        extend(v, &adj, &dist, max_length, &mut path, &mut |p: &[usize]| {
            // Keep each class once: the canonical rotation starts at the
            // minimal site, which is v by construction.
            if least_rotation(p) == 0 {
                let m = multiplicity(p);
                let lp = Loop { canonical: p.iter().map(|&i| spec.site_of(i)).collect(), multiplicity: m };
                let mass = mass_of(p.len(), m, spec.dim, spec.kappa);
                loops.push(LoopMass { lp, mass, kappa: spec.kappa, dim: spec.dim });
            }
        });
    }
    loops.sort_by(|a, b| b.mass.total_cmp(&a.mass).then_with(|| a.lp.cmp(&b.lp)));
    let total_mass = loops.iter().map(|l| l.mass).sum();
    let rho = spectral_radius(spec, &allowed);
    let l1 = (max_length + 1) as f64;
    let free = allowed.iter().filter(|&&a| a).count() as f64;
    let tail_bound = if rho < 1.0 { free * rho.powf(l1) / (l1 * (1.0 - rho)) } else { f64::INFINITY };
    Ok(Enumeration { loops, total_mass, tail_bound, max_length })
}

fn extend(
    v: usize,
    adj: &[Vec<usize>],
    dist: &[Vec<usize>],
    max_len: usize,
    path: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]),
) {
    let cur = *path.last().unwrap();
    for &next in &adj[cur] {
        if next < v {
            continue;
        }
        // Closing here emits a loop; walks may also pass through v again.
        let shortest = if next == v {
            if path.len() >= 2 {
                emit(path);
            }
            path.len() + 2
        } else {
            path.len() + dist[next][v]
        };
        if shortest > max_len {
            continue;
        }
        path.push(next);
        extend(v, adj, dist, max_len, path, emit);
        path.pop();
    }
}

fn all_pairs_distance(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut d = vec![vec![usize::MAX / 4; n]; n];
    for s in 0..n {
        d[s][s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if d[s][w] > d[s][u] + 1 {
                    d[s][w] = d[s][u] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    d
}

fn spectral_radius(spec: &LatticeSpec, allowed: &[bool]) -> f64 {
    let free: Vec<usize> = (0..allowed.len()).filter(|&i| allowed[i]).collect();
    if free.is_empty() {
        return 0.0;
    }
    let mut pos = vec![usize::MAX; allowed.len()];
    for (k, &i) in free.iter().enumerate() {
        pos[i] = k;
    }
    let w = spec.survival() / (2.0 * spec.dim as f64);
    let mut p = DMatrix::<f64>::zeros(free.len(), free.len());
    for (k, &i) in free.iter().enumerate() {
        for j in spec.neighbor_indices(i) {
            if pos[j] != usize::MAX {
                p[(k, pos[j])] = w;
            }
        }
    }
    SymmetricEigen::new(p).eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{green_matrix_dense, GreenTable};
    use approx::assert_relative_eq;
    use fixedbitset::FixedBitSet;

    fn s(v: &[i32]) -> Site {
        Site(v.to_vec())
    }

    #[test]
    fn rotations_share_a_canonical_form() {
        let a = BasedLoop::new(vec![s(&[0, 0]), s(&[1, 0])]).unwrap();
        let b = BasedLoop::new(vec![s(&[1, 0]), s(&[0, 0])]).unwrap();
        assert_eq!(canonicalize(&a), canonicalize(&b));
        assert_eq!(canonicalize(&a).canonical()[0], s(&[0, 0]));
        let rep = BasedLoop::new(vec![s(&[1, 0]), s(&[0, 0]), s(&[1, 0]), s(&[0, 0])]).unwrap();
        let c = canonicalize(&rep);
        assert_eq!((c.multiplicity(), c.len()), (2, 4));
        assert_eq!(canonicalize(&c.as_based()), c);
    }

    #[test]
    fn rejects_broken_loops() {
        assert!(BasedLoop::new(vec![s(&[0, 0])]).is_err());
        assert!(BasedLoop::new(vec![s(&[0, 0]), s(&[2, 0])]).is_err());
        assert!(BasedLoop::new(vec![s(&[0, 0]), s(&[1, 0]), s(&[1, 1])]).is_err());
    }

    #[test]
    fn hand_masses() {
        let l = canonicalize(&BasedLoop::new(vec![Site::origin(3), Site::unit(3, 0, 1)]).unwrap());
        assert_relative_eq!(loop_mass(&l, 3, 0.0), 1.0 / 36.0, epsilon = 1e-15);
        assert_relative_eq!(loop_mass(&l, 3, 1.0), 1.0 / 144.0, epsilon = 1e-15);
        assert_relative_eq!(mass_of(4, 2, 2, 0.0), 1.0 / 512.0, epsilon = 1e-15);
    }

    #[test]
    fn least_rotation_matches_brute_force() {
        let seqs: [&[u8]; 5] = [b"bca", b"abab", b"baab", b"aaaa", b"cabcab"];
        for seq in seqs {
            let n = seq.len();
            let best = (0..n)
                .map(|r| [&seq[r..], &seq[..r]].concat())
                .min()
                .unwrap();
            let (c, _) = canonical_form(seq);
            assert_eq!(c, best);
        }
        assert_eq!(multiplicity(b"abab"), 2);
        assert_eq!(multiplicity(b"aaaa"), 4);
        assert_eq!(multiplicity(b"abaab"), 1);
    }

    #[test]
    fn single_site_box_has_no_loop_mass() {
        let spec = LatticeSpec::new(3, 0, 0.0).unwrap();
        let t = GreenTable::new(&spec, &[]).unwrap();
        assert_eq!(mu_hit_mass(&[Site::origin(3)], &t).unwrap(), 0.0);
        assert!(enumerate_loops(&spec, &[], 8).unwrap().loops.is_empty());
    }

    #[test]
    fn two_point_visit_all_equals_inclusion_exclusion() {
        let spec = LatticeSpec::new(2, 2, 0.2).unwrap();
        let t = GreenTable::new(&spec, &[]).unwrap();
        let (x, y) = (s(&[0, 0]), s(&[1, 1]));
        let direct = mu_visit_all(&[x.clone(), y.clone()], &t).unwrap();
        let ie = mu_hit_mass(&[x.clone()], &t).unwrap() + mu_hit_mass(&[y.clone()], &t).unwrap()
            - mu_hit_mass(&[x.clone(), y.clone()], &t).unwrap();
        assert_relative_eq!(direct, ie, max_relative = 1e-10);
        let z = s(&[-1, 2]);
        // Three points through the general path agree with a hand expansion.
        let three = mu_visit_all(&[x.clone(), y.clone(), z.clone()], &t).unwrap();
        let h = |f: &[Site]| mu_hit_mass(f, &t).unwrap();
        let hand = h(&[x.clone()]) + h(&[y.clone()]) + h(&[z.clone()])
            - h(&[x.clone(), y.clone()])
            - h(&[x.clone(), z.clone()])
            - h(&[y.clone(), z.clone()])
            + h(&[x, y, z]);
        assert_relative_eq!(three, hand, max_relative = 1e-10);
    }

    #[test]
    fn enumerator_brackets_log_det() {
        for (d, m, kappa, killed) in [
            (1usize, 1u32, 0.0, vec![]),
            (2, 1, 0.0, vec![]),
            (2, 1, 0.5, vec![s(&[1, 1])]),
        ] {
            let spec = LatticeSpec::new(d, m, kappa).unwrap();
            let e = enumerate_loops(&spec, &killed, 12).unwrap();
            let mut mask = FixedBitSet::with_capacity(spec.site_count());
            for k in &killed {
                mask.insert(spec.index_of(k).unwrap());
            }
            let g = green_matrix_dense(&spec, &mask).unwrap();
            let free: Vec<usize> = (0..spec.site_count()).filter(|&i| !mask.contains(i)).collect();
            let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| g[(free[a], free[b])]);
            let ld = sub.determinant().ln();
            assert!(e.total_mass <= ld + 1e-12, "{} > {}", e.total_mass, ld);
            assert!(ld - e.total_mass <= e.tail_bound, "d={d} gap {} above {} ({} loops)", ld - e.total_mass, e.tail_bound, e.loops.len());
        }
    }

    #[test]
    fn enumerator_masses_match_formula_and_are_distinct() {
        let spec = LatticeSpec::new(2, 1, 0.0).unwrap();
        let e = enumerate_loops(&spec, &[], 8).unwrap();
        let mut seen = std::collections::HashSet::new();
        for l in &e.loops {
            assert!(seen.insert(l.lp.clone()));
            assert_eq!(canonicalize(&l.lp.as_based()), l.lp);
            assert_relative_eq!(l.mass, loop_mass(&l.lp, 2, 0.0));
        }
        // 12 edges of the 3x3 grid give the length-2 loops.
        assert_eq!(e.loops.iter().filter(|l| l.lp.len() == 2).count(), 12);
        assert!(enumerate_loops(&LatticeSpec::new(3, 2, 0.0).unwrap(), &[], 4).is_err());
        assert!(enumerate_loops(&spec, &[], 15).is_err());
    }

    #[test]
    fn avoid_probability_and_covariance() {
        let fg = FreeGreen::new(3).unwrap();
        let o = Site::origin(3);
        assert_relative_eq!(prob_avoid(&[o.clone()], 1.0, &fg).unwrap(), 1.0 / 1.5163860591519804, max_relative = 1e-9);
        let p1 = prob_avoid(&[o.clone(), Site::unit(3, 1, 1)], 1.0, &fg).unwrap();
        let p2 = prob_avoid(&[o.clone(), Site::unit(3, 1, 1)], 2.0, &fg).unwrap();
        assert_relative_eq!(p2, p1 * p1, max_relative = 1e-12);
        assert!(cov_occupancy(&o, &s(&[2, 1, 0]), 0.7, &fg).unwrap() > 0.0);
        let e1 = Site::unit(3, 0, 1);
        let g0 = fg.origin();
        let expect = ((g0 - 1.0) / g0).powi(2);
        assert_relative_eq!(p_single_loop_two_point(&e1, 1.0, &fg).unwrap(), expect, max_relative = 1e-9);
    }

    #[test]
    fn first_shell_rejects_low_dimensions() {
        assert!(expected_first_shell(1.0, 4, 4).is_err());
        let a = expected_first_shell(0.01, 6, 4).unwrap();
        let b = expected_first_shell(0.02, 6, 4).unwrap();
        assert!((b.value / a.value - 2.0).abs() < 0.01);
    }

    #[test]
    fn orbit_sizes_cover_the_cube() {
        let mut c = vec![0u32; 3];
        let mut total = 0.0;
        visit_orbits(&mut c, 0, 2, &mut |c| {
            total += orbit_size(c);
            Ok(())
        })
        .unwrap();
        assert_eq!(total, 125.0);
    }
}
