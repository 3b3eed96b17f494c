//! Z^d boxes, site indexing, killed simple random walks and reproducible
//! random streams.
//!
//! A box `B(0,M) = [-M,M]^d` is indexed densely with axis 0 as the most
//! significant digit, so the integer order of indices coincides with the
//! lexicographic order of coordinate tuples. Loop canonicalization relies on
//! this.

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{guard, invalid, Error, Result};

/// Largest dimension supported by walkers and boxes.
pub const MAX_DIM: usize = 8;

/// Hard cap on the number of steps of any single walk.
pub const STEP_CAP: u64 = 1_000_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub Vec<i32>);

impl Site {
    pub fn origin(dim: usize) -> Self {
        Site(vec![0; dim])
    }

    /// `sign * e_axis`.
    pub fn unit(dim: usize, axis: usize, sign: i32) -> Self {
        let mut v = vec![0; dim];
        v[axis] = sign;
        Site(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn sup_norm(&self) -> i32 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
    }

    pub fn offset(&self, other: &Site) -> Site {
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn is_adjacent(&self, other: &Site) -> bool {
        self.dim() == other.dim()
            && self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum::<i32>() == 1
    }
}

impl From<Vec<i32>> for Site {
    fn from(v: Vec<i32>) -> Self {
        Site(v)
    }
}

/// The `2d` lattice neighbours of `s`: axis-major, `-e_i` before `+e_i`.
pub fn neighbors(s: &Site) -> Vec<Site> {
    let d = s.dim();
    let mut out = Vec::with_capacity(2 * d);
    for axis in 0..d {
        for sign in [-1, 1] {
            let mut c = s.0.clone();
            c[axis] += sign;
            out.push(Site(c));
        }
    }
    out
}

/// Box geometry and per-step killing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub dim: usize,
    /// `M` in `B(0,M) = [-M,M]^d`.
    pub radius: u32,
    /// Each step survives with probability `1/(1+kappa)`.
    pub kappa: f64,
}

impl LatticeSpec {
    pub fn new(dim: usize, radius: u32, kappa: f64) -> Result<Self> {
        let spec = LatticeSpec { dim, radius, kappa };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(invalid(format!("dimension must be in 1..={MAX_DIM}, got {}", self.dim)));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(invalid(format!(
                "kappa must be finite and >= 0 (kappa < 0 is unsupported), got {}",
                self.kappa
            )));
        }
        let side = self.side() as f64;
        if side.powi(self.dim as i32) > u32::MAX as f64 {
            return Err(guard(format!(
                "box with side {} in d={} exceeds the 2^32 site index space",
                self.side(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn with_radius(&self, radius: u32) -> Self {
        LatticeSpec { radius, ..self.clone() }
    }

    pub fn side(&self) -> usize {
        2 * self.radius as usize + 1
    }

    pub fn site_count(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn survival(&self) -> f64 {
        1.0 / (1.0 + self.kappa)
    }

    /// Stride of `axis` in the dense index (axis 0 most significant).
    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.dim - 1 - axis) as u32)
    }

    pub fn contains(&self, s: &Site) -> bool {
        s.dim() == self.dim && s.sup_norm() <= self.radius as i32
    }

    pub fn index_of(&self, s: &Site) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let m = self.radius as i32;
        let side = self.side();
        Some(s.0.iter().fold(0usize, |acc, &c| acc * side + (c + m) as usize))
    }

    pub fn site_of(&self, mut index: usize) -> Site {
        let side = self.side();
        let m = self.radius as i32;
        let mut c = vec![0i32; self.dim];
        for axis in (0..self.dim).rev() {
            c[axis] = (index % side) as i32 - m;
            index /= side;
        }
        Site(c)
    }

    pub fn center_index(&self) -> usize {
        (self.site_count() - 1) / 2
    }

    /// Sup-norm of the site with the given index.
    pub fn sup_norm_of(&self, mut index: usize) -> u32 {
        let side = self.side();
        let m = self.radius as i64;
        let mut best = 0;
        for _ in 0..self.dim {
            let c = ((index % side) as i64 - m).unsigned_abs() as u32;
            best = best.max(c);
            index /= side;
        }
        best
    }

    /// Indices of the in-box neighbours of `index`.
    pub fn neighbor_indices(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let side = self.side();
        (0..self.dim).flat_map(move |axis| {
            let stride = self.stride(axis);
            let c = (index / stride) % side;
            let minus = (c > 0).then(|| index - stride);
            let plus = (c + 1 < side).then(|| index + stride);
            minus.into_iter().chain(plus)
        })
    }

    pub fn adjacent_indices(&self, a: usize, b: usize) -> bool {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let diff = hi - lo;
        let side = self.side();
        (0..self.dim).any(|axis| {
            let stride = self.stride(axis);
            diff == stride && (lo / stride) % side + 1 < side
        })
    }
}

/// Inner vertex boundary: box sites with at least one neighbour outside the box.
pub fn boundary(spec: &LatticeSpec) -> Vec<Site> {
    let m = spec.radius;
    (0..spec.site_count())
        .filter(|&i| spec.sup_norm_of(i) == m)
        .map(|i| spec.site_of(i))
        .collect()
}

/// A reproducible random stream. Streams with distinct ids under the same
/// seed are independent ChaCha8 streams; `derive` builds child streams by
/// arithmetic on `(seed, stream_id)`, so the result of a parallel run does not
/// depend on scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut z = self.seed;
        for chunk in key.chunks_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream number `tag`.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream {
            seed: splitmix64(self.seed ^ splitmix64(self.stream_id ^ 0xA076_1D64_78BD_642F)),
            stream_id: tag,
        }
    }

    /// Child stream keyed by a label and two integers, for replica streams.
    pub fn derive_keyed(&self, label: &str, a: u64, b: u64) -> RngStream {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for byte in label.bytes() {
            h = (h ^ byte as u64).wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.derive(splitmix64(h ^ splitmix64(a) ^ splitmix64(b.rotate_left(29))))
    }
}

pub trait KillSet {
    fn is_killed(&self, index: usize) -> bool;
}

impl KillSet for FixedBitSet {
    #[inline]
    fn is_killed(&self, index: usize) -> bool {
        self.contains(index)
    }
}

impl<F: Fn(usize) -> bool> KillSet for F {
    #[inline]
    fn is_killed(&self, index: usize) -> bool {
        self(index)
    }
}

/// Empty kill set.
pub struct NoKill;

impl KillSet for NoKill {
    #[inline]
    fn is_killed(&self, _: usize) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    /// Stepped outside the box.
    Exited,
    /// Landed on a killed site (the last recorded site).
    Killed,
    /// Removed by per-step kappa death.
    Died,
}

#[derive(Clone, Debug)]
pub struct Path {
    /// Box indices visited, starting with the start site; includes the killed
    /// site when `terminal == Killed`.
    pub sites: Vec<usize>,
    pub terminal: Terminal,
    pub steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Moved,
    Exited,
    Died,
}

/// Hot-loop simple random walk on a box.
#[derive(Clone, Debug)]
pub struct Walker {
    dim: usize,
    radius: i32,
    strides: [usize; MAX_DIM],
    survival: f64,
    coords: [i32; MAX_DIM],
    index: usize,
    last_dir: usize,
}

impl Walker {
    pub fn new(spec: &LatticeSpec) -> Self {
        let mut strides = [0usize; MAX_DIM];
        for (axis, s) in strides.iter_mut().enumerate().take(spec.dim) {
            *s = spec.stride(axis);
        }
        Walker {
            dim: spec.dim,
            radius: spec.radius as i32,
            strides,
            survival: spec.survival(),
            coords: [0; MAX_DIM],
            index: 0,
            last_dir: 0,
        }
    }

    pub fn place(&mut self, mut index: usize) {
        self.index = index;
        let side = 2 * self.radius as usize + 1;
        for axis in (0..self.dim).rev() {
            self.coords[axis] = (index % side) as i32 - self.radius;
            index /= side;
        }
    }

    #[inline]
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim]
    }

    /// Absolute coordinate along the axis of the most recent step.
    #[inline]
    pub fn last_axis_abs(&self) -> i32 {
        self.coords[self.last_dir >> 1].abs()
    }

    /// Coordinates the most recent step aimed at; after `Exited` this is the
    /// first site outside the box.
    pub fn last_target(&self) -> Vec<i32> {
        let mut c = self.coords().to_vec();
        let axis = self.last_dir >> 1;
        if self.last_dir & 1 == 0 {
            c[axis] -= 1;
        } else {
            c[axis] += 1;
        }
        c
    }

    /// One step: kappa death first, then a uniform neighbour.
    /// On `Exited` the walker position is left unchanged.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StepOutcome {
        if self.survival < 1.0 && rng.random::<f64>() >= self.survival {
            return StepOutcome::Died;
        }
        let dir = rng.random_range(0..2 * self.dim as u32) as usize;
        let axis = dir >> 1;
        self.last_dir = dir;
        let c = &mut self.coords[axis];
        if dir & 1 == 0 {
            if *c == -self.radius {
                return StepOutcome::Exited;
            }
            *c -= 1;
            self.index -= self.strides[axis];
        } else {
            if *c == self.radius {
                return StepOutcome::Exited;
            }
            *c += 1;
            self.index += self.strides[axis];
        }
        StepOutcome::Moved
    }

    /// Step until a terminal event. `record`, when given, receives every site
    /// entered (not the start).
    #[inline]
    pub fn run<R: Rng + ?Sized, K: KillSet + ?Sized>(
        &mut self,
        rng: &mut R,
        killed: &K,
        mut record: Option<&mut Vec<u32>>,
    ) -> Result<(Terminal, u64)> {
        let mut steps = 0u64;
        loop {
            steps += 1;
            if steps > STEP_CAP {
                return Err(Error::StepCap(STEP_CAP));
            }
            match self.step(rng) {
                StepOutcome::Died => return Ok((Terminal::Died, steps)),
                StepOutcome::Exited => return Ok((Terminal::Exited, steps)),
                StepOutcome::Moved => {
                    if let Some(r) = record.as_deref_mut() {
                        r.push(self.index as u32);
                    }
                    if killed.is_killed(self.index) {
                        return Ok((Terminal::Killed, steps));
                    }
                }
            }
        }
    }
}

/// Run a killed walk from `start` until it exits the box, lands on a killed
/// site, or dies.
pub fn walk_until_killed<R: Rng + ?Sized, K: KillSet + ?Sized>(
    start: &Site,
    killed: &K,
    spec: &LatticeSpec,
    rng: &mut R,
) -> Result<Path> {
    spec.validate()?;
    let idx = spec
        .index_of(start)
        .ok_or_else(|| invalid(format!("start site {:?} is outside the box", start.0)))?;
    if killed.is_killed(idx) {
        return Err(invalid("start site is killed"));
    }
    let mut walker = Walker::new(spec);
    walker.place(idx);
    let mut rec = Vec::new();
    let (terminal, steps) = walker.run(rng, killed, Some(&mut rec))?;
    let mut sites = Vec::with_capacity(rec.len() + 1);
    sites.push(idx);
    sites.extend(rec.into_iter().map(|i| i as usize));
    Ok(Path { sites, terminal, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbour_order_and_count() {
        let n = neighbors(&Site(vec![1, 0]));
        assert_eq!(
            n,
            vec![Site(vec![0, 0]), Site(vec![2, 0]), Site(vec![1, -1]), Site(vec![1, 1])]
        );
        let n3 = neighbors(&Site::origin(3));
        assert_eq!(n3.len(), 6);
        for axis in 0..3 {
            assert!(n3.contains(&Site::unit(3, axis, 1)));
            assert!(n3.contains(&Site::unit(3, axis, -1)));
        }
    }

    #[test]
    fn boundary_counts() {
        assert_eq!(boundary(&LatticeSpec::new(2, 1, 0.0).unwrap()).len(), 8);
        assert_eq!(boundary(&LatticeSpec::new(3, 1, 0.0).unwrap()).len(), 26);
        assert_eq!(
            boundary(&LatticeSpec::new(1, 2, 0.0).unwrap()),
            vec![Site(vec![-2]), Site(vec![2])]
        );
        for (d, m) in [(2usize, 3u32), (3, 2), (4, 2)] {
            let spec = LatticeSpec::new(d, m, 0.0).unwrap();
            let expect = (2 * m as usize + 1).pow(d as u32) - (2 * m as usize - 1).pow(d as u32);
            assert_eq!(boundary(&spec).len(), expect);
        }
    }

    #[test]
    fn index_roundtrip_is_lexicographic() {
        let spec = LatticeSpec::new(3, 2, 0.0).unwrap();
        let mut prev: Option<Site> = None;
        for i in 0..spec.site_count() {
            let s = spec.site_of(i);
            assert_eq!(spec.index_of(&s), Some(i));
            assert_eq!(spec.sup_norm_of(i), s.sup_norm() as u32);
            if let Some(p) = prev {
                assert!(p < s);
            }
            prev = Some(s);
        }
        assert_eq!(spec.site_of(spec.center_index()), Site::origin(3));
    }

    #[test]
    fn neighbour_indices_match_coordinates() {
        let spec = LatticeSpec::new(3, 1, 0.0).unwrap();
        for i in 0..spec.site_count() {
            let s = spec.site_of(i);
            let mut expect: Vec<usize> =
                neighbors(&s).iter().filter_map(|n| spec.index_of(n)).collect();
            let mut got: Vec<usize> = spec.neighbor_indices(i).collect();
            expect.sort();
            got.sort();
            assert_eq!(got, expect);
            for j in 0..spec.site_count() {
                assert_eq!(spec.adjacent_indices(i, j), s.is_adjacent(&spec.site_of(j)));
            }
        }
    }

    #[test]
    fn negative_kappa_rejected() {
        assert!(matches!(LatticeSpec::new(3, 2, -0.5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn single_site_box_exits_in_one_step() {
        let spec = LatticeSpec::new(3, 0, 0.0).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        for _ in 0..100 {
            let p = walk_until_killed(&Site::origin(3), &NoKill, &spec, &mut rng).unwrap();
            assert_eq!(p.steps, 1);
            assert_eq!(p.terminal, Terminal::Exited);
            assert_eq!(p.sites.len(), 1);
        }
    }

    #[test]
    fn killed_start_rejected() {
        let spec = LatticeSpec::new(2, 2, 0.0).unwrap();
        let c = spec.center_index();
        let mut rng = RngStream::new(1, 0).rng();
        let res = walk_until_killed(&Site::origin(2), &move |i: usize| i == c, &spec, &mut rng);
        assert!(res.is_err());
    }

    #[test]
    fn same_stream_same_path() {
        let spec = LatticeSpec::new(3, 6, 0.1).unwrap();
        let run = |s: RngStream| {
            let mut rng = s.rng();
            walk_until_killed(&Site::origin(3), &NoKill, &spec, &mut rng).unwrap().sites
        };
        let a = run(RngStream::new(42, 7));
        assert_eq!(a, run(RngStream::new(42, 7)));
        let b = run(RngStream::new(42, 8));
        let c = run(RngStream::new(43, 7));
        assert!(a != b || a != c);
    }

    #[test]
    fn derived_streams_differ() {
        let s = RngStream::new(5, 0);
        assert_ne!(s.derive(1), s.derive(2));
        assert_ne!(s.derive_keyed("one-arm", 2, 0), s.derive_keyed("one-arm", 3, 0));
        assert_ne!(s.derive_keyed("one-arm", 2, 0), s.derive_keyed("two-point", 2, 0));
        assert_eq!(s.derive(9), s.derive(9));
    }
}
