//! Green functions of the killed box chain and of the free lattice.
//!
//! The box Green function `G_B = (I - Q_B/(1+kappa))^{-1}` is obtained one
//! column at a time by conjugate gradients on the symmetric positive definite
//! operator `I - Q_B/(1+kappa)`, where `Q_B` is the simple-random-walk kernel
//! restricted to non-killed box sites.

mod capacity;
mod free;
mod solver;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use fixedbitset::FixedBitSet;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticeSpec, Site};

pub use capacity::{
    capacity_exact, capacity_mc, inner_boundary, range_capacity_experiment, CapacityEstimate,
    CapacityMethod, RangeCapacityRow,
};
pub use free::{
    bessel_scaled, green_free_asymptotic, green_free_classical_asymptotic, green_free_quadrature,
    green_square_sum, parseval_moment_mc, BesselQuadrature, FreeGreen, MomentEstimate,
    QuadratureValue,
};
pub(crate) use free::asymptotic_constant;
pub use solver::{conjugate_gradient, BoxOperator, CgReport};

/// Relative residual demanded from every column solve.
pub const SOLVE_TOLERANCE: f64 = 1e-12;

/// Largest box handled by the dense oracle.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GreenMethod {
    ExactSolve,
    FreeQuadrature,
    FreeAsymptotic,
}

/// Anything that can evaluate `G(x, y)`.
pub trait GreenFunction: Sync {
    fn green(&self, x: &Site, y: &Site) -> Result<f64>;
}

/// Lazily filled table of killed-box Green columns. Columns are immutable once
/// computed and may be shared between threads.
pub struct GreenTable {
    spec: LatticeSpec,
    killed: FixedBitSet,
    columns: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl std::fmt::Debug for GreenTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreenTable")
            .field("spec", &self.spec)
            .field("killed", &self.killed.count_ones(..))
            .finish()
    }
}

impl GreenTable {
    pub fn new(spec: &LatticeSpec, killed: &[Site]) -> Result<Self> {
        spec.validate()?;
        let mut mask = FixedBitSet::with_capacity(spec.site_count());
        for s in killed {
            if let Some(i) = spec.index_of(s) {
                mask.insert(i);
            }
        }
        Self::with_mask(spec, mask)
    }

    pub fn with_mask(spec: &LatticeSpec, killed: FixedBitSet) -> Result<Self> {
        spec.validate()?;
        if killed.len() != spec.site_count() {
            return Err(invalid("killed mask length does not match the box"));
        }
        if killed.count_ones(..) == spec.site_count() {
            return Err(Error::Singular("the killed set empties the box".into()));
        }
        Ok(GreenTable { spec: spec.clone(), killed, columns: Mutex::new(HashMap::new()) })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn method(&self) -> GreenMethod {
        GreenMethod::ExactSolve
    }

    pub fn is_killed(&self, index: usize) -> bool {
        self.killed.contains(index)
    }

    pub fn column_by_index(&self, y: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(c) = self.columns.lock().unwrap().get(&y) {
            return Ok(c.clone());
        }
        let col = Arc::new(solve_column(&self.spec, &self.killed, y)?);
        self.columns.lock().unwrap().insert(y, col.clone());
        Ok(col)
    }

    pub fn column(&self, y: &Site) -> Result<Arc<Vec<f64>>> {
        let idx = self
            .spec
            .index_of(y)
            .ok_or_else(|| invalid(format!("site {:?} outside the box", y.0)))?;
        self.column_by_index(idx)
    }

    /// `G_B(x, y)`; sites outside the box or killed give 0.
    pub fn entry_by_index(&self, x: usize, y: usize) -> Result<f64> {
        if self.killed.contains(x) || self.killed.contains(y) {
            return Ok(0.0);
        }
        {
            let cols = self.columns.lock().unwrap();
            if let Some(c) = cols.get(&y) {
                return Ok(c[x]);
            }
            if let Some(c) = cols.get(&x) {
                return Ok(c[y]);
            }
        }
        Ok(self.column_by_index(y)?[x])
    }
}

impl GreenFunction for GreenTable {
    fn green(&self, x: &Site, y: &Site) -> Result<f64> {
        match (self.spec.index_of(x), self.spec.index_of(y)) {
            (Some(i), Some(j)) => self.entry_by_index(i, j),
            _ => Ok(0.0),
        }
    }
}

fn solve_column(spec: &LatticeSpec, killed: &FixedBitSet, y: usize) -> Result<Vec<f64>> {
    if y >= spec.site_count() {
        return Err(invalid("column index outside the box"));
    }
    if killed.contains(y) {
        return Err(Error::Singular(format!("column site {y} is killed")));
    }
    let op = BoxOperator::new(spec, Some(killed));
    let mut rhs = vec![0.0; spec.site_count()];
    rhs[y] = 1.0;
    let (x, report) = conjugate_gradient(&op, &rhs, SOLVE_TOLERANCE, 20 * spec.site_count() + 1000);
    if report.converged {
        return Ok(x);
    }
    if spec.site_count() <= DENSE_LIMIT {
        let dense = green_matrix_dense(spec, killed)?;
        return Ok(dense.column(y).iter().copied().collect());
    }
    Err(Error::NoConvergence { iterations: report.iterations, residual: report.residual })
}

/// Green column `G_B(., y)` of the box chain killed on `killed`.
pub fn green_column(spec: &LatticeSpec, killed: &[Site], y: &Site) -> Result<Vec<f64>> {
    let table = GreenTable::new(spec, killed)?;
    let col = table.column(y)?;
    Ok(col.as_ref().clone())
}

/// Dense `(I - Q_B/(1+kappa))^{-1}` by LU; rows and columns of killed sites
/// are zero. Validation oracle for the iterative solver.
pub fn green_matrix_dense(spec: &LatticeSpec, killed: &FixedBitSet) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.site_count();
    if n > DENSE_LIMIT {
        return Err(crate::error::guard(format!("dense oracle limited to {DENSE_LIMIT} sites, got {n}")));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !killed.contains(i)).collect();
    if free.is_empty() {
        return Err(Error::Singular("the killed set empties the box".into()));
    }
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in free.iter().enumerate() {
        pos[i] = k;
    }
    let w = spec.survival() / (2.0 * spec.dim as f64);
    let m = free.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    for (k, &i) in free.iter().enumerate() {
        for j in spec.neighbor_indices(i) {
            if pos[j] != usize::MAX {
                a[(k, pos[j])] -= w;
            }
        }
    }
    let inv = a
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("dense Green operator is singular".into()))?;
    let mut g = DMatrix::<f64>::zeros(n, n);
    for (k, &i) in free.iter().enumerate() {
        for (l, &j) in free.iter().enumerate() {
            g[(i, j)] = inv[(k, l)];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_site_box_has_unit_green() {
        let spec = LatticeSpec::new(3, 0, 0.0).unwrap();
        let col = green_column(&spec, &[], &Site::origin(3)).unwrap();
        assert_eq!(col.len(), 1);
        assert_relative_eq!(col[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn three_site_chain_matches_dense_inverse() {
        // d=1, M=1: sites -1,0,1; exit from the ends. Hand inverse of
        // [[1,-1/2,0],[-1/2,1,-1/2],[0,-1/2,1]] has centre entry 2.
        let spec = LatticeSpec::new(1, 1, 0.0).unwrap();
        let col = green_column(&spec, &[], &Site(vec![0])).unwrap();
        assert_relative_eq!(col[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(col[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(col[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cg_matches_dense_with_killing_and_kappa() {
        for (d, m, kappa) in [(2usize, 3u32, 0.0), (3, 2, 0.3), (2, 4, 1.5)] {
            let spec = LatticeSpec::new(d, m, kappa).unwrap();
            let killed = vec![Site::unit(d, 0, 1), Site::unit(d, d - 1, -2)];
            let table = GreenTable::new(&spec, &killed).unwrap();
            let dense = green_matrix_dense(&spec, &table.killed).unwrap();
            for y in [0, spec.center_index(), spec.site_count() - 1] {
                if table.is_killed(y) {
                    continue;
                }
                let col = table.column_by_index(y).unwrap();
                for x in 0..spec.site_count() {
                    assert!((col[x] - dense[(x, y)]).abs() <= 1e-10 * dense[(y, y)]);
                }
            }
        }
    }

    #[test]
    fn symmetry_positivity_and_diagonal() {
        let spec = LatticeSpec::new(3, 3, 0.0).unwrap();
        let table = GreenTable::new(&spec, &[]).unwrap();
        let ys = [0, 17, spec.center_index(), 200];
        for &y in &ys {
            let cy = table.column_by_index(y).unwrap();
            assert!(cy[y] >= 1.0);
            assert!(cy.iter().all(|&g| g > 0.0));
            for &x in &ys {
                let cx = table.column_by_index(x).unwrap();
                assert!((cx[y] - cy[x]).abs() <= 1e-10 * cx[y].abs().max(cy[x].abs()));
            }
        }
    }

    #[test]
    fn killed_column_is_singular() {
        let spec = LatticeSpec::new(2, 1, 0.0).unwrap();
        let table = GreenTable::new(&spec, &[Site::origin(2)]).unwrap();
        assert!(matches!(table.column(&Site::origin(2)), Err(Error::Singular(_))));
        let all: Vec<Site> = (0..spec.site_count()).map(|i| spec.site_of(i)).collect();
        assert!(GreenTable::new(&spec, &all).is_err());
    }
}
