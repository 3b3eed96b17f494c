use fixedbitset::FixedBitSet;

use crate::lattice::{LatticeSpec, MAX_DIM};

/// Matrix-free `I - Q_B/(1+kappa)` on a box, with killed sites removed
/// (their rows and columns act as zero).
pub struct BoxOperator<'a> {
    dim: usize,
    side: usize,
    len: usize,
    strides: [usize; MAX_DIM],
    weight: f64,
    killed: Option<&'a FixedBitSet>,
}

impl<'a> BoxOperator<'a> {
    pub fn new(spec: &LatticeSpec, killed: Option<&'a FixedBitSet>) -> Self {
        let mut strides = [0usize; MAX_DIM];
        for (axis, s) in strides.iter_mut().enumerate().take(spec.dim) {
            *s = spec.stride(axis);
        }
        let killed = killed.filter(|k| k.count_ones(..) > 0);
        BoxOperator {
            dim: spec.dim,
            side: spec.side(),
            len: spec.site_count(),
            strides,
            weight: spec.survival() / (2.0 * spec.dim as f64),
            killed,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `out = A p`. Rows are lines along the last axis, so only the
    /// last-axis neighbours need per-site bounds checks.
    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        let side = self.side;
        let outer = self.dim - 1;
        let mut coord = [0usize; MAX_DIM];
        let rows = self.len / side;
        for row in 0..rows {
            let mut r = row;
            for axis in (0..outer).rev() {
                coord[axis] = r % side;
                r /= side;
            }
            let base = row * side;
            for j in 0..side {
                let i = base + j;
                if let Some(k) = self.killed {
                    if k.contains(i) {
                        out[i] = 0.0;
                        continue;
                    }
                }
                let mut s = 0.0;
                if j > 0 {
                    s += p[i - 1];
                }
                if j + 1 < side {
                    s += p[i + 1];
                }
                for axis in 0..outer {
                    let st = self.strides[axis];
                    if coord[axis] > 0 {
                        s += p[i - st];
                    }
                    if coord[axis] + 1 < side {
                        s += p[i + st];
                    }
                }
                out[i] = p[i] - self.weight * s;
            }
        }
    }

    fn mask(&self, v: &mut [f64]) {
        if let Some(k) = self.killed {
            for i in k.ones() {
                v[i] = 0.0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for `A x = b`; stops at relative residual `tol`,
/// measured on the recomputed true residual.
pub fn conjugate_gradient(op: &BoxOperator, b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, CgReport) {
    let n = op.len();
    let mut rhs = b.to_vec();
    op.mask(&mut rhs);
    let bnorm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (x, CgReport { iterations: 0, residual: 0.0, converged: true });
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs = dot(&r, &r);
    let mut it = 0;
    // Outer loop restarts from the true residual if recurrence drift hides it.
    for _restart in 0..4 {
        while it < max_iter {
            it += 1;
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rs / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new = dot(&r, &r);
            if rs_new.sqrt() <= 0.5 * tol * bnorm {
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        op.apply(&x, &mut ap);
        for i in 0..n {
            r[i] = rhs[i] - ap[i];
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            return (x, CgReport { iterations: it, residual: res, converged: true });
        }
        if it >= max_iter {
            return (x, CgReport { iterations: it, residual: res, converged: false });
        }
        p.copy_from_slice(&r);
        rs = dot(&r, &r);
    }
    op.apply(&x, &mut ap);
    let res = rhs.iter().zip(&ap).map(|(b, a)| (b - a) * (b - a)).sum::<f64>().sqrt() / bnorm;
    (x, CgReport { iterations: it, residual: res, converged: res <= tol })
}
