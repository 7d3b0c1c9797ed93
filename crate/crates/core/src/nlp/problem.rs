use nalgebra::{DMatrix, DVector};

/// Dense sub-block of a sparse Jacobian: rows `row_start..row_start + nrows`
/// restricted to the listed columns. Values are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlock {
    pub row_start: usize,
    pub nrows: usize,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl JacobianBlock {
    pub fn new(row_start: usize, nrows: usize, cols: Vec<usize>) -> Self {
        let values = vec![0.0; nrows * cols.len()];
        JacobianBlock {
            row_start,
            nrows,
            cols,
            values,
        }
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        let w = self.cols.len();
        &mut self.values[row * w + col]
    }
}

/// Block-sparse constraint Jacobian. Blocks may not overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    pub nrows: usize,
    pub ncols: usize,
    pub blocks: Vec<JacobianBlock>,
}

impl SparseJacobian {
    pub fn empty(ncols: usize) -> Self {
        SparseJacobian {
            nrows: 0,
            ncols,
            blocks: Vec::new(),
        }
    }

    /// `out = Jᵀ v` using only the stored blocks.
    pub fn transpose_mul(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.nrows);
        out.iter_mut().for_each(|o| *o = 0.0);
        for b in &self.blocks {
            let w = b.cols.len();
            for r in 0..b.nrows {
                let vr = v[b.row_start + r];
                if vr == 0.0 {
                    continue;
                }
                let row = &b.values[r * w..(r + 1) * w];
                for (c, &j) in b.cols.iter().enumerate() {
                    out[j] += row[c] * vr;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for b in &self.blocks {
            let w = b.cols.len();
            for r in 0..b.nrows {
                for (c, &j) in b.cols.iter().enumerate() {
                    m[(b.row_start + r, j)] += b.values[r * w + c];
                }
            }
        }
        m
    }

    /// `out = Jᵀ v` through a materialized dense matrix.
    pub fn dense_transpose_mul(&self, v: &[f64], out: &mut [f64]) {
        let m = self.to_dense();
        let r = m.transpose() * DVector::from_column_slice(v);
        out.copy_from_slice(r.as_slice());
    }
}

/// Full first-order information at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub constraints: Vec<f64>,
    pub jacobian: SparseJacobian,
}

/// Bound- and equality-constrained nonlinear program
/// `min f(z)  s.t.  c(z) = 0,  lower ≤ z ≤ upper`.
///
/// Evaluations return `None` when the point cannot be evaluated (non-finite
/// intermediate results); solvers treat that as a rejected step.
pub trait NlpProblem: Sync {
    fn num_variables(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn lower_bounds(&self) -> &[f64];
    fn upper_bounds(&self) -> &[f64];
    fn values(&self, z: &[f64]) -> Option<(f64, Vec<f64>)>;
    fn evaluate(&self, z: &[f64]) -> Option<Evaluation>;
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) fn project(z: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &l), &u) in z.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(l, u);
    }
}

/// `‖P(z − g) − z‖∞`, the first-order stationarity measure on a box.
pub fn projected_gradient_norm(z: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .fold(0.0f64, |m, ((&zi, &gi), (&l, &u))| {
            m.max(((zi - gi).clamp(l, u) - zi).abs())
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_and_dense_products_agree() {
        let mut b0 = JacobianBlock::new(0, 2, vec![0, 2]);
        b0.values.copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let mut b1 = JacobianBlock::new(2, 1, vec![0, 1, 3]);
        b1.values.copy_from_slice(&[5.0, -1.0, 0.5]);
        let j = SparseJacobian {
            nrows: 3,
            ncols: 4,
            blocks: vec![b0, b1],
        };
        let v = [0.3, -2.0, 1.5];
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        j.transpose_mul(&v, &mut a);
        j.dense_transpose_mul(&v, &mut b);
        assert_eq!(a, b);
        assert_eq!(a, [0.3 - 6.0 + 7.5, -1.5, 0.6 - 8.0, 0.75]);
    }

    #[test]
    fn projected_gradient_ignores_blocked_directions() {
        let pg = projected_gradient_norm(&[0.0, 1.0, 0.5], &[3.0, -2.0, 0.25], &[0.0; 3], &[1.0; 3]);
        assert_eq!(pg, 0.25);
    }
}
