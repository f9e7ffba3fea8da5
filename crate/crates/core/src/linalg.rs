//! Dense symmetric positive-definite helpers used by the DPP likelihood.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `C` with `M = C Cᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn factor(m: ArrayView2<'_, f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Shape(format!("expected square matrix, got {:?}", m.dim())));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = m[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
            }
            let ljj = diag.sqrt();
            l[[j, j]] = ljj;
            for i in j + 1..n {
                let mut s = m[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `M⁻¹`, obtained by inverting the triangular factor.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.lower.nrows();
        let l = &self.lower;
        // Forward substitution for C⁻¹ (lower triangular).
        let mut inv_l = Array2::<f64>::zeros((n, n));
        for col in 0..n {
            inv_l[[col, col]] = 1.0 / l[[col, col]];
            for i in col + 1..n {
                let mut s = 0.0;
                for k in col..i {
                    s -= l[[i, k]] * inv_l[[k, col]];
                }
                inv_l[[i, col]] = s / l[[i, i]];
            }
        }
        // M⁻¹ = C⁻ᵀ C⁻¹
        let mut out = inv_l.t().dot(&inv_l);
        // Symmetrize away rounding asymmetry.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (out[[i, j]] + out[[j, i]]);
                out[[i, j]] = v;
                out[[j, i]] = v;
            }
        }
        out
    }
}
