//! Dense linear algebra for the good-set test and ridge regression.
//!
//! Everything revolves around the regularized Gram matrix
//! `A = λI + Σ φφᵀ` built from the core-set features. The quadratic form
//! `φᵀA⁻¹φ` measures how poorly a direction is covered by the core set, and
//! the same matrix solves the ridge problem that produces the Q-function
//! weights.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Slack allowed above the unit norm bound on features.
pub const NORM_SLACK: f64 = 1e-9;

/// A feature vector `φ(s, a)` with Euclidean norm at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature", "non-finite component"));
        }
        let norm = l2_norm(&values);
        if norm > 1.0 + NORM_SLACK {
            return Err(Error::FeatureNorm { norm });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// The standard basis vector `e_index` in `dim` dimensions.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[index] = 1.0;
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// `wᵀφ`, rejecting mismatched dimensions.
    pub fn dot(&self, weights: &[f64]) -> Result<f64> {
        check_dim(self.0.len(), weights.len())?;
        Ok(dot(&self.0, weights))
    }
}

/// Left-to-right inner product. The summation order is fixed so that two
/// code paths evaluating the same product agree to the bit.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Regularized Gram matrix `A = λI + Σ φφᵀ` together with its Cholesky
/// factor, explicit inverse and running log-determinant.
///
/// Values are immutable: [`GramState::rank_one_update`] returns a new state,
/// so a frozen state can be shared freely between rollout workers.
#[derive(Debug, Clone)]
pub struct GramState {
    lambda: f64,
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    inverse: DMatrix<f64>,
    log_det: f64,
}

impl GramState {
    /// `A = λI`, so `log det A = d·ln λ`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        let matrix = DMatrix::from_diagonal_element(dim, dim, lambda);
        let mut state = Self::factorize(lambda, matrix)?;
        state.log_det = dim as f64 * lambda.ln();
        Ok(state)
    }

    /// Builds the state for an explicit design by successive rank-one updates.
    pub fn from_features<'a>(
        dim: usize,
        lambda: f64,
        features: impl IntoIterator<Item = &'a FeatureVector>,
    ) -> Result<Self> {
        features
            .into_iter()
            .try_fold(Self::new(dim, lambda)?, |g, phi| g.rank_one_update(phi))
    }

    fn factorize(lambda: f64, matrix: DMatrix<f64>) -> Result<Self> {
        let factor = Cholesky::new(matrix.clone())
            .ok_or_else(|| invalid("gram", "matrix is not positive definite"))?;
        let inverse = factor.inverse();
        let log_det = cholesky_log_det(&factor);
        Ok(Self {
            lambda,
            matrix,
            factor,
            inverse,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Log-determinant tracked through the matrix determinant lemma.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Log-determinant recomputed from the current Cholesky factor.
    pub fn factor_log_det(&self) -> f64 {
        cholesky_log_det(&self.factor)
    }

    /// The good-set quadratic form `φᵀA⁻¹φ`.
    pub fn uncertainty(&self, phi: &FeatureVector) -> Result<f64> {
        let d = self.dim();
        check_dim(d, phi.dim())?;
        let x = phi.as_slice();
        let mut total = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let column = self.inverse.column(i);
            let mut row = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                row += column[j] * xj;
            }
            total += xi * row;
        }
        Ok(total.max(0.0))
    }

    /// `A + φφᵀ`, with the log-determinant advanced by `ln(1 + φᵀA⁻¹φ)`.
    pub fn rank_one_update(&self, phi: &FeatureVector) -> Result<Self> {
        let u = self.uncertainty(phi)?;
        let v = DVector::from_column_slice(phi.as_slice());
        let matrix = &self.matrix + &v * v.transpose();
        let mut next = Self::factorize(self.lambda, matrix)?;
        next.log_det = self.log_det + u.ln_1p();
        Ok(next)
    }

    /// Ridge solution `w = A⁻¹ Φᵀ q` for the design the state was built from.
    ///
    /// In debug builds the Gram matrix is rebuilt from `features` and
    /// compared against the cached one.
    pub fn ridge_solve(&self, features: &[FeatureVector], targets: &[f64]) -> Result<Vec<f64>> {
        if features.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: targets.len(),
            });
        }
        let d = self.dim();
        for phi in features {
            check_dim(d, phi.dim())?;
        }
        #[cfg(debug_assertions)]
        self.check_design(features)?;

        let mut rhs = DVector::<f64>::zeros(d);
        for (phi, &q) in features.iter().zip(targets) {
            for (r, &x) in rhs.iter_mut().zip(phi.as_slice()) {
                *r += q * x;
            }
        }
        Ok(self.factor.solve(&rhs).as_slice().to_vec())
    }

    /// Verifies `A == λI + Σ φφᵀ` up to accumulated rounding.
    pub fn check_design(&self, features: &[FeatureVector]) -> Result<()> {
        let d = self.dim();
        let mut rebuilt = DMatrix::from_diagonal_element(d, d, self.lambda);
        for phi in features {
            let v = DVector::from_column_slice(phi.as_slice());
            rebuilt += &v * v.transpose();
        }
        let deviation = (&rebuilt - &self.matrix).amax();
        let scale = 1.0 + self.matrix.amax();
        if deviation > 1e-9 * scale {
            return Err(Error::GramMismatch { deviation });
        }
        Ok(())
    }
}

fn cholesky_log_det(factor: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * factor.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}
