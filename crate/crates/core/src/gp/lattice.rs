use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::kernels::{cov_matrix_sym, Kernel, KernelParams, BASE_JITTER};

/// Solver for `[variance * (K_1 x ... x K_D) + noise * I] x = b` on a
/// Cartesian lattice, where `K_d` is the unit-variance kernel along axis `d`.
pub(super) struct LatticeSolver {
    dims: Vec<usize>,
    vectors: Vec<DMatrix<f64>>,
    denom: Vec<f64>,
    jitter: f64,
}

impl LatticeSolver {
    pub(super) fn new(axes: &[Vec<f64>], params: &KernelParams) -> Self {
        let (variance, lengthscale, noise) = params.to_natural();
        let unit = KernelParams {
            log_variance: 0.0,
            log_lengthscale: lengthscale.ln(),
            log_noise_variance: 0.0,
        };
        let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
        let mut vectors = Vec::with_capacity(axes.len());
        let mut values = Vec::with_capacity(axes.len());
        for axis in axes {
            let x = DMatrix::from_column_slice(axis.len(), 1, axis);
            let k = cov_matrix_sym(Kernel::SquaredExponential, &x, &unit);
            let eig = SymmetricEigen::new(k);
            vectors.push(eig.eigenvectors);
            values.push(eig.eigenvalues);
        }

        // Same relative jitter the dense path applies on its first attempt.
        let jitter = BASE_JITTER * (variance + noise);
        let total: usize = dims.iter().product();
        let mut denom = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut prod = 1.0;
            for d in (0..dims.len()).rev() {
                prod *= values[d][rem % dims[d]];
                rem /= dims[d];
            }
            denom.push(variance * prod.max(0.0) + noise + jitter);
        }
        Self {
            dims,
            vectors,
            denom,
            jitter,
        }
    }

    pub(super) fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(super) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        for (axis, u) in self.vectors.iter().enumerate() {
            mode_product(&mut x, &self.dims, axis, u, true);
        }
        for (v, d) in x.iter_mut().zip(&self.denom) {
            *v /= d;
        }
        for (axis, u) in self.vectors.iter().enumerate() {
            mode_product(&mut x, &self.dims, axis, u, false);
        }
        x
    }
}

/// Multiplies the tensor `data` (row-major, shape `dims`) by `m` (or `m^T`)
/// along `axis`.
fn mode_product(data: &mut [f64], dims: &[usize], axis: usize, m: &DMatrix<f64>, transpose: bool) {
    let n = dims[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut fiber = DVector::zeros(n);
    for o in 0..outer {
        let base = o * n * stride;
        for s in 0..stride {
            for i in 0..n {
                fiber[i] = data[base + i * stride + s];
            }
            let out = if transpose { m.tr_mul(&fiber) } else { m * &fiber };
            for i in 0..n {
                data[base + i * stride + s] = out[i];
            }
        }
    }
}
