//! Ensemble container and the building blocks of one EnKF update:
//! forecast perturbations, observation prediction, sample moments, gains.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::rng::{StepRng, StreamTag};
use crate::error::{Error, Result};
use crate::gp::GpPredictor;
use crate::kernels::{regularized_cholesky, GridSpec, KernelParams, PARAM_DIM};

/// N members of dimension P, one member per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.nrows() == 0 || members.ncols() == 0 {
            return Err(Error::invalid("ensemble must have at least one member and one column"));
        }
        Ok(Self { members })
    }

    pub fn zeros(n: usize, p: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n, p))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged ensemble rows"));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.members
    }

    /// Member count N.
    pub fn n(&self) -> usize {
        self.members.nrows()
    }

    /// Per-member dimension P.
    pub fn p(&self) -> usize {
        self.members.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.members.row(i).iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.members.iter().all(|v| v.is_finite())
    }

    /// Column means, summed in member order.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.p())
            .map(|j| {
                let mut s = 0.0;
                for i in 0..self.n() {
                    s += self.members[(i, j)];
                }
                s / n
            })
            .collect()
    }

    /// Column sample variances (N - 1 denominator); zero for N = 1.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.n();
        let mean = self.mean();
        (0..self.p())
            .map(|j| {
                if n < 2 {
                    return 0.0;
                }
                let mut s = 0.0;
                for i in 0..n {
                    let d = self.members[(i, j)] - mean[j];
                    s += d * d;
                }
                s / (n - 1) as f64
            })
            .collect()
    }

    /// Columns `range` of every member as a new ensemble.
    pub fn columns(&self, start: usize, len: usize) -> Result<Ensemble> {
        if start + len > self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: start + len,
            });
        }
        Ensemble::new(self.members.columns(start, len).into_owned())
    }
}

/// How prediction deviations are centered in the sample covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// Deviations `y_hat_i - y` around the actual observation.
    #[default]
    Observation,
    /// Deviations `y_hat_i - mean(y_hat)` (textbook EnKF).
    EnsembleMean,
}

pub(crate) fn map_members<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, p: usize) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, p, |i, j| rows[i][j])
}

/// Adds independent `N(0, sigma^2)` noise to every entry.
pub fn predict_random_walk(ens: &Ensemble, sigma: f64, rng: &StepRng, tag: StreamTag) -> Result<Ensemble> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("random-walk std must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(ens.clone());
    }
    let p = ens.p();
    let rows = map_members(ens.n(), |i| {
        let z = rng.normals(tag, i, p);
        (0..p).map(|j| ens.members[(i, j)] + sigma * z[j]).collect::<Vec<_>>()
    });
    Ensemble::new(rows_to_matrix(rows, p))
}

/// Shrinkage factor `a` and kernel variance `h^2` for a discount factor.
pub fn liu_west_coefficients(delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("discount factor must lie in (0, 1], got {delta}")));
    }
    let a = (3.0 * delta - 1.0) / (2.0 * delta);
    Ok((a, 1.0 - a * a))
}

/// Liu-West kernel-shrinkage prediction: each member moves toward the
/// ensemble mean by factor `a` and gets Gaussian noise with per-column
/// variance `h^2 * sample variance`.
pub fn liu_west_predict(ens: &Ensemble, delta: f64, rng: &StepRng) -> Result<Ensemble> {
    let (a, h2) = liu_west_coefficients(delta)?;
    if delta == 1.0 {
        return Ok(ens.clone());
    }
    let mean = ens.mean();
    let sd: Vec<f64> = ens.variance().iter().map(|v| (h2 * v).sqrt()).collect();
    let p = ens.p();
    let rows = map_members(ens.n(), |i| {
        let z = rng.normals(StreamTag::LiuWest, i, p);
        (0..p)
            .map(|j| a * ens.members[(i, j)] + (1.0 - a) * mean[j] + sd[j] * z[j])
            .collect::<Vec<_>>()
    });
    Ensemble::new(rows_to_matrix(rows, p))
}

fn check_params_state(params: &Ensemble, state: &Ensemble, grid: &GridSpec) -> Result<()> {
    if params.p() != PARAM_DIM {
        return Err(Error::DimensionMismatch {
            expected: PARAM_DIM,
            got: params.p(),
        });
    }
    if state.p() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: state.p(),
        });
    }
    if params.n() != state.n() {
        return Err(Error::DimensionMismatch {
            expected: params.n(),
            got: state.n(),
        });
    }
    Ok(())
}

/// Per-member GP predictions at `locations`: row i is
/// `predict_at(locations, state_i, params_i, grid)`.
pub fn predict_observations(
    params: &Ensemble,
    state: &Ensemble,
    locations: &DMatrix<f64>,
    grid: &GridSpec,
) -> Result<Ensemble> {
    check_params_state(params, state, grid)?;
    if locations.ncols() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: locations.ncols(),
        });
    }
    let s = locations.nrows();
    let rows = map_members(params.n(), |i| -> Result<Vec<f64>> {
        let p = KernelParams::from_slice(&params.row(i)).map_err(|e| e.for_member(i))?;
        let predictor = GpPredictor::new(grid, p).map_err(|e| e.for_member(i))?;
        let out = predictor
            .predict(locations, &state.row(i))
            .map_err(|e| e.for_member(i))?;
        Ok(out.iter().copied().collect())
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ensemble::new(rows_to_matrix(rows, s))
}

/// Observation ensemble: row i is `values + N(0, sigma_obs_sq I)`.
pub fn perturb_observations(values: &[f64], sigma_obs_sq: f64, n: usize, rng: &StepRng) -> Result<Ensemble> {
    if !(sigma_obs_sq > 0.0) || !sigma_obs_sq.is_finite() {
        return Err(Error::invalid(format!(
            "observation perturbation variance must be positive, got {sigma_obs_sq}"
        )));
    }
    let sd = sigma_obs_sq.sqrt();
    let s = values.len();
    let rows = map_members(n, |i| {
        let z = rng.normals(StreamTag::Perturb, i, s);
        values.iter().zip(z).map(|(v, e)| v + sd * e).collect::<Vec<_>>()
    });
    Ensemble::new(rows_to_matrix(rows, s))
}

fn prediction_deviations(pred: &Ensemble, observed: &[f64], centering: Centering) -> Result<DMatrix<f64>> {
    if observed.len() != pred.p() {
        return Err(Error::DimensionMismatch {
            expected: pred.p(),
            got: observed.len(),
        });
    }
    let center = match centering {
        Centering::Observation => observed.to_vec(),
        Centering::EnsembleMean => pred.mean(),
    };
    Ok(DMatrix::from_fn(pred.n(), pred.p(), |i, j| pred.members[(i, j)] - center[j]))
}

fn require_two(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::invalid(format!("sample covariance needs at least 2 members, got {n}")))
    } else {
        Ok(())
    }
}

/// Sample cross-covariance (P x S) between an ensemble and its predictions.
/// The ensemble is always centered at its mean; predictions per `centering`.
pub fn cross_covariance(a: &Ensemble, pred: &Ensemble, observed: &[f64], centering: Centering) -> Result<DMatrix<f64>> {
    require_two(a.n())?;
    if a.n() != pred.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            got: pred.n(),
        });
    }
    let dy = prediction_deviations(pred, observed, centering)?;
    let mean = a.mean();
    let (n, p, s) = (a.n(), a.p(), pred.p());
    let mut out = DMatrix::zeros(p, s);
    for i in 0..n {
        for r in 0..p {
            let da = a.members[(i, r)] - mean[r];
            for c in 0..s {
                out[(r, c)] += da * dy[(i, c)];
            }
        }
    }
    Ok(out / (n - 1) as f64)
}

/// Sample covariance (S x S) of the predictions under `centering`.
pub fn prediction_covariance(pred: &Ensemble, observed: &[f64], centering: Centering) -> Result<DMatrix<f64>> {
    require_two(pred.n())?;
    let dy = prediction_deviations(pred, observed, centering)?;
    let (n, s) = (pred.n(), pred.p());
    let mut out = DMatrix::zeros(s, s);
    for i in 0..n {
        for r in 0..s {
            for c in r..s {
                out[(r, c)] += dy[(i, r)] * dy[(i, c)];
            }
        }
    }
    for r in 0..s {
        for c in 0..r {
            out[(r, c)] = out[(c, r)];
        }
    }
    Ok(out / (n - 1) as f64)
}

/// `cross * (pred_cov + sigma_obs_sq I)^-1`, via a Cholesky solve.
pub fn kalman_gain(cross: &DMatrix<f64>, pred_cov: &DMatrix<f64>, sigma_obs_sq: f64) -> Result<DMatrix<f64>> {
    let s = pred_cov.nrows();
    if !pred_cov.is_square() || cross.ncols() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: cross.ncols(),
        });
    }
    if !(sigma_obs_sq > 0.0) || !sigma_obs_sq.is_finite() {
        return Err(Error::invalid(format!(
            "observation perturbation variance must be positive, got {sigma_obs_sq}"
        )));
    }
    let mut m = pred_cov.clone();
    for i in 0..s {
        m[(i, i)] += sigma_obs_sq;
    }
    // gain^T = m^-1 cross^T since m is symmetric
    let rhs = cross.transpose();
    let sol = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => regularized_cholesky(&m, 0.0)?.0.solve(&rhs),
    };
    Ok(sol.transpose())
}

/// Member i moves by `gain * (obs_i - pred_i)`.
pub fn apply_update(ens: &Ensemble, gain: &DMatrix<f64>, obs: &Ensemble, pred: &Ensemble) -> Result<Ensemble> {
    if gain.nrows() != ens.p() {
        return Err(Error::DimensionMismatch {
            expected: ens.p(),
            got: gain.nrows(),
        });
    }
    if gain.ncols() != obs.p() || obs.p() != pred.p() {
        return Err(Error::DimensionMismatch {
            expected: gain.ncols(),
            got: obs.p(),
        });
    }
    if obs.n() != ens.n() || pred.n() != ens.n() {
        return Err(Error::DimensionMismatch {
            expected: ens.n(),
            got: obs.n(),
        });
    }
    let innovation = &obs.members - &pred.members;
    let delta = innovation * gain.transpose();
    Ensemble::new(&ens.members + delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng() -> StepRng {
        StepRng::new(11, 1)
    }

    fn col(v: &[f64]) -> Ensemble {
        Ensemble::new(DMatrix::from_column_slice(v.len(), 1, v)).unwrap()
    }

    #[test]
    fn random_walk_zero_sigma_is_identity() {
        let e = Ensemble::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        assert_eq!(predict_random_walk(&e, 0.0, &rng(), StreamTag::WalkState).unwrap(), e);
    }

    #[test]
    fn random_walk_moments() {
        let e = Ensemble::zeros(1000, 1000).unwrap();
        let sigma = 0.3;
        let out = predict_random_walk(&e, sigma, &rng(), StreamTag::WalkState).unwrap();
        let n = 1e6;
        let mean = out.members.iter().sum::<f64>() / n;
        let var = out.members.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01);
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.02);
        assert_eq!(out, predict_random_walk(&e, sigma, &rng(), StreamTag::WalkState).unwrap());
    }

    #[test]
    fn liu_west_coefficients_examples() {
        assert_eq!(liu_west_coefficients(1.0).unwrap(), (1.0, 0.0));
        let (a, h2) = liu_west_coefficients(0.95).unwrap();
        assert!((a - 1.85 / 1.9).abs() < 1e-15);
        assert!((a - 0.973_684).abs() < 1e-6);
        assert!((h2 - 0.051_939).abs() < 1e-6);
        assert!(liu_west_coefficients(0.0).is_err());
        assert!(liu_west_coefficients(1.2).is_err());
    }

    #[test]
    fn liu_west_unit_delta_is_identity() {
        let e = Ensemble::from_rows(&[vec![1.0, 2.0, 0.1], vec![-3.0, 0.5, 7.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(liu_west_predict(&e, 1.0, &rng()).unwrap(), e);
    }

    #[test]
    fn liu_west_preserves_mean_in_expectation() {
        let base = Ensemble::from_rows(&(0..50).map(|i| vec![i as f64 * 0.1, (i as f64).sin()]).collect::<Vec<_>>()).unwrap();
        let m0 = base.mean();
        let (_, h2) = liu_west_coefficients(0.9).unwrap();
        let var = base.variance();
        let reps = 200;
        let mut drift = [0.0; 2];
        for r in 0..reps {
            let out = liu_west_predict(&base, 0.9, &StepRng::new(5, r)).unwrap();
            let m = out.mean();
            for j in 0..2 {
                drift[j] += (m[j] - m0[j]) / reps as f64;
            }
        }
        for j in 0..2 {
            // std error of the mean over reps of an N-member mean of noise with variance h2 * var
            let se = (h2 * var[j] / 50.0 / reps as f64).sqrt();
            assert!(drift[j].abs() < 3.0 * se, "col {j}: drift {} se {se}", drift[j]);
        }
    }

    #[test]
    fn perturb_examples() {
        let y = [1.0, -2.0, 0.5];
        let out = perturb_observations(&y, 1e-30, 4, &rng()).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert!((out.members[(i, j)] - y[j]).abs() < 1e-10);
            }
        }
        assert!(perturb_observations(&y, 0.0, 4, &rng()).is_err());

        let n = 100_000;
        let out = perturb_observations(&[3.0], 0.04, n, &rng()).unwrap();
        let d: Vec<f64> = out.members.iter().map(|v| v - 3.0).collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / 0.04 - 1.0).abs() < 0.02, "{var}");
        assert_eq!(out, perturb_observations(&[3.0], 0.04, n, &rng()).unwrap());
    }

    #[test]
    fn cross_covariance_examples() {
        let a = col(&[4.0, 4.0, 4.0]);
        let pred = col(&[1.0, 5.0, -2.0]);
        for c in [Centering::Observation, Centering::EnsembleMean] {
            assert!(cross_covariance(&a, &pred, &[0.3], c).unwrap().iter().all(|v| *v == 0.0));
        }
        let a = col(&[1.0, 2.0, 3.0]);
        let pred = col(&[1.0, 2.0, 3.0]);
        let lit = cross_covariance(&a, &pred, &[2.0], Centering::Observation).unwrap();
        let std = cross_covariance(&a, &pred, &[2.0], Centering::EnsembleMean).unwrap();
        assert!((lit[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((std[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(cross_covariance(&col(&[1.0]), &col(&[1.0]), &[1.0], Centering::Observation).is_err());
    }

    #[test]
    fn prediction_covariance_examples() {
        let pred = col(&[0.5, 0.5, 0.5]);
        assert!(prediction_covariance(&pred, &[0.5], Centering::Observation).unwrap()[(0, 0)] == 0.0);
        let pred = col(&[0.0, 2.0]);
        let c = prediction_covariance(&pred, &[0.0], Centering::Observation).unwrap();
        assert!((c[(0, 0)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn kalman_gain_examples() {
        let zero = DMatrix::zeros(3, 2);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        assert!(kalman_gain(&zero, &cov, 0.1).unwrap().iter().all(|v| *v == 0.0));

        let c = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let g = kalman_gain(&c, &DMatrix::zeros(2, 2), 1.0).unwrap();
        assert!((g - &c).norm() < 1e-15);

        let g = kalman_gain(&c, &cov, 0.3).unwrap();
        let back = &g * (&cov + DMatrix::identity(2, 2) * 0.3);
        assert!((back - c).norm() < 1e-10);
    }

    #[test]
    fn apply_update_examples() {
        let e = Ensemble::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let obs = Ensemble::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        let pred = Ensemble::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let zero = DMatrix::zeros(1, 1);
        assert_eq!(apply_update(&e, &zero, &obs, &pred).unwrap(), e);
        assert_eq!(apply_update(&e, &DMatrix::from_element(1, 1, 0.5), &obs, &obs).unwrap(), e);
        let out = apply_update(&e, &DMatrix::from_element(1, 1, 0.5), &obs, &pred).unwrap();
        assert_eq!(out.members[(0, 0)], 0.5);
        assert_eq!(out.members[(1, 0)], 1.0);
        assert!(apply_update(&e, &DMatrix::zeros(2, 1), &obs, &pred).is_err());
    }

    #[test]
    fn predict_observations_zero_state_and_identical_members() {
        let grid = GridSpec::uniform_1d(-1.0, 1.0, 3).unwrap();
        let params = Ensemble::from_rows(&[vec![0.0, 0.0, -2.0], vec![0.3, -0.2, -1.0]]).unwrap();
        let locs = DMatrix::from_column_slice(2, 1, &[0.2, 0.9]);
        let out = predict_observations(&params, &Ensemble::zeros(2, 3).unwrap(), &locs, &grid).unwrap();
        assert!(out.members.iter().all(|v| *v == 0.0));

        let params = Ensemble::from_rows(&[vec![0.1, 0.2, -2.0], vec![0.1, 0.2, -2.0]]).unwrap();
        let state = Ensemble::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let out = predict_observations(&params, &state, &locs, &grid).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn predict_observations_single_member_matches_dense_oracle() {
        let grid = GridSpec::uniform_1d(-1.0, 1.0, 3).unwrap();
        let params = Ensemble::from_rows(&[vec![0.0, 0.0, 0.01f64.ln()]]).unwrap();
        let state = Ensemble::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let locs = DMatrix::from_column_slice(1, 1, &[0.5]);
        let out = predict_observations(&params, &state, &locs, &grid).unwrap();

        let k = |a: f64, b: f64| (-(a - b) * (a - b)).exp();
        let g = [-1.0, 0.0, 1.0];
        let jit = crate::kernels::BASE_JITTER * 1.01;
        let m = DMatrix::from_fn(3, 3, |i, j| k(g[i], g[j]) + if i == j { 0.01 + jit } else { 0.0 });
        let w = m.try_inverse().unwrap() * nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let expect: f64 = (0..3).map(|j| k(0.5, g[j]) * w[j]).sum();
        assert!((out.members[(0, 0)] - expect).abs() < 1e-10);
    }

    #[test]
    fn predict_observations_reports_member_index() {
        let grid = GridSpec::uniform_1d(-1.0, 1.0, 3).unwrap();
        let params = Ensemble::from_rows(&[vec![0.0, 0.0, -2.0], vec![f64::NAN, 0.0, -2.0]]).unwrap();
        let locs = DMatrix::from_column_slice(1, 1, &[0.5]);
        match predict_observations(&params, &Ensemble::zeros(2, 3).unwrap(), &locs, &grid) {
            Err(Error::Member { member, .. }) => assert_eq!(member, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn naive_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let ma: Vec<f64> = (0..a.ncols()).map(|j| a.column(j).sum() / n as f64).collect();
        let mb: Vec<f64> = (0..b.ncols()).map(|j| b.column(j).sum() / n as f64).collect();
        DMatrix::from_fn(a.ncols(), b.ncols(), |r, c| {
            (0..n).map(|i| (a[(i, r)] - ma[r]) * (b[(i, c)] - mb[c])).sum::<f64>() / (n - 1) as f64
        })
    }

    proptest! {
        #[test]
        fn ensemble_mean_centering_matches_two_pass(
            n in 2usize..12,
            vals in prop::collection::vec(-5.0..5.0f64, 12 * 7),
            obs in prop::collection::vec(-5.0..5.0f64, 3),
        ) {
            let a = Ensemble::new(DMatrix::from_fn(n, 4, |i, j| vals[i * 7 + j])).unwrap();
            let y = Ensemble::new(DMatrix::from_fn(n, 3, |i, j| vals[i * 7 + 4 + j])).unwrap();
            let cc = cross_covariance(&a, &y, &obs, Centering::EnsembleMean).unwrap();
            let pc = prediction_covariance(&y, &obs, Centering::EnsembleMean).unwrap();
            prop_assert!((cc - naive_cov(a.members(), y.members())).amax() < 1e-12);
            prop_assert!((pc - naive_cov(y.members(), y.members())).amax() < 1e-12);
        }

        #[test]
        fn prediction_covariance_symmetric_psd(
            n in 2usize..12,
            vals in prop::collection::vec(-5.0..5.0f64, 12 * 4),
            obs in prop::collection::vec(-5.0..5.0f64, 4),
            literal in any::<bool>(),
        ) {
            let y = Ensemble::new(DMatrix::from_fn(n, 4, |i, j| vals[i * 4 + j])).unwrap();
            let c = if literal { Centering::Observation } else { Centering::EnsembleMean };
            let pc = prediction_covariance(&y, &obs, c).unwrap();
            prop_assert!((&pc - pc.transpose()).amax() <= 1e-12);
            let eig = nalgebra::SymmetricEigen::new(pc);
            prop_assert!(eig.eigenvalues.min() > -1e-10);
        }

        #[test]
        fn observation_centering_cross_cov_equals_mean_centering(
            n in 2usize..10,
            vals in prop::collection::vec(-5.0..5.0f64, 10 * 3),
            obs in prop::collection::vec(-5.0..5.0f64, 2),
        ) {
            // sum_i (a_i - a_bar) = 0, so the prediction center drops out
            let a = Ensemble::new(DMatrix::from_fn(n, 1, |i, _| vals[i * 3])).unwrap();
            let y = Ensemble::new(DMatrix::from_fn(n, 2, |i, j| vals[i * 3 + 1 + j])).unwrap();
            let lit = cross_covariance(&a, &y, &obs, Centering::Observation).unwrap();
            let std = cross_covariance(&a, &y, &obs, Centering::EnsembleMean).unwrap();
            prop_assert!((lit - std).amax() < 1e-10);
        }

        #[test]
        fn zero_innovation_is_identity(
            vals in prop::collection::vec(-5.0..5.0f64, 5 * 3),
            g in prop::collection::vec(-5.0..5.0f64, 3 * 2),
            obs in prop::collection::vec(-5.0..5.0f64, 5 * 2),
        ) {
            let e = Ensemble::new(DMatrix::from_row_slice(5, 3, &vals)).unwrap();
            let o = Ensemble::new(DMatrix::from_row_slice(5, 2, &obs)).unwrap();
            let out = apply_update(&e, &DMatrix::from_row_slice(3, 2, &g), &o, &o).unwrap();
            prop_assert_eq!(out, e);
        }
    }
}
