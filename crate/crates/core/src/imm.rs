//! Interacting-Multiple-Model estimator over a bank of extended Kalman
//! filters, one per controller hypothesis.
//!
//! Transition convention: `T[(j, i)] = P(mode_k = j | mode_{k-1} = i)`, so
//! every column of `T` sums to one. Measurements are full-state positions
//! (`H = I`).

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ControllerId, ControllerLibrary, ModeParams, NoiseModel};
use crate::{Error, Result};

/// Central finite-difference step for dynamics Jacobians.
pub const JACOBIAN_STEP: f64 = 1e-5;

/// A set of mode-conditioned velocity fields `f_j(x)`.
pub trait ModeBank {
    fn num_modes(&self) -> usize;
    fn velocity(&self, mode: usize, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// The controller library seen as a mode bank, with the setpoints frozen for
/// the current step.
pub struct LibraryBank<'a> {
    pub library: &'a ControllerLibrary,
    pub params: &'a ModeParams,
    /// Controller hypothesized by each mode.
    pub order: Vec<ControllerId>,
}

impl<'a> LibraryBank<'a> {
    pub fn canonical(library: &'a ControllerLibrary, params: &'a ModeParams) -> Self {
        Self {
            library,
            params,
            order: library.controllers.iter().map(|c| c.id).collect(),
        }
    }
}

impl ModeBank for LibraryBank<'_> {
    fn num_modes(&self) -> usize {
        self.order.len()
    }

    fn velocity(&self, mode: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.library.velocity(self.order[mode], x, self.params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel {
    matrix: DMatrix<f64>,
}

impl TransitionModel {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Dimension("transition matrix must be square and non-empty".into()));
        }
        if matrix.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("transition probabilities must lie in [0, 1]".into()));
        }
        for (i, col) in matrix.column_iter().enumerate() {
            if (col.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "transition column {i} sums to {}, not 1",
                    col.sum()
                )));
            }
        }
        Ok(Self { matrix })
    }

    /// Uniform off-diagonal switching with the given self-transition
    /// probability.
    pub fn sticky(modes: usize, self_probability: f64) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Dimension("at least one mode is required".into()));
        }
        if modes == 1 {
            return Self::new(DMatrix::identity(1, 1));
        }
        let off = (1.0 - self_probability) / (modes - 1) as f64;
        Self::new(DMatrix::from_fn(modes, modes, |j, i| if i == j { self_probability } else { off }))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn num_modes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Predicted mode mass `T mu`.
    pub fn predict(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.matrix * mu
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeFilterState {
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImmState {
    pub per_mode: Vec<ModeFilterState>,
    pub mu: DVector<f64>,
    pub fused_estimate: DVector<f64>,
    pub fused_covariance: DMatrix<f64>,
}

impl ImmState {
    /// Uniform mode probabilities, every filter anchored at the first
    /// measurement with covariance `state_meas_std^2 I`.
    pub fn initialize(z: &DVector<f64>, modes: usize, noise: &NoiseModel) -> Self {
        let n = z.len();
        let cov = DMatrix::identity(n, n) * noise.state_meas_std.powi(2);
        let filter = ModeFilterState {
            estimate: z.clone(),
            covariance: cov.clone(),
        };
        Self {
            per_mode: vec![filter; modes],
            mu: DVector::from_element(modes, 1.0 / modes as f64),
            fused_estimate: z.clone(),
            fused_covariance: cov,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImmOutput {
    /// Index (into the bank) of the most probable mode.
    pub map_mode: usize,
    pub mu: DVector<f64>,
    pub fused_estimate: DVector<f64>,
    pub fused_covariance: DMatrix<f64>,
    pub log_likelihoods: DVector<f64>,
}

/// Mixing probabilities `weights[(i, j)] = mu_{i|j}` and the predicted mode
/// masses `normalizers[j] = sum_i T[j][i] mu_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixing {
    pub weights: DMatrix<f64>,
    pub normalizers: DVector<f64>,
}

pub fn mixing_weights(mu: &DVector<f64>, transition: &TransitionModel) -> Result<Mixing> {
    let m = transition.num_modes();
    if mu.len() != m {
        return Err(Error::Dimension(format!("mu has {} entries, transition has {m} modes", mu.len())));
    }
    let t = transition.matrix();
    let normalizers = t * mu;
    let mut weights = DMatrix::zeros(m, m);
    for j in 0..m {
        let c = normalizers[j];
        if c <= 0.0 {
            return Err(Error::DegeneratePrior { mode: j });
        }
        for i in 0..m {
            weights[(i, j)] = t[(j, i)] * mu[i] / c;
        }
    }
    Ok(Mixing { weights, normalizers })
}

/// Weighted moment match of a set of Gaussians.
fn moment_match(states: &[ModeFilterState], weights: impl Iterator<Item = f64> + Clone) -> (DVector<f64>, DMatrix<f64>) {
    let n = states[0].estimate.len();
    let mut mean = DVector::zeros(n);
    for (s, w) in states.iter().zip(weights.clone()) {
        mean.axpy(w, &s.estimate, 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (s, w) in states.iter().zip(weights) {
        let d = &s.estimate - &mean;
        cov += (&s.covariance + &d * d.transpose()) * w;
    }
    (mean, symmetrize(cov))
}

pub fn mix_estimates(per_mode: &[ModeFilterState], weights: &DMatrix<f64>) -> Result<Vec<ModeFilterState>> {
    let m = per_mode.len();
    if m == 0 || weights.nrows() != m || weights.ncols() != m {
        return Err(Error::Dimension(format!(
            "mixing matrix is {}x{}, expected {m}x{m}",
            weights.nrows(),
            weights.ncols()
        )));
    }
    check_states(per_mode)?;
    Ok((0..m)
        .map(|j| {
            let (estimate, covariance) = moment_match(per_mode, weights.column(j).iter().copied());
            ModeFilterState { estimate, covariance }
        })
        .collect())
}

fn check_states(states: &[ModeFilterState]) -> Result<()> {
    let n = states[0].estimate.len();
    for s in states {
        if s.estimate.len() != n || s.covariance.nrows() != n || s.covariance.ncols() != n {
            return Err(Error::Dimension("mode filters disagree on state dimension".into()));
        }
    }
    Ok(())
}

pub fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Central-difference Jacobian of `f` at `x`.
pub fn jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for c in 0..n {
        probe[c] = x[c] + step;
        let plus = f(&probe)?;
        probe[c] = x[c] - step;
        let minus = f(&probe)?;
        probe[c] = x[c];
        if plus.len() != n {
            return Err(Error::Dimension("dynamics output length differs from state length".into()));
        }
        jac.set_column(c, &((plus - minus) / (2.0 * step)));
    }
    Ok(jac)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeUpdate {
    pub posterior: ModeFilterState,
    pub log_likelihood: f64,
    pub innovation: DVector<f64>,
    pub innovation_covariance: DMatrix<f64>,
}

impl ModeUpdate {
    pub fn likelihood(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

/// One EKF cycle for a single mode: predict through `x + dt f(x)` with a
/// finite-difference Jacobian, then update with the position measurement.
pub fn ekf_mode_update<F>(
    prior: &ModeFilterState,
    velocity: F,
    z: &DVector<f64>,
    dt: f64,
    noise: &NoiseModel,
) -> Result<ModeUpdate>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = prior.estimate.len();
    if z.len() != n {
        return Err(Error::Dimension(format!("measurement length {} != state length {n}", z.len())));
    }
    let x0 = &prior.estimate;
    let jac = jacobian(&velocity, x0, JACOBIAN_STEP)?;
    let a = DMatrix::identity(n, n) + jac * dt;
    let x_pred = x0 + velocity(x0)? * dt;
    let q = DMatrix::identity(n, n) * noise.process_std.powi(2);
    let p_pred = symmetrize(&a * &prior.covariance * a.transpose() + q);

    let r = DMatrix::identity(n, n) * noise.state_meas_std.powi(2);
    let innovation = z - &x_pred;
    let s = symmetrize(&p_pred + &r);
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning("innovation covariance is not positive definite".into()))?;
    let s_inv_nu = chol.solve(&innovation);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let mahalanobis = innovation.dot(&s_inv_nu);
    let log_likelihood = -0.5 * (mahalanobis + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln());
    if !log_likelihood.is_finite() && log_likelihood != f64::NEG_INFINITY {
        return Err(Error::Conditioning(format!("log-likelihood is {log_likelihood}")));
    }

    // K = P S^-1, computed as (S^-1 P)^T since both are symmetric.
    let gain = chol.solve(&p_pred).transpose();
    let estimate = &x_pred + &gain * &innovation;
    let i_k = DMatrix::identity(n, n) - &gain;
    let covariance = symmetrize(&i_k * &p_pred * i_k.transpose() + &gain * r * gain.transpose());
    if estimate.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("EKF update produced non-finite values".into()));
    }
    Ok(ModeUpdate {
        posterior: ModeFilterState { estimate, covariance },
        log_likelihood,
        innovation,
        innovation_covariance: s,
    })
}

/// `mu_j ∝ Lambda_j * c_j` from log-likelihoods and predicted masses.
///
/// Scores are shifted by their maximum before exponentiation, so even when
/// every likelihood is far below `exp(-700)` the ratios survive. Falls back
/// to uniform only when no mode has a finite score.
pub fn posterior_from_log(log_likelihoods: &DVector<f64>, normalizers: &DVector<f64>) -> DVector<f64> {
    let m = log_likelihoods.len();
    let scores: Vec<f64> = log_likelihoods
        .iter()
        .zip(normalizers.iter())
        .map(|(&l, &c)| if c > 0.0 { l + c.ln() } else { f64::NEG_INFINITY })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return DVector::from_element(m, 1.0 / m as f64);
    }
    let w = DVector::from_iterator(m, scores.iter().map(|s| (s - max).exp()));
    let total = w.sum();
    if !(total > 0.0 && total.is_finite()) {
        return DVector::from_element(m, 1.0 / m as f64);
    }
    w / total
}

/// Posterior mode probabilities from likelihoods, the previous
/// probabilities and the transition model.
pub fn update_mode_probabilities(
    likelihoods: &DVector<f64>,
    mu_prev: &DVector<f64>,
    transition: &TransitionModel,
) -> Result<DVector<f64>> {
    if likelihoods.len() != transition.num_modes() || mu_prev.len() != transition.num_modes() {
        return Err(Error::Dimension("likelihood, prior and transition sizes differ".into()));
    }
    if likelihoods.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidArgument("likelihoods must be >= 0".into()));
    }
    let logs = likelihoods.map(f64::ln);
    Ok(posterior_from_log(&logs, &transition.predict(mu_prev)))
}

pub fn combine_estimates(per_mode: &[ModeFilterState], mu: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if per_mode.is_empty() || per_mode.len() != mu.len() {
        return Err(Error::Dimension("one probability per mode is required".into()));
    }
    check_states(per_mode)?;
    Ok(moment_match(per_mode, mu.iter().copied()))
}

/// Most probable mode; ties go to the lowest index.
pub fn map_controller(mu: &DVector<f64>) -> usize {
    let mut best = 0;
    for (j, &p) in mu.iter().enumerate() {
        if p > mu[best] {
            best = j;
        }
    }
    best
}

/// Interaction, per-mode filtering and combination for one measurement.
pub fn imm_step<B: ModeBank + ?Sized>(
    state: &ImmState,
    z: &DVector<f64>,
    bank: &B,
    transition: &TransitionModel,
    dt: f64,
    noise: &NoiseModel,
) -> Result<(ImmState, ImmOutput)> {
    let m = bank.num_modes();
    if state.per_mode.len() != m || transition.num_modes() != m {
        return Err(Error::Dimension(format!(
            "bank has {m} modes, state has {}, transition has {}",
            state.per_mode.len(),
            transition.num_modes()
        )));
    }
    let mixing = mixing_weights(&state.mu, transition)?;
    let mixed = mix_estimates(&state.per_mode, &mixing.weights)?;

    let mut per_mode = Vec::with_capacity(m);
    let mut log_likelihoods = DVector::zeros(m);
    for (j, prior) in mixed.iter().enumerate() {
        let update = ekf_mode_update(prior, |x| bank.velocity(j, x), z, dt, noise)?;
        log_likelihoods[j] = update.log_likelihood;
        per_mode.push(update.posterior);
    }

    let mu = posterior_from_log(&log_likelihoods, &mixing.normalizers);
    let (fused_estimate, fused_covariance) = combine_estimates(&per_mode, &mu)?;
    let map_mode = map_controller(&mu);
    let output = ImmOutput {
        map_mode,
        mu: mu.clone(),
        fused_estimate: fused_estimate.clone(),
        fused_covariance: fused_covariance.clone(),
        log_likelihoods,
    };
    Ok((
        ImmState {
            per_mode,
            mu,
            fused_estimate,
            fused_covariance,
        },
        output,
    ))
}

/// Stateful wrapper: the first measurement initializes the filter bank,
/// later ones run [`imm_step`].
#[derive(Clone, Debug)]
pub struct ImmFilter {
    pub transition: TransitionModel,
    pub dt: f64,
    pub noise: NoiseModel,
    state: Option<ImmState>,
}

impl ImmFilter {
    pub fn new(transition: TransitionModel, dt: f64, noise: NoiseModel) -> Self {
        Self {
            transition,
            dt,
            noise,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&ImmState> {
        self.state.as_ref()
    }

    pub fn step<B: ModeBank + ?Sized>(&mut self, z: &DVector<f64>, bank: &B) -> Result<ImmOutput> {
        match &self.state {
            None => {
                let init = ImmState::initialize(z, bank.num_modes(), &self.noise);
                let out = ImmOutput {
                    map_mode: map_controller(&init.mu),
                    mu: init.mu.clone(),
                    fused_estimate: init.fused_estimate.clone(),
                    fused_covariance: init.fused_covariance.clone(),
                    log_likelihoods: DVector::zeros(bank.num_modes()),
                };
                self.state = Some(init);
                Ok(out)
            }
            Some(state) => {
                let (next, out) = imm_step(state, z, bank, &self.transition, self.dt, &self.noise)?;
                self.state = Some(next);
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, p: f64) -> ModeFilterState {
        ModeFilterState {
            estimate: DVector::from_element(1, v),
            covariance: DMatrix::from_element(1, 1, p),
        }
    }

    /// Mixing equation evaluated with plain scalars.
    fn mixing_oracle(mu: &[f64], t: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let m = mu.len();
        let mut c = vec![0.0; m];
        for j in 0..m {
            for i in 0..m {
                c[j] += t[j][i] * mu[i];
            }
        }
        let w = (0..m).map(|i| (0..m).map(|j| t[j][i] * mu[i] / c[j]).collect()).collect();
        (w, c)
    }

    #[test]
    fn mixing_single_mode() {
        let t = TransitionModel::sticky(1, 0.95).unwrap();
        let mix = mixing_weights(&DVector::from_element(1, 1.0), &t).unwrap();
        assert_eq!(mix.weights[(0, 0)], 1.0);
        assert_eq!(mix.normalizers[0], 1.0);
    }

    #[test]
    fn mixing_identity_transition() {
        let t = TransitionModel::new(DMatrix::identity(3, 3)).unwrap();
        let mix = mixing_weights(&DVector::from_vec(vec![0.2, 0.5, 0.3]), &t).unwrap();
        assert_eq!(mix.weights, DMatrix::identity(3, 3));
    }

    #[test]
    fn mixing_two_mode_hand_values() {
        let t = TransitionModel::sticky(2, 0.9).unwrap();
        let mu = DVector::from_vec(vec![0.8, 0.2]);
        let mix = mixing_weights(&mu, &t).unwrap();
        assert!((mix.normalizers[0] - 0.74).abs() < 1e-15);
        assert!((mix.weights[(0, 0)] - 0.72 / 0.74).abs() < 1e-15);
        assert!((mix.weights[(1, 0)] - 0.02 / 0.74).abs() < 1e-15);
        assert!((mix.weights[(0, 0)] - 0.97297).abs() < 1e-5);
        let (w, c) = mixing_oracle(&[0.8, 0.2], &[vec![0.9, 0.1], vec![0.1, 0.9]]);
        for j in 0..2 {
            assert!((mix.normalizers[j] - c[j]).abs() < 1e-15);
            assert!((mix.weights.column(j).sum() - 1.0).abs() < 1e-15);
            for i in 0..2 {
                assert!((mix.weights[(i, j)] - w[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mixing_detects_unreachable_mode() {
        let t = TransitionModel::new(DMatrix::identity(2, 2)).unwrap();
        let err = mixing_weights(&DVector::from_vec(vec![1.0, 0.0]), &t).unwrap_err();
        assert!(matches!(err, Error::DegeneratePrior { mode: 1 }));
    }

    #[test]
    fn transition_validation() {
        assert!(TransitionModel::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.9])).is_err());
        assert!(TransitionModel::new(DMatrix::from_row_slice(2, 2, &[1.1, 0.0, -0.1, 1.0])).is_err());
        let t = TransitionModel::sticky(5, 0.95).unwrap();
        assert!((t.matrix()[(1, 0)] - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn mix_estimates_examples() {
        let same = vec![scalar(0.4, 2.0), scalar(0.4, 2.0)];
        let w = DMatrix::from_element(2, 2, 0.5);
        for s in mix_estimates(&same, &w).unwrap() {
            assert_eq!(s, scalar(0.4, 2.0));
        }
        let distinct = vec![scalar(0.0, 1.0), scalar(2.0, 1.0)];
        let ident = mix_estimates(&distinct, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(ident, distinct);
        let mixed = mix_estimates(&distinct, &w).unwrap();
        for s in mixed {
            assert!((s.estimate[0] - 1.0).abs() < 1e-15);
            assert!((s.covariance[(0, 0)] - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn combine_examples() {
        let distinct = vec![scalar(0.0, 1.0), scalar(2.0, 1.0)];
        let (x, p) = combine_estimates(&distinct, &DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (p[(0, 0)] - 2.0).abs() < 1e-15);
        let (x, p) = combine_estimates(&distinct, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!((x[0], p[(0, 0)]), (2.0, 1.0));
    }

    /// Textbook scalar Kalman recursion.
    fn scalar_kf(x0: f64, p0: f64, a: f64, q: f64, r: f64, z: f64) -> (f64, f64, f64) {
        let xp = a * x0;
        let pp = a * a * p0 + q;
        let k = pp / (pp + r);
        let x = xp + k * (z - xp);
        let p = (1.0 - k) * pp;
        let s = pp + r;
        let ll = -0.5 * ((z - xp).powi(2) / s + s.ln() + (2.0 * std::f64::consts::PI).ln());
        (x, p, ll)
    }

    #[test]
    fn scalar_linear_mode_matches_textbook_kf() {
        let noise = NoiseModel {
            process_std: 0.1,
            state_meas_std: 0.2,
            env_meas_std: 0.0,
        };
        let up = ekf_mode_update(&scalar(1.0, 1.0), |x| Ok(-x), &DVector::from_element(1, 0.8), 0.1, &noise).unwrap();
        let (x, p, ll) = scalar_kf(1.0, 1.0, 0.9, 0.01, 0.04, 0.8);
        assert!((up.posterior.estimate[0] - x).abs() < 1e-9);
        assert!((up.posterior.covariance[(0, 0)] - p).abs() < 1e-9);
        assert!((up.log_likelihood - ll).abs() < 1e-9);
        assert!((up.posterior.estimate[0] - 0.80465).abs() < 1e-5);
        assert!((up.innovation_covariance[(0, 0)] - 0.86).abs() < 1e-9);
    }

    #[test]
    fn zero_dynamics_perfect_measurement_is_most_likely() {
        let noise = NoiseModel {
            process_std: 0.0,
            state_meas_std: 0.1,
            env_meas_std: 0.0,
        };
        let prior = ModeFilterState {
            estimate: DVector::from_vec(vec![0.3, -0.1]),
            covariance: DMatrix::identity(2, 2) * 0.01,
        };
        let zero = |x: &DVector<f64>| Ok(DVector::zeros(x.len()));
        let best = ekf_mode_update(&prior, zero, &prior.estimate, 0.05, &noise).unwrap();
        assert!(best.innovation.norm() == 0.0);
        assert!((best.posterior.estimate.clone() - &prior.estimate).norm() < 1e-15);
        for dz in [0.01, -0.03, 0.2] {
            let z = DVector::from_vec(vec![0.3 + dz, -0.1]);
            let other = ekf_mode_update(&prior, zero, &z, 0.05, &noise).unwrap();
            assert!(other.log_likelihood < best.log_likelihood);
        }
    }

    #[test]
    fn uninformative_measurement_keeps_prediction() {
        let noise = NoiseModel {
            process_std: 0.01,
            state_meas_std: 1e6,
            env_meas_std: 0.0,
        };
        let up = ekf_mode_update(&scalar(1.0, 1.0), |x| Ok(-x), &DVector::from_element(1, 50.0), 0.1, &noise).unwrap();
        assert!((up.posterior.estimate[0] - 0.9).abs() < 1e-8);
        assert!(up.log_likelihood.is_finite());
    }

    #[test]
    fn singular_innovation_is_reported() {
        let noise = NoiseModel::noiseless();
        let err = ekf_mode_update(&scalar(1.0, 0.0), |x| Ok(-x), &DVector::from_element(1, 1.0), 0.1, &noise)
            .unwrap_err();
        assert!(matches!(err, Error::Conditioning(_)));
    }

    #[test]
    fn probability_update_examples() {
        let t = TransitionModel::sticky(2, 0.9).unwrap();
        let uniform = DVector::from_vec(vec![0.5, 0.5]);
        let mu = update_mode_probabilities(&DVector::from_vec(vec![1.0, 1.0]), &uniform, &t).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-15);
        let mu = update_mode_probabilities(&DVector::from_vec(vec![2.0, 1.0]), &uniform, &t).unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-15 && (mu[1] - 1.0 / 3.0).abs() < 1e-15);
        let mu = update_mode_probabilities(&DVector::from_vec(vec![5.0, 0.0]), &DVector::from_vec(vec![0.3, 0.7]), &t)
            .unwrap();
        assert_eq!(mu.as_slice(), &[1.0, 0.0]);
        let mu = update_mode_probabilities(&DVector::from_vec(vec![0.0, 0.0]), &uniform, &t).unwrap();
        assert_eq!(mu.as_slice(), &[0.5, 0.5]);
        assert!(update_mode_probabilities(&DVector::from_vec(vec![-1.0, 1.0]), &uniform, &t).is_err());
    }

    #[test]
    fn underflowed_log_likelihoods_are_rescaled() {
        let logs = DVector::from_vec(vec![-2000.0, -2001.0]);
        let mu = posterior_from_log(&logs, &DVector::from_vec(vec![0.5, 0.5]));
        let e = (-1.0f64).exp();
        assert!((mu[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn map_examples() {
        assert_eq!(map_controller(&DVector::from_vec(vec![0.2, 0.5, 0.1, 0.1, 0.1])), 1);
        assert_eq!(map_controller(&DVector::from_element(5, 0.2)), 0);
        let raw = DVector::from_vec(vec![3.0, 1.0, 7.0, 7.0, 2.0]);
        assert_eq!(map_controller(&raw), map_controller(&(&raw * 0.01)));
        assert_eq!(map_controller(&raw), 2);
    }
}
