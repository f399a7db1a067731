//! Conv → gated recurrent → dense sequence model emitting Gaussian parameters.
//!
//! Two parameterizations share the trunk:
//!
//! * **implicit** heads emit the mean `μ` and diagonal log-variance directly;
//! * **explicit** heads emit per-step AR coefficients `θ̂_1..θ̂_K` and an
//!   offset `θ̂_0`, and the mean is `Σ_k θ̂_k x_{j-k+1} + θ̂_0` with lags
//!   before the start of the sequence taken as zero.
//!
//! The model is causal: the output at index `j` only depends on rows `0..=j`.

mod io;
mod network;
mod step;

pub use io::{load_model, save_model, ModelFile, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use network::{gaussian_nll_var, TapeOutputs};
pub use step::StepState;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::ARCoefficients;
use crate::numerics::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    #[default]
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub channels: usize,
    #[serde(default = "defaults::conv_width")]
    pub conv_width: usize,
    #[serde(default = "defaults::conv_filters")]
    pub conv_filters: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::dense")]
    pub dense1: usize,
    #[serde(default = "defaults::dense")]
    pub dense2: usize,
    #[serde(default)]
    pub parameterization: Parameterization,
    /// AR order of the explicit heads; ignored for implicit models.
    #[serde(default = "defaults::ar_order")]
    pub ar_order: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn conv_width() -> usize {
        3
    }
    pub fn conv_filters() -> usize {
        16
    }
    pub fn hidden() -> usize {
        32
    }
    pub fn dense() -> usize {
        32
    }
    pub fn ar_order() -> usize {
        2
    }
}

impl PredictorConfig {
    pub fn new(channels: usize, parameterization: Parameterization) -> Self {
        Self {
            channels,
            conv_width: defaults::conv_width(),
            conv_filters: defaults::conv_filters(),
            hidden: defaults::hidden(),
            dense1: defaults::dense(),
            dense2: defaults::dense(),
            parameterization,
            ar_order: defaults::ar_order(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("channels", self.channels),
            ("conv_width", self.conv_width),
            ("conv_filters", self.conv_filters),
            ("hidden", self.hidden),
            ("dense1", self.dense1),
            ("dense2", self.dense2),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("predictor {name} must be >= 1")));
        }
        if self.parameterization == Parameterization::Explicit && self.ar_order == 0 {
            return Err(Error::invalid("explicit predictor needs ar_order >= 1"));
        }
        Ok(())
    }

    /// Names and shapes of every weight array, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (n, w, f, h) = (self.channels, self.conv_width, self.conv_filters, self.hidden);
        let (d1, d2, k) = (self.dense1, self.dense2, self.ar_order);
        let mut l = vec![
            ("conv_w", vec![w * n, f]),
            ("conv_b", vec![1, f]),
            ("lstm_wx", vec![f, 4 * h]),
            ("lstm_wh", vec![h, 4 * h]),
            ("lstm_b", vec![1, 4 * h]),
            ("dense1_w", vec![h, d1]),
            ("dense1_b", vec![1, d1]),
            ("dense2_w", vec![d1, d2]),
            ("dense2_b", vec![1, d2]),
        ];
        match self.parameterization {
            Parameterization::Implicit => {
                l.push(("mu_w", vec![d2, n]));
                l.push(("mu_b", vec![1, n]));
            }
            Parameterization::Explicit => {
                l.push(("theta_w", vec![d2, k * n * n]));
                l.push(("theta_b", vec![1, k * n * n]));
                l.push(("theta0_w", vec![d2, n]));
                l.push(("theta0_b", vec![1, n]));
            }
        }
        l.push(("logvar_w", vec![d2, n]));
        l.push(("logvar_b", vec![1, n]));
        l
    }
}

// Indices into the parameter list; heads follow the shared trunk.
pub(crate) const CONV_W: usize = 0;
pub(crate) const CONV_B: usize = 1;
pub(crate) const LSTM_WX: usize = 2;
pub(crate) const LSTM_WH: usize = 3;
pub(crate) const LSTM_B: usize = 4;
pub(crate) const DENSE1_W: usize = 5;
pub(crate) const DENSE1_B: usize = 6;
pub(crate) const DENSE2_W: usize = 7;
pub(crate) const DENSE2_B: usize = 8;
pub(crate) const HEAD0: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    config: PredictorConfig,
    params: Vec<Tensor>,
}

/// Per-step model output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    /// Explicit models: `θ̂_1..θ̂_K`, each `N x N` row-major, concatenated.
    pub theta: Option<Vec<f64>>,
    /// Explicit models: `θ̂_0`.
    pub theta0: Option<Vec<f64>>,
}

impl PredictorOutput {
    /// Explicit heads as an AR model (bias included).
    pub fn ar_coefficients(&self, order: usize) -> Option<ARCoefficients> {
        let (theta, theta0) = (self.theta.as_ref()?, self.theta0.as_ref()?);
        let mut flat = theta.clone();
        flat.extend_from_slice(theta0);
        ARCoefficients::from_flat(order, theta0.len(), &flat, true).ok()
    }

    /// `θ̂` heads followed by `θ̂_0`, the per-step explanation of an explicit model.
    pub fn head_params(&self) -> Option<Vec<f64>> {
        let mut v = self.theta.clone()?;
        v.extend_from_slice(self.theta0.as_ref()?);
        Some(v)
    }
}

impl Predictor {
    /// Seeded uniform initialization in `±1/sqrt(fan_in)`.
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let fan_in = if name.ends_with("_b") { shape[1] } else { shape[0] };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::new(shape, data).expect("initial weights are finite")
            })
            .collect();
        Ok(Self { config, params })
    }

    /// All weights zero.
    pub fn zeros(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let params = config.layout().into_iter().map(|(_, s)| Tensor::zeros(&s)).collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: PredictorConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::shape(format!(
                "expected {} weight arrays, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "weight `{name}` has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn parameterization(&self) -> Parameterization {
        self.config.parameterization
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.config
            .layout()
            .iter()
            .position(|(n, _)| *n == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.config.layout().iter().position(|(n, _)| *n == name)?;
        Some(&mut self.params[i])
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.rows() == 0 {
            return Err(Error::invalid("predictor input must be a nonempty matrix"));
        }
        if x.cols() != self.channels() {
            return Err(Error::shape(format!(
                "input has {} channels, model expects {}",
                x.cols(),
                self.channels()
            )));
        }
        Ok(())
    }

    /// Outputs at every index of `x`; entry `j` is the forecast after `x[0..=j]`.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<PredictorOutput>> {
        self.check_input(x)?;
        let mut state = StepState::new(self);
        (0..x.rows()).map(|j| state.step(x.row(j))).collect()
    }

    /// Greedy mean rollout: `H x N` continuation of `prefix`.
    pub fn generate_greedy(&self, prefix: &Tensor, horizon: usize) -> Result<Tensor> {
        let r = self.rollout(prefix, horizon)?;
        Ok(r.trajectory.slice_rows(prefix.rows(), prefix.rows() + horizon))
    }

    /// Feeds `prefix`, then `horizon` of the model's own means.
    ///
    /// The result holds the full trajectory (`prefix.rows() + horizon` rows)
    /// and the model output at every trajectory index.
    pub fn rollout(&self, prefix: &Tensor, horizon: usize) -> Result<Rollout> {
        self.check_input(prefix)?;
        if horizon == 0 {
            return Err(Error::invalid("generation horizon must be >= 1"));
        }
        let mut state = StepState::new(self);
        let t = prefix.rows();
        let n = self.channels();
        let mut traj = Tensor::zeros(&[t + horizon, n]);
        let mut outputs = Vec::with_capacity(t + horizon);
        for j in 0..t {
            traj.row_mut(j).copy_from_slice(prefix.row(j));
            outputs.push(state.step(prefix.row(j))?);
        }
        for j in t..t + horizon {
            let next = outputs[j - 1].mu.clone();
            traj.row_mut(j).copy_from_slice(&next);
            outputs.push(state.step(&next)?);
        }
        Ok(Rollout {
            trajectory: traj,
            outputs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Tensor,
    pub outputs: Vec<PredictorOutput>,
}

/// Diagonal Gaussian negative log-likelihood,
/// `Σ_c ½[logvar_c + (y_c − μ_c)² e^{−logvar_c} + log 2π]`.
pub fn gaussian_nll(mu: &[f64], logvar: &[f64], y: &[f64]) -> Result<f64> {
    if mu.len() != y.len() || logvar.len() != y.len() {
        return Err(Error::shape("gaussian_nll arguments differ in length"));
    }
    if mu.iter().chain(logvar).chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gaussian_nll input".into()));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(y)
        .map(|((m, lv), yv)| 0.5 * (lv + (yv - m) * (yv - m) * (-lv).exp() + LN_2PI))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Tape};
    use rand::{Rng, SeedableRng};

    fn small(p: Parameterization, n: usize) -> PredictorConfig {
        PredictorConfig {
            channels: n,
            conv_width: 2,
            conv_filters: 3,
            hidden: 4,
            dense1: 3,
            dense2: 3,
            parameterization: p,
            ar_order: 2,
            seed: 5,
        }
    }

    fn random_input(rows: usize, n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![rows, n], (0..rows * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn nll_closed_forms() {
        let half_log_2pi = 0.918_938_533_204_672_7;
        assert!((gaussian_nll(&[0.3], &[0.0], &[0.3]).unwrap() - half_log_2pi).abs() < 1e-15);
        assert!((gaussian_nll(&[0.3], &[1.5], &[0.3]).unwrap() - 0.5 * (1.5 + LN_2PI)).abs() < 1e-15);
        assert!(gaussian_nll(&[0.0], &[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn nll_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (mu, lv, y) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let mut want = 0.0;
        for c in 0..4 {
            let var = lv[c].exp();
            want += -(1.0 / (2.0 * std::f64::consts::PI * var).sqrt()
                * (-(y[c] - mu[c]).powi(2) / (2.0 * var)).exp())
            .ln();
        }
        assert!((gaussian_nll(&mu, &lv, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Predictor::zeros(small(Parameterization::Implicit, 3)).unwrap();
        for o in m.forward(&random_input(6, 3, 1)).unwrap() {
            assert_eq!(o.mu, vec![0.0; 3]);
            assert_eq!(o.logvar, vec![0.0; 3]);
        }
        let g = m.generate_greedy(&random_input(4, 3, 2), 5).unwrap();
        assert_eq!(g, Tensor::zeros(&[5, 3]));
    }

    fn copy_last(n: usize) -> Predictor {
        let cfg = small(Parameterization::Explicit, n);
        let mut m = Predictor::zeros(cfg).unwrap();
        let b = m.param_mut("theta_b").unwrap();
        for r in 0..n {
            b.data_mut()[r * n + r] = 1.0;
        }
        m
    }

    #[test]
    fn identity_head_copies_last_observation() {
        let m = copy_last(2);
        let x = random_input(7, 2, 3);
        for (j, o) in m.forward(&x).unwrap().iter().enumerate() {
            assert_eq!(o.mu, x.row(j));
        }
        let g = m.generate_greedy(&x, 4).unwrap();
        for h in 0..4 {
            assert_eq!(g.row(h), x.row(6));
        }
    }

    #[test]
    fn explicit_mean_is_recomputable_from_heads() {
        let m = Predictor::new(small(Parameterization::Explicit, 3)).unwrap();
        let x = random_input(9, 3, 4);
        for (j, o) in m.forward(&x).unwrap().iter().enumerate() {
            let ar = o.ar_coefficients(2).unwrap();
            let again = ar.predict_at(&x, j);
            for (a, b) in again.iter().zip(&o.mu) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_causal() {
        for p in [Parameterization::Implicit, Parameterization::Explicit] {
            let m = Predictor::new(small(p, 2)).unwrap();
            let x = random_input(10, 2, 6);
            let mut y = x.clone();
            for j in 6..10 {
                y.row_mut(j).iter_mut().for_each(|v| *v += 3.0);
            }
            let (a, b) = (m.forward(&x).unwrap(), m.forward(&y).unwrap());
            assert_eq!(a[..6], b[..6]);
            assert_ne!(a[6], b[6]);
        }
    }

    #[test]
    fn tape_and_step_paths_agree() {
        for p in [Parameterization::Implicit, Parameterization::Explicit] {
            let m = Predictor::new(small(p, 3)).unwrap();
            let x = random_input(8, 3, 7);
            let steps = m.forward(&x).unwrap();
            let tape = Tape::new();
            let vars = m.register(&tape);
            let out = m.forward_tape(&tape, &vars, &x).unwrap();
            let (mu, lv) = (out.mu.value(), out.logvar.value());
            for (j, s) in steps.iter().enumerate() {
                for c in 0..3 {
                    assert!((mu.get(j, c) - s.mu[c]).abs() <= 1e-12);
                    assert!((lv.get(j, c) - s.logvar[c]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Predictor::new(small(Parameterization::Implicit, 2)).unwrap();
        let b = Predictor::new(small(Parameterization::Implicit, 2)).unwrap();
        assert_eq!(a, b);
        let mut cfg = small(Parameterization::Implicit, 2);
        cfg.seed = 6;
        assert_ne!(a, Predictor::new(cfg).unwrap());
    }

    fn nll_grad_check(p: Parameterization) {
        let m = Predictor::new(small(p, 2)).unwrap();
        let x = random_input(5, 2, 8);
        let y = x.slice_rows(1, 5);
        let cfg = m.config().clone();
        let report = grad_check(
            |tape, vars| {
                let model = Predictor::from_params(cfg.clone(), vars.iter().map(|v| v.value()).collect())?;
                let out = model.forward_tape(tape, vars, &x)?;
                Ok(gaussian_nll_var(out.mu.slice_rows(0, 4), out.logvar.slice_rows(0, 4), &y))
            },
            m.params(),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_relative_error);
    }

    #[test]
    fn implicit_nll_gradient_matches_finite_differences() {
        nll_grad_check(Parameterization::Implicit);
    }

    #[test]
    fn explicit_nll_gradient_matches_finite_differences() {
        nll_grad_check(Parameterization::Explicit);
    }

    #[test]
    fn every_parameter_gets_gradient() {
        for p in [Parameterization::Implicit, Parameterization::Explicit] {
            let m = Predictor::new(small(p, 2)).unwrap();
            let x = random_input(6, 2, 10);
            let tape = Tape::new();
            let vars = m.register(&tape);
            let out = m.forward_tape(&tape, &vars, &x).unwrap();
            let nll = gaussian_nll_var(out.mu.slice_rows(0, 5), out.logvar.slice_rows(0, 5), &x.slice_rows(1, 6));
            let g = tape.backward(nll).unwrap();
            for ((name, _), v) in m.config().layout().iter().zip(&vars) {
                assert!(g.wrt(*v).max_abs() > 0.0, "{name} has zero gradient");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let m = Predictor::new(small(Parameterization::Implicit, 2)).unwrap();
        assert!(matches!(m.forward(&random_input(3, 3, 1)), Err(Error::Shape(_))));
        assert!(m.forward(&Tensor::zeros(&[0, 2])).is_err());
    }
}
