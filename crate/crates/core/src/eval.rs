//! Error, Deviation and TV over greedy generative trajectories.
//!
//! Every metric is computed per test window (optionally in parallel) and
//! reduced in window order.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::{
    fit_ar_explainer, lag_row, make_neighborhood, neighborhood_bounds, output_centers, ARCoefficients,
};
use crate::fsutil::{read_to_string, write_atomic};
use crate::numerics::{solve_ridge, RidgeProblem, Tensor};
use crate::parallel::{self, Execution};
use crate::predictor::{Parameterization, Predictor};

/// Explainer settings used when measuring Deviation and TV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainerSettings {
    pub epsilon: usize,
    pub ar_order: usize,
    pub ridge_alpha: f64,
}

/// Something that can be rolled out greedily.
#[derive(Debug, Clone, Copy)]
pub enum EvalModel<'a> {
    Predictor(&'a Predictor),
    /// A single AR model used as the forecaster for every window.
    GlobalAr(&'a ARCoefficients),
}

impl EvalModel<'_> {
    pub fn channels(&self) -> usize {
        match self {
            EvalModel::Predictor(m) => m.channels(),
            EvalModel::GlobalAr(a) => a.channels(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            EvalModel::Predictor(m) => match m.parameterization() {
                Parameterization::Implicit => "implicit predictor".into(),
                Parameterization::Explicit => format!("explicit predictor, K={}", m.config().ar_order),
            },
            EvalModel::GlobalAr(a) => format!("global AR({}) baseline", a.order()),
        }
    }

    /// `H x N` greedy continuation of `prefix`.
    pub fn generate(&self, prefix: &Tensor, horizon: usize) -> Result<Tensor> {
        match self {
            EvalModel::Predictor(m) => m.generate_greedy(prefix, horizon),
            EvalModel::GlobalAr(a) => ar_generate(a, prefix, horizon),
        }
    }
}

fn ar_generate(ar: &ARCoefficients, prefix: &Tensor, horizon: usize) -> Result<Tensor> {
    if prefix.cols() != ar.channels() {
        return Err(Error::shape(format!(
            "prefix has {} channels, AR model has {}",
            prefix.cols(),
            ar.channels()
        )));
    }
    let t = prefix.rows();
    let mut traj = Tensor::zeros(&[t + horizon, prefix.cols()]);
    for j in 0..t {
        traj.row_mut(j).copy_from_slice(prefix.row(j));
    }
    for j in t..t + horizon {
        let next = ar.predict_at(&traj, j - 1);
        traj.row_mut(j).copy_from_slice(&next);
    }
    Ok(traj.slice_rows(t, t + horizon))
}

/// Global AR baseline: one ridge AR fit on every teacher-forced transition
/// `(x_{j-K+1..j}) → x_{j+1}` of the training windows.
pub fn fit_global_ar(windows: &[Tensor], order: usize, alpha: f64) -> Result<ARCoefficients> {
    let n = windows
        .first()
        .ok_or_else(|| Error::invalid("no training windows for the AR baseline"))?
        .cols();
    let (mut design, mut targets, mut rows) = (Vec::new(), Vec::new(), 0);
    for w in windows {
        for j in 0..w.rows().saturating_sub(1) {
            if let Some(r) = lag_row(w, j, order) {
                design.extend(r);
                targets.extend_from_slice(w.row(j + 1));
                rows += 1;
            }
        }
    }
    if rows == 0 {
        return Err(Error::invalid("windows too short for the AR baseline order"));
    }
    let design = Tensor::new(vec![rows, order * n], design)?;
    let targets = Tensor::new(vec![rows, n], targets)?;
    let sol = solve_ridge(&RidgeProblem::new(&design, &targets, alpha))?;
    let lags = (0..order)
        .map(|k| {
            let mut theta = Tensor::zeros(&[n, n]);
            for r in 0..n {
                for c in 0..n {
                    theta.set(r, c, sol.coefficients.get(k * n + c, r));
                }
            }
            theta
        })
        .collect();
    ARCoefficients::new(lags, sol.intercept, true)
}

fn check_windows(windows: &[Tensor], input_len: usize, channels: usize) -> Result<usize> {
    let first = windows.first().ok_or_else(|| Error::invalid("evaluation split is empty"))?;
    if first.rows() <= input_len {
        return Err(Error::invalid("windows have no output segment"));
    }
    for w in windows {
        if w.rows() != first.rows() {
            return Err(Error::shape("evaluation windows differ in length"));
        }
        if w.cols() != channels {
            return Err(Error::shape(format!(
                "data has {} channels, model expects {channels}",
                w.cols()
            )));
        }
    }
    Ok(first.rows() - input_len)
}

/// RMSE between greedy generation and the true output segment.
pub fn error_rmse(model: EvalModel<'_>, windows: &[Tensor], input_len: usize, exec: Execution) -> Result<f64> {
    let horizon = check_windows(windows, input_len, model.channels())?;
    let sums = parallel::map(exec, windows, |w| -> Result<f64> {
        let gen = model.generate(&w.slice_rows(0, input_len), horizon)?;
        let truth = w.slice_rows(input_len, input_len + horizon);
        Ok(gen.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum())
    });
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok((total / (windows.len() * horizon * model.channels()) as f64).sqrt())
}

/// Mean absolute per-entry change between consecutive parameter vectors.
pub fn total_variation<P: AsRef<[f64]>>(series: &[P]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::invalid("total variation needs at least two time points"));
    }
    let dim = series[0].as_ref().len();
    if dim == 0 || series.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::shape("parameter vectors must share a nonzero dimension"));
    }
    let total: f64 = series.windows(2).map(|w| step_change(w[0].as_ref(), w[1].as_ref())).sum();
    Ok(total / (series.len() - 1) as f64)
}

fn step_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (y - x).abs()).sum::<f64>() / a.len() as f64
}

/// Per-window diagnostics along one greedy trajectory.
#[derive(Debug, Clone)]
struct WindowTrace {
    /// Squared generation error summed over channels, per step.
    error_sq: Vec<f64>,
    /// Squared deviation at each center (AR part for explicit models).
    deviation_sq: Vec<f64>,
    /// Explicit models: squared constant-part deviation at each center.
    constant_sq: Vec<f64>,
    /// Explainer parameters at each center.
    params: Vec<Vec<f64>>,
}

fn trace_window(
    model: &Predictor,
    w: &Tensor,
    input_len: usize,
    settings: &ExplainerSettings,
) -> Result<WindowTrace> {
    let total = w.rows();
    let horizon = total - input_len;
    let k = settings.ar_order;
    let centers = output_centers(input_len, total, k)?;
    let (lo, hi) = neighborhood_bounds(total, k);
    let rollout = model.rollout(&w.slice_rows(0, input_len), horizon)?;
    let traj = &rollout.trajectory;
    let n = model.channels();

    let error_sq = (input_len..total)
        .map(|j| traj.row(j).iter().zip(w.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();

    let mut deviation_sq = Vec::with_capacity(horizon);
    let mut constant_sq = Vec::new();
    let mut params = Vec::with_capacity(horizon);
    match model.parameterization() {
        Parameterization::Implicit => {
            let mut mu = Tensor::zeros(&[total, n]);
            for (j, o) in rollout.outputs.iter().enumerate() {
                mu.row_mut(j).copy_from_slice(&o.mu);
            }
            for c in centers {
                let hood = make_neighborhood(c, settings.epsilon, lo, hi)?;
                let g = fit_ar_explainer(traj, &mu, &hood, k, settings.ridge_alpha, true)?;
                let pred = g.predict_at(traj, c);
                deviation_sq.push(sq_dist(mu.row(c), &pred));
                params.push(g.flatten());
            }
        }
        Parameterization::Explicit => {
            let mut ar_part = Tensor::zeros(&[total, n]);
            for (j, o) in rollout.outputs.iter().enumerate() {
                let theta0 = o.theta0.as_ref().expect("explicit output carries θ̂_0");
                for r in 0..n {
                    ar_part.set(j, r, o.mu[r] - theta0[r]);
                }
            }
            for c in centers {
                let hood = make_neighborhood(c, settings.epsilon, lo, hi)?;
                let g = fit_ar_explainer(traj, &ar_part, &hood, k, settings.ridge_alpha, false)?;
                deviation_sq.push(sq_dist(ar_part.row(c), &g.predict_at(traj, c)));
                let members: Vec<&[f64]> = hood
                    .members()
                    .map(|j| rollout.outputs[j].theta0.as_deref().expect("explicit output"))
                    .collect();
                let mean = crate::explainer::fit_constant_explainer(&members)?;
                constant_sq.push(sq_dist(members[c - hood.first], &mean.value));
                params.push(rollout.outputs[c].head_params().expect("explicit output"));
            }
        }
    }
    Ok(WindowTrace {
        error_sq,
        deviation_sq,
        constant_sq,
        params,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub error_rmse: f64,
    pub deviation_rmse: f64,
    pub tv: f64,
    /// Explicit models: Deviation is the sum of the AR-part and constant-part
    /// RMSEs and is not directly comparable with implicit Deviation.
    pub deviation_is_sum: bool,
    /// Set when the neighborhood span `2ε+1` reaches the output horizon, so
    /// consecutive explainers are fit on nearly the same points.
    pub tv_unreliable: bool,
    pub horizon: usize,
    pub windows: usize,
    pub error_per_step: Vec<f64>,
    pub deviation_per_step: Vec<f64>,
    /// Entry `h` is the mean step change between steps `h-1` and `h`; entry 0 is 0.
    pub tv_per_step: Vec<f64>,
    /// Explainer parameters per step for the first window.
    pub explainer_params: Vec<Vec<f64>>,
    pub settings: ExplainerSettings,
    /// Resolved configuration that produced the report.
    pub config: String,
}

pub fn evaluate(
    model: EvalModel<'_>,
    windows: &[Tensor],
    input_len: usize,
    settings: &ExplainerSettings,
    exec: Execution,
    config: &str,
) -> Result<EvalReport> {
    let horizon = check_windows(windows, input_len, model.channels())?;
    output_centers(input_len, input_len + horizon, settings.ar_order)?;
    let n = model.channels() as f64;
    let count = windows.len() as f64;
    let tv_unreliable = 2 * settings.epsilon + 1 >= horizon;

    let traces = match model {
        EvalModel::GlobalAr(ar) => {
            // A family member explains itself exactly at every center.
            let gens = parallel::map(exec, windows, |w| -> Result<Vec<f64>> {
                let gen = ar_generate(ar, &w.slice_rows(0, input_len), horizon)?;
                Ok((0..horizon)
                    .map(|h| sq_dist(gen.row(h), w.row(input_len + h)))
                    .collect())
            });
            let mut error_per_step = vec![0.0; horizon];
            for g in gens {
                for (acc, v) in error_per_step.iter_mut().zip(g?) {
                    *acc += v;
                }
            }
            let error_rmse = (error_per_step.iter().sum::<f64>() / (count * horizon as f64 * n)).sqrt();
            error_per_step.iter_mut().for_each(|e| *e = (*e / (count * n)).sqrt());
            return Ok(EvalReport {
                model: model.describe(),
                error_rmse,
                deviation_rmse: 0.0,
                tv: 0.0,
                deviation_is_sum: false,
                tv_unreliable,
                horizon,
                windows: windows.len(),
                error_per_step,
                deviation_per_step: vec![0.0; horizon],
                tv_per_step: vec![0.0; horizon],
                explainer_params: vec![ar.flatten(); horizon],
                settings: *settings,
                config: config.to_string(),
            });
        }
        EvalModel::Predictor(m) => parallel::map(exec, windows, |w| trace_window(m, w, input_len, settings)),
    };
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;
    let explicit = matches!(model, EvalModel::Predictor(m) if m.parameterization() == Parameterization::Explicit);

    let mut err = vec![0.0; horizon];
    let mut dev = vec![0.0; horizon];
    let mut cst = vec![0.0; horizon];
    let mut tv = vec![0.0; horizon];
    for t in &traces {
        for h in 0..horizon {
            err[h] += t.error_sq[h];
            dev[h] += t.deviation_sq[h];
            if explicit {
                cst[h] += t.constant_sq[h];
            }
            if h > 0 {
                tv[h] += step_change(&t.params[h - 1], &t.params[h]);
            }
        }
    }
    let cells = count * horizon as f64 * n;
    let error_rmse = (err.iter().sum::<f64>() / cells).sqrt();
    let mut deviation_rmse = (dev.iter().sum::<f64>() / cells).sqrt();
    let mut deviation_per_step: Vec<f64> = dev.iter().map(|d| (d / (count * n)).sqrt()).collect();
    if explicit {
        deviation_rmse += (cst.iter().sum::<f64>() / cells).sqrt();
        for (d, c) in deviation_per_step.iter_mut().zip(&cst) {
            *d += (c / (count * n)).sqrt();
        }
    }
    let tv_total = if horizon >= 2 {
        tv.iter().sum::<f64>() / (count * (horizon - 1) as f64)
    } else {
        0.0
    };
    Ok(EvalReport {
        model: model.describe(),
        error_rmse,
        deviation_rmse,
        tv: tv_total,
        deviation_is_sum: explicit,
        tv_unreliable,
        horizon,
        windows: windows.len(),
        error_per_step: err.iter().map(|e| (e / (count * n)).sqrt()).collect(),
        deviation_per_step,
        tv_per_step: tv.iter().map(|v| v / count).collect(),
        explainer_params: traces[0].params.clone(),
        settings: *settings,
        config: config.to_string(),
    })
}

/// Deviation RMSE alone; see [`evaluate`].
pub fn deviation_rmse(
    model: &Predictor,
    windows: &[Tensor],
    input_len: usize,
    settings: &ExplainerSettings,
    exec: Execution,
) -> Result<f64> {
    Ok(evaluate(EvalModel::Predictor(model), windows, input_len, settings, exec, "")?.deviation_rmse)
}

impl EvalReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("cannot parse report: {e}")))
    }

    /// One row per step: index, error, deviation, tv, explainer parameters.
    pub fn step_table(&self) -> String {
        let dim = self.explainer_params.first().map_or(0, Vec::len);
        let mut out = String::from("step,error,deviation,tv");
        for d in 0..dim {
            write!(out, ",p{d}").unwrap();
        }
        out.push('\n');
        for h in 0..self.horizon {
            write!(
                out,
                "{h},{},{},{}",
                self.error_per_step[h], self.deviation_per_step[h], self.tv_per_step[h]
            )
            .unwrap();
            if let Some(p) = self.explainer_params.get(h) {
                for v in p {
                    write!(out, ",{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, report_path: &Path, table_path: &Path, provenance_header: &str) -> Result<()> {
        write_atomic(report_path, self.to_toml()?.as_bytes())?;
        let mut table = String::from(provenance_header);
        table.push_str(&self.step_table());
        write_atomic(table_path, table.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictorConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> ExplainerSettings {
        ExplainerSettings {
            epsilon: 2,
            ar_order: 2,
            ridge_alpha: 1.0,
        }
    }

    fn random_windows(count: usize, len: usize, n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Tensor::new(vec![len, n], (0..len * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    fn small_model(p: Parameterization) -> Predictor {
        let mut cfg = PredictorConfig::new(2, p);
        cfg.hidden = 4;
        cfg.conv_filters = 3;
        cfg.dense1 = 4;
        cfg.dense2 = 4;
        cfg.seed = 3;
        Predictor::new(cfg).unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&[[0.0], [1.0], [0.0]]).unwrap(), 1.0);
        assert_eq!(total_variation(&[[2.0, 3.0]; 5]).unwrap(), 0.0);
        assert!(total_variation(&[[1.0]]).is_err());
    }

    #[test]
    fn tv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let series: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut want = 0.0;
        for h in 1..7 {
            for d in 0..3 {
                want += (series[h][d] - series[h - 1][d]).abs() / 3.0;
            }
        }
        want /= 6.0;
        assert!((total_variation(&series).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn zero_generator_error_is_target_level() {
        let m = Predictor::zeros(PredictorConfig::new(2, Parameterization::Implicit)).unwrap();
        let windows = vec![Tensor::filled(&[6, 2], 0.5); 3];
        let e = error_rmse(EvalModel::Predictor(&m), &windows, 3, Execution::Sequential).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn error_matches_triple_loop_oracle() {
        let m = small_model(Parameterization::Implicit);
        let windows = random_windows(4, 9, 2, 2);
        let mut sum = 0.0;
        for w in &windows {
            let g = m.generate_greedy(&w.slice_rows(0, 5), 4).unwrap();
            for h in 0..4 {
                for c in 0..2 {
                    sum += (g.get(h, c) - w.get(5 + h, c)).powi(2);
                }
            }
        }
        let want = (sum / 32.0).sqrt();
        let got = error_rmse(EvalModel::Predictor(&m), &windows, 5, Execution::Parallel).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn implicit_deviation_matches_refit_oracle() {
        let m = small_model(Parameterization::Implicit);
        let windows = random_windows(3, 10, 2, 4);
        let s = settings();
        let report = evaluate(EvalModel::Predictor(&m), &windows, 6, &s, Execution::Sequential, "").unwrap();
        let mut sum = 0.0;
        for w in &windows {
            let r = m.rollout(&w.slice_rows(0, 6), 4).unwrap();
            let mu = Tensor::from_rows(&r.outputs.iter().map(|o| o.mu.clone()).collect::<Vec<_>>()).unwrap();
            for c in 5..9 {
                let hood = make_neighborhood(c, 2, 1, 9).unwrap();
                let g = fit_ar_explainer(&r.trajectory, &mu, &hood, 2, 1.0, true).unwrap();
                sum += sq_dist(mu.row(c), &g.predict_at(&r.trajectory, c));
            }
        }
        let want = (sum / (3.0 * 4.0 * 2.0)).sqrt();
        assert!((report.deviation_rmse - want).abs() < 1e-8);
        assert_eq!(report.error_per_step.len(), 4);
        assert_eq!(report.deviation_per_step.len(), 4);
        assert_eq!(report.tv_per_step.len(), 4);
        assert_eq!(report.tv_per_step[0], 0.0);
        assert!(report.tv > 0.0);
    }

    #[test]
    fn explicit_copy_model_has_zero_deviation_and_tv() {
        let mut cfg = PredictorConfig::new(2, Parameterization::Explicit);
        cfg.ar_order = 2;
        let mut m = Predictor::zeros(cfg).unwrap();
        let b = m.param_mut("theta_b").unwrap();
        b.data_mut()[0] = 0.6;
        b.data_mut()[3] = -0.3;
        b.data_mut()[4] = 0.2;
        m.param_mut("theta0_b").unwrap().data_mut()[1] = 0.1;
        let windows = random_windows(2, 12, 2, 5);
        let s = ExplainerSettings {
            epsilon: 2,
            ar_order: 2,
            ridge_alpha: 1e-10,
        };
        let r = evaluate(EvalModel::Predictor(&m), &windows, 8, &s, Execution::Sequential, "").unwrap();
        assert!(r.deviation_rmse <= 1e-6, "{}", r.deviation_rmse);
        assert_eq!(r.tv, 0.0);
        assert!(r.deviation_is_sum);
    }

    #[test]
    fn global_ar_is_degenerate_and_recovers_process() {
        let mut traj = vec![0.3, -0.1];
        for _ in 0..300 {
            let l = traj.len();
            traj.push(0.5 * traj[l - 1] - 0.3 * traj[l - 2] + 0.05);
        }
        let windows: Vec<Tensor> = (0..20)
            .map(|s| Tensor::new(vec![12, 1], traj[s * 7..s * 7 + 12].to_vec()).unwrap())
            .collect();
        let ar = fit_global_ar(&windows, 2, 1e-10).unwrap();
        assert!((ar.lags[0].get(0, 0) - 0.5).abs() < 1e-5);
        assert!((ar.lags[1].get(0, 0) + 0.3).abs() < 1e-5);
        let r = evaluate(EvalModel::GlobalAr(&ar), &windows, 8, &settings(), Execution::Sequential, "").unwrap();
        assert!(r.error_rmse < 1e-6);
        assert_eq!((r.deviation_rmse, r.tv), (0.0, 0.0));
    }

    #[test]
    fn metrics_ignore_window_order() {
        let m = small_model(Parameterization::Explicit);
        let mut windows = random_windows(5, 9, 2, 6);
        let a = evaluate(EvalModel::Predictor(&m), &windows, 5, &settings(), Execution::Parallel, "").unwrap();
        windows.reverse();
        let b = evaluate(EvalModel::Predictor(&m), &windows, 5, &settings(), Execution::Sequential, "").unwrap();
        assert!((a.error_rmse - b.error_rmse).abs() < 1e-12);
        assert!((a.deviation_rmse - b.deviation_rmse).abs() < 1e-12);
        assert!((a.tv - b.tv).abs() < 1e-12);
    }

    #[test]
    fn report_round_trips() {
        let m = small_model(Parameterization::Implicit);
        let windows = random_windows(2, 9, 2, 7);
        let r = evaluate(EvalModel::Predictor(&m), &windows, 5, &settings(), Execution::Sequential, "seed = 1").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.toml");
        r.write(&path, &dir.path().join("steps.csv"), "# seed = 1\n").unwrap();
        assert_eq!(EvalReport::read(&path).unwrap(), r);
        assert!(r.tv_unreliable);
    }

    #[test]
    fn short_input_is_rejected() {
        let m = small_model(Parameterization::Implicit);
        let windows = random_windows(1, 6, 2, 8);
        let s = ExplainerSettings {
            ar_order: 4,
            ..settings()
        };
        assert!(evaluate(EvalModel::Predictor(&m), &windows, 3, &s, Execution::Sequential, "").is_err());
        assert!(error_rmse(EvalModel::Predictor(&m), &[], 3, Execution::Sequential).is_err());
    }
}
