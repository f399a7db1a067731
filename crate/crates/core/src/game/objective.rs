//! Per-sequence game objectives.
//!
//! Forecast index `j` is the model output after rows `0..=j`; its NLL target
//! is row `j+1`. Both the NLL and the deviation penalty run over the output
//! segment `j ∈ [t-1, T-2]`.

use super::{GameConfig, GameMode};
use crate::error::{Error, Result};
use crate::explainer::{
    fit_ar_explainer, fit_constant_explainer, make_neighborhood, neighborhood_bounds, output_centers, ARCoefficients,
    ConstantExplainer, Neighborhood,
};
use crate::numerics::{Tape, Tensor, Var};
use crate::predictor::{gaussian_nll_var, Parameterization, Predictor};

/// Best responses for one center, fitted on detached predictor outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterFit {
    pub hood: Neighborhood,
    /// Implicit: AR with bias on `μ`. Explicit: bias-free AR on the AR part.
    pub ar: ARCoefficients,
    /// Explicit only: neighborhood mean of `θ̂_0`.
    pub constant: Option<ConstantExplainer>,
}

/// Fits every center's best response.
///
/// `targets` holds `μ` (implicit) or the AR part `μ − θ̂_0` (explicit), one
/// row per index of `x`; passing `theta0` selects the explicit form.
pub fn fit_best_responses(
    x: &Tensor,
    targets: &Tensor,
    theta0: Option<&Tensor>,
    input_len: usize,
    cfg: &GameConfig,
) -> Result<Vec<CenterFit>> {
    let total = x.rows();
    let (lo, hi) = neighborhood_bounds(total, cfg.ar_order);
    output_centers(input_len, total, cfg.ar_order)?
        .map(|c| {
            let hood = make_neighborhood(c, cfg.epsilon, lo, hi)?;
            let ar = fit_ar_explainer(x, targets, &hood, cfg.ar_order, cfg.ridge_alpha, theta0.is_none())?;
            let constant = match theta0 {
                Some(t0) => {
                    let rows: Vec<&[f64]> = hood.members().map(|j| t0.row(j)).collect();
                    Some(fit_constant_explainer(&rows)?)
                }
                None => None,
            };
            Ok(CenterFit { hood, ar, constant })
        })
        .collect()
}

/// Deviation penalty for one center.
///
/// Asymmetric mode touches only the center row; symmetric mode averages over
/// the neighborhood. Explainer predictions are constants on the tape.
pub fn center_penalty<'t>(
    fit: &CenterFit,
    x: &Tensor,
    targets: Var<'t>,
    theta0: Option<Var<'t>>,
    mode: GameMode,
) -> Result<Var<'t>> {
    let (first, last) = match mode {
        GameMode::Asymmetric => (fit.hood.center, fit.hood.center),
        GameMode::Symmetric => (fit.hood.first, fit.hood.last),
    };
    let rows = last - first + 1;
    let preds: Vec<Vec<f64>> = (first..=last).map(|j| fit.ar.predict_at(x, j)).collect();
    let g = Tensor::from_rows(&preds)?;
    let weight = 1.0 / rows as f64;
    let mut pen = targets.slice_rows(first, last + 1).sub_const(&g).square().sum().scale(weight);
    match (theta0, &fit.constant) {
        (Some(t0), Some(c)) => {
            let k = Tensor::from_rows(&vec![c.value.clone(); rows])?;
            pen = pen.add(t0.slice_rows(first, last + 1).sub_const(&k).square().sum().scale(weight));
        }
        (None, None) => {}
        _ => return Err(Error::invalid("explicit penalty needs both θ̂_0 outputs and a constant explainer")),
    }
    Ok(pen)
}

/// Tape pieces of one sequence's objective.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub nll: Var<'t>,
    /// Unweighted penalty sum; `None` when the sequence is not regularized.
    pub penalty: Option<Var<'t>>,
}

/// NLL over the output segment, plus `λ·penalty` when `regularize` is set.
///
/// `frozen` replaces the refit best responses (used to differentiate the
/// objective with explainers held fixed).
#[allow(clippy::too_many_arguments)]
pub fn sequence_loss<'t>(
    model: &Predictor,
    tape: &'t Tape,
    vars: &[Var<'t>],
    x: &Tensor,
    input_len: usize,
    cfg: Option<&GameConfig>,
    regularize: bool,
    frozen: Option<&[CenterFit]>,
) -> Result<LossParts<'t>> {
    let total_len = x.rows();
    if input_len == 0 || input_len >= total_len {
        return Err(Error::invalid(format!(
            "input length {input_len} leaves no output segment in {total_len} rows"
        )));
    }
    let out = model.forward_tape(tape, vars, x)?;
    let nll = gaussian_nll_var(
        out.mu.slice_rows(input_len - 1, total_len - 1),
        out.logvar.slice_rows(input_len - 1, total_len - 1),
        &x.slice_rows(input_len, total_len),
    );
    let cfg = match (cfg, regularize) {
        (Some(c), true) => c,
        _ => {
            return Ok(LossParts {
                total: nll,
                nll,
                penalty: None,
            })
        }
    };
    cfg.check_model(model)?;
    let (targets, theta0) = match model.parameterization() {
        Parameterization::Implicit => (out.mu, None),
        Parameterization::Explicit => (
            out.ar_part.expect("explicit forward has an AR part"),
            Some(out.theta0.expect("explicit forward has θ̂_0")),
        ),
    };
    let owned;
    let fits = match frozen {
        Some(f) => f,
        None => {
            let t0 = theta0.map(|v| v.value());
            owned = fit_best_responses(x, &targets.value(), t0.as_ref(), input_len, cfg)?;
            &owned
        }
    };
    let mut penalty: Option<Var<'t>> = None;
    for fit in fits {
        let p = center_penalty(fit, x, targets, theta0, cfg.mode)?;
        penalty = Some(match penalty {
            Some(acc) => acc.add(p),
            None => p,
        });
    }
    let penalty = penalty.ok_or_else(|| Error::invalid("no centers to regularize"))?;
    Ok(LossParts {
        total: nll.add(penalty.scale(cfg.lambda)),
        nll,
        penalty: Some(penalty),
    })
}

/// Objective values for one fully regularized sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub nll: f64,
    /// Unweighted penalty; the total adds `λ` times this.
    pub penalty: f64,
    pub total: f64,
}

/// Game objective for `x` under `cfg`, explainers refit at the current weights.
pub fn step_loss(model: &Predictor, x: &Tensor, input_len: usize, cfg: &GameConfig) -> Result<LossValue> {
    let tape = Tape::new();
    let vars = model.register(&tape);
    let parts = sequence_loss(model, &tape, &vars, x, input_len, Some(cfg), true, None)?;
    Ok(LossValue {
        nll: parts.nll.scalar(),
        penalty: parts.penalty.map_or(0.0, |p| p.scalar()),
        total: parts.total.scalar(),
    })
}

fn require(model: &Predictor, p: Parameterization, what: &str) -> Result<()> {
    if model.parameterization() != p {
        return Err(Error::Config(format!("{what} needs a {p:?} model")));
    }
    Ok(())
}

/// Implicit model, penalty at each center only.
pub fn asymmetric_step_loss(model: &Predictor, x: &Tensor, input_len: usize, cfg: &GameConfig) -> Result<LossValue> {
    require(model, Parameterization::Implicit, "asymmetric_step_loss")?;
    let cfg = GameConfig {
        mode: GameMode::Asymmetric,
        ..cfg.clone()
    };
    step_loss(model, x, input_len, &cfg)
}

/// Implicit model, penalty averaged over each neighborhood.
pub fn symmetric_step_loss(model: &Predictor, x: &Tensor, input_len: usize, cfg: &GameConfig) -> Result<LossValue> {
    require(model, Parameterization::Implicit, "symmetric_step_loss")?;
    let cfg = GameConfig {
        mode: GameMode::Symmetric,
        ..cfg.clone()
    };
    step_loss(model, x, input_len, &cfg)
}

/// Explicit model, coefficient-wise penalties in the configured mode.
pub fn explicit_step_loss(model: &Predictor, x: &Tensor, input_len: usize, cfg: &GameConfig) -> Result<LossValue> {
    require(model, Parameterization::Explicit, "explicit_step_loss")?;
    step_loss(model, x, input_len, cfg)
}
