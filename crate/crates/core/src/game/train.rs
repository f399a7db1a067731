//! Mini-batch Adam training for the game and for plain maximum likelihood.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::objective::sequence_loss;
use super::{GameConfig, OptimizerConfig};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::eval::{error_rmse, EvalModel};
use crate::numerics::{Tape, Tensor};
use crate::parallel::{self, Execution};
use crate::predictor::Predictor;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sequence NLL.
    pub nll: f64,
    /// Mean per-sequence `λ·penalty` (unregularized sequences count as 0).
    pub penalty: f64,
    pub total: f64,
    pub val_error: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV rows `epoch,nll,penalty,total,val_error`.
    ///
    /// Wall time is left out so reruns produce identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,nll,penalty,total,val_error\n");
        for r in &self.records {
            write!(out, "{},{},{},{},", r.epoch, r.nll, r.penalty, r.total).unwrap();
            if let Some(v) = r.val_error {
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

pub enum TrainEvent<'a> {
    /// After each optimizer step (1-based).
    Step { step: usize, model: &'a Predictor },
    Epoch { record: &'a EpochRecord, model: &'a Predictor },
}

struct Adam {
    cfg: OptimizerConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(cfg: &OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            cfg: cfg.clone(),
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
                vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
                let mhat = md[i] / c1;
                let vhat = vd[i] / c2;
                pd[i] -= self.cfg.learning_rate * mhat / (vhat.sqrt() + self.cfg.adam_eps);
            }
        }
    }
}

struct SequenceGrad {
    grads: Vec<Tensor>,
    nll: f64,
    weighted_penalty: f64,
}

fn sequence_grad(
    model: &Predictor,
    x: &Tensor,
    input_len: usize,
    game: Option<&GameConfig>,
    regularize: bool,
) -> Result<SequenceGrad> {
    let tape = Tape::new();
    let vars = model.register(&tape);
    let parts = sequence_loss(model, &tape, &vars, x, input_len, game, regularize, None)?;
    let g = tape.backward(parts.total)?;
    let weighted_penalty = match (parts.penalty, game) {
        (Some(p), Some(cfg)) => cfg.lambda * p.scalar(),
        _ => 0.0,
    };
    Ok(SequenceGrad {
        grads: vars.iter().map(|v| g.wrt(*v)).collect(),
        nll: parts.nll.scalar(),
        weighted_penalty,
    })
}

fn all_finite(ts: &[Tensor]) -> bool {
    ts.iter().all(Tensor::is_finite)
}

fn run(
    mut model: Predictor,
    data: &WindowedDataset,
    opt: &OptimizerConfig,
    seed: u64,
    game: Option<&GameConfig>,
    exec: Execution,
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(Predictor, TrainLog)> {
    opt.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if data.channels() != model.channels() {
        return Err(Error::shape(format!(
            "dataset has {} channels, model expects {}",
            data.channels(),
            model.channels()
        )));
    }
    if let Some(cfg) = game {
        cfg.validate()?;
        cfg.check_model(&model)?;
        crate::explainer::output_centers(data.input_len, data.window_len(), cfg.ar_order)?;
    }
    let input_len = data.input_len;
    // Shuffling and penalty sampling draw from separate streams, so a game
    // run consumes exactly the same shuffles as a likelihood-only run.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg_rng = ChaCha8Rng::seed_from_u64(seed);
    reg_rng.set_stream(1);

    let mut adam = Adam::new(opt, model.params());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let started = Instant::now();

    'epochs: for epoch in 1..=opt.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut nll_sum, mut pen_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(opt.batch_size) {
            let mut flags = vec![false; batch.len()];
            if let Some(cfg) = game {
                let count = ((cfg.reg_fraction * batch.len() as f64).ceil() as usize).clamp(1, batch.len());
                for i in index::sample(&mut reg_rng, batch.len(), count) {
                    flags[i] = true;
                }
            }
            let items: Vec<(usize, bool)> = batch.iter().copied().zip(flags).collect();
            let results = parallel::map(exec, &items, |&(i, reg)| {
                sequence_grad(&model, &data.train[i], input_len, game, reg)
            });
            let mut total: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for r in results {
                let r = r.map_err(|e| diverged(e, epoch))?;
                if !(r.nll.is_finite() && r.weighted_penalty.is_finite()) || !all_finite(&r.grads) {
                    return Err(Error::Divergence { epoch });
                }
                for (acc, g) in total.iter_mut().zip(&r.grads) {
                    acc.add_assign(g);
                }
                nll_sum += r.nll;
                pen_sum += r.weighted_penalty;
                seen += 1;
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut total {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam.update(model.params_mut(), &total);
            if !all_finite(model.params()) {
                return Err(Error::Divergence { epoch });
            }
            step += 1;
            on_event(TrainEvent::Step { step, model: &model })?;
            if opt.max_steps.is_some_and(|m| step >= m) {
                let record = epoch_record(epoch, nll_sum, pen_sum, seen, &model, data, exec, started)?;
                on_event(TrainEvent::Epoch { record: &record, model: &model })?;
                log.records.push(record);
                break 'epochs;
            }
        }
        let record = epoch_record(epoch, nll_sum, pen_sum, seen, &model, data, exec, started)?;
        log::info!(
            "epoch {epoch}: nll {:.5} penalty {:.5} val_error {:?}",
            record.nll,
            record.penalty,
            record.val_error
        );
        on_event(TrainEvent::Epoch { record: &record, model: &model })?;
        log.records.push(record);
    }
    Ok((model, log))
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence { epoch },
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn epoch_record(
    epoch: usize,
    nll_sum: f64,
    pen_sum: f64,
    seen: usize,
    model: &Predictor,
    data: &WindowedDataset,
    exec: Execution,
    started: Instant,
) -> Result<EpochRecord> {
    let count = seen.max(1) as f64;
    let val_error = if data.val.is_empty() {
        None
    } else {
        Some(error_rmse(EvalModel::Predictor(model), &data.val, data.input_len, exec).map_err(|e| diverged(e, epoch))?)
    };
    Ok(EpochRecord {
        epoch,
        nll: nll_sum / count,
        penalty: pen_sum / count,
        total: (nll_sum + pen_sum) / count,
        val_error,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains `model` on the game configured by `cfg`.
///
/// Each batch refits explainers at the current weights; a seeded
/// `reg_fraction` of its sequences receive the penalty.
pub fn train(
    model: Predictor,
    data: &WindowedDataset,
    cfg: &GameConfig,
    exec: Execution,
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(Predictor, TrainLog)> {
    run(model, data, &cfg.optimizer, cfg.seed, Some(cfg), exec, on_event)
}

/// Plain maximum-likelihood training with the same batching as [`train`].
pub fn train_mle(
    model: Predictor,
    data: &WindowedDataset,
    opt: &OptimizerConfig,
    seed: u64,
    exec: Execution,
    on_event: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(Predictor, TrainLog)> {
    run(model, data, opt, seed, None, exec, on_event)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, window_split, SynthKind, SynthSpec, WindowOptions};
    use crate::game::{step_loss, GameMode};
    use crate::predictor::{Parameterization, PredictorConfig};

    fn dataset() -> WindowedDataset {
        let series = synth_generate(&SynthSpec {
            kind: SynthKind::SinusoidMix {
                periods: vec![5.0, 20.0],
            },
            channels: 1,
            length: 200,
            noise_std: 0.05,
            seed: 3,
        })
        .unwrap();
        let mut opts = WindowOptions::new(8, 4);
        opts.stride = Some(2);
        window_split(&series, &opts, 1).unwrap()
    }

    fn model(p: Parameterization) -> Predictor {
        let mut c = PredictorConfig::new(1, p);
        c.hidden = 6;
        c.conv_filters = 4;
        c.dense1 = 6;
        c.dense2 = 6;
        c.seed = 2;
        Predictor::new(c).unwrap()
    }

    fn game(lambda: f64, mode: GameMode) -> GameConfig {
        GameConfig {
            lambda,
            epsilon: 2,
            mode,
            reg_fraction: 0.5,
            optimizer: OptimizerConfig {
                learning_rate: 1e-2,
                epochs: 2,
                batch_size: 16,
                max_steps: Some(12),
                ..OptimizerConfig::default()
            },
            seed: 4,
            ..GameConfig::default()
        }
    }

    fn trajectory(run: impl FnOnce(&mut dyn FnMut(TrainEvent<'_>) -> Result<()>)) -> Vec<Vec<Tensor>> {
        let mut traj = Vec::new();
        run(&mut |e| {
            if let TrainEvent::Step { model, .. } = e {
                traj.push(model.params().to_vec());
            }
            Ok(())
        });
        traj
    }

    #[test]
    fn lambda_zero_matches_mle_trajectory() {
        let data = dataset();
        let g0 = game(0.0, GameMode::Asymmetric);
        let mle = trajectory(|cb| {
            train_mle(model(Parameterization::Implicit), &data, &g0.optimizer, g0.seed, Execution::Parallel, cb).unwrap();
        });
        assert_eq!(mle.len(), 12);
        for mode in [GameMode::Asymmetric, GameMode::Symmetric] {
            let g = game(0.0, mode);
            let t = trajectory(|cb| {
                train(model(Parameterization::Implicit), &data, &g, Execution::Sequential, cb).unwrap();
            });
            assert_eq!(t, mle);
        }
    }

    #[test]
    fn runs_are_deterministic_across_execution_modes() {
        let data = dataset();
        let g = game(1.0, GameMode::Symmetric);
        let (a, la) = train(model(Parameterization::Implicit), &data, &g, Execution::Parallel, &mut |_| Ok(())).unwrap();
        let (b, lb) = train(model(Parameterization::Implicit), &data, &g, Execution::Sequential, &mut |_| Ok(())).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.to_csv(), lb.to_csv());
    }

    #[test]
    fn log_has_one_record_per_epoch() {
        let data = dataset();
        let mut g = game(0.0, GameMode::Asymmetric);
        g.optimizer.max_steps = None;
        let (_, log) = train(model(Parameterization::Implicit), &data, &g, Execution::Parallel, &mut |_| Ok(())).unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2]);
        assert!(log.records.iter().all(|r| r.penalty == 0.0));
        assert!(log.records[0].val_error.is_some());
    }

    #[test]
    fn explicit_game_trains() {
        let data = dataset();
        let mut g = game(1.0, GameMode::Asymmetric);
        g.parameterization = Parameterization::Explicit;
        let (m, log) = train(model(Parameterization::Explicit), &data, &g, Execution::Parallel, &mut |_| Ok(())).unwrap();
        assert!(log.last().unwrap().penalty > 0.0);
        assert!(m.params().iter().all(Tensor::is_finite));
    }

    #[test]
    fn full_batch_descent_lowers_the_objective() {
        let data = dataset();
        let x = &data.train[0];
        let mut small = data.clone();
        small.train = vec![x.clone()];
        small.val.clear();
        let mut g = game(1.0, GameMode::Asymmetric);
        g.reg_fraction = 1.0;
        g.optimizer.learning_rate = 1e-3;
        g.optimizer.max_steps = Some(10);
        g.optimizer.epochs = 10;
        let mut losses = vec![step_loss(&model(Parameterization::Implicit), x, 8, &g).unwrap().total];
        train(model(Parameterization::Implicit), &small, &g, Execution::Sequential, &mut |e| {
            if let TrainEvent::Step { model, .. } = e {
                losses.push(step_loss(model, x, 8, &g)?.total);
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(losses.len(), 11);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = dataset();
        let mut g = game(0.0, GameMode::Asymmetric);
        g.optimizer.learning_rate = 1e300;
        let err = train(model(Parameterization::Implicit), &data, &g, Execution::Sequential, &mut |_| Ok(()));
        assert!(matches!(err, Err(Error::Divergence { epoch: 1 })));
    }

    #[test]
    fn mismatched_parameterization_is_rejected() {
        let data = dataset();
        let g = game(1.0, GameMode::Asymmetric);
        assert!(train(model(Parameterization::Explicit), &data, &g, Execution::Sequential, &mut |_| Ok(())).is_err());
    }
}
