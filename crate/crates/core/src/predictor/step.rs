//! Incremental inference, one observation at a time.
//!
//! Mirrors the tape forward pass operation by operation so both paths give
//! the same numbers.

use super::{
    Parameterization, Predictor, PredictorOutput, CONV_B, CONV_W, DENSE1_B, DENSE1_W, DENSE2_B, DENSE2_W, HEAD0,
    LSTM_B, LSTM_WH, LSTM_WX,
};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tensor};

pub struct StepState<'m> {
    model: &'m Predictor,
    /// Most recent observation first, at most `max(conv_width, ar_order)` rows.
    history: Vec<Vec<f64>>,
    h: Option<Tensor>,
    c: Option<Tensor>,
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut y = x.matmul(w).expect("layer shapes are validated at construction");
    y.add_assign(b);
    y
}

impl<'m> StepState<'m> {
    pub fn new(model: &'m Predictor) -> Self {
        Self {
            model,
            history: Vec::new(),
            h: None,
            c: None,
        }
    }

    /// Consumes `x_j` and returns the forecast for `x_{j+1}`.
    pub fn step(&mut self, x: &[f64]) -> Result<PredictorOutput> {
        let cfg = &self.model.config;
        let p = &self.model.params;
        let n = cfg.channels;
        if x.len() != n {
            return Err(Error::shape(format!("step input has {} channels, expected {n}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor step input".into()));
        }
        self.history.insert(0, x.to_vec());
        self.history.truncate(cfg.conv_width.max(cfg.ar_order));

        let mut unfold = vec![0.0; cfg.conv_width * n];
        for (d, lag) in self.history.iter().take(cfg.conv_width).enumerate() {
            unfold[d * n..(d + 1) * n].copy_from_slice(lag);
        }
        let u = Tensor::row_vector(&unfold);
        let conv = affine(&u, &p[CONV_W], &p[CONV_B]).map(f64::tanh);
        let mut g = affine(&conv, &p[LSTM_WX], &p[LSTM_B]);
        if let Some(hp) = &self.h {
            g.add_assign(&hp.matmul(&p[LSTM_WH]).expect("hidden state shape"));
        }
        let hd = cfg.hidden;
        let gate = |lo: usize, f: fn(f64) -> f64| Tensor::row_vector(&g.data()[lo..lo + hd]).map(f);
        let (i, f, o) = (gate(0, sigmoid), gate(hd, sigmoid), gate(2 * hd, sigmoid));
        let cand = gate(3 * hd, f64::tanh);
        let ic = i.zip_map(&cand, |a, b| a * b);
        let c = match &self.c {
            Some(cp) => f.zip_map(cp, |a, b| a * b).zip_map(&ic, |a, b| a + b),
            None => ic,
        };
        let h = o.zip_map(&c.map(f64::tanh), |a, b| a * b);
        let d1 = affine(&h, &p[DENSE1_W], &p[DENSE1_B]).map(f64::tanh);
        let d2 = affine(&d1, &p[DENSE2_W], &p[DENSE2_B]).map(f64::tanh);
        self.h = Some(h);
        self.c = Some(c);

        let out = match cfg.parameterization {
            Parameterization::Implicit => PredictorOutput {
                mu: affine(&d2, &p[HEAD0], &p[HEAD0 + 1]).into_data(),
                logvar: affine(&d2, &p[HEAD0 + 2], &p[HEAD0 + 3]).into_data(),
                theta: None,
                theta0: None,
            },
            Parameterization::Explicit => {
                let k = cfg.ar_order;
                let theta = affine(&d2, &p[HEAD0], &p[HEAD0 + 1]).into_data();
                let theta0 = affine(&d2, &p[HEAD0 + 2], &p[HEAD0 + 3]).into_data();
                let logvar = affine(&d2, &p[HEAD0 + 4], &p[HEAD0 + 5]).into_data();
                // Same summation order as the tape's `(θ̂ ⊙ E) @ S`.
                let mut ar = vec![0.0; n];
                for (kk, lag) in self.history.iter().take(k).enumerate() {
                    for r in 0..n {
                        for c in 0..n {
                            let v = theta[kk * n * n + r * n + c] * lag[c];
                            if v != 0.0 {
                                ar[r] += v;
                            }
                        }
                    }
                }
                let mu = ar.iter().zip(&theta0).map(|(a, b)| a + b).collect();
                PredictorOutput {
                    mu,
                    logvar,
                    theta: Some(theta),
                    theta0: Some(theta0),
                }
            }
        };
        if out.mu.iter().chain(&out.logvar).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor output".into()));
        }
        Ok(out)
    }
}
