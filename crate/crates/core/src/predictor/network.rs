//! Differentiable forward pass over a whole sequence.

use super::{
    Parameterization, Predictor, CONV_B, CONV_W, DENSE1_B, DENSE1_W, DENSE2_B, DENSE2_W, HEAD0, LN_2PI, LSTM_B,
    LSTM_WH, LSTM_WX,
};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Tape outputs, one row per input index.
pub struct TapeOutputs<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
    /// Explicit models: `T x K·N·N`.
    pub theta: Option<Var<'t>>,
    /// Explicit models: `T x N`.
    pub theta0: Option<Var<'t>>,
    /// Explicit models: `μ − θ̂_0`, the lag-driven part of the mean.
    pub ar_part: Option<Var<'t>>,
}

/// Zero-padded causal unfold: row `j` is `[x_j, x_{j-1}, …, x_{j-w+1}]`.
pub(crate) fn causal_unfold(x: &Tensor, width: usize) -> Tensor {
    let (t, n) = (x.rows(), x.cols());
    let mut u = Tensor::zeros(&[t, width * n]);
    for j in 0..t {
        for d in 0..width.min(j + 1) {
            u.row_mut(j)[d * n..(d + 1) * n].copy_from_slice(x.row(j - d));
        }
    }
    u
}

/// Sums each `N`-wide block of a `K·N·N` row into its output channel.
fn lag_summation(order: usize, n: usize) -> Tensor {
    let mut s = Tensor::zeros(&[order * n * n, n]);
    for k in 0..order {
        for r in 0..n {
            for c in 0..n {
                s.set(k * n * n + r * n + c, r, 1.0);
            }
        }
    }
    s
}

/// `E[j, k·N·N + r·N + c] = x_{j-k}[c]`, zero before the start.
fn lag_expansion(x: &Tensor, order: usize) -> Tensor {
    let (t, n) = (x.rows(), x.cols());
    let mut e = Tensor::zeros(&[t, order * n * n]);
    for j in 0..t {
        for k in 0..order.min(j + 1) {
            let lag = x.row(j - k);
            let row = e.row_mut(j);
            for r in 0..n {
                row[k * n * n + r * n..k * n * n + (r + 1) * n].copy_from_slice(lag);
            }
        }
    }
    e
}

impl Predictor {
    /// Places every weight on `tape` as a tracked leaf, in layout order.
    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.var(p.clone())).collect()
    }

    /// Full-sequence forward pass using `vars` as weights.
    pub fn forward_tape<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], x: &Tensor) -> Result<TapeOutputs<'t>> {
        self.check_input(x)?;
        if vars.len() != self.params.len() {
            return Err(Error::shape(format!(
                "forward_tape given {} weights, model has {}",
                vars.len(),
                self.params.len()
            )));
        }
        let cfg = &self.config;
        let h = cfg.hidden;
        let t = x.rows();

        let unfold = tape.constant(causal_unfold(x, cfg.conv_width));
        let conv = unfold.matmul(vars[CONV_W]).add_row(vars[CONV_B]).tanh();
        let gx = conv.matmul(vars[LSTM_WX]).add_row(vars[LSTM_B]);

        let mut states = Vec::with_capacity(t);
        let mut prev: Option<(Var<'t>, Var<'t>)> = None;
        for j in 0..t {
            let mut g = gx.slice_rows(j, j + 1);
            if let Some((hp, _)) = prev {
                g = g.add(hp.matmul(vars[LSTM_WH]));
            }
            let i = g.slice_cols(0, h).sigmoid();
            let f = g.slice_cols(h, 2 * h).sigmoid();
            let o = g.slice_cols(2 * h, 3 * h).sigmoid();
            let cand = g.slice_cols(3 * h, 4 * h).tanh();
            let c = match prev {
                Some((_, cp)) => f.mul(cp).add(i.mul(cand)),
                None => i.mul(cand),
            };
            let hn = o.mul(c.tanh());
            states.push(hn);
            prev = Some((hn, c));
        }
        let hs = tape.concat_rows(&states);
        let d1 = hs.matmul(vars[DENSE1_W]).add_row(vars[DENSE1_B]).tanh();
        let d2 = d1.matmul(vars[DENSE2_W]).add_row(vars[DENSE2_B]).tanh();

        match cfg.parameterization {
            Parameterization::Implicit => {
                let mu = d2.matmul(vars[HEAD0]).add_row(vars[HEAD0 + 1]);
                let logvar = d2.matmul(vars[HEAD0 + 2]).add_row(vars[HEAD0 + 3]);
                Ok(TapeOutputs {
                    mu,
                    logvar,
                    theta: None,
                    theta0: None,
                    ar_part: None,
                })
            }
            Parameterization::Explicit => {
                let (k, n) = (cfg.ar_order, cfg.channels);
                let theta = d2.matmul(vars[HEAD0]).add_row(vars[HEAD0 + 1]);
                let theta0 = d2.matmul(vars[HEAD0 + 2]).add_row(vars[HEAD0 + 3]);
                let logvar = d2.matmul(vars[HEAD0 + 4]).add_row(vars[HEAD0 + 5]);
                let ar_part = theta
                    .mul_const(&lag_expansion(x, k))
                    .matmul(tape.constant(lag_summation(k, n)));
                let mu = ar_part.add(theta0);
                Ok(TapeOutputs {
                    mu,
                    logvar,
                    theta: Some(theta),
                    theta0: Some(theta0),
                    ar_part: Some(ar_part),
                })
            }
        }
    }
}

/// Tape version of the diagonal Gaussian NLL, summed over all entries.
pub fn gaussian_nll_var<'t>(mu: Var<'t>, logvar: Var<'t>, y: &Tensor) -> Var<'t> {
    let numel = y.numel() as f64;
    let sq = mu.sub_const(y).square();
    let precision = logvar.scale(-1.0).exp();
    logvar
        .add(sq.mul(precision))
        .sum()
        .scale(0.5)
        .add_scalar(0.5 * LN_2PI * numel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfold_pads_with_zeros() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let u = causal_unfold(&x, 2);
        assert_eq!(u.row(0), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(u.row(2), &[5.0, 6.0, 3.0, 4.0]);
    }

    #[test]
    fn lag_expansion_layout() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let e = lag_expansion(&x, 2);
        assert_eq!(e.row(0), &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.row(1), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0, 1.0, 2.0]);
        let s = lag_summation(2, 2);
        assert_eq!(s.cols(), 2);
        assert_eq!(s.sum(), 8.0);
    }

    #[test]
    fn tape_nll_matches_plain() {
        let tape = Tape::new();
        let mu = tape.var(Tensor::from_rows(&[[0.1, -0.4], [0.3, 0.0]]).unwrap());
        let lv = tape.var(Tensor::from_rows(&[[0.2, -1.0], [0.5, 0.1]]).unwrap());
        let y = Tensor::from_rows(&[[0.0, 0.2], [1.0, -0.3]]).unwrap();
        let got = gaussian_nll_var(mu, lv, &y).scalar();
        let mut want = 0.0;
        for j in 0..2 {
            want += super::super::gaussian_nll(mu.value().row(j), lv.value().row(j), y.row(j)).unwrap();
        }
        assert!((got - want).abs() < 1e-12);
    }
}
