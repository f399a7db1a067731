//! Local interpretable explainers and their best-response fits.
//!
//! Time indices are zero-based positions in a sequence. The predictor output
//! at index `j` is the forecast made after observing rows `0..=j`, and an AR
//! explainer evaluated at `j` uses the lags `x_j, x_{j-1}, …, x_{j-K+1}`.

use std::fmt::Write as _;
use std::ops::{Range, RangeInclusive};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numerics::{solve_ridge, RidgeProblem, Tensor};

/// Contiguous window `[max(lo, t-ε), min(hi, t+ε)]` around a center `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: usize,
    pub radius: usize,
    pub first: usize,
    pub last: usize,
}

impl Neighborhood {
    pub fn members(&self) -> RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn make_neighborhood(center: usize, radius: usize, lo: usize, hi: usize) -> Result<Neighborhood> {
    if !(lo <= center && center <= hi) {
        return Err(Error::invalid(format!(
            "center {center} outside valid range [{lo}, {hi}]"
        )));
    }
    Ok(Neighborhood {
        center,
        radius,
        first: center.saturating_sub(radius).max(lo),
        last: center.saturating_add(radius).min(hi),
    })
}

/// Forecast indices of the output segment, `[t-1, T-2]`, for windows of
/// `total_len` rows whose first `input_len` rows are context.
///
/// Each center's neighborhood is clipped to [`neighborhood_bounds`].
pub fn output_centers(input_len: usize, total_len: usize, order: usize) -> Result<Range<usize>> {
    if order == 0 || input_len < order {
        return Err(Error::invalid(format!(
            "input length {input_len} must be at least the AR order {order}"
        )));
    }
    if total_len <= input_len {
        return Err(Error::invalid("window has no output segment"));
    }
    Ok(input_len - 1..total_len - 1)
}

/// Indices usable as neighborhood members: every index with `order` lags.
pub fn neighborhood_bounds(total_len: usize, order: usize) -> (usize, usize) {
    (order - 1, total_len - 1)
}

/// K-order autoregressive map `Σ_k θ_k x_{j-k+1} + θ_0` on `N` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ARCoefficients {
    /// `θ_1..θ_K`, each `N x N`.
    pub lags: Vec<Tensor>,
    /// `θ_0`; identically zero when `include_bias` is false.
    pub bias: Vec<f64>,
    pub include_bias: bool,
}

impl ARCoefficients {
    pub fn new(lags: Vec<Tensor>, bias: Vec<f64>, include_bias: bool) -> Result<Self> {
        let n = bias.len();
        if lags.is_empty() {
            return Err(Error::invalid("AR order must be >= 1"));
        }
        if lags.iter().any(|t| t.shape() != [n, n]) {
            return Err(Error::shape(format!("AR lag matrices must be {n}x{n}")));
        }
        if !include_bias && bias.iter().any(|b| *b != 0.0) {
            return Err(Error::invalid("bias-free AR model with nonzero bias"));
        }
        Ok(Self {
            lags,
            bias,
            include_bias,
        })
    }

    pub fn zeros(order: usize, channels: usize, include_bias: bool) -> Self {
        Self {
            lags: vec![Tensor::zeros(&[channels, channels]); order],
            bias: vec![0.0; channels],
            include_bias,
        }
    }

    pub fn order(&self) -> usize {
        self.lags.len()
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    /// Applies the model to explicit lags, most recent first.
    pub fn predict(&self, lags: &[&[f64]]) -> Result<Vec<f64>> {
        if lags.len() != self.order() {
            return Err(Error::shape(format!(
                "AR({}) model given {} lags",
                self.order(),
                lags.len()
            )));
        }
        let n = self.channels();
        if lags.iter().any(|l| l.len() != n) {
            return Err(Error::shape(format!("lag vectors must have {n} channels")));
        }
        let mut out = self.bias.clone();
        for (theta, x) in self.lags.iter().zip(lags) {
            for (r, o) in out.iter_mut().enumerate() {
                *o += theta.row(r).iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Prediction at index `j` of `seq`; lags before the start are zero.
    pub fn predict_at(&self, seq: &Tensor, j: usize) -> Vec<f64> {
        let n = self.channels();
        let mut out = self.bias.clone();
        for (k, theta) in self.lags.iter().enumerate() {
            if k > j {
                break;
            }
            let x = seq.row(j - k);
            for r in 0..n {
                out[r] += theta.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    /// `[θ_1, …, θ_K]` row-major followed by `θ_0`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lags.iter().flat_map(|t| t.data().iter().copied()).collect();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn from_flat(order: usize, channels: usize, flat: &[f64], include_bias: bool) -> Result<Self> {
        let nn = channels * channels;
        if flat.len() != order * nn + channels {
            return Err(Error::shape(format!(
                "flat AR parameters have {} values, expected {}",
                flat.len(),
                order * nn + channels
            )));
        }
        let lags = (0..order)
            .map(|k| Tensor::new(vec![channels, channels], flat[k * nn..(k + 1) * nn].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(lags, flat[order * nn..].to_vec(), include_bias)
    }
}

/// Concatenated lags `[x_j; x_{j-1}; …; x_{j-K+1}]`, or `None` near the start.
pub fn lag_row(seq: &Tensor, j: usize, order: usize) -> Option<Vec<f64>> {
    if j + 1 < order {
        return None;
    }
    let mut row = Vec::with_capacity(order * seq.cols());
    for k in 0..order {
        row.extend_from_slice(seq.row(j - k));
    }
    Some(row)
}

/// Best-response AR explainer over a neighborhood.
///
/// `inputs` is the observed sequence and `targets` holds the predictor
/// output at each index (one row per index). Members lacking `order` lags
/// are dropped from the fit.
pub fn fit_ar_explainer(
    inputs: &Tensor,
    targets: &Tensor,
    hood: &Neighborhood,
    order: usize,
    alpha: f64,
    include_bias: bool,
) -> Result<ARCoefficients> {
    if order == 0 {
        return Err(Error::invalid("AR order must be >= 1"));
    }
    let n = inputs.cols();
    if targets.cols() != n {
        return Err(Error::shape(format!(
            "targets have {} channels, inputs have {n}",
            targets.cols()
        )));
    }
    if hood.last >= inputs.rows() || hood.last >= targets.rows() {
        return Err(Error::shape(format!(
            "neighborhood ends at {} beyond sequence of {} rows",
            hood.last,
            inputs.rows().min(targets.rows())
        )));
    }
    let mut design = Vec::new();
    let mut y = Vec::new();
    let mut rows = 0;
    for j in hood.members() {
        if let Some(r) = lag_row(inputs, j, order) {
            design.extend(r);
            y.extend_from_slice(targets.row(j));
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::invalid(format!(
            "no neighborhood member around {} has {order} lags",
            hood.center
        )));
    }
    let design = Tensor::new(vec![rows, order * n], design)?;
    let y = Tensor::new(vec![rows, n], y)?;
    let sol = solve_ridge(&RidgeProblem {
        design: &design,
        targets: &y,
        alpha,
        fit_intercept: include_bias,
        penalize_intercept: false,
    })?;
    let w = &sol.coefficients;
    let lags = (0..order)
        .map(|k| {
            let mut theta = Tensor::zeros(&[n, n]);
            for r in 0..n {
                for c in 0..n {
                    theta.set(r, c, w.get(k * n + c, r));
                }
            }
            theta
        })
        .collect();
    Ok(ARCoefficients {
        lags,
        bias: sol.intercept,
        include_bias,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantExplainer {
    pub value: Vec<f64>,
}

/// Mean of the values, the exact squared-error minimizer over constants.
pub fn fit_constant_explainer(values: &[&[f64]]) -> Result<ConstantExplainer> {
    let first = values
        .first()
        .ok_or_else(|| Error::invalid("constant explainer needs at least one value"))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for v in values {
        if v.len() != dim {
            return Err(Error::shape("constant explainer values differ in length"));
        }
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let count = values.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    Ok(ConstantExplainer { value: mean })
}

/// Mean squared L2 distance between aligned predictor and explainer outputs.
pub fn local_deviation<F: AsRef<[f64]>, G: AsRef<[f64]>>(f: &[F], g: &[G]) -> Result<f64> {
    if f.len() != g.len() || f.is_empty() {
        return Err(Error::shape(format!(
            "deviation needs equal nonempty lists, got {} and {}",
            f.len(),
            g.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in f.iter().zip(g) {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a.len() != b.len() {
            return Err(Error::shape("deviation outputs differ in dimension"));
        }
        total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total / f.len() as f64)
}

/// One row of an explainer dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerRecord {
    pub center: usize,
    pub bias: Vec<f64>,
    /// `θ_1..θ_K` flattened row-major.
    pub coefficients: Vec<f64>,
    pub deviation: f64,
}

/// Writes records as CSV: `center,theta0_<c>…,theta<k>_<r>_<c>…,deviation`.
pub fn write_explainer_dump(path: &Path, order: usize, channels: usize, records: &[ExplainerRecord]) -> Result<()> {
    let mut text = String::from("center");
    for c in 0..channels {
        write!(text, ",theta0_{c}").unwrap();
    }
    for k in 1..=order {
        for r in 0..channels {
            for c in 0..channels {
                write!(text, ",theta{k}_{r}_{c}").unwrap();
            }
        }
    }
    text.push_str(",deviation\n");
    for rec in records {
        if rec.bias.len() != channels || rec.coefficients.len() != order * channels * channels {
            return Err(Error::shape(format!("explainer record at {} has wrong size", rec.center)));
        }
        write!(text, "{}", rec.center).unwrap();
        for v in rec.bias.iter().chain(&rec.coefficients) {
            write!(text, ",{v}").unwrap();
        }
        writeln!(text, ",{}", rec.deviation).unwrap();
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_explainer_dump(path: &Path, order: usize, channels: usize) -> Result<Vec<ExplainerRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let width = 2 + channels + order * channels * channels;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::shape(format!("explainer dump row has {} fields, expected {width}", rec.len())));
        }
        let nums: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|f| f.parse().map_err(|_| Error::invalid(format!("bad number `{f}` in explainer dump"))))
            .collect::<Result<_>>()?;
        let center = rec[0]
            .parse()
            .map_err(|_| Error::invalid(format!("bad center `{}`", &rec[0])))?;
        out.push(ExplainerRecord {
            center,
            bias: nums[..channels].to_vec(),
            coefficients: nums[channels..width - 2].to_vec(),
            deviation: nums[width - 2],
        });
    }
    Ok(out)
}
