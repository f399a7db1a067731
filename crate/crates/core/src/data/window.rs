use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RawSeries, WindowedDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.85,
            val: 0.05,
            test: 0.10,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid(format!("split fractions out of [0, 1]: {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Window counts per split; they always add up to `n`.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    pub input_len: usize,
    pub output_len: usize,
    /// Defaults to the window length, giving disjoint windows.
    pub stride: Option<usize>,
    pub fractions: SplitFractions,
    /// Keep only the first `max_windows` windows (in series order).
    pub max_windows: Option<usize>,
}

impl WindowOptions {
    pub fn new(input_len: usize, output_len: usize) -> Self {
        Self {
            input_len,
            output_len,
            stride: None,
            fractions: SplitFractions::default(),
            max_windows: None,
        }
    }

    pub fn window_len(&self) -> usize {
        self.input_len + self.output_len
    }

    pub fn effective_stride(&self) -> usize {
        self.stride.unwrap_or(self.window_len())
    }
}

fn windows_of(series: &RawSeries, opts: &WindowOptions) -> Vec<Tensor> {
    let len = opts.window_len();
    let stride = opts.effective_stride();
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= series.len() {
        out.push(series.values().slice_rows(start, start + len));
        start += stride;
    }
    out
}

/// Cuts one series into windows and assigns them to splits.
pub fn window_split(series: &RawSeries, opts: &WindowOptions, seed: u64) -> Result<WindowedDataset> {
    if series.len() < opts.window_len() {
        return Err(Error::invalid(format!(
            "series `{}` has {} points, shorter than one window of {}",
            series.name,
            series.len(),
            opts.window_len()
        )));
    }
    window_split_many(std::slice::from_ref(series), opts, seed)
}

/// Pools windows from several series (e.g. one per ticker) before splitting.
///
/// Series shorter than a window are skipped with a warning.
pub fn window_split_many(series: &[RawSeries], opts: &WindowOptions, seed: u64) -> Result<WindowedDataset> {
    if opts.input_len == 0 || opts.output_len == 0 {
        return Err(Error::invalid("input and output lengths must be >= 1"));
    }
    if opts.effective_stride() == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    opts.fractions.validate()?;
    let first = series
        .first()
        .ok_or_else(|| Error::invalid("no series to window"))?;
    let channel_names = first.channel_names.clone();

    let mut windows = Vec::new();
    for s in series {
        if s.channel_names != channel_names {
            return Err(Error::shape(format!(
                "series `{}` has channels {:?}, expected {:?}",
                s.name, s.channel_names, channel_names
            )));
        }
        if s.len() < opts.window_len() {
            warn!("series `{}` is shorter than one window, skipping", s.name);
            continue;
        }
        windows.extend(windows_of(s, opts));
    }
    if let Some(cap) = opts.max_windows {
        windows.truncate(cap);
    }
    if windows.is_empty() {
        return Err(Error::invalid("every series is shorter than one window"));
    }

    let n = windows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = opts.fractions.counts(n);
    let assign = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| windows[i].clone()).collect::<Vec<_>>()
    };
    let train = assign(&order[..n_train]);
    let val = assign(&order[n_train..n_train + n_val]);
    let test = assign(&order[n_train + n_val..]);

    Ok(WindowedDataset {
        input_len: opts.input_len,
        output_len: opts.output_len,
        channel_names,
        seed,
        train,
        val,
        test,
    })
}
