//! Raw series ingestion, transforms, windowing and synthetic generators.

mod cache;
mod load;
mod synth;
mod transform;
mod window;

pub use cache::{read_cache, write_cache, CacheManifest, CACHE_FORMAT_VERSION};
pub use load::load_csv_series;
pub use synth::{synth_generate, SynthKind, SynthSpec};
pub use transform::{cumulative_reconstruct, pct_change};
pub use window::{window_split, window_split_many, SplitFractions, WindowOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A named multichannel series, stored as a `length x channels` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub channel_names: Vec<String>,
    values: Tensor,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, channel_names: Vec<String>, values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape("series values must be a matrix"));
        }
        if values.cols() != channel_names.len() {
            return Err(Error::shape(format!(
                "{} channel names for {} columns",
                channel_names.len(),
                values.cols()
            )));
        }
        if values.rows() < 1 {
            return Err(Error::invalid("series has no points"));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("series values".into()));
        }
        Ok(Self {
            name: name.into(),
            channel_names,
            values,
        })
    }

    /// Builds a series from per-channel columns.
    pub fn from_channels(name: impl Into<String>, channels: &[(&str, Vec<f64>)]) -> Result<Self> {
        let len = channels.first().map(|c| c.1.len()).unwrap_or(0);
        if channels.iter().any(|c| c.1.len() != len) {
            return Err(Error::shape("channels differ in length"));
        }
        let mut data = Vec::with_capacity(len * channels.len());
        for t in 0..len {
            for (_, col) in channels {
                data.push(col[t]);
            }
        }
        let values = Tensor::new(vec![len, channels.len()], data)?;
        Self::new(name, channels.iter().map(|c| c.0.to_string()).collect(), values)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.values.get(t, c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Fixed-length windows, each `input_len + output_len` rows by `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub input_len: usize,
    pub output_len: usize,
    pub channel_names: Vec<String>,
    pub seed: u64,
    pub train: Vec<Tensor>,
    pub val: Vec<Tensor>,
    pub test: Vec<Tensor>,
}

impl WindowedDataset {
    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn window_len(&self) -> usize {
        self.input_len + self.output_len
    }

    pub fn split(&self, s: Split) -> &[Tensor] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn total_windows(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Checks every window against the declared shape.
    pub fn validate(&self) -> Result<()> {
        let (l, n) = (self.window_len(), self.channels());
        for s in Split::ALL {
            for (i, w) in self.split(s).iter().enumerate() {
                if w.shape() != [l, n] {
                    return Err(Error::shape(format!(
                        "{} window {i} has shape {:?}, expected [{l}, {n}]",
                        s.name(),
                        w.shape()
                    )));
                }
            }
        }
        Ok(())
    }
}
