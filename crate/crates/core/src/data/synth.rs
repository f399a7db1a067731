use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Phase offset between consecutive channels of a sinusoid mixture.
const CHANNEL_PHASE_STEP: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    /// Channel `c` is `Σ_p sin(2πt/p + c·0.7)`.
    SinusoidMix { periods: Vec<f64> },
    /// Continuous path from 0 whose slope switches at each breakpoint.
    /// `slopes` has one more entry than `breakpoints`.
    PiecewiseLinear { breakpoints: Vec<usize>, slopes: Vec<f64> },
    /// `x_t = Σ_k θ_k x_{t-k} + θ_0 + noise`, started from `initial`
    /// (K rows, oldest first). Each `θ_k` is row-major `N x N`.
    ArProcess {
        coefficients: Vec<Vec<f64>>,
        intercept: Vec<f64>,
        initial: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub channels: usize,
    pub length: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.length < 2 {
            return Err(Error::invalid("synthetic series needs >= 1 channel and >= 2 points"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid(format!("noise std must be >= 0, got {}", self.noise_std)));
        }
        match &self.kind {
            SynthKind::SinusoidMix { periods } => {
                if periods.is_empty() || periods.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
                    return Err(Error::invalid(format!("periods must be positive, got {periods:?}")));
                }
            }
            SynthKind::PiecewiseLinear { breakpoints, slopes } => {
                if slopes.len() != breakpoints.len() + 1 {
                    return Err(Error::invalid("piecewise path needs one more slope than breakpoints"));
                }
                if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("breakpoints must be strictly increasing"));
                }
            }
            SynthKind::ArProcess {
                coefficients,
                intercept,
                initial,
            } => {
                let n = self.channels;
                let k = coefficients.len();
                if k == 0 {
                    return Err(Error::invalid("AR process needs order >= 1"));
                }
                if coefficients.iter().any(|c| c.len() != n * n) || intercept.len() != n {
                    return Err(Error::shape("AR coefficient shapes do not match channel count"));
                }
                if initial.len() != k || initial.iter().any(|r| r.len() != n) {
                    return Err(Error::shape(format!("AR process needs {k} initial rows of {n} values")));
                }
                let radius = companion_spectral_radius(coefficients, n);
                if !(radius < 1.0) {
                    return Err(Error::invalid(format!(
                        "AR process is not stationary (spectral radius {radius:.4})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Largest eigenvalue modulus of the block companion matrix.
pub(crate) fn companion_spectral_radius(coefficients: &[Vec<f64>], n: usize) -> f64 {
    let k = coefficients.len();
    let dim = k * n;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (lag, theta) in coefficients.iter().enumerate() {
        for r in 0..n {
            for c in 0..n {
                m[(r, lag * n + c)] = theta[r * n + c];
            }
        }
    }
    for i in n..dim {
        m[(i, i - n)] = 1.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn synth_generate(spec: &SynthSpec) -> Result<RawSeries> {
    spec.validate()?;
    let (n, len) = (spec.channels, spec.length);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut noise = || {
        if spec.noise_std == 0.0 {
            0.0
        } else {
            normal.sample(&mut rng)
        }
    };

    let mut data = vec![0.0; len * n];
    match &spec.kind {
        SynthKind::SinusoidMix { periods } => {
            for t in 0..len {
                for c in 0..n {
                    let phase = c as f64 * CHANNEL_PHASE_STEP;
                    let clean: f64 = periods
                        .iter()
                        .map(|p| (2.0 * PI * t as f64 / p + phase).sin())
                        .sum();
                    data[t * n + c] = clean + noise();
                }
            }
        }
        SynthKind::PiecewiseLinear { breakpoints, slopes } => {
            let mut level = 0.0;
            let mut segment = 0;
            for t in 0..len {
                if t > 0 {
                    while segment < breakpoints.len() && t > breakpoints[segment] {
                        segment += 1;
                    }
                    level += slopes[segment];
                }
                for c in 0..n {
                    data[t * n + c] = level + noise();
                }
            }
        }
        SynthKind::ArProcess {
            coefficients,
            intercept,
            initial,
        } => {
            let k = coefficients.len();
            for (t, row) in initial.iter().enumerate().take(len) {
                data[t * n..(t + 1) * n].copy_from_slice(row);
            }
            for t in k..len {
                for r in 0..n {
                    let mut v = intercept[r];
                    for (lag, theta) in coefficients.iter().enumerate() {
                        let prev = t - lag - 1;
                        for c in 0..n {
                            v += theta[r * n + c] * data[prev * n + c];
                        }
                    }
                    data[t * n + r] = v + noise();
                }
            }
        }
    }

    let name = match &spec.kind {
        SynthKind::SinusoidMix { .. } => "sinusoid_mix",
        SynthKind::PiecewiseLinear { .. } => "piecewise_linear",
        SynthKind::ArProcess { .. } => "ar_process",
    };
    let channel_names = (0..n).map(|c| format!("ch{c}")).collect();
    RawSeries::new(name, channel_names, Tensor::new(vec![len, n], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SynthKind, channels: usize, noise_std: f64) -> SynthSpec {
        SynthSpec {
            kind,
            channels,
            length: 60,
            noise_std,
            seed: 11,
        }
    }

    #[test]
    fn noiseless_sinusoid_matches_closed_form() {
        let s = synth_generate(&spec(
            SynthKind::SinusoidMix {
                periods: vec![5.0, 20.0],
            },
            1,
            0.0,
        ))
        .unwrap();
        for t in 0..60 {
            let tf = t as f64;
            let want = (2.0 * PI * tf / 5.0).sin() + (2.0 * PI * tf / 20.0).sin();
            assert_eq!(s.values().get(t, 0), want);
        }
    }

    #[test]
    fn ar1_recursion() {
        let s = synth_generate(&spec(
            SynthKind::ArProcess {
                coefficients: vec![vec![0.5]],
                intercept: vec![0.0],
                initial: vec![vec![1.0]],
            },
            1,
            0.0,
        ))
        .unwrap();
        assert_eq!(&s.channel(0)[..4], &[1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn same_seed_same_output() {
        let sp = spec(
            SynthKind::SinusoidMix {
                periods: vec![5.0, 20.0],
            },
            4,
            0.3,
        );
        assert_eq!(synth_generate(&sp).unwrap(), synth_generate(&sp).unwrap());
        let mut other = sp.clone();
        other.seed += 1;
        assert_ne!(synth_generate(&sp).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn piecewise_is_continuous() {
        let s = synth_generate(&spec(
            SynthKind::PiecewiseLinear {
                breakpoints: vec![20, 40],
                slopes: vec![1.0, -0.5, 0.25],
            },
            1,
            0.0,
        ))
        .unwrap();
        let x = s.channel(0);
        assert_eq!(x[20], 20.0);
        assert_eq!(x[21], 19.5);
        assert_eq!(x[41], 10.25);
    }

    #[test]
    fn invalid_specs() {
        let bad_period = spec(SynthKind::SinusoidMix { periods: vec![0.0] }, 1, 0.0);
        assert!(synth_generate(&bad_period).is_err());
        let negative_noise = spec(SynthKind::SinusoidMix { periods: vec![5.0] }, 1, -1.0);
        assert!(synth_generate(&negative_noise).is_err());
        let explosive = spec(
            SynthKind::ArProcess {
                coefficients: vec![vec![1.1]],
                intercept: vec![0.0],
                initial: vec![vec![1.0]],
            },
            1,
            0.0,
        );
        assert!(synth_generate(&explosive).is_err());
        // complex roots inside the unit circle: x_t = x_{t-1} - 0.5 x_{t-2}
        let oscillating = spec(
            SynthKind::ArProcess {
                coefficients: vec![vec![1.0], vec![-0.5]],
                intercept: vec![0.0],
                initial: vec![vec![1.0], vec![0.0]],
            },
            1,
            0.0,
        );
        assert!(synth_generate(&oscillating).is_ok());
    }
}
