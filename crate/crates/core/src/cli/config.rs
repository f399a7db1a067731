//! Experiment configuration files.
//!
//! TOML with `[data]`, `[model]`, `[game]`, `[eval]`, `[sweep]` and
//! `[output]` sections. Every key has a default and unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SplitFractions, SynthSpec, WindowOptions};
use crate::error::{Error, Result};
use crate::fsutil::read_to_string;
use crate::game::GameConfig;
use crate::parallel::Execution;
use crate::predictor::PredictorConfig;

/// Environment variable naming the directory that relative output paths
/// are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "COOPGAME_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV source; when absent the `synth` generator is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_column: Option<String>,
    #[serde(default = "default_synth")]
    pub synth: SynthSpec,
    /// Replace each series by its period-over-period percentage change.
    #[serde(default)]
    pub pct_change: bool,
    #[serde(default = "default_input_len")]
    pub input_len: usize,
    #[serde(default = "default_output_len")]
    pub output_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_windows: Option<usize>,
    #[serde(default)]
    pub split: SplitFractions,
}

fn default_synth() -> SynthSpec {
    SynthSpec {
        kind: crate::data::SynthKind::SinusoidMix {
            periods: vec![5.0, 20.0],
        },
        channels: 1,
        length: 4000,
        noise_std: 0.1,
        seed: 0,
    }
}

fn default_input_len() -> usize {
    80
}

fn default_output_len() -> usize {
    20
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            columns: Vec::new(),
            group_column: None,
            synth: default_synth(),
            pct_change: false,
            input_len: default_input_len(),
            output_len: default_output_len(),
            stride: None,
            max_windows: None,
            split: SplitFractions::default(),
        }
    }
}

impl DataSection {
    pub fn window_options(&self) -> WindowOptions {
        WindowOptions {
            input_len: self.input_len,
            output_len: self.output_len,
            stride: self.stride,
            fractions: self.split,
            max_windows: self.max_windows,
        }
    }
}

/// Network sizes; channel count, parameterization and order come from the
/// data and game sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "sizes::conv_width")]
    pub conv_width: usize,
    #[serde(default = "sizes::conv_filters")]
    pub conv_filters: usize,
    #[serde(default = "sizes::hidden")]
    pub hidden: usize,
    #[serde(default = "sizes::dense")]
    pub dense1: usize,
    #[serde(default = "sizes::dense")]
    pub dense2: usize,
}

mod sizes {
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
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            conv_width: sizes::conv_width(),
            conv_filters: sizes::conv_filters(),
            hidden: sizes::hidden(),
            dense1: sizes::dense(),
            dense2: sizes::dense(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Evaluate the global AR baseline instead of a trained model.
    #[serde(default)]
    pub ar_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 0.1, 1.0, 10.0]
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambdas: default_lambdas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("coopgame-out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds the window split, weight initialization and training.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config takes every default")
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.csv.is_none() {
            self.data.synth.validate()?;
        } else if self.data.columns.is_empty() {
            return Err(Error::Config("data.columns must list the CSV channels to read".into()));
        }
        self.data.split.validate()?;
        if self.data.input_len == 0 || self.data.output_len == 0 || self.data.stride == Some(0) {
            return Err(Error::Config("data.input_len, output_len and stride must be >= 1".into()));
        }
        self.game.validate()?;
        if self.data.input_len < self.game.ar_order {
            return Err(Error::Config(format!(
                "data.input_len ({}) must be at least game.ar_order ({})",
                self.data.input_len, self.game.ar_order
            )));
        }
        if self.sweep.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("sweep.lambdas must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Applies a seed override to every seeded stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.game.seed = seed;
    }

    /// Game settings with the experiment seed applied.
    pub fn game_config(&self) -> GameConfig {
        GameConfig {
            seed: self.seed,
            ..self.game.clone()
        }
    }

    pub fn predictor_config(&self, channels: usize) -> PredictorConfig {
        PredictorConfig {
            channels,
            conv_width: self.model.conv_width,
            conv_filters: self.model.conv_filters,
            hidden: self.model.hidden,
            dense1: self.model.dense1,
            dense2: self.model.dense2,
            parameterization: self.game.parameterization,
            ar_order: self.game.ar_order,
            seed: self.seed,
        }
    }

    /// The fully resolved configuration as TOML.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Output directory; relative paths are placed under `root` when given.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(root) if self.output.dir.is_relative() => root.join(&self.output.dir),
            _ => self.output.dir.clone(),
        }
    }
}

/// `# `-prefixed copy of the resolved configuration for CSV headers.
pub fn provenance_header(resolved: &str) -> String {
    let mut out = String::new();
    for line in resolved.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::Parameterization;

    #[test]
    fn empty_config_uses_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.data.input_len, 80);
        assert_eq!(c.game.ar_order, 2);
        assert_eq!(c.game.reg_fraction, 0.1);
        assert_eq!(c.sweep.lambdas, vec![0.0, 0.1, 1.0, 10.0]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = ExperimentConfig::parse("[game]\nlamda = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
        assert!(err.contains("line 2"), "{err}");
        assert!(ExperimentConfig::parse("typo = 1\n").is_err());
    }

    #[test]
    fn bounds_are_checked() {
        assert!(ExperimentConfig::parse("[game]\nlambda = -1.0\n").is_err());
        assert!(ExperimentConfig::parse("[game]\nepsilon = 0\n").is_err());
        assert!(ExperimentConfig::parse("[game]\nreg_fraction = 0.0\n").is_err());
        assert!(ExperimentConfig::parse("[data]\ninput_len = 1\n[game]\nar_order = 3\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
seed = 4
[data]
input_len = 30
output_len = 7
stride = 3
[data.synth]
kind = "ar_process"
coefficients = [[0.5]]
intercept = [0.0]
initial = [[0.1]]
channels = 1
length = 500
noise_std = 0.1
seed = 2
[game]
lambda = 1.0
epsilon = 6
ar_order = 7
parameterization = "explicit"
mode = "symmetric"
[game.optimizer]
epochs = 3
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.game.parameterization, Parameterization::Explicit);
        assert_eq!(c.game.optimizer.epochs, 3);
        let again = ExperimentConfig::parse(&c.resolved()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut c = ExperimentConfig::default();
        c.set_seed(11);
        assert_eq!(c.game_config().seed, 11);
        assert_eq!(c.predictor_config(2).seed, 11);
    }
}
