//! Run configuration: a nested TOML schema with full defaulting, strict
//! unknown-key rejection, and the named presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::evaluator::{TaskSpec, TrainConfig};
use crate::genome::SearchSpaceConfig;
use crate::{Error, Result};

/// Objective settings of the validation grade and mutation reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Target compactness: parameter counts at or under this incur no
    /// penalty.
    pub target_params: u64,
    /// Balance coefficient between accuracy and compactness.
    pub alpha: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            target_params: 2_000_000,
            alpha: 0.6,
        }
    }
}

/// Search loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Unique genomes to seed the initial ranking.
    pub population: usize,
    /// Children proposed per iteration.
    pub children_per_step: usize,
    pub max_iterations: u32,
    /// Iterations without improvement before a parent's search stops.
    pub patience: u32,
    pub tabu_tenure: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population: 60_000,
            children_per_step: 8,
            max_iterations: 100,
            patience: 10,
            tabu_tenure: 20,
        }
    }
}

/// Synthetic-task settings. The rendered resolution always matches the
/// search space's input resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub seed: u64,
    pub samples: usize,
    pub spec: TaskSpec,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            seed: 7777,
            samples: 2000,
            spec: TaskSpec::default(),
        }
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Master seed; every stream in a run derives from it.
    pub seed: u64,
    /// Run directory for artifacts; subcommands that write require it.
    pub output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    pub space: SearchSpaceConfig,
    pub objective: ObjectiveConfig,
    pub search: SearchConfig,
    pub task: TaskConfig,
    pub train: TrainConfig,
}


/// Parses the TOML text into a fully defaulted config. Unknown keys are
/// rejected with the offending key path; range violations name the key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    config.check()?;
    Ok(config)
}

impl RunConfig {
    /// Serializes back to TOML (the run-directory snapshot format).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        self.space.check()?;
        self.train.check()?;
        if !(0.0..=1.0).contains(&self.objective.alpha) {
            return Err(Error::InvalidConfig(format!(
                "objective.alpha = {} outside [0, 1]",
                self.objective.alpha
            )));
        }
        if self.objective.target_params == 0 {
            return Err(Error::InvalidConfig(
                "objective.target_params must be positive".into(),
            ));
        }
        if self.search.population < 1 {
            return Err(Error::InvalidConfig(
                "search.population must be >= 1".into(),
            ));
        }
        if self.search.children_per_step < 1 {
            return Err(Error::InvalidConfig(
                "search.children_per_step must be >= 1".into(),
            ));
        }
        if self.search.tabu_tenure < 1 {
            return Err(Error::InvalidConfig(
                "search.tabu_tenure must be >= 1".into(),
            ));
        }
        if self.task.samples < 2 {
            return Err(Error::InvalidConfig(
                "task.samples must be >= 2 (training plus held-out split)".into(),
            ));
        }
        Ok(())
    }
}

/// Named configurations: the three published objective settings plus the
/// enumerable toy space used by the brute-force oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Indoor-style objective: target 2.0M parameters, alpha 0.6.
    LidnasN,
    /// Driving-style objective: target 1.5M parameters, alpha 0.55.
    LidnasK,
    /// Large-indoor objective: target 4.5M parameters, alpha 0.57.
    LidnasS,
    /// 243-genome enumerable space at desk scale.
    Toy,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Preset> {
        match name {
            "lidnas-n" => Ok(Preset::LidnasN),
            "lidnas-k" => Ok(Preset::LidnasK),
            "lidnas-s" => Ok(Preset::LidnasS),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?}; expected lidnas-n, lidnas-k, lidnas-s, or toy"
            ))),
        }
    }

    /// Applies the preset on top of an existing config.
    pub fn apply(self, config: &mut RunConfig) {
        match self {
            Preset::LidnasN => {
                config.objective.target_params = 2_000_000;
                config.objective.alpha = 0.6;
            }
            Preset::LidnasK => {
                config.objective.target_params = 1_500_000;
                config.objective.alpha = 0.55;
            }
            Preset::LidnasS => {
                config.objective.target_params = 4_500_000;
                config.objective.alpha = 0.57;
            }
            Preset::Toy => apply_toy(config),
        }
    }
}

/// The toy space: one scale, vanilla 3x3 layers only, three channel widths,
/// hence 3^5 = 243 genomes — small enough to train exhaustively.
fn apply_toy(config: &mut RunConfig) {
    use crate::genome::{ConvOp, Resolution, SkipOp};
    config.space = SearchSpaceConfig {
        num_scales: 1,
        conv_options: vec![ConvOp::Vanilla2d],
        ksize_options: vec![3],
        se_options: vec![0.0],
        skip_options: vec![SkipOp::None],
        channel_options: vec![4, 8, 12],
        repeat_options: vec![1],
        input_resolution: Resolution {
            height: 8,
            width: 8,
            channels: 3,
        },
        expansion: 3,
        block_budget: None,
    };
    config.objective = ObjectiveConfig {
        target_params: 2500,
        alpha: 0.6,
    };
    config.search = SearchConfig {
        population: 48,
        children_per_step: 6,
        max_iterations: 16,
        patience: 6,
        tabu_tenure: 10,
    };
    config.task = TaskConfig {
        seed: 7777,
        samples: 32,
        spec: TaskSpec::default(),
    };
    config.train = TrainConfig {
        epochs: 8,
        batch_size: 8,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_all_defaults() {
        let config = parse_config("seed = 9\n").unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.search.population, 60_000);
        assert_eq!(config.search.max_iterations, 100);
        assert_eq!(config.search.patience, 10);
        assert_eq!(config.objective.target_params, 2_000_000);
        assert_eq!(config.objective.alpha, 0.6);
        assert_eq!(config.train.epochs, 30);
        assert_eq!(config.train.learning_rate, 7e-4);
        assert_eq!(config.space.per_block_size(), 288);
    }

    #[test]
    fn alpha_out_of_range_names_the_key() {
        let err = parse_config("[objective]\nalpha = 1.5\n").unwrap_err();
        let message = err.to_string();
        assert!(message.contains("objective.alpha"), "{message}");
        assert!(message.contains("1.5"), "{message}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("definitely_not_a_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("definitely_not_a_key"));
        let err = parse_config("[search]\nmax_iters = 10\n").unwrap_err();
        assert!(err.to_string().contains("max_iters"));
    }

    #[test]
    fn round_trip_parses_to_an_equal_config() {
        let mut config = parse_config("seed = 123\n[objective]\nalpha = 0.55\n").unwrap();
        config.output_dir = Some(PathBuf::from("runs/x"));
        config.workers = 4;
        let text = config.to_toml();
        let back = parse_config(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn presets_set_the_documented_objectives() {
        for (name, target, alpha) in [
            ("lidnas-n", 2_000_000u64, 0.6),
            ("lidnas-k", 1_500_000, 0.55),
            ("lidnas-s", 4_500_000, 0.57),
        ] {
            let mut config = RunConfig::default();
            Preset::from_name(name).unwrap().apply(&mut config);
            assert_eq!(config.objective.target_params, target);
            assert_eq!(config.objective.alpha, alpha);
        }
        assert!(Preset::from_name("nope").is_err());
    }

    #[test]
    fn toy_preset_is_the_enumerable_space() {
        let mut config = RunConfig::default();
        Preset::Toy.apply(&mut config);
        config.check().unwrap();
        assert_eq!(config.space.per_block_size(), 3);
        assert_eq!(
            config.space.space_size(),
            num_bigint::BigUint::from(243u32)
        );
    }

    #[test]
    fn invalid_resolution_is_rejected() {
        let err = parse_config(
            "[space]\nnum_scales = 2\ninput_resolution = { height = 15, width = 16, channels = 3 }\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("divisible"));
    }
}
