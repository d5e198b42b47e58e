use serde::{Deserialize, Serialize};

use crate::mi::{BnGrouping, IfmConfig, ObjectiveForm, LAYER_PAIRS};
use crate::nn::{ClassifierConfig, DiscriminatorConfig};

/// How the discriminators and the classifier share a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One pair sample and one backward pass update everything.
    #[default]
    Joint,
    /// Discriminators step first; the classifier then sees the updated
    /// discriminators on a fresh pair sample.
    Alternating,
}

impl std::str::FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Self::Joint),
            "alternating" => Ok(Self::Alternating),
            other => Err(format!("unknown update mode `{other}` (joint|alternating)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the summed layer-pair objective; 0 trains the baseline.
    pub lambda_ifm: f64,
    pub pairs_per_image: usize,
    pub objective_form: ObjectiveForm,
    pub bn_grouping: BnGrouping,
    pub update_mode: UpdateMode,
    /// Seeds the per-epoch example order.
    pub data_seed: u64,
    pub model_seed: u64,
    /// Seeds pair sampling.
    pub sampling_seed: u64,
    /// Use only the first `n` training examples.
    pub train_limit: Option<usize>,
    /// Use only the first `n` validation examples.
    pub val_limit: Option<usize>,
    /// With `lambda_ifm = 0`, still train discriminators and log the layer
    /// objectives. Classifier updates are unaffected either way.
    pub ifm_reporting: bool,
    pub classifier: ClassifierConfig,
    /// Hidden widths of every pair discriminator.
    pub disc_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            epochs: 30,
            lambda_ifm: 1.0,
            pairs_per_image: 32,
            objective_form: ObjectiveForm::Standard,
            bn_grouping: BnGrouping::Pooled,
            update_mode: UpdateMode::Joint,
            data_seed: 0,
            model_seed: 0,
            sampling_seed: 0,
            train_limit: None,
            val_limit: None,
            ifm_reporting: true,
            classifier: ClassifierConfig::default(),
            disc_hidden: vec![256, 128, 64],
        }
    }
}

impl TrainConfig {
    /// Sets all three seeds from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data_seed = seed;
        self.model_seed = seed;
        self.sampling_seed = seed;
        self
    }

    /// Parses a TOML document; absent keys keep their defaults, unknown keys
    /// are rejected, and the result is validated.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ifm(&self) -> IfmConfig {
        IfmConfig {
            pairs_per_image: self.pairs_per_image,
            form: self.objective_form,
            grouping: self.bn_grouping,
        }
    }

    /// Whether discriminators exist in this run.
    pub fn uses_discriminators(&self) -> bool {
        self.lambda_ifm > 0.0 || self.ifm_reporting
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda_ifm >= 0.0 && self.lambda_ifm.is_finite()) {
            return Err(format!("lambda_ifm must be a finite value >= 0, got {}", self.lambda_ifm));
        }
        if self.epochs < 1 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return Err(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.pairs_per_image == 0 {
            return Err("pairs_per_image must be at least 1".into());
        }
        if self.disc_hidden.contains(&0) {
            return Err("discriminator widths must be positive".into());
        }
        self.classifier.validate().map_err(|e| e.to_string())
    }

    /// One discriminator config per adjacent tap pair.
    pub fn discriminator_configs(&self) -> Vec<DiscriminatorConfig> {
        let c = &self.classifier.conv_channels;
        LAYER_PAIRS
            .iter()
            .map(|&(a, b)| DiscriminatorConfig {
                hidden: self.disc_hidden.clone(),
                ..DiscriminatorConfig::new(c[a] + c[b])
            })
            .collect()
    }
}
