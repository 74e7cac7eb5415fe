//! Trainable state on top of the frozen backbone: residual adapter, learned
//! prompt context, cosine/temperature head, and the linear-probe baseline.

pub mod adapter;
pub mod features;
pub mod head;
pub mod probe;
pub mod prompt;
pub mod state;
pub mod train;

use std::fmt;
use std::str::FromStr;

use crate::backbone::{BackboneConfig, Variant};
use crate::error::{Error, Result};

pub use adapter::AdapterParams;
pub use features::{class_targets, extract_features};
pub use head::{argmax, class_logits, class_probabilities, HeadParams};
pub use probe::{linear_probe_train, LinearProbe, ProbeOutcome};
pub use prompt::{build_prompt, class_embeddings, PromptParams, PromptTemplate};
pub use state::{AdaptState, Model};
pub use train::{loss_and_grads, train, train_features, Grads, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    AdaptPrompt,
    AdapterOnly,
    PromptOnly,
    LinearProbe,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::AdaptPrompt, Mode::AdapterOnly, Mode::PromptOnly, Mode::LinearProbe];

    pub fn uses_adapter(self) -> bool {
        matches!(self, Mode::AdaptPrompt | Mode::AdapterOnly)
    }

    pub fn learns_prompts(self) -> bool {
        matches!(self, Mode::AdaptPrompt | Mode::PromptOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::AdaptPrompt => "adaptprompt",
            Mode::AdapterOnly => "adapter_only",
            Mode::PromptOnly => "prompt_only",
            Mode::LinearProbe => "linear_probe",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub variant: Variant,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Bottleneck width; `None` means a quarter of the feature width.
    pub d_mid: Option<usize>,
    /// Number of shared context vectors `M`.
    pub context_len: usize,
    pub alpha: f64,
    /// Class names in index order; each must be a vocabulary token.
    pub classes: Vec<String>,
    /// Linear probe: epochs without improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::AdaptPrompt,
            variant: Variant::V2,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            d_mid: None,
            context_len: 16,
            alpha: 0.2,
            classes: vec!["real".into(), "fake".into()],
            patience: 5,
        }
    }
}

const KEYS: [&str; 11] = [
    "mode",
    "variant",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "d_mid",
    "context_len",
    "alpha",
    "classes",
    "patience",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite");
        }
        if self.classes.len() < 2 {
            return bad("at least two classes are required");
        }
        let mut seen = self.classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return bad("class names must be distinct");
        }
        Ok(())
    }

    /// Bottleneck width for a feature width of `d_in`.
    pub fn resolved_d_mid(&self, d_in: usize) -> usize {
        self.d_mid.unwrap_or((d_in / 4).max(1))
    }

    /// Context vectors actually carried by the state (none for fixed prompts).
    pub fn effective_context_len(&self) -> usize {
        if self.mode.learns_prompts() {
            self.context_len
        } else {
            0
        }
    }

    pub fn is_binary(&self) -> bool {
        self.classes == ["real", "fake"]
    }

    /// `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let d_mid = self.d_mid.map_or("auto".to_string(), |d| d.to_string());
        let values = [
            self.mode.to_string(),
            self.variant.to_string(),
            format!("{:?}", self.learning_rate),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.seed.to_string(),
            d_mid,
            self.context_len.to_string(),
            format!("{:?}", self.alpha),
            self.classes.join(","),
            self.patience.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "train config".into(),
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("`{key}` expects a number, got `{v}`")))
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "d_mid" => {
                self.d_mid = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "context_len" => self.context_len = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "classes" => self.classes = value.split(',').map(|s| s.trim().to_string()).collect(),
            "patience" => self.patience = num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
    pub ratio: f64,
}

/// Trainable scalars for `config` on top of a backbone, plus their share of the total.
pub fn count_params(config: &TrainConfig, backbone: &BackboneConfig) -> ParamCount {
    let d_in = backbone.tap_width(config.variant);
    let d_mid = config.resolved_d_mid(d_in);
    let w_out = if config.variant == Variant::V0 {
        0
    } else {
        backbone.vision_width * backbone.embed_dim
    };
    let adapter = 2 * d_in * d_mid;
    let context = config.context_len * backbone.text_width;
    let trainable = match config.mode {
        Mode::AdaptPrompt => adapter + context + 1 + w_out,
        Mode::AdapterOnly => adapter + w_out,
        Mode::PromptOnly => context + 1 + w_out,
        Mode::LinearProbe => config.classes.len() * (d_in + 1),
    };
    let total = backbone.param_count() + trainable;
    ParamCount {
        trainable,
        total,
        ratio: trainable as f64 / total as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("finetune".parse::<Mode>().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::default();
        c.learning_rate = 3e-3;
        c.d_mid = Some(7);
        c.classes = vec!["periodic_a".into(), "broadband_a".into()];
        c.mode = Mode::PromptOnly;
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(TrainConfig::from_kv("bogus=1\n").is_err());
        assert!(TrainConfig::from_kv("batch_size=0\n").is_err());
        assert!(TrainConfig::from_kv("learning_rate=-1\n").is_err());
    }

    fn reference_backbone(layers: usize) -> BackboneConfig {
        BackboneConfig {
            image_size: 32,
            patch_size: 8,
            vision_width: 768,
            vision_layers: layers,
            vision_heads: 12,
            text_width: 512,
            text_layers: 1,
            text_heads: 8,
            embed_dim: 768,
            vocab_size: 36,
            max_seq_len: 24,
            variant: Variant::V0,
        }
    }

    #[test]
    fn reference_trainable_count() {
        let c = TrainConfig {
            variant: Variant::V0,
            d_mid: Some(192),
            context_len: 16,
            ..Default::default()
        };
        let n = count_params(&c, &reference_backbone(2));
        assert_eq!(n.trainable, 2 * 768 * 192 + 16 * 512 + 1);
        assert_eq!(n.trainable, 303_105);
    }

    #[test]
    fn minimal_adapter_count() {
        let c = TrainConfig {
            variant: Variant::V0,
            d_mid: Some(1),
            context_len: 0,
            ..Default::default()
        };
        assert_eq!(count_params(&c, &reference_backbone(1)).trainable, 2 * 768 + 1);
    }

    #[test]
    fn ratio_falls_with_depth() {
        let c = TrainConfig {
            variant: Variant::V0,
            ..Default::default()
        };
        let ratios: Vec<f64> = (1..5).map(|l| count_params(&c, &reference_backbone(l)).ratio).collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn w_out_counted_for_pre_projection_taps() {
        let bb = BackboneConfig::default();
        let base = TrainConfig::default();
        for v in [Variant::V1, Variant::V2] {
            let c = TrainConfig { variant: v, ..base.clone() };
            let d_in = bb.vision_width;
            let expect = 2 * d_in * (d_in / 4) + 16 * bb.text_width + 1 + bb.vision_width * bb.embed_dim;
            assert_eq!(count_params(&c, &bb).trainable, expect);
        }
    }
}
