//! `key = value` run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use adaptprompt::adaptation::{Mode, TrainConfig};
use adaptprompt::analysis::{ExportStage, PerturbationSpec};
use adaptprompt::backbone::{BackboneConfig, Variant, Vocab};
use adaptprompt::data::{PseudoGenerator, SyntheticSpec};
use adaptprompt::metrics::{parse_groups, SubconfigGroups};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Setting,
    Path,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: fn() -> String,
}

macro_rules! keys {
    ($($name:literal, $kind:ident, $default:expr;)*) => {
        &[$(Key { name: $name, kind: Kind::$kind, default: || $default },)*]
    };
}

fn train_default(key: &str) -> String {
    let kv = TrainConfig::default().to_kv();
    kv.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_default()
        .to_string()
}

fn synth_generators() -> String {
    SyntheticSpec::default()
        .generators
        .iter()
        .map(PseudoGenerator::describe)
        .collect::<Vec<_>>()
        .join(",")
}

fn joined<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

const KEYS: &[Key] = keys![
    "mode", Setting, train_default("mode");
    "variant", Setting, train_default("variant");
    "learning_rate", Setting, train_default("learning_rate");
    "batch_size", Setting, train_default("batch_size");
    "epochs", Setting, train_default("epochs");
    "seed", Setting, "0".into();
    "d_mid", Setting, train_default("d_mid");
    "context_len", Setting, train_default("context_len");
    "alpha", Setting, train_default("alpha");
    "patience", Setting, train_default("patience");
    "w_out", Setting, "auto".into();
    "fewshot", Setting, "0".into();
    "image_size", Setting, BackboneConfig::default().image_size.to_string();
    "patch_size", Setting, BackboneConfig::default().patch_size.to_string();
    "vision_width", Setting, BackboneConfig::default().vision_width.to_string();
    "vision_layers", Setting, BackboneConfig::default().vision_layers.to_string();
    "vision_heads", Setting, BackboneConfig::default().vision_heads.to_string();
    "text_width", Setting, BackboneConfig::default().text_width.to_string();
    "text_layers", Setting, BackboneConfig::default().text_layers.to_string();
    "text_heads", Setting, BackboneConfig::default().text_heads.to_string();
    "embed_dim", Setting, BackboneConfig::default().embed_dim.to_string();
    "max_seq_len", Setting, BackboneConfig::default().max_seq_len.to_string();
    "real_train", Setting, SyntheticSpec::default().real_train.to_string();
    "fake_train", Setting, SyntheticSpec::default().fake_train.to_string();
    "real_test", Setting, SyntheticSpec::default().real_test.to_string();
    "fake_test", Setting, SyntheticSpec::default().fake_test.to_string();
    "base_sigma", Setting, format!("{:?}", SyntheticSpec::default().base_sigma);
    "generators", Setting, synth_generators();
    "blur_grid", Setting, joined(&adaptprompt::analysis::DEFAULT_BLUR_GRID);
    "jpeg_grid", Setting, joined(&adaptprompt::analysis::DEFAULT_JPEG_GRID);
    "groups", Setting, String::new();
    "tag", Setting, String::new();
    "export_stage", Setting, "raw_feature".into();
    "out", Path, ".".into();
    "manifest", Path, String::new();
    "test_manifest", Path, String::new();
    "backbone", Path, String::new();
    "state", Path, String::new();
    "vocab", Path, String::new();
];

/// Resolved settings: defaults, then the config file, then flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, (k.default)())).collect(),
        }
    }
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let k = KEYS
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))?;
        self.values.insert(k.name, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no key `{key}`"))
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `--key value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> CliResult<()> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("expected `--key value`, got `{flag}`")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Config(format!("`--{key}` needs a value")))?;
                    (key.to_string(), v.clone())
                }
            };
            self.set(&key.replace('-', "_"), &value)?;
        }
        Ok(())
    }

    /// Every key as `key = value`, in key order.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over the sorted non-path settings.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for k in KEYS.iter().filter(|k| k.kind == Kind::Setting).map(|k| k.name).collect::<std::collections::BTreeSet<_>>() {
            h.update(format!("{k}={}\n", self.get(k)));
        }
        format!("{:x}", h.finalize())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("`{key}` has an invalid value `{v}`")))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.parse("seed")
    }

    pub fn variant(&self) -> CliResult<Variant> {
        Ok(self.get("variant").parse::<Variant>()?)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    /// A path setting, or `<out>/<default_name>` when unset.
    pub fn path(&self, key: &str, default_name: &str) -> PathBuf {
        match self.get(key) {
            "" => self.out_dir().join(default_name),
            p => PathBuf::from(p),
        }
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let mut c = TrainConfig::default();
        for k in TrainConfig::keys().iter().filter(|k| **k != "classes") {
            c.set(k, self.get(k))?;
        }
        c.validate()?;
        let variant = c.variant;
        match (self.get("w_out"), variant) {
            ("auto", _) => {}
            ("on", Variant::V0) => {
                return Err(CliError::Config("W_out requested with variant v0, whose features already live in the joint space".into()))
            }
            ("on", _) => {}
            ("off", Variant::V0) => {}
            ("off", v) => return Err(CliError::Config(format!("variant {v} needs W_out to reach the joint space"))),
            (other, _) => return Err(CliError::Config(format!("`w_out` must be auto, on or off, got `{other}`"))),
        }
        Ok(c)
    }

    pub fn mode(&self) -> CliResult<Mode> {
        Ok(self.get("mode").parse::<Mode>()?)
    }

    pub fn backbone_config(&self, vocab: &Vocab) -> CliResult<BackboneConfig> {
        let c = BackboneConfig {
            image_size: self.parse("image_size")?,
            patch_size: self.parse("patch_size")?,
            vision_width: self.parse("vision_width")?,
            vision_layers: self.parse("vision_layers")?,
            vision_heads: self.parse("vision_heads")?,
            text_width: self.parse("text_width")?,
            text_layers: self.parse("text_layers")?,
            text_heads: self.parse("text_heads")?,
            embed_dim: self.parse("embed_dim")?,
            vocab_size: vocab.len(),
            max_seq_len: self.parse("max_seq_len")?,
            variant: self.variant()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn synthetic_spec(&self) -> CliResult<SyntheticSpec> {
        let generators = self
            .get("generators")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(PseudoGenerator::parse)
            .collect::<Result<Vec<_>, _>>()?;
        let spec = SyntheticSpec {
            side: self.parse("image_size")?,
            real_train: self.parse("real_train")?,
            fake_train: self.parse("fake_train")?,
            real_test: self.parse("real_test")?,
            fake_test: self.parse("fake_test")?,
            generators,
            base_sigma: self.parse("base_sigma")?,
            seed: self.seed()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn perturbations(&self) -> CliResult<Vec<PerturbationSpec>> {
        let mut out = Vec::new();
        for (kind, key) in [("blur", "blur_grid"), ("jpeg", "jpeg_grid")] {
            for v in self.get(key).split(',').map(str::trim).filter(|s| !s.is_empty()) {
                out.push(format!("{kind}:{v}").parse::<PerturbationSpec>()?);
            }
        }
        if out.is_empty() {
            return Err(CliError::Config("both perturbation grids are empty".into()));
        }
        Ok(out)
    }

    pub fn groups(&self) -> CliResult<SubconfigGroups> {
        Ok(parse_groups(self.get("groups"))?)
    }

    pub fn export_stage(&self) -> CliResult<ExportStage> {
        Ok(self.get("export_stage").parse::<ExportStage>()?)
    }

    pub fn fewshot(&self) -> CliResult<usize> {
        self.parse("fewshot")
    }

    pub fn tag(&self) -> Option<&str> {
        Some(self.get("tag")).filter(|t| !t.is_empty())
    }

    pub fn vocab(&self) -> CliResult<Vocab> {
        match self.get("vocab") {
            "" => Ok(Vocab::default_vocab()),
            p => Ok(Vocab::load(Path::new(p))?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::default();
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
        assert_eq!(c.synthetic_spec().unwrap(), SyntheticSpec::default());
        let vocab = Vocab::default_vocab();
        assert_eq!(c.backbone_config(&vocab).unwrap(), BackboneConfig::default());
        assert_eq!(c.perturbations().unwrap(), PerturbationSpec::default_grid());
        assert!(c.groups().unwrap().is_empty());
    }

    #[test]
    fn layering_and_unknown_keys() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nepochs = 3\n\nmode = linear_probe\n", "f").unwrap();
        c.apply_overrides(&["--epochs".into(), "7".into(), "--batch-size=4".into()]).unwrap();
        let t = c.train_config().unwrap();
        assert_eq!((t.epochs, t.batch_size, t.mode), (7, 4, Mode::LinearProbe));
        assert!(c.apply_text("nonsense = 1\n", "f").unwrap_err().to_string().contains("f:1"));
        assert!(c.apply_text("epochs 3\n", "f").is_err());
        assert!(c.apply_overrides(&["--bogus".into(), "1".into()]).is_err());
        assert!(c.apply_overrides(&["--epochs".into()]).is_err());
    }

    #[test]
    fn hash_ignores_paths_only() {
        let base = RunConfig::default();
        let mut moved = base.clone();
        moved.set("out", "/elsewhere").unwrap();
        moved.set("manifest", "x.manifest").unwrap();
        assert_eq!(base.hash(), moved.hash());
        let mut changed = base.clone();
        changed.set("epochs", "21").unwrap();
        assert_ne!(base.hash(), changed.hash());
        assert_eq!(base.hash().len(), 64);
    }

    #[test]
    fn w_out_conflicts() {
        let mut c = RunConfig::default();
        c.set("variant", "v0").unwrap();
        c.set("w_out", "on").unwrap();
        assert!(c.train_config().is_err());
        c.set("w_out", "off").unwrap();
        assert!(c.train_config().is_ok());
        c.set("variant", "v2").unwrap();
        assert!(c.train_config().is_err());
        c.set("w_out", "maybe").unwrap();
        assert!(c.train_config().is_err());
    }
}
