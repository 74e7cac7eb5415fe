use std::fmt::Write;
use std::path::{Path, PathBuf};

use adaptprompt::adaptation::features::{encode_images, load_images};
use adaptprompt::adaptation::state::sidecar_path;
use adaptprompt::adaptation::{argmax, count_params, extract_features, train, Model, TrainConfig, TrainLog};
use adaptprompt::analysis::{
    curve_to_text, dataset_mean_spectrum, detect_spikes, export_embeddings, robustness_sweep, stage_features, ExportStage,
};
use adaptprompt::backbone::{BackboneParams, Vocab};
use adaptprompt::data::{fewshot_sample, synth_generate, Label, Manifest, Record, SynthCorpus};
use adaptprompt::metrics::{attribution_metrics, confusion_matrix, evaluate, scored_samples, tag_subset_eval};
use adaptprompt::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_atomic, write_report};

pub const BACKBONE_FILE: &str = "backbone.apwt";
pub const STATE_FILE: &str = "state.apwt";
pub const TRAIN_LOG: &str = "train.log";
pub const EVAL_REPORT: &str = "eval.tsv";
pub const TAG_REPORT: &str = "eval_tag.tsv";
pub const CONFUSION_FILE: &str = "confusion.tsv";
pub const ATTRIBUTION_FILE: &str = "attribution.tsv";
pub const SPECTRUM_FILE: &str = "spectrum.tsv";
pub const SPIKES_FILE: &str = "spikes.tsv";
pub const ROBUST_FILE: &str = "robust.tsv";
pub const EXPORT_FILE: &str = "embeddings.tsv";
pub const COUNT_FILE: &str = "count.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    InitBackbone,
    Train,
    Eval,
    Attribute,
    Spectrum,
    Robust,
    Export,
    Count,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::InitBackbone => "init-backbone",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Attribute => "attribute",
            Command::Spectrum => "spectrum",
            Command::Robust => "robust",
            Command::Export => "export",
            Command::Count => "count",
        }
    }
}

/// Runs one subcommand; returns a short human summary.
pub fn run(command: Command, cfg: &RunConfig) -> CliResult<String> {
    let hash = cfg.hash();
    write_report(
        &cfg.out_dir().join(format!("{}.resolved.cfg", command.name())),
        &hash,
        &cfg.to_text(),
    )?;
    let ctx = Ctx { cfg, hash };
    match command {
        Command::Synth => ctx.synth(),
        Command::InitBackbone => ctx.init_backbone(),
        Command::Train => ctx.train(),
        Command::Eval => ctx.eval(),
        Command::Attribute => ctx.attribute(),
        Command::Spectrum => ctx.spectrum(),
        Command::Robust => ctx.robust(),
        Command::Export => ctx.export(),
        Command::Count => ctx.count(),
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    hash: String,
}

fn non_empty(m: Manifest) -> CliResult<Manifest> {
    if m.is_empty() {
        return Err(Error::EmptyManifest.into());
    }
    Ok(m)
}

fn fakes_only(m: &Manifest) -> Manifest {
    m.with_records(m.records.iter().filter(|r| r.label == Label::Fake).cloned().collect())
}

fn train_log_text(log: &TrainLog) -> String {
    let mut s = format!("mode\t{}\n", log.mode);
    let updated: Vec<String> = log.updated.iter().map(|(n, c)| format!("{n}:{c}")).collect();
    let _ = writeln!(s, "updated\t{}", updated.join(","));
    let _ = writeln!(s, "updated_scalars\t{}", log.updated_scalars());
    let _ = writeln!(s, "steps\t{}", log.steps);
    let _ = writeln!(s, "initial_loss\t{:.9}", log.initial_loss);
    let _ = writeln!(s, "final_loss\t{:.9}", log.final_loss);
    for (e, l) in log.epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "epoch\t{}\t{l:.9}", e + 1);
    }
    if let Some(o) = log.outcome {
        let _ = writeln!(s, "outcome\t{o}");
    }
    s
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir().join(name)
    }

    fn backbone(&self, vocab: &Vocab) -> CliResult<BackboneParams> {
        let bb = BackboneParams::load(&self.cfg.path("backbone", BACKBONE_FILE))?;
        if bb.config.vocab_size != vocab.len() {
            return Err(CliError::Config(format!(
                "backbone expects a vocabulary of {} tokens, the configured one has {}",
                bb.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(bb)
    }

    fn train_manifest(&self) -> CliResult<Manifest> {
        non_empty(Manifest::load(&self.cfg.path("manifest", SynthCorpus::TRAIN_MANIFEST))?)
    }

    fn test_manifest(&self) -> CliResult<Manifest> {
        non_empty(Manifest::load(&self.cfg.path("test_manifest", SynthCorpus::TEST_MANIFEST))?)
    }

    fn load_model(&self, vocab: &Vocab) -> CliResult<(Model, TrainConfig)> {
        Ok(Model::load(&self.cfg.path("state", STATE_FILE), vocab)?)
    }

    fn save_model(&self, model: &Model, config: &TrainConfig, path: &Path) -> CliResult<()> {
        write_atomic(path, &model.to_bytes()?)?;
        write_report(&sidecar_path(path), &self.hash, &config.to_kv())
    }

    fn save_manifest(&self, m: &Manifest, path: &Path) -> CliResult<()> {
        let mut m = m.clone();
        m.comments.insert(0, (0, format!("# config_hash={}", self.hash)));
        write_atomic(path, m.to_text().as_bytes())
    }

    fn synth(&self) -> CliResult<String> {
        let spec = self.cfg.synthetic_spec()?;
        let out = self.cfg.out_dir();
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let staging = tempfile::tempdir_in(&out).map_err(|e| CliError::io(&out, e))?;
        let corpus = synth_generate(&spec, staging.path())?;
        for split in ["train", "test"] {
            let dest = out.join(split);
            if dest.exists() {
                std::fs::remove_dir_all(&dest).map_err(|e| CliError::io(&dest, e))?;
            }
            std::fs::rename(staging.path().join(split), &dest).map_err(|e| CliError::io(&dest, e))?;
        }
        self.save_manifest(&corpus.train, &out.join(SynthCorpus::TRAIN_MANIFEST))?;
        self.save_manifest(&corpus.test, &out.join(SynthCorpus::TEST_MANIFEST))?;
        Ok(format!(
            "wrote {} train and {} test records under {}",
            corpus.train.len(),
            corpus.test.len(),
            out.display()
        ))
    }

    fn init_backbone(&self) -> CliResult<String> {
        let vocab = self.cfg.vocab()?;
        let config = self.cfg.backbone_config(&vocab)?;
        let bb = BackboneParams::init_random(&config, self.cfg.seed()?)?;
        let path = self.cfg.path("backbone", BACKBONE_FILE);
        write_atomic(&path, &bb.to_bytes()?)?;
        Ok(format!(
            "wrote {} ({} parameters, hash {})",
            path.display(),
            bb.param_count(),
            bb.content_hash()
        ))
    }

    fn train(&self) -> CliResult<String> {
        let vocab = self.cfg.vocab()?;
        let config = self.cfg.train_config()?;
        let bb = self.backbone(&vocab)?;
        let mut manifest = self.train_manifest()?;
        let n = self.cfg.fewshot()?;
        if n > 0 {
            manifest = fewshot_sample(&manifest, n, config.seed)?;
        }
        let (model, log) = train(&config, &bb, &vocab, &manifest)?;
        let path = self.cfg.path("state", STATE_FILE);
        self.save_model(&model, &config, &path)?;
        write_report(&self.out(TRAIN_LOG), &self.hash, &train_log_text(&log))?;
        Ok(format!(
            "trained {} on {} records: loss {:.6} -> {:.6}, state {}",
            config.mode,
            manifest.len(),
            log.initial_loss,
            log.final_loss,
            path.display()
        ))
    }

    fn eval(&self) -> CliResult<String> {
        let vocab = self.cfg.vocab()?;
        let manifest = self.test_manifest()?;
        let bb = self.backbone(&vocab)?;
        let (model, config) = self.load_model(&vocab)?;
        let x = extract_features(&bb, &manifest, config.variant)?;
        let samples = scored_samples(&manifest, &model.predict_scores(&bb, &x)?)?;
        let report = evaluate(&samples, &self.cfg.groups()?)?;
        write_report(&self.out(EVAL_REPORT), &self.hash, &report.to_text())?;
        if let Some(tag) = self.cfg.tag() {
            let mut body = String::new();
            for (present, name) in [(true, "with"), (false, "without")] {
                match tag_subset_eval(&samples, tag, present) {
                    Ok((ap, acc)) => {
                        let _ = writeln!(body, "{tag}\t{name}\t{ap:.6}\t{acc:.6}");
                    }
                    Err(Error::UndefinedMetric(_)) => {
                        let _ = writeln!(body, "{tag}\t{name}\tNA\tNA");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            write_report(&self.out(TAG_REPORT), &self.hash, &body)?;
        }
        Ok(format!("mAP {:.6}, overall accuracy {:.6}", report.map, report.overall_accuracy))
    }

    fn attribute(&self) -> CliResult<String> {
        let vocab = self.cfg.vocab()?;
        let train_set = non_empty(fakes_only(&self.train_manifest()?))?;
        let test_set = non_empty(fakes_only(&self.test_manifest()?))?;
        let classes = train_set.generators();
        if classes.len() < 2 {
            return Err(CliError::Config("attribution needs at least two generators".into()));
        }
        let config = TrainConfig {
            classes: classes.clone(),
            ..self.cfg.train_config()?
        };
        let bb = self.backbone(&vocab)?;
        let (model, _) = train(&config, &bb, &vocab, &train_set)?;
        let truth = test_set
            .records
            .iter()
            .map(|r: &Record| {
                classes
                    .iter()
                    .position(|c| *c == r.generator)
                    .ok_or_else(|| CliError::Config(format!("test generator `{}` was not trained", r.generator)))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let p = model.predict_proba(&bb, &extract_features(&bb, &test_set, config.variant)?)?;
        let predicted: Vec<usize> = (0..test_set.len()).map(|i| argmax(p.row(i))).collect();
        let m = confusion_matrix(&classes, &truth, &predicted)?;
        let (exact, family) = attribution_metrics(&m, &train_set.family_map())?;
        write_report(&self.out(CONFUSION_FILE), &self.hash, &m.to_text())?;
        write_report(
            &self.out(ATTRIBUTION_FILE),
            &self.hash,
            &format!("exact\t{exact:.6}\nfamily\t{family:.6}\n"),
        )?;
        Ok(format!("exact {exact:.6}, family {family:.6}"))
    }

    fn spectrum(&self) -> CliResult<String> {
        let manifest = self.train_manifest()?;
        let images = load_images(&manifest)?;
        let mut sets = vec![("real".to_string(), None)];
        sets.extend(manifest.generators().into_iter().map(|g| (g.clone(), Some(g))));
        let mut spectra = String::new();
        let mut spikes = String::new();
        let mut real_upper = None;
        let mut lines = Vec::new();
        for (name, generator) in sets {
            let members: Vec<_> = manifest
                .records
                .iter()
                .zip(&images)
                .filter(|(r, _)| match &generator {
                    None => r.label == Label::Real,
                    Some(g) => r.generator == *g,
                })
                .map(|(_, img)| img.clone())
                .collect();
            if members.is_empty() {
                continue;
            }
            let s = dataset_mean_spectrum(&members)?;
            for line in s.to_text().lines() {
                let _ = writeln!(spectra, "{name}\t{line}");
            }
            let found = detect_spikes(&s);
            let upper = s.upper_third_mean();
            let reference = *real_upper.get_or_insert(upper);
            let list = if found.is_empty() {
                "-".to_string()
            } else {
                found.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(spikes, "{name}\t{list}\t{upper:.6e}\t{:.6}", upper / reference);
            lines.push(format!("{name}: spikes {list}"));
        }
        write_report(&self.out(SPECTRUM_FILE), &self.hash, &spectra)?;
        write_report(&self.out(SPIKES_FILE), &self.hash, &spikes)?;
        Ok(lines.join("; "))
    }

    fn robust(&self) -> CliResult<String> {
        let vocab = self.cfg.vocab()?;
        let manifest = self.test_manifest()?;
        let bb = self.backbone(&vocab)?;
        let (model, config) = self.load_model(&vocab)?;
        let images = load_images(&manifest)?;
        let rows = robustness_sweep(
            &model,
            &bb,
            config.variant,
            &manifest,
            &images,
            &self.cfg.perturbations()?,
            &self.cfg.groups()?,
        )?;
        write_report(&self.out(ROBUST_FILE), &self.hash, &curve_to_text(&rows))?;
        Ok(format!("{} perturbation settings", rows.len()))
    }

    fn export(&self) -> CliResult<String> {
        let vocab = self.cfg.vocab()?;
        let manifest = self.test_manifest()?;
        let bb = self.backbone(&vocab)?;
        let stage = self.cfg.export_stage()?;
        let (model, variant) = match stage {
            ExportStage::RawFeature => (None, self.cfg.variant()?),
            ExportStage::PostAdapter => {
                let (m, c) = self.load_model(&vocab)?;
                (Some(m), c.variant)
            }
        };
        let x = encode_images(&bb, &load_images(&manifest)?, variant)?;
        let v = stage_features(model.as_ref(), &x, stage)?;
        write_report(&self.out(EXPORT_FILE), &self.hash, &export_embeddings(&manifest, &v)?)?;
        Ok(format!("{} {stage} vectors of width {}", manifest.len(), v.shape()[1]))
    }

    fn count(&self) -> CliResult<String> {
        let vocab = self.cfg.vocab()?;
        let config = self.cfg.train_config()?;
        let bb = self.cfg.backbone_config(&vocab)?;
        let c = count_params(&config, &bb);
        let body = format!(
            "mode\t{}\nvariant\t{}\ntrainable\t{}\nbackbone\t{}\ntotal\t{}\nratio\t{:.9}\n",
            config.mode,
            config.variant,
            c.trainable,
            bb.param_count(),
            c.total,
            c.ratio
        );
        write_report(&self.out(COUNT_FILE), &self.hash, &body)?;
        Ok(format!(
            "{} trainable of {} total ({:.4}%)",
            c.trainable,
            c.total,
            100.0 * c.ratio
        ))
    }
}
