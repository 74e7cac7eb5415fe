//! Dataset manifests: `relative_path<TAB>label<TAB>generator<TAB>family<TAB>tags`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const REAL_GENERATOR: &str = "none";
const NO_FAMILY: &str = "none";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index: 0 = Real, 1 = Fake.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Real
        } else {
            Label::Fake
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Gan,
    Diffusion,
    Commercial,
    Other,
}

impl Family {
    /// Families that get their own aggregate row; `Other` only feeds mAP.
    pub const AGGREGATED: [Family; 3] = [Family::Gan, Family::Diffusion, Family::Commercial];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gan => "GAN",
            Family::Diffusion => "Diffusion",
            Family::Commercial => "Commercial",
            Family::Other => "Other",
        })
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "GAN" => Ok(Family::Gan),
            "Diffusion" => Ok(Family::Diffusion),
            "Commercial" => Ok(Family::Commercial),
            "Other" => Ok(Family::Other),
            other => Err(format!("unknown family `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub relative_path: String,
    pub label: Label,
    /// `"none"` for real images.
    pub generator: String,
    /// `None` exactly for real images.
    pub family: Option<Family>,
    pub tags: Vec<String>,
}

impl Record {
    pub fn real(path: impl Into<String>, tags: Vec<String>) -> Self {
        Self {
            relative_path: path.into(),
            label: Label::Real,
            generator: REAL_GENERATOR.into(),
            family: None,
            tags,
        }
    }

    pub fn fake(path: impl Into<String>, generator: impl Into<String>, family: Family, tags: Vec<String>) -> Self {
        Self {
            relative_path: path.into(),
            label: Label::Fake,
            generator: generator.into(),
            family: Some(family),
            tags,
        }
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.relative_path,
            self.label,
            self.generator,
            self.family.map_or(NO_FAMILY.to_string(), |f| f.to_string()),
            self.tags.join(",")
        )
    }
}

/// Image index rooted at the manifest's directory. Comment lines are kept
/// with their position so that a parse/serialize cycle is byte-identical.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
    /// `(records preceding the comment, comment text including '#')`.
    pub comments: Vec<(usize, String)>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<Record>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
            comments: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path_of(&self, record: &Record) -> PathBuf {
        self.root.join(&record.relative_path)
    }

    /// Same root and leading comments, different records.
    pub fn with_records(&self, records: Vec<Record>) -> Self {
        Self {
            root: self.root.clone(),
            records,
            comments: self.comments.iter().filter(|(p, _)| *p == 0).cloned().collect(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Generator → family map, in order of first appearance.
    pub fn family_map(&self) -> Vec<(String, Family)> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter_map(|r| r.family.map(|f| (r.generator.clone(), f)))
            .filter(|(g, _)| seen.insert(g.clone()))
            .collect()
    }

    /// Distinct fake generators in order of first appearance.
    pub fn generators(&self) -> Vec<String> {
        self.family_map().into_iter().map(|(g, _)| g).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths = HashSet::new();
        let mut families: HashMap<&str, Family> = HashMap::new();
        for r in &self.records {
            check_record(r).map_err(Error::Data)?;
            if !paths.insert(r.relative_path.as_str()) {
                return Err(Error::Data(format!("duplicate path `{}`", r.relative_path)));
            }
            if let Some(f) = r.family {
                if let Some(prev) = families.insert(r.generator.as_str(), f) {
                    if prev != f {
                        return Err(Error::Data(format!(
                            "generator `{}` assigned to both {prev} and {f}",
                            r.generator
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>, origin: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut m = Manifest {
            root: root.into(),
            ..Default::default()
        };
        if body.is_empty() {
            return Ok(m);
        }
        let mut paths = HashSet::new();
        let mut families: HashMap<String, Family> = HashMap::new();
        for (i, line) in body.split('\n').enumerate() {
            let n = i + 1;
            if line.starts_with('#') {
                m.comments.push((m.records.len(), line.to_string()));
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(perr(n, format!("expected 5 tab-separated fields, found {}", fields.len())));
            }
            let label: Label = fields[1].parse().map_err(|e| perr(n, e))?;
            let family = match fields[3] {
                NO_FAMILY => None,
                f => Some(f.parse::<Family>().map_err(|e| perr(n, e))?),
            };
            let tags = if fields[4].is_empty() {
                Vec::new()
            } else {
                fields[4].split(',').map(str::to_string).collect()
            };
            let r = Record {
                relative_path: fields[0].to_string(),
                label,
                generator: fields[2].to_string(),
                family,
                tags,
            };
            check_record(&r).map_err(|e| perr(n, e))?;
            if !paths.insert(r.relative_path.clone()) {
                return Err(perr(n, format!("duplicate path `{}`", r.relative_path)));
            }
            if let Some(f) = r.family {
                if let Some(prev) = families.insert(r.generator.clone(), f) {
                    if prev != f {
                        return Err(perr(n, format!("generator `{}` changes family", r.generator)));
                    }
                }
            }
            m.records.push(r);
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut comments = self.comments.iter().peekable();
        for (i, r) in self.records.iter().enumerate() {
            while let Some((_, c)) = comments.next_if(|(p, _)| *p <= i) {
                out.push_str(c);
                out.push('\n');
            }
            out.push_str(&r.to_line());
            out.push('\n');
        }
        for (_, c) in comments {
            out.push_str(c);
            out.push('\n');
        }
        out
    }

    /// Loads a manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn check_record(r: &Record) -> std::result::Result<(), String> {
    if r.relative_path.is_empty() {
        return Err("empty path".into());
    }
    if r.generator.is_empty() {
        return Err("empty generator".into());
    }
    let is_real = r.label == Label::Real;
    if is_real != (r.generator == REAL_GENERATOR) {
        return Err(format!(
            "label `{}` inconsistent with generator `{}` (generator is `none` iff real)",
            r.label, r.generator
        ));
    }
    if is_real != r.family.is_none() {
        return Err(format!("label `{}` inconsistent with family", r.label));
    }
    if r.tags.iter().any(|t| t.is_empty() || t.contains([',', '\t'])) {
        return Err("malformed tag list".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "# config_hash=abc\n\
        train/real/00000.pgm\treal\tnone\tnone\tindoor\n\
        train/periodic_a/00000.pgm\tfake\tperiodic_a\tGAN\toutdoor,person\n\
        # trailing section\n\
        train/broadband_a/00000.pgm\tfake\tbroadband_a\tDiffusion\t\n";

    #[test]
    fn fixture_round_trips() {
        let m = Manifest::parse(FIXTURE, "/data", "fixture").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records[1].tags, vec!["outdoor", "person"]);
        assert!(m.records[2].tags.is_empty());
        assert_eq!(m.to_text(), FIXTURE);
        assert_eq!(m.generators(), vec!["periodic_a", "broadband_a"]);
    }

    #[test]
    fn header_only_is_empty() {
        let m = Manifest::parse("# just a header\n", ".", "h").unwrap();
        assert!(m.is_empty());
        assert!(Manifest::parse("", ".", "h").unwrap().is_empty());
    }

    #[test]
    fn short_line_names_line_number() {
        let text = "# h\na.pgm\treal\n";
        let err = Manifest::parse(text, ".", "m.tsv").unwrap_err().to_string();
        assert!(err.starts_with("m.tsv:2:"), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_unknown_labels() {
        let dup = "a.pgm\treal\tnone\tnone\t\na.pgm\treal\tnone\tnone\t\n";
        assert!(Manifest::parse(dup, ".", "m").unwrap_err().to_string().contains("duplicate"));
        let bad = "a.pgm\tsynthetic\tx\tGAN\t\n";
        assert!(Manifest::parse(bad, ".", "m").unwrap_err().to_string().contains("unknown label"));
        let inconsistent = "a.pgm\treal\tprogan\tGAN\t\n";
        assert!(Manifest::parse(inconsistent, ".", "m").is_err());
        let family_clash = "a.pgm\tfake\tg\tGAN\t\nb.pgm\tfake\tg\tDiffusion\t\n";
        assert!(Manifest::parse(family_clash, ".", "m").is_err());
    }

    #[test]
    fn blank_lines_are_malformed() {
        assert!(Manifest::parse("a.pgm\treal\tnone\tnone\t\n\n", ".", "m").is_err());
    }
}
