use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::{ap_and_accuracy, ScoredSample};
use crate::data::Family;
use crate::error::{Error, Result};

/// Metrics for one test set: all real samples plus one generator's fakes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRow {
    pub name: String,
    pub family: Family,
    pub ap: f64,
    pub accuracy: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyRow {
    pub family: Family,
    pub ap: f64,
    pub accuracy: f64,
    pub members: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Post-grouping dataset rows, sorted by name.
    pub datasets: Vec<DatasetRow>,
    /// Only families with at least one member, in `Family::AGGREGATED` order.
    pub families: Vec<FamilyRow>,
    pub map: f64,
    /// Mean of the dataset accuracies.
    pub overall_accuracy: f64,
    pub n_samples: usize,
}

/// `group name → member dataset names`; groups must be disjoint.
pub type SubconfigGroups = Vec<(String, Vec<String>)>;

/// Per-generator rows (each against every real sample), then [`aggregate`].
pub fn evaluate(samples: &[ScoredSample], groups: &SubconfigGroups) -> Result<EvalReport> {
    let reals: Vec<&ScoredSample> = samples.iter().filter(|s| !s.is_fake()).collect();
    let mut fakes: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    let mut families: BTreeMap<&str, Family> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.is_fake()) {
        let fam = s
            .family
            .ok_or_else(|| Error::Data(format!("fake sample from `{}` has no family", s.generator)))?;
        if let Some(prev) = families.insert(&s.generator, fam) {
            if prev != fam {
                return Err(Error::Data(format!("generator `{}` has two families", s.generator)));
            }
        }
        fakes.entry(&s.generator).or_default().push(s);
    }
    if reals.is_empty() || fakes.is_empty() {
        return Err(Error::UndefinedMetric("evaluation needs real and fake samples".into()));
    }
    let rows = fakes
        .into_iter()
        .map(|(name, f)| {
            let mut set = reals.clone();
            set.extend(f.iter().copied());
            let (ap, accuracy) = ap_and_accuracy(&set)?;
            Ok(DatasetRow {
                name: name.to_string(),
                family: families[name],
                ap,
                accuracy,
                n_real: reals.len(),
                n_fake: f.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = aggregate(&rows, groups)?;
    report.n_samples = samples.len();
    Ok(report)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Sub-config averaging, then family means and mAP over the grouped list.
pub fn aggregate(rows: &[DatasetRow], groups: &SubconfigGroups) -> Result<EvalReport> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for (g, members) in groups {
        for m in members {
            if owner.insert(m, g).is_some() {
                return Err(Error::InvalidConfig(format!("`{m}` belongs to more than one sub-config group")));
            }
        }
    }
    let mut names = BTreeSet::new();
    for r in rows {
        if !names.insert(r.name.as_str()) {
            return Err(Error::Data(format!("duplicate dataset `{}`", r.name)));
        }
    }
    let mut grouped: BTreeMap<String, Vec<&DatasetRow>> = BTreeMap::new();
    for r in rows {
        let key = owner.get(r.name.as_str()).copied().unwrap_or(&r.name);
        grouped.entry(key.to_string()).or_default().push(r);
    }
    let datasets = grouped
        .into_iter()
        .map(|(name, members)| {
            let family = members[0].family;
            if members.iter().any(|m| m.family != family) {
                return Err(Error::Data(format!("group `{name}` mixes families")));
            }
            Ok(DatasetRow {
                name,
                family,
                ap: mean(members.iter().map(|m| m.ap)),
                accuracy: mean(members.iter().map(|m| m.accuracy)),
                n_real: members.iter().map(|m| m.n_real).max().unwrap_or(0),
                n_fake: members.iter().map(|m| m.n_fake).sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if datasets.is_empty() {
        return Err(Error::UndefinedMetric("no datasets to aggregate".into()));
    }
    let families = Family::AGGREGATED
        .iter()
        .filter_map(|&f| {
            let members: Vec<&DatasetRow> = datasets.iter().filter(|d| d.family == f).collect();
            (!members.is_empty()).then(|| FamilyRow {
                family: f,
                ap: mean(members.iter().map(|m| m.ap)),
                accuracy: mean(members.iter().map(|m| m.accuracy)),
                members: members.len(),
            })
        })
        .collect();
    Ok(EvalReport {
        map: mean(datasets.iter().map(|d| d.ap)),
        overall_accuracy: mean(datasets.iter().map(|d| d.accuracy)),
        n_samples: datasets.iter().map(|d| d.n_fake).sum::<usize>() + datasets.iter().map(|d| d.n_real).max().unwrap_or(0),
        datasets,
        families,
    })
}

impl EvalReport {
    /// Tab-separated report body with six decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.datasets {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", d.name, d.ap, d.accuracy);
        }
        for f in &self.families {
            let _ = writeln!(out, "family:{}\t{:.6}\t{:.6}", f.family, f.ap, f.accuracy);
        }
        let _ = writeln!(out, "mAP\t{:.6}", self.map);
        let _ = writeln!(out, "overall_acc\t{:.6}", self.overall_accuracy);
        out
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetRow> {
        self.datasets.iter().find(|d| d.name == name)
    }
}

/// Parses `group=a,b,c;other=d,e`.
pub fn parse_groups(spec: &str) -> Result<SubconfigGroups> {
    spec.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|part| {
            let (name, members) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("sub-config group `{part}` lacks `=`")))?;
            let members: Vec<String> = members.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect();
            if members.is_empty() {
                return Err(Error::InvalidConfig(format!("sub-config group `{name}` is empty")));
            }
            Ok((name.trim().to_string(), members))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, family: Family, ap: f64, acc: f64) -> DatasetRow {
        DatasetRow {
            name: name.into(),
            family,
            ap,
            accuracy: acc,
            n_real: 10,
            n_fake: 10,
        }
    }

    #[test]
    fn one_dataset_per_family() {
        let rows = vec![
            row("a", Family::Gan, 0.9, 0.8),
            row("b", Family::Diffusion, 0.7, 0.6),
            row("c", Family::Commercial, 0.5, 0.4),
        ];
        let r = aggregate(&rows, &vec![]).unwrap();
        assert_eq!(r.families.len(), 3);
        for (f, d) in r.families.iter().zip(&rows) {
            assert_eq!((f.ap, f.accuracy), (d.ap, d.accuracy));
        }
        assert!((r.map - 0.7).abs() < 1e-15);
    }

    #[test]
    fn subconfigs_count_once() {
        let rows = vec![
            row("glide_50_27", Family::Diffusion, 0.9, 0.9),
            row("glide_100_10", Family::Diffusion, 0.8, 0.8),
            row("glide_100_27", Family::Diffusion, 0.7, 0.7),
            row("ldm", Family::Diffusion, 0.4, 0.4),
            row("dalle", Family::Other, 0.6, 0.6),
        ];
        let groups = parse_groups("glide=glide_50_27,glide_100_10,glide_100_27").unwrap();
        let r = aggregate(&rows, &groups).unwrap();
        assert!((r.dataset("glide").unwrap().ap - 0.8).abs() < 1e-12);
        assert_eq!(r.datasets.len(), 3);
        assert_eq!(r.families.len(), 1);
        assert!((r.families[0].ap - 0.6).abs() < 1e-12);
        // Other is outside the family rows but inside mAP.
        assert!((r.map - (0.8 + 0.4 + 0.6) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_groups_rejected() {
        let g = parse_groups("x=a,b;y=b").unwrap();
        assert!(aggregate(&[row("a", Family::Gan, 1.0, 1.0)], &g).is_err());
        assert!(parse_groups("x").is_err());
    }

    #[test]
    fn report_text_layout() {
        let r = aggregate(&[row("a", Family::Gan, 0.5, 0.25)], &vec![]).unwrap();
        assert_eq!(
            r.to_text(),
            "a\t0.500000\t0.250000\nfamily:GAN\t0.500000\t0.250000\nmAP\t0.500000\noverall_acc\t0.250000\n"
        );
    }
}
