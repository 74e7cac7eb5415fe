use std::collections::HashMap;
use std::fmt::Write;

use crate::data::Family;
use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion_matrix(classes: &[String], truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::dim("truth and prediction lists differ in length"));
    }
    let c = classes.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= c || p >= c {
            return Err(Error::Data(format!("class index {} outside {c} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn exact_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("empty confusion matrix".into()));
        }
        let trace: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        Ok(trace as f64 / total as f64)
    }

    /// Header of class names, then one row of counts per true class.
    pub fn to_text(&self) -> String {
        let mut out = self.classes.join("\t");
        out.push('\n');
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", cells.join("\t"));
        }
        out
    }
}

/// `(exact, family)` accuracy; a prediction is family-correct when both
/// classes map to the same family.
pub fn attribution_metrics(m: &ConfusionMatrix, families: &[(String, Family)]) -> Result<(f64, f64)> {
    let map: HashMap<&str, Family> = families.iter().map(|(g, f)| (g.as_str(), *f)).collect();
    let fam = m
        .classes
        .iter()
        .map(|c| {
            map.get(c.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("class `{c}` has no family")))
        })
        .collect::<Result<Vec<_>>>()?;
    let exact = m.exact_accuracy()?;
    let mut same = 0u64;
    for (t, row) in m.counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            if fam[t] == fam[p] {
                same += n;
            }
        }
    }
    Ok((exact, same as f64 / m.total() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn toy_matrix_exact() {
        let m = ConfusionMatrix {
            classes: names(3),
            counts: vec![vec![2, 1, 0], vec![0, 3, 0], vec![1, 0, 3]],
        };
        assert!((m.exact_accuracy().unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(m.to_text(), "g0\tg1\tg2\n2\t1\t0\n0\t3\t0\n1\t0\t3\n");
    }

    #[test]
    fn identity_and_intra_family() {
        let fams = vec![
            ("g0".to_string(), Family::Gan),
            ("g1".to_string(), Family::Gan),
            ("g2".to_string(), Family::Diffusion),
        ];
        let m = confusion_matrix(&names(3), &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(attribution_metrics(&m, &fams).unwrap(), (1.0, 1.0));
        let m = confusion_matrix(&names(3), &[0, 1], &[1, 0]).unwrap();
        assert_eq!(attribution_metrics(&m, &fams).unwrap(), (0.0, 1.0));
        assert!(attribution_metrics(&m, &fams[..2]).is_err());
        assert!(confusion_matrix(&names(3), &[3], &[0]).is_err());
    }

    #[test]
    fn row_sums_are_class_counts() {
        let m = confusion_matrix(&names(2), &[0, 0, 1, 0], &[1, 0, 1, 1]).unwrap();
        assert_eq!(m.counts[0].iter().sum::<u64>(), 3);
        assert_eq!(m.counts[1].iter().sum::<u64>(), 1);
    }
}
