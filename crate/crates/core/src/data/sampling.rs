//! Seeded stratified subsampling and train/test splits.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Prng;

use super::manifest::{Label, Manifest};

/// Draws `n_per_class` records of each label without replacement; the
/// selection keeps manifest order.
pub fn fewshot_sample(manifest: &Manifest, n_per_class: usize, seed: u64) -> Result<Manifest> {
    let mut rng = Prng::new(seed);
    let mut keep = vec![false; manifest.len()];
    for label in [Label::Real, Label::Fake] {
        let mut idx: Vec<usize> = (0..manifest.len())
            .filter(|&i| manifest.records[i].label == label)
            .collect();
        if idx.len() < n_per_class {
            return Err(Error::Data(format!(
                "need {n_per_class} {label} records, manifest has {}",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        for &i in &idx[..n_per_class] {
            keep[i] = true;
        }
    }
    let records = manifest
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(manifest.with_records(records))
}

/// Stratified split per `(label, generator)`; each stratum contributes
/// `round(fraction·n)` records to train, and both sides must be non-empty.
pub fn split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut strata: BTreeMap<(Label, &str), Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        strata.entry((r.label, r.generator.as_str())).or_default().push(i);
    }
    let mut rng = Prng::new(seed);
    let mut to_train = vec![false; manifest.len()];
    for ((label, generator), mut idx) in strata {
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        if n_train == 0 || n_train == idx.len() {
            return Err(Error::Data(format!(
                "stratum ({label}, {generator}) with {} records leaves an empty side",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        for &i in &idx[..n_train] {
            to_train[i] = true;
        }
    }
    let pick = |want: bool| {
        manifest
            .records
            .iter()
            .zip(&to_train)
            .filter(|(_, t)| **t == want)
            .map(|(r, _)| r.clone())
            .collect()
    };
    Ok((manifest.with_records(pick(true)), manifest.with_records(pick(false))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{Family, Record};
    use std::collections::HashSet;

    fn manifest(n_real: usize, n_fake: usize) -> Manifest {
        let mut r: Vec<Record> = (0..n_real).map(|i| Record::real(format!("r{i}"), vec![])).collect();
        r.extend((0..n_fake).map(|i| Record::fake(format!("f{i}"), "g", Family::Gan, vec![])));
        Manifest::new(".", r).unwrap()
    }

    #[test]
    fn fewshot_counts_and_determinism() {
        let m = manifest(50, 40);
        let s = fewshot_sample(&m, 10, 1).unwrap();
        assert_eq!(s.count(Label::Real), 10);
        assert_eq!(s.count(Label::Fake), 10);
        assert_eq!(s, fewshot_sample(&m, 10, 1).unwrap());
        assert_ne!(s, fewshot_sample(&m, 10, 2).unwrap());
        assert!(fewshot_sample(&m, 41, 1).is_err());
    }

    #[test]
    fn fewshot_full_class_is_identity() {
        let m = manifest(5, 5);
        assert_eq!(fewshot_sample(&m, 5, 9).unwrap().records, m.records);
    }

    #[test]
    fn fewshot_preserves_order() {
        let m = manifest(30, 30);
        let s = fewshot_sample(&m, 7, 4).unwrap();
        let pos: Vec<usize> = s
            .records
            .iter()
            .map(|r| m.records.iter().position(|x| x == r).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn split_two_record_strata() {
        let m = manifest(2, 2);
        let (a, b) = split(&m, 0.5, 0).unwrap();
        assert_eq!((a.count(Label::Real), a.count(Label::Fake)), (1, 1));
        assert_eq!((b.count(Label::Real), b.count(Label::Fake)), (1, 1));
    }

    #[test]
    fn split_partitions() {
        let m = manifest(17, 23);
        let (a, b) = split(&m, 0.7, 5).unwrap();
        let pa: HashSet<_> = a.records.iter().map(|r| r.relative_path.clone()).collect();
        let pb: HashSet<_> = b.records.iter().map(|r| r.relative_path.clone()).collect();
        assert!(pa.is_disjoint(&pb));
        assert_eq!(pa.len() + pb.len(), m.len());
        assert_eq!((a.clone(), b.clone()), split(&m, 0.7, 5).unwrap());
        assert!(split(&manifest(1, 2), 0.5, 0).is_err());
        assert!(split(&m, 1.0, 0).is_err());
    }
}
