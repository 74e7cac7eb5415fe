use crate::backbone::{BackboneParams, Variant};
use crate::data::{load_image, Label, Manifest, Record};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Loads every manifest image in record order.
pub fn load_images(manifest: &Manifest) -> Result<Vec<Tensor>> {
    par::map(&manifest.records, |r| load_image(&manifest.path_of(r)))
        .into_iter()
        .collect()
}

/// Tap-point features for a batch of images, one row per image.
pub fn encode_images(backbone: &BackboneParams, images: &[Tensor], variant: Variant) -> Result<Tensor> {
    let width = backbone.config.tap_width(variant);
    let rows: Vec<Tensor> = par::map(images, |img| backbone.vision_encode(img, variant))
        .into_iter()
        .collect::<Result<_>>()?;
    Tensor::stack_rows(rows.iter().map(Tensor::data), width)
}

/// Frozen features for every record of `manifest`.
pub fn extract_features(backbone: &BackboneParams, manifest: &Manifest, variant: Variant) -> Result<Tensor> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    encode_images(backbone, &load_images(manifest)?, variant)
}

/// Class index of one record: its generator when that is a class name,
/// otherwise its real/fake label.
pub fn record_class(record: &Record, classes: &[String]) -> Result<usize> {
    let by_generator = classes.iter().position(|c| *c == record.generator);
    let by_label = || classes.iter().position(|c| *c == record.label.to_string());
    by_generator.or_else(by_label).ok_or_else(|| {
        Error::Data(format!(
            "record `{}` ({}, {}) matches none of the classes {:?}",
            record.relative_path, record.label, record.generator, classes
        ))
    })
}

/// Class index per record; every class must occur at least once.
pub fn class_targets(manifest: &Manifest, classes: &[String]) -> Result<Vec<usize>> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let labels = manifest
        .records
        .iter()
        .map(|r| record_class(r, classes))
        .collect::<Result<Vec<_>>>()?;
    for (c, name) in classes.iter().enumerate() {
        if !labels.contains(&c) {
            return Err(Error::Data(format!("no training samples for class `{name}`")));
        }
    }
    Ok(labels)
}

/// Binary ground truth (1 = fake) in record order.
pub fn binary_labels(manifest: &Manifest) -> Vec<bool> {
    manifest.records.iter().map(|r| r.label == Label::Fake).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Family;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn binary_and_generator_targets() {
        let m = Manifest::new(
            ".",
            vec![
                Record::real("r.pgm", vec![]),
                Record::fake("a.pgm", "periodic_a", Family::Gan, vec![]),
                Record::fake("b.pgm", "broadband_a", Family::Diffusion, vec![]),
            ],
        )
        .unwrap();
        assert_eq!(class_targets(&m, &names(&["real", "fake"])).unwrap(), vec![0, 1, 1]);
        let fakes = m.with_records(m.records[1..].to_vec());
        let gens = names(&["broadband_a", "periodic_a"]);
        assert_eq!(class_targets(&fakes, &gens).unwrap(), vec![1, 0]);
        assert!(class_targets(&m, &gens).is_err());
        let only_real = m.with_records(m.records[..1].to_vec());
        assert!(class_targets(&only_real, &names(&["real", "fake"])).is_err());
    }
}
