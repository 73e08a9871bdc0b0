//! Data model for partially labeled attribute data.
//!
//! Each visual instance carries sparse positive/negative attribute sets; every
//! attribute outside both sets is unannotated. Labels are read as +1 / -1 / 0.

mod io;
mod synth;

pub use io::{load_dataset, write_dataset};
pub use synth::{generate_synthetic, SynthOutput, SyntheticSpec};

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Type-group tag for an attribute, used by the evaluation breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeType {
    Color,
    Material,
    Shape,
    Size,
    Texture,
    Action,
    State,
    Other,
}

impl AttributeType {
    pub const ALL: [AttributeType; 8] = [
        AttributeType::Color,
        AttributeType::Material,
        AttributeType::Shape,
        AttributeType::Size,
        AttributeType::Texture,
        AttributeType::Action,
        AttributeType::State,
        AttributeType::Other,
    ];

    /// Column header used in the report table.
    pub fn column_name(&self) -> &'static str {
        match self {
            AttributeType::Color => "Color",
            AttributeType::Material => "Material",
            AttributeType::Shape => "Shape",
            AttributeType::Size => "Size",
            AttributeType::Texture => "Texture",
            AttributeType::Action => "Action",
            AttributeType::State => "State",
            AttributeType::Other => "Others",
        }
    }
}

impl fmt::Display for AttributeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column_name())
    }
}

/// Annotation state of one (instance, attribute) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
    Unannotated,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
            Label::Unannotated => 0,
        }
    }
}

/// Ordered attribute vocabulary with one type-group tag per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeVocabulary {
    names: Vec<String>,
    types: Vec<AttributeType>,
}

impl AttributeVocabulary {
    pub fn new(names: Vec<String>, types: Vec<AttributeType>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Invariant("vocabulary must not be empty".into()));
        }
        if names.len() != types.len() {
            return Err(Error::Invariant(format!(
                "vocabulary has {} names but {} type tags",
                names.len(),
                types.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Invariant(format!("duplicate attribute name `{name}`")));
            }
        }
        Ok(Self { names, types })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, attr: usize) -> &str {
        &self.names[attr]
    }

    pub fn type_of(&self, attr: usize) -> AttributeType {
        self.types[attr]
    }

    pub fn types(&self) -> &[AttributeType] {
        &self.types
    }

    /// Name -> index lookup for ingestion hot paths.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect()
    }
}

/// One visual example: object category plus sparse attribute annotations and a
/// precomputed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub object_id: String,
    pub positives: BTreeSet<usize>,
    pub negatives: BTreeSet<usize>,
    pub feature: Vec<f32>,
}

impl Instance {
    /// Splits `{0..A-1}` into the annotated-positive, annotated-negative, and
    /// unannotated sets. Always a partition.
    pub fn partial_sets(
        &self,
        n_attributes: usize,
    ) -> (BTreeSet<usize>, BTreeSet<usize>, BTreeSet<usize>) {
        let unannotated = (0..n_attributes)
            .filter(|a| !self.positives.contains(a) && !self.negatives.contains(a))
            .collect();
        (self.positives.clone(), self.negatives.clone(), unannotated)
    }

    /// The unannotated set alone, without cloning the annotated sides.
    pub fn unannotated(&self, n_attributes: usize) -> BTreeSet<usize> {
        (0..n_attributes)
            .filter(|a| !self.positives.contains(a) && !self.negatives.contains(a))
            .collect()
    }

    pub fn n_annotated(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }
}

/// A validated collection of instances over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocab: AttributeVocabulary,
    objects: Vec<String>,
    instances: Vec<Instance>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(
        vocab: AttributeVocabulary,
        objects: Vec<String>,
        instances: Vec<Instance>,
        feature_dim: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Invariant("feature_dim must be >= 1".into()));
        }
        let mut seen_obj = BTreeSet::new();
        for o in &objects {
            if !seen_obj.insert(o.as_str()) {
                return Err(Error::Invariant(format!("duplicate object id `{o}`")));
            }
        }
        let n_attrs = vocab.len();
        let mut seen_ids = BTreeSet::new();
        for inst in &instances {
            if !seen_ids.insert(inst.id.as_str()) {
                return Err(Error::Invariant(format!(
                    "duplicate instance id `{}`",
                    inst.id
                )));
            }
            if !seen_obj.contains(inst.object_id.as_str()) {
                return Err(Error::Invariant(format!(
                    "instance `{}` references unknown object `{}`",
                    inst.id, inst.object_id
                )));
            }
            if let Some(&a) = inst.positives.iter().chain(&inst.negatives).find(|&&a| a >= n_attrs) {
                return Err(Error::Invariant(format!(
                    "instance `{}` references attribute index {a} >= {n_attrs}",
                    inst.id
                )));
            }
            if let Some(&a) = inst.positives.intersection(&inst.negatives).next() {
                return Err(Error::Invariant(format!(
                    "instance `{}` has attribute {a} annotated both positive and negative",
                    inst.id
                )));
            }
            if inst.feature.len() != feature_dim {
                return Err(Error::Invariant(format!(
                    "instance `{}` has feature dimension {} (dataset says {feature_dim})",
                    inst.id,
                    inst.feature.len()
                )));
            }
            if inst.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!(
                    "instance `{}` has a non-finite feature component",
                    inst.id
                )));
            }
        }
        Ok(Self {
            vocab,
            objects,
            instances,
            feature_dim,
        })
    }

    pub fn vocab(&self) -> &AttributeVocabulary {
        &self.vocab
    }

    pub fn n_attributes(&self) -> usize {
        self.vocab.len()
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Label of `instance` for attribute `a`: +1, -1, or 0 (unannotated).
    pub fn label_of(&self, instance: &Instance, a: usize) -> Result<Label> {
        if a >= self.vocab.len() {
            return Err(Error::Invariant(format!(
                "attribute index {a} out of range (A = {})",
                self.vocab.len()
            )));
        }
        Ok(if instance.positives.contains(&a) {
            Label::Positive
        } else if instance.negatives.contains(&a) {
            Label::Negative
        } else {
            Label::Unannotated
        })
    }
}

/// Drops each annotation independently with probability `1 - keep_rate`,
/// turning it unannotated. Annotation masking is i.i.d. per (instance,
/// attribute) pair.
pub fn mask_labels(full: &Dataset, keep_rate: f64, seed: u64) -> Result<Dataset> {
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::Config(format!(
            "keep_rate must be in (0, 1], got {keep_rate}"
        )));
    }
    let mut rng = rng::stream(seed, "mask-labels");
    use rand::Rng;
    let instances = full
        .instances
        .iter()
        .map(|inst| {
            let keep = |rng: &mut rand_chacha::ChaCha8Rng, set: &BTreeSet<usize>| {
                set.iter()
                    .filter(|_| rng.gen_bool(keep_rate))
                    .copied()
                    .collect::<BTreeSet<usize>>()
            };
            let positives = keep(&mut rng, &inst.positives);
            let negatives = keep(&mut rng, &inst.negatives);
            Instance {
                positives,
                negatives,
                ..inst.clone()
            }
        })
        .collect();
    Dataset::new(
        full.vocab.clone(),
        full.objects.clone(),
        instances,
        full.feature_dim,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_vocab(n: usize) -> AttributeVocabulary {
        AttributeVocabulary::new(
            (0..n).map(|i| format!("attr{i}")).collect(),
            (0..n).map(|i| AttributeType::ALL[i % 8]).collect(),
        )
        .unwrap()
    }

    fn inst(id: &str, object: &str, pos: &[usize], neg: &[usize], dim: usize) -> Instance {
        Instance {
            id: id.into(),
            object_id: object.into(),
            positives: pos.iter().copied().collect(),
            negatives: neg.iter().copied().collect(),
            feature: vec![0.0; dim],
        }
    }

    #[test]
    fn label_of_reads_plus_minus_zero() {
        let ds = Dataset::new(
            tiny_vocab(4),
            vec!["cat".into()],
            vec![inst("i0", "cat", &[0], &[2], 3)],
            3,
        )
        .unwrap();
        let i = &ds.instances()[0];
        assert_eq!(ds.label_of(i, 0).unwrap(), Label::Positive);
        assert_eq!(ds.label_of(i, 2).unwrap(), Label::Negative);
        assert_eq!(ds.label_of(i, 1).unwrap(), Label::Unannotated);
        assert!(ds.label_of(i, 4).is_err());
    }

    #[test]
    fn partial_sets_is_a_partition() {
        let i = inst("i0", "cat", &[0], &[2], 3);
        let (p, n, u) = i.partial_sets(4);
        assert_eq!(u, [1usize, 3].into_iter().collect());
        assert!(p.is_disjoint(&n) && p.is_disjoint(&u) && n.is_disjoint(&u));
        assert_eq!(p.len() + n.len() + u.len(), 4);
    }

    #[test]
    fn partial_sets_degenerate_cases() {
        let empty = inst("i0", "cat", &[], &[], 3);
        let (_, _, u) = empty.partial_sets(4);
        assert_eq!(u.len(), 4);

        let full = inst("i1", "cat", &[0, 1], &[2, 3], 3);
        let (_, _, u) = full.partial_sets(4);
        assert!(u.is_empty());
    }

    #[test]
    fn rejects_overlapping_annotations() {
        let err = Dataset::new(
            tiny_vocab(4),
            vec!["cat".into()],
            vec![inst("bad", "cat", &[1], &[1], 3)],
            3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_attribute() {
        let err = Dataset::new(
            tiny_vocab(2),
            vec!["cat".into()],
            vec![inst("i9", "cat", &[5], &[], 3)],
            3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("i9"), "{err}");
    }

    #[test]
    fn mask_keep_rate_one_is_identity() {
        let ds = Dataset::new(
            tiny_vocab(4),
            vec!["cat".into()],
            vec![inst("i0", "cat", &[0, 1], &[2], 3)],
            3,
        )
        .unwrap();
        let masked = mask_labels(&ds, 1.0, 99).unwrap();
        assert_eq!(masked, ds);
    }

    #[test]
    fn mask_rejects_out_of_range_rate() {
        let ds = Dataset::new(
            tiny_vocab(2),
            vec!["cat".into()],
            vec![inst("i0", "cat", &[0], &[], 1)],
            1,
        )
        .unwrap();
        assert!(mask_labels(&ds, 0.0, 1).is_err());
        assert!(mask_labels(&ds, 1.5, 1).is_err());
    }

    #[test]
    fn mask_near_zero_rate_drops_almost_everything() {
        let instances: Vec<Instance> = (0..100)
            .map(|i| inst(&format!("i{i}"), "cat", &[0, 1, 2, 3], &[4, 5, 6, 7], 2))
            .collect();
        let ds = Dataset::new(tiny_vocab(8), vec!["cat".into()], instances, 2).unwrap();
        let masked = mask_labels(&ds, 1e-6, 3).unwrap();
        let kept: usize = masked.instances().iter().map(Instance::n_annotated).sum();
        assert!(kept <= 1, "kept {kept} of 800 annotations at keep_rate 1e-6");
    }

    // Binomial oracle: 10,000 annotations kept at rate 0.5 must land within
    // 3 sigma = 150 of 5,000.
    #[test]
    fn mask_retention_matches_binomial_count() {
        let instances: Vec<Instance> = (0..100)
            .map(|i| {
                let mut it = inst(&format!("i{i}"), "cat", &[], &[], 2);
                it.positives = (0..50).collect();
                it.negatives = (50..100).collect();
                it
            })
            .collect();
        let ds = Dataset::new(tiny_vocab(100), vec!["cat".into()], instances, 2).unwrap();
        let masked = mask_labels(&ds, 0.5, 42).unwrap();
        let kept: usize = masked.instances().iter().map(Instance::n_annotated).sum();
        assert!(
            (4850..=5150).contains(&kept),
            "kept {kept}, expected 5000 +/- 150"
        );
    }
}
