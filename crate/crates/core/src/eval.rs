//! Annotated-only mean average precision with the class-imbalance and
//! attribute-type breakdowns of the standard reporting layout.
//!
//! Each attribute's AP is computed over exactly the test instances where that
//! attribute carries a +1/-1 annotation; unannotated pairs never enter the
//! metric. Attributes with no annotated positives have undefined AP and are
//! excluded from every mean (and listed in the report diagnostics).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeType, Dataset, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Medium,
    Tail,
}

impl Bucket {
    pub fn column_name(&self) -> &'static str {
        match self {
            Bucket::Head => "Head",
            Bucket::Medium => "Medium",
            Bucket::Tail => "Tail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Attributes with at least this many positive training annotations are
    /// head.
    pub head_min: usize,
    /// Attributes with at most this many positive training annotations are
    /// tail.
    pub tail_max: usize,
    /// Use the interpolated precision envelope instead of raw precision at
    /// each positive rank.
    #[serde(default)]
    pub interpolated: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            head_min: 100,
            tail_max: 20,
            interpolated: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_min <= self.tail_max {
            return Err(Error::Config(format!(
                "head_min ({}) must exceed tail_max ({})",
                self.head_min, self.tail_max
            )));
        }
        Ok(())
    }
}

/// Precision values at each positive's rank, in rank order. Ranking is by
/// descending score with ties broken by stable instance order.
fn precisions_at_positives(scores: &[f64], positive: &[bool]) -> Vec<f64> {
    debug_assert_eq!(scores.len(), positive.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut out = Vec::new();
    for (rank0, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            out.push(hits as f64 / (rank0 + 1) as f64);
        }
    }
    out
}

/// Average precision: mean over positives of the precision at their rank.
/// Returns None when there are no positives (AP undefined; callers exclude
/// the attribute from means).
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let precs = precisions_at_positives(scores, positive);
    if precs.is_empty() {
        return None;
    }
    Some(precs.iter().sum::<f64>() / precs.len() as f64)
}

/// Interpolated variant: each positive takes the maximum precision at or
/// below its rank (the precision envelope).
pub fn average_precision_interpolated(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut precs = precisions_at_positives(scores, positive);
    if precs.is_empty() {
        return None;
    }
    let mut best = 0.0f64;
    for p in precs.iter_mut().rev() {
        best = best.max(*p);
        *p = best;
    }
    Some(precs.iter().sum::<f64>() / precs.len() as f64)
}

/// Buckets attributes by their count of positive training annotations:
/// `count >= head_min` is head, `count <= tail_max` is tail, medium otherwise.
pub fn partition_head_medium_tail(
    train: &Dataset,
    head_min: usize,
    tail_max: usize,
) -> Result<BTreeMap<usize, Bucket>> {
    if head_min <= tail_max {
        return Err(Error::Config(format!(
            "head_min ({head_min}) must exceed tail_max ({tail_max})"
        )));
    }
    let mut counts = vec![0usize; train.n_attributes()];
    for inst in train.instances() {
        for &a in &inst.positives {
            counts[a] += 1;
        }
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(a, &c)| {
            let bucket = if c >= head_min {
                Bucket::Head
            } else if c <= tail_max {
                Bucket::Tail
            } else {
                Bucket::Medium
            };
            (a, bucket)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Unweighted mean of per-attribute APs over included attributes, in
    /// [0, 1].
    pub overall_map: f64,
    pub imbalance: BTreeMap<Bucket, f64>,
    pub by_type: BTreeMap<AttributeType, f64>,
    pub per_attribute_ap: BTreeMap<String, f64>,
    /// (annotated positives, annotated negatives) per attribute in the test
    /// split.
    pub counts: BTreeMap<String, (usize, usize)>,
    /// Attributes excluded from all means: no annotated positives in the
    /// test split.
    pub excluded: Vec<String>,
}

/// Computes AP per attribute over annotated test instances only, then
/// averages into the overall, head/medium/tail, and per-type means.
pub fn mean_ap(
    predictions: &[Vec<f64>],
    test: &Dataset,
    partition: &BTreeMap<usize, Bucket>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if test.instances().is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.len() != test.instances().len() {
        return Err(Error::Invariant(format!(
            "{} prediction rows for {} test instances",
            predictions.len(),
            test.instances().len()
        )));
    }
    let n_attributes = test.n_attributes();
    if let Some(row) = predictions.iter().find(|r| r.len() != n_attributes) {
        return Err(Error::Invariant(format!(
            "prediction row has {} columns, expected {n_attributes}",
            row.len()
        )));
    }

    let ap_fn = if cfg.interpolated {
        average_precision_interpolated
    } else {
        average_precision
    };

    let mut per_attribute_ap = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut included: Vec<(usize, f64)> = Vec::new();
    for a in 0..n_attributes {
        let mut scores = Vec::new();
        let mut positive = Vec::new();
        let mut n_pos = 0usize;
        let mut n_neg = 0usize;
        for (row, inst) in predictions.iter().zip(test.instances()) {
            match test.label_of(inst, a)? {
                Label::Positive => {
                    scores.push(row[a]);
                    positive.push(true);
                    n_pos += 1;
                }
                Label::Negative => {
                    scores.push(row[a]);
                    positive.push(false);
                    n_neg += 1;
                }
                Label::Unannotated => {}
            }
        }
        let name = test.vocab().name(a).to_string();
        counts.insert(name.clone(), (n_pos, n_neg));
        match ap_fn(&scores, &positive) {
            Some(ap) => {
                per_attribute_ap.insert(name, ap);
                included.push((a, ap));
            }
            None => excluded.push(name),
        }
    }
    if included.is_empty() {
        return Err(Error::Invariant(
            "no attribute has an annotated positive in the test split".into(),
        ));
    }

    let mean = |aps: &[f64]| aps.iter().sum::<f64>() / aps.len() as f64;
    let overall_map = mean(&included.iter().map(|&(_, ap)| ap).collect::<Vec<_>>());

    let mut by_bucket: BTreeMap<Bucket, Vec<f64>> = BTreeMap::new();
    let mut by_type_acc: BTreeMap<AttributeType, Vec<f64>> = BTreeMap::new();
    for &(a, ap) in &included {
        if let Some(&bucket) = partition.get(&a) {
            by_bucket.entry(bucket).or_default().push(ap);
        }
        by_type_acc
            .entry(test.vocab().type_of(a))
            .or_default()
            .push(ap);
    }

    Ok(EvalReport {
        overall_map,
        imbalance: by_bucket.into_iter().map(|(b, aps)| (b, mean(&aps))).collect(),
        by_type: by_type_acc.into_iter().map(|(t, aps)| (t, mean(&aps))).collect(),
        per_attribute_ap,
        counts,
        excluded,
    })
}

impl EvalReport {
    /// Aligned text table with the standard column layout: overall mAP, the
    /// class-imbalance buckets, and the attribute-type groups. Values are
    /// printed on the conventional 0-100 scale; groups with no included
    /// attributes print as "-".
    pub fn format_table(&self) -> String {
        let mut header: Vec<String> = vec!["Overall".into()];
        let mut values: Vec<String> = vec![format!("{:.2}", self.overall_map * 100.0)];
        for bucket in [Bucket::Head, Bucket::Medium, Bucket::Tail] {
            header.push(bucket.column_name().into());
            values.push(match self.imbalance.get(&bucket) {
                Some(v) => format!("{:.2}", v * 100.0),
                None => "-".into(),
            });
        }
        for ty in AttributeType::ALL {
            header.push(ty.column_name().into());
            values.push(match self.by_type.get(&ty) {
                Some(v) => format!("{:.2}", v * 100.0),
                None => "-".into(),
            });
        }
        let widths: Vec<usize> = header
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let mut out = String::new();
        for (i, h) in header.iter().enumerate() {
            let _ = write!(out, "{:>w$}  ", h, w = widths[i]);
        }
        out.push('\n');
        for (i, v) in values.iter().enumerate() {
            let _ = write!(out, "{:>w$}  ", v, w = widths[i]);
        }
        out.push('\n');
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(Error::io(path))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(Error::io(path))?;
        w.flush().map_err(Error::io(path))
    }

    pub fn load_json(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AttributeVocabulary, Instance};
    use crate::rng;
    use rand::Rng;

    // Independent O(n^2) oracle: precision at each positive's rank, computed
    // from pairwise comparisons under the same stable tie order.
    fn brute_force_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
        let n = scores.len();
        let mut total = 0.0;
        let mut n_pos = 0usize;
        for i in 0..n {
            if !positive[i] {
                continue;
            }
            n_pos += 1;
            let mut rank = 0usize;
            let mut pos_at_or_above = 0usize;
            for j in 0..n {
                let above = scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
                if above {
                    rank += 1;
                    if positive[j] {
                        pos_at_or_above += 1;
                    }
                }
            }
            total += pos_at_or_above as f64 / rank as f64;
        }
        (n_pos > 0).then(|| total / n_pos as f64)
    }

    #[test]
    fn worked_example() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - 0.833333).abs() < 1e-6);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn single_positive_ranked_last() {
        for n in [2usize, 5, 50] {
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let mut positive = vec![false; n];
            positive[n - 1] = true;
            let ap = average_precision(&scores, &positive).unwrap();
            assert!((ap - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn no_positives_is_undefined() {
        assert!(average_precision(&[0.3, 0.2], &[false, false]).is_none());
    }

    #[test]
    fn ties_break_by_stable_instance_order() {
        // Equal scores: earlier instances rank first.
        let ap = average_precision(&[0.5, 0.5, 0.5], &[false, true, false]).unwrap();
        assert!((ap - 0.5).abs() < 1e-12); // the positive sits at rank 2
    }

    #[test]
    fn matches_brute_force_oracle_on_random_instances() {
        let mut r = rng::stream(101, "ap-oracle");
        for trial in 0..1000 {
            let n = r.gen_range(1..=200);
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..20)) / 20.0).collect();
            let positive: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
            let expected = brute_force_ap(&scores, &positive);
            let actual = average_precision(&scores, &positive);
            match (expected, actual) {
                (None, None) => {}
                (Some(e), Some(a)) => {
                    assert!((e - a).abs() < 1e-9, "trial {trial}: oracle {e} vs {a}")
                }
                other => panic!("trial {trial}: definedness mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn invariant_under_monotone_score_transforms() {
        let mut r = rng::stream(103, "ap-mono");
        for _ in 0..200 {
            let n = r.gen_range(2..=60);
            let scores: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
            let positive: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
            let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
            assert_eq!(
                average_precision(&scores, &positive),
                average_precision(&transformed, &positive)
            );
        }
    }

    #[test]
    fn interpolated_envelope_never_decreases_ap() {
        let mut r = rng::stream(107, "ap-interp");
        for _ in 0..200 {
            let n = r.gen_range(2..=60);
            let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            let positive: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
            if let (Some(plain), Some(interp)) = (
                average_precision(&scores, &positive),
                average_precision_interpolated(&scores, &positive),
            ) {
                assert!(interp >= plain - 1e-12);
            }
        }
    }

    fn eval_dataset(
        n_attrs: usize,
        labels: &[(&str, &[usize], &[usize])],
    ) -> Dataset {
        let vocab = AttributeVocabulary::new(
            (0..n_attrs).map(|i| format!("a{i}")).collect(),
            (0..n_attrs).map(|i| AttributeType::ALL[i % 8]).collect(),
        )
        .unwrap();
        let instances = labels
            .iter()
            .map(|(id, pos, neg)| Instance {
                id: id.to_string(),
                object_id: "obj".into(),
                positives: pos.iter().copied().collect(),
                negatives: neg.iter().copied().collect(),
                feature: vec![0.0],
            })
            .collect();
        Dataset::new(vocab, vec!["obj".into()], instances, 1).unwrap()
    }

    fn uniform_partition(n: usize, bucket: Bucket) -> BTreeMap<usize, Bucket> {
        (0..n).map(|a| (a, bucket)).collect()
    }

    #[test]
    fn unannotated_labels_are_excluded_from_ap() {
        // Attribute 0: annotated in instances 0 and 2 only. Instance 1's
        // score would ruin the ranking if it were (wrongly) counted negative.
        let test = eval_dataset(
            1,
            &[("i0", &[0], &[]), ("i1", &[], &[]), ("i2", &[], &[0])],
        );
        let predictions = vec![vec![0.6], vec![0.9], vec![0.2]];
        let report = mean_ap(
            &predictions,
            &test,
            &uniform_partition(1, Bucket::Head),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(report.overall_map, 1.0);
        assert_eq!(report.counts["a0"], (1, 1));
    }

    #[test]
    fn ground_truth_predictions_score_one() {
        let test = eval_dataset(
            2,
            &[("i0", &[0], &[1]), ("i1", &[1], &[0]), ("i2", &[0, 1], &[])],
        );
        let predictions: Vec<Vec<f64>> = test
            .instances()
            .iter()
            .map(|inst| {
                (0..2)
                    .map(|a| if inst.positives.contains(&a) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let report = mean_ap(
            &predictions,
            &test,
            &uniform_partition(2, Bucket::Medium),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(report.overall_map, 1.0);
    }

    #[test]
    fn overall_is_mean_of_included_attribute_aps() {
        let mut r = rng::stream(109, "mean");
        let n_attrs = 6;
        let labels: Vec<(String, Vec<usize>, Vec<usize>)> = (0..40)
            .map(|i| {
                let pos: Vec<usize> = (0..n_attrs).filter(|_| r.gen_bool(0.3)).collect();
                let neg: Vec<usize> = (0..n_attrs)
                    .filter(|a| !pos.contains(a) && r.gen_bool(0.5))
                    .collect();
                (format!("i{i:02}"), pos, neg)
            })
            .collect();
        let borrowed: Vec<(&str, &[usize], &[usize])> = labels
            .iter()
            .map(|(id, p, n)| (id.as_str(), p.as_slice(), n.as_slice()))
            .collect();
        let test = eval_dataset(n_attrs, &borrowed);
        let predictions: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..n_attrs).map(|_| r.gen_range(0.0..1.0)).collect())
            .collect();
        let report = mean_ap(
            &predictions,
            &test,
            &uniform_partition(n_attrs, Bucket::Head),
            &EvalConfig::default(),
        )
        .unwrap();
        let mean: f64 =
            report.per_attribute_ap.values().sum::<f64>() / report.per_attribute_ap.len() as f64;
        assert!((report.overall_map - mean).abs() < 1e-12);
    }

    // Monte Carlo null: random scores on balanced labels give mAP near the
    // positive fraction.
    #[test]
    fn random_scores_match_prevalence_baseline() {
        let mut r = rng::stream(113, "null");
        let n_attrs = 10;
        let n_inst = 1000;
        let labels: Vec<(String, Vec<usize>, Vec<usize>)> = (0..n_inst)
            .map(|i| {
                let pos: Vec<usize> = (0..n_attrs).filter(|_| r.gen_bool(0.5)).collect();
                let neg: Vec<usize> = (0..n_attrs).filter(|a| !pos.contains(a)).collect();
                (format!("i{i:04}"), pos, neg)
            })
            .collect();
        let borrowed: Vec<(&str, &[usize], &[usize])> = labels
            .iter()
            .map(|(id, p, n)| (id.as_str(), p.as_slice(), n.as_slice()))
            .collect();
        let test = eval_dataset(n_attrs, &borrowed);
        let predictions: Vec<Vec<f64>> = (0..n_inst)
            .map(|_| (0..n_attrs).map(|_| r.gen_range(0.0..1.0)).collect())
            .collect();
        let report = mean_ap(
            &predictions,
            &test,
            &uniform_partition(n_attrs, Bucket::Head),
            &EvalConfig::default(),
        )
        .unwrap();
        assert!(
            (report.overall_map - 0.5).abs() < 0.03,
            "null mAP = {}",
            report.overall_map
        );
    }

    #[test]
    fn excluded_attributes_are_listed_not_averaged() {
        // Attribute 1 has no annotated positives anywhere.
        let test = eval_dataset(2, &[("i0", &[0], &[1]), ("i1", &[], &[0, 1])]);
        let predictions = vec![vec![0.9, 0.5], vec![0.1, 0.5]];
        let report = mean_ap(
            &predictions,
            &test,
            &uniform_partition(2, Bucket::Head),
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(report.excluded, vec!["a1".to_string()]);
        assert!(!report.per_attribute_ap.contains_key("a1"));
        assert_eq!(report.overall_map, 1.0);
    }

    #[test]
    fn partition_thresholds() {
        // Counts: a0 = 500, a1 = 100, a2 = 5 positives.
        let mut labels: Vec<(String, Vec<usize>, Vec<usize>)> = Vec::new();
        for i in 0..500 {
            let mut pos = vec![0];
            if i < 100 {
                pos.push(1);
            }
            if i < 5 {
                pos.push(2);
            }
            labels.push((format!("i{i:03}"), pos, vec![]));
        }
        let borrowed: Vec<(&str, &[usize], &[usize])> = labels
            .iter()
            .map(|(id, p, n)| (id.as_str(), p.as_slice(), n.as_slice()))
            .collect();
        let train = eval_dataset(3, &borrowed);
        let partition = partition_head_medium_tail(&train, 300, 20).unwrap();
        assert_eq!(partition[&0], Bucket::Head);
        assert_eq!(partition[&1], Bucket::Medium);
        assert_eq!(partition[&2], Bucket::Tail);
        // Buckets partition the attribute set.
        assert_eq!(partition.len(), 3);
    }

    #[test]
    fn equal_counts_fall_in_one_bucket() {
        let train = eval_dataset(3, &[("i0", &[0, 1, 2], &[])]);
        let partition = partition_head_medium_tail(&train, 100, 20).unwrap();
        assert!(partition.values().all(|&b| b == Bucket::Tail));
    }

    #[test]
    fn tail_max_zero_means_only_never_annotated() {
        let train = eval_dataset(2, &[("i0", &[0], &[])]);
        let partition = partition_head_medium_tail(&train, 2, 0).unwrap();
        assert_eq!(partition[&0], Bucket::Medium);
        assert_eq!(partition[&1], Bucket::Tail);
    }

    #[test]
    fn invalid_thresholds_are_rejected() {
        let train = eval_dataset(1, &[("i0", &[0], &[])]);
        assert!(partition_head_medium_tail(&train, 10, 10).is_err());
        assert!(EvalConfig {
            head_min: 5,
            tail_max: 20,
            interpolated: false
        }
        .validate()
        .is_err());
    }

    #[test]
    fn table_has_the_standard_column_set() {
        let test = eval_dataset(2, &[("i0", &[0], &[1]), ("i1", &[1], &[0])]);
        let predictions = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let report = mean_ap(
            &predictions,
            &test,
            &uniform_partition(2, Bucket::Head),
            &EvalConfig::default(),
        )
        .unwrap();
        let table = report.format_table();
        let header = table.lines().next().unwrap();
        for col in [
            "Overall", "Head", "Medium", "Tail", "Color", "Material", "Shape", "Size",
            "Texture", "Action", "State", "Others",
        ] {
            assert!(header.contains(col), "missing column {col}: {header}");
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let test = eval_dataset(2, &[("i0", &[0], &[1]), ("i1", &[1], &[0])]);
        let predictions = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let report = mean_ap(
            &predictions,
            &test,
            &uniform_partition(2, Bucket::Tail),
            &EvalConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.write_json(&path).unwrap();
        assert_eq!(EvalReport::load_json(&path).unwrap(), report);
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let vocab = AttributeVocabulary::new(vec!["a".into()], vec![AttributeType::Color]).unwrap();
        let test = Dataset::new(vocab, vec!["obj".into()], vec![], 1).unwrap();
        let err = mean_ap(&[], &test, &BTreeMap::new(), &EvalConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }
}
