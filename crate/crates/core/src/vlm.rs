//! Presence probabilities from precomputed vision-language similarities.
//!
//! The image/text encoders run offline; this module ingests either their
//! embedding vectors or raw similarity rows, and turns cosine similarities
//! over an object's feasible attributes into a temperature-softmax presence
//! distribution. Scoring is a pure function of frozen inputs, so it runs once
//! before training and the distributions are cached.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::AttributeVocabulary;
use crate::error::{Error, Result};
use crate::feasible::FeasibleSets;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Softmax temperature. The default matches the usual contrastive
    /// pretraining logit scale of 100 (tau = 1/100).
    pub tau: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { tau: 0.01 }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Unit-normalized visual and text embeddings, keyed by instance id and
/// (attribute, object) pair respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    visual: BTreeMap<String, Vec<f32>>,
    text: BTreeMap<(String, String), Vec<f32>>,
}

fn normalize(kind: &str, key: &str, dim: usize, mut v: Vec<f32>) -> Result<Vec<f32>> {
    if v.len() != dim {
        return Err(Error::Invariant(format!(
            "{kind} embedding `{key}` has dimension {} (table says {dim})",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invariant(format!(
            "{kind} embedding `{key}` has a non-finite component"
        )));
    }
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::Invariant(format!(
            "{kind} embedding `{key}` has zero norm"
        )));
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(v)
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invariant("embedding dimension must be >= 1".into()));
        }
        Ok(Self {
            dim,
            visual: BTreeMap::new(),
            text: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Inserts and L2-normalizes a visual embedding.
    pub fn insert_visual(&mut self, id: impl Into<String>, v: Vec<f32>) -> Result<()> {
        let id = id.into();
        let v = normalize("visual", &id, self.dim, v)?;
        self.visual.insert(id, v);
        Ok(())
    }

    /// Inserts and L2-normalizes a text embedding for an (attribute, object)
    /// pair.
    pub fn insert_text(
        &mut self,
        attribute: impl Into<String>,
        object: impl Into<String>,
        v: Vec<f32>,
    ) -> Result<()> {
        let key = (attribute.into(), object.into());
        let v = normalize("text", &format!("{}/{}", key.0, key.1), self.dim, v)?;
        self.text.insert(key, v);
        Ok(())
    }

    pub fn visual(&self, id: &str) -> Option<&[f32]> {
        self.visual.get(id).map(Vec::as_slice)
    }

    pub fn text(&self, attribute: &str, object: &str) -> Option<&[f32]> {
        self.text
            .get(&(attribute.to_string(), object.to_string()))
            .map(Vec::as_slice)
    }
}

/// Cosine similarity of two unit vectors: their dot product, accumulated in
/// f64.
pub fn similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invariant(format!(
            "similarity of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum())
}

/// Softmax presence probabilities of one instance over its object's feasible
/// set. Empty when the feasible set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceDistribution {
    pub instance_id: String,
    pub object: String,
    probs: BTreeMap<usize, f64>,
}

impl PresenceDistribution {
    /// Builds a distribution from explicit probabilities. The map must be
    /// empty or sum to 1 within 1e-6, with every entry positive.
    pub fn new(
        instance_id: impl Into<String>,
        object: impl Into<String>,
        probs: BTreeMap<usize, f64>,
    ) -> Result<Self> {
        let instance_id = instance_id.into();
        if !probs.is_empty() {
            let sum: f64 = probs.values().sum();
            if (sum - 1.0).abs() > 1e-6 || probs.values().any(|p| !p.is_finite() || *p <= 0.0) {
                return Err(Error::Invariant(format!(
                    "presence distribution for `{instance_id}` is not a probability vector (sum = {sum})"
                )));
            }
        }
        Ok(Self {
            instance_id,
            object: object.into(),
            probs,
        })
    }

    pub fn probs(&self) -> &BTreeMap<usize, f64> {
        &self.probs
    }

    pub fn prob(&self, attr: usize) -> Option<f64> {
        self.probs.get(&attr).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }
}

/// Max-subtracted softmax over a similarity map with temperature `tau`.
/// Every output is strictly positive and the outputs sum to 1.
fn softmax(sims: &BTreeMap<usize, f64>, tau: f64) -> BTreeMap<usize, f64> {
    if sims.is_empty() {
        return BTreeMap::new();
    }
    let max = sims.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: BTreeMap<usize, f64> = sims
        .iter()
        .map(|(&a, &s)| (a, ((s - max) / tau).exp()))
        .collect();
    let total: f64 = exps.values().sum();
    exps.into_iter().map(|(a, e)| (a, e / total)).collect()
}

/// Eq.-style presence estimate: softmax over the cosine similarities between
/// the instance's visual embedding and the text embeddings of its object's
/// feasible attributes.
pub fn presence_probabilities(
    instance_id: &str,
    object: &str,
    fs: &FeasibleSets,
    vocab: &AttributeVocabulary,
    emb: &EmbeddingTable,
    cfg: &ScoreConfig,
) -> Result<PresenceDistribution> {
    cfg.validate()?;
    let feasible = match fs.get(object) {
        None => {
            return Ok(PresenceDistribution {
                instance_id: instance_id.to_string(),
                object: object.to_string(),
                probs: BTreeMap::new(),
            })
        }
        Some(set) => set,
    };
    let x_v = emb.visual(instance_id).ok_or_else(|| {
        Error::Invariant(format!("missing visual embedding for instance `{instance_id}`"))
    })?;
    let mut sims = BTreeMap::new();
    for &a in feasible {
        let name = vocab.name(a);
        let t = emb.text(name, object).ok_or_else(|| {
            Error::Invariant(format!(
                "missing text embedding for feasible pair (`{name}`, `{object}`)"
            ))
        })?;
        sims.insert(a, similarity(x_v, t)?);
    }
    Ok(PresenceDistribution {
        instance_id: instance_id.to_string(),
        object: object.to_string(),
        probs: softmax(&sims, cfg.tau),
    })
}

/// One raw similarity row of the score file: similarities for exactly the
/// feasible attributes of the instance's object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScoreRow {
    pub instance_id: String,
    pub object: String,
    pub sims: BTreeMap<String, f32>,
}

pub fn write_scores(rows: &[RawScoreRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let mut line = serde_json::to_string(row).expect("row serializes");
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_score_rows(path: &Path) -> Result<Vec<RawScoreRow>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Normalizes raw similarity rows into presence distributions, exactly as
/// `presence_probabilities` would. Rows must live on (and cover) the feasible
/// set of their object.
pub fn normalize_scores(
    rows: &[RawScoreRow],
    vocab: &AttributeVocabulary,
    fs: &FeasibleSets,
    cfg: &ScoreConfig,
) -> Result<BTreeMap<String, PresenceDistribution>> {
    cfg.validate()?;
    let index = vocab.index();
    let mut out = BTreeMap::new();
    for row in rows {
        let feasible = fs.get(&row.object);
        let mut sims: BTreeMap<usize, f64> = BTreeMap::new();
        for (name, &s) in &row.sims {
            let a = *index.get(name.as_str()).ok_or_else(|| {
                Error::Invariant(format!(
                    "score row `{}` references unknown attribute `{name}`",
                    row.instance_id
                ))
            })?;
            if !feasible.is_some_and(|set| set.contains(&a)) {
                return Err(Error::Invariant(format!(
                    "score row `{}` has similarity for `{name}`, which is not feasible for object `{}`",
                    row.instance_id, row.object
                )));
            }
            if !s.is_finite() {
                return Err(Error::NonFinite(format!(
                    "score row `{}` has a non-finite similarity for `{name}`",
                    row.instance_id
                )));
            }
            sims.insert(a, f64::from(s));
        }
        if let Some(set) = feasible {
            if sims.len() != set.len() {
                let missing = set.iter().find(|a| !sims.contains_key(a)).unwrap();
                return Err(Error::Invariant(format!(
                    "score row `{}` is missing a similarity for feasible attribute `{}`",
                    row.instance_id,
                    vocab.name(*missing)
                )));
            }
        }
        let dist = PresenceDistribution {
            instance_id: row.instance_id.clone(),
            object: row.object.clone(),
            probs: softmax(&sims, cfg.tau),
        };
        if out.insert(row.instance_id.clone(), dist).is_some() {
            return Err(Error::Invariant(format!(
                "duplicate score row for instance `{}`",
                row.instance_id
            )));
        }
    }
    Ok(out)
}

/// Reads a raw score file and normalizes it in one step.
pub fn load_scores(
    path: &Path,
    vocab: &AttributeVocabulary,
    fs: &FeasibleSets,
    cfg: &ScoreConfig,
) -> Result<BTreeMap<String, PresenceDistribution>> {
    let rows = read_score_rows(path)?;
    normalize_scores(&rows, vocab, fs, cfg)
}

#[derive(Serialize, Deserialize)]
struct DistributionRecord {
    instance_id: String,
    object: String,
    probs: BTreeMap<String, f64>,
}

/// Caches normalized distributions as line-delimited records with attribute
/// names as keys.
pub fn write_distributions(
    dists: &BTreeMap<String, PresenceDistribution>,
    vocab: &AttributeVocabulary,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for dist in dists.values() {
        let rec = DistributionRecord {
            instance_id: dist.instance_id.clone(),
            object: dist.object.clone(),
            probs: dist
                .probs
                .iter()
                .map(|(&a, &p)| (vocab.name(a).to_string(), p))
                .collect(),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn load_distributions(
    path: &Path,
    vocab: &AttributeVocabulary,
) -> Result<BTreeMap<String, PresenceDistribution>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let index = vocab.index();
    let mut out = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DistributionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let probs: BTreeMap<usize, f64> = rec
            .probs
            .iter()
            .map(|(name, &p)| {
                index
                    .get(name.as_str())
                    .copied()
                    .map(|a| (a, p))
                    .ok_or_else(|| {
                        Error::Invariant(format!(
                            "distribution for `{}` references unknown attribute `{name}`",
                            rec.instance_id
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        if !probs.is_empty() {
            let sum: f64 = probs.values().sum();
            if (sum - 1.0).abs() > 1e-6 || probs.values().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Invariant(format!(
                    "distribution for `{}` is not normalized (sum = {sum})",
                    rec.instance_id
                )));
            }
        }
        out.insert(
            rec.instance_id.clone(),
            PresenceDistribution {
                instance_id: rec.instance_id,
                object: rec.object,
                probs,
            },
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Binary embedding file: header (magic, dim, counts), then records of
// length-prefixed UTF-8 ids followed by dim little-endian f32s.
// ---------------------------------------------------------------------------

const EMBED_MAGIC: &[u8; 8] = b"ATSEMB01";

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(EMBED_MAGIC);
    buf.extend_from_slice(&(table.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(table.visual.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(table.text.len() as u32).to_le_bytes());
    for (id, v) in &table.visual {
        put_str(&mut buf, id);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    for ((attr, obj), v) in &table.text {
        put_str(&mut buf, attr);
        put_str(&mut buf, obj);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(Error::io(path))
}

struct ByteReader<'a> {
    path: &'a Path,
    inner: BufReader<File>,
}

impl<'a> ByteReader<'a> {
    fn exact(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            message: format!("truncated embedding file: {e}"),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.exact(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.exact(len)?).map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            message: format!("bad utf-8 id in embedding file: {e}"),
        })
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.exact(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Loads a binary embedding file; every vector is validated finite and
/// re-normalized to unit length.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut r = ByteReader {
        path,
        inner: BufReader::new(file),
    };
    let magic = r.exact(8)?;
    if magic != EMBED_MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "not an embedding file (bad magic)".into(),
        });
    }
    let dim = r.u32()? as usize;
    let n_visual = r.u32()? as usize;
    let n_text = r.u32()? as usize;
    let mut table = EmbeddingTable::new(dim)?;
    for _ in 0..n_visual {
        let id = r.string()?;
        let v = r.floats(dim)?;
        table.insert_visual(id, v)?;
    }
    for _ in 0..n_text {
        let attr = r.string()?;
        let obj = r.string()?;
        let v = r.floats(dim)?;
        table.insert_text(attr, obj, v)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AttributeType;
    use std::collections::BTreeSet;

    fn vocab(names: &[&str]) -> AttributeVocabulary {
        AttributeVocabulary::new(
            names.iter().map(|s| s.to_string()).collect(),
            names.iter().map(|_| AttributeType::Other).collect(),
        )
        .unwrap()
    }

    fn feasible(object: &str, attrs: &[usize]) -> FeasibleSets {
        let mut sets = BTreeMap::new();
        sets.insert(object.to_string(), attrs.iter().copied().collect::<BTreeSet<_>>());
        FeasibleSets::from_sets(sets)
    }

    #[test]
    fn vectors_are_normalized_on_insert() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert_visual("i0", vec![2.0, 0.0]).unwrap();
        let v = t.visual("i0").unwrap();
        assert!((f64::from(v[0]) - 1.0).abs() < 1e-6);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut t = EmbeddingTable::new(2).unwrap();
        assert!(t.insert_visual("i0", vec![1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn non_finite_component_is_rejected() {
        let mut t = EmbeddingTable::new(2).unwrap();
        assert!(t.insert_visual("i0", vec![f32::NAN, 0.0]).is_err());
        assert!(t.insert_text("a", "o", vec![f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn zero_vector_is_rejected() {
        let mut t = EmbeddingTable::new(2).unwrap();
        assert!(t.insert_visual("i0", vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn similarity_of_unit_vectors() {
        let e1 = [1.0f32, 0.0];
        let e2 = [0.0f32, 1.0];
        let neg = [-1.0f32, 0.0];
        assert_eq!(similarity(&e1, &e1).unwrap(), 1.0);
        assert_eq!(similarity(&e1, &e2).unwrap(), 0.0);
        assert_eq!(similarity(&e1, &neg).unwrap(), -1.0);
        assert!(similarity(&e1, &[1.0]).is_err());
    }

    fn table_for(sims: &[(&str, f64)]) -> (EmbeddingTable, FeasibleSets, AttributeVocabulary) {
        // 2-d construction: visual = (1, 0); text with cosine s = (s, sqrt(1-s^2)).
        let names: Vec<&str> = sims.iter().map(|(n, _)| *n).collect();
        let vocab = vocab(&names);
        let fs = feasible("obj", &(0..sims.len()).collect::<Vec<_>>());
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert_visual("x", vec![1.0, 0.0]).unwrap();
        for (name, s) in sims {
            let y = (1.0 - s * s).max(0.0).sqrt();
            t.insert_text(*name, "obj", vec![*s as f32, y as f32]).unwrap();
        }
        (t, fs, vocab)
    }

    #[test]
    fn equal_similarities_give_uniform_distribution() {
        let (t, fs, vocab) = table_for(&[("a", 0.5), ("b", 0.5), ("c", 0.5)]);
        let d = presence_probabilities("x", "obj", &fs, &vocab, &t, &ScoreConfig { tau: 1.0 })
            .unwrap();
        for a in 0..3 {
            assert!((d.prob(a).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_hand_evaluation() {
        // similarities (1, 0) at tau = 1: (e/(e+1), 1/(e+1)).
        let (t, fs, vocab) = table_for(&[("a", 1.0), ("b", 0.0)]);
        let d = presence_probabilities("x", "obj", &fs, &vocab, &t, &ScoreConfig { tau: 1.0 })
            .unwrap();
        assert!((d.prob(0).unwrap() - 0.731059).abs() < 1e-6);
        assert!((d.prob(1).unwrap() - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn empty_feasible_set_yields_empty_distribution() {
        let vocab = vocab(&["a"]);
        let t = EmbeddingTable::new(2).unwrap();
        let fs = FeasibleSets::default();
        let d = presence_probabilities("x", "obj", &fs, &vocab, &t, &ScoreConfig::default())
            .unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn missing_text_embedding_is_an_error() {
        let vocab = vocab(&["a", "b"]);
        let fs = feasible("obj", &[0, 1]);
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert_visual("x", vec![1.0, 0.0]).unwrap();
        t.insert_text("a", "obj", vec![1.0, 0.0]).unwrap();
        let err = presence_probabilities("x", "obj", &fs, &vocab, &t, &ScoreConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains('b'), "{err}");
    }

    #[test]
    fn distribution_sums_to_one_and_is_positive() {
        let (t, fs, vocab) = table_for(&[("a", 0.9), ("b", -0.4), ("c", 0.2), ("d", 0.0)]);
        let d = presence_probabilities("x", "obj", &fs, &vocab, &t, &ScoreConfig { tau: 0.05 })
            .unwrap();
        let sum: f64 = d.probs().values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(d.probs().values().all(|&p| p > 0.0 && p.is_finite()));
    }

    #[test]
    fn shift_invariance() {
        let mut sims = BTreeMap::new();
        sims.insert(0usize, 0.3);
        sims.insert(1usize, -0.2);
        sims.insert(2usize, 0.9);
        let a = softmax(&sims, 0.07);
        let shifted: BTreeMap<usize, f64> = sims.iter().map(|(&k, &v)| (k, v + 5.0)).collect();
        let b = softmax(&shifted, 0.07);
        for (k, v) in &a {
            assert!((v - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_in_own_similarity() {
        let mut sims = BTreeMap::new();
        sims.insert(0usize, 0.1);
        sims.insert(1usize, 0.4);
        let before = softmax(&sims, 0.5)[&0];
        sims.insert(0usize, 0.2);
        let after = softmax(&sims, 0.5)[&0];
        assert!(after > before);
    }

    #[test]
    fn high_temperature_limit_is_uniform() {
        let mut sims = BTreeMap::new();
        sims.insert(0usize, 1.0);
        sims.insert(1usize, -1.0);
        sims.insert(2usize, 0.3);
        let d = softmax(&sims, 1e6);
        for p in d.values() {
            assert!((p - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn load_scores_uniform_row() {
        let vocab = vocab(&["a", "b", "c", "d"]);
        let fs = feasible("obj", &[0, 1, 2, 3]);
        let rows = vec![RawScoreRow {
            instance_id: "x".into(),
            object: "obj".into(),
            sims: [("a", 0.5f32), ("b", 0.5), ("c", 0.5), ("d", 0.5)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }];
        let dists = normalize_scores(&rows, &vocab, &fs, &ScoreConfig { tau: 1.0 }).unwrap();
        let d = &dists["x"];
        for a in 0..4 {
            assert!((d.prob(a).unwrap() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn score_row_outside_feasible_set_is_an_error() {
        let vocab = vocab(&["a", "b"]);
        let fs = feasible("obj", &[0]);
        let rows = vec![RawScoreRow {
            instance_id: "x".into(),
            object: "obj".into(),
            sims: [("a", 0.1f32), ("b", 0.9)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }];
        let err = normalize_scores(&rows, &vocab, &fs, &ScoreConfig::default()).unwrap_err();
        assert!(err.to_string().contains("not feasible"), "{err}");
    }

    #[test]
    fn missing_feasible_similarity_is_an_error() {
        let vocab = vocab(&["a", "b"]);
        let fs = feasible("obj", &[0, 1]);
        let rows = vec![RawScoreRow {
            instance_id: "x".into(),
            object: "obj".into(),
            sims: [("a", 0.1f32)].into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }];
        let err = normalize_scores(&rows, &vocab, &fs, &ScoreConfig::default()).unwrap_err();
        assert!(err.to_string().contains("missing a similarity"), "{err}");
    }

    #[test]
    fn singleton_feasible_set_scores_one() {
        let vocab = vocab(&["a"]);
        let fs = feasible("obj", &[0]);
        let rows = vec![RawScoreRow {
            instance_id: "x".into(),
            object: "obj".into(),
            sims: [("a", -3.0f32)].into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }];
        let dists = normalize_scores(&rows, &vocab, &fs, &ScoreConfig::default()).unwrap();
        assert_eq!(dists["x"].prob(0).unwrap(), 1.0);
    }

    #[test]
    fn embedding_file_round_trip() {
        let mut t = EmbeddingTable::new(3).unwrap();
        t.insert_visual("i0", vec![1.0, 2.0, -0.5]).unwrap();
        t.insert_visual("i1", vec![0.0, 1.0, 0.0]).unwrap();
        t.insert_text("red", "cat", vec![0.3, 0.3, 0.3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_embeddings(&t, &path).unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(loaded, t);
    }

    #[test]
    fn truncated_embedding_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        std::fs::write(&path, b"ATSEMB01\x02\x00").unwrap();
        assert!(load_embeddings(&path).is_err());
    }

    #[test]
    fn distribution_cache_round_trip() {
        let vocab = vocab(&["a", "b", "c"]);
        let fs = feasible("obj", &[0, 1, 2]);
        let rows = vec![RawScoreRow {
            instance_id: "x".into(),
            object: "obj".into(),
            sims: [("a", 0.9f32), ("b", 0.1), ("c", -0.2)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }];
        let dists = normalize_scores(&rows, &vocab, &fs, &ScoreConfig { tau: 0.25 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dists.jsonl");
        write_distributions(&dists, &vocab, &path).unwrap();
        let loaded = load_distributions(&path, &vocab).unwrap();
        assert_eq!(loaded, dists);
    }
}
