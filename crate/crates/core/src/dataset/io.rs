//! Line-delimited dataset files: a header record with the vocabulary, type
//! tags, object list, and feature dimension, then one instance record per
//! line. Attribute names map to indices through vocabulary order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributeType, AttributeVocabulary, Dataset, Instance};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    vocab: Vec<String>,
    types: Vec<AttributeType>,
    objects: Vec<String>,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: String,
    object: String,
    positives: Vec<String>,
    negatives: Vec<String>,
    feature: Vec<f32>,
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let header = HeaderRecord {
        vocab: dataset.vocab().names().to_vec(),
        types: dataset.vocab().types().to_vec(),
        objects: dataset.objects().to_vec(),
        feature_dim: dataset.feature_dim(),
    };
    let mut line = serde_json::to_string(&header).expect("header serializes");
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(Error::io(path))?;

    for inst in dataset.instances() {
        let names = |set: &std::collections::BTreeSet<usize>| {
            set.iter()
                .map(|&a| dataset.vocab().name(a).to_string())
                .collect::<Vec<_>>()
        };
        let rec = InstanceRecord {
            id: inst.id.clone(),
            object: inst.object_id.clone(),
            positives: names(&inst.positives),
            negatives: names(&inst.negatives),
            feature: inst.feature.clone(),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(Error::io(path))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header: HeaderRecord = match lines.next() {
        None => return Err(Error::EmptyDataset),
        Some((_, line)) => {
            let line = line.map_err(Error::io(path))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("bad header: {e}"),
            })?
        }
    };
    let vocab = AttributeVocabulary::new(header.vocab, header.types)?;
    let index = vocab.index();

    let mut instances = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let resolve = |names: &[String]| -> Result<std::collections::BTreeSet<usize>> {
            names
                .iter()
                .map(|n| {
                    index.get(n.as_str()).copied().ok_or_else(|| {
                        Error::Invariant(format!(
                            "instance `{}` references unknown attribute `{n}`",
                            rec.id
                        ))
                    })
                })
                .collect()
        };
        instances.push(Instance {
            positives: resolve(&rec.positives)?,
            negatives: resolve(&rec.negatives)?,
            id: rec.id,
            object_id: rec.object,
            feature: rec.feature,
        });
    }
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(vocab, header.objects, instances, header.feature_dim)
}
