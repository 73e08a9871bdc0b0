//! Per-object feasible attribute sets built from training co-occurrence.
//!
//! An attribute is feasible for an object category when some training
//! instance of that object carries it as a positive annotation. Only feasible
//! attributes are scored by the presence model or eligible for ignoring;
//! everything else takes the infeasible branch of the unannotated loss.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeVocabulary, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeasibleSets {
    sets: BTreeMap<String, BTreeSet<usize>>,
}

/// Builds the feasible sets from training annotations.
///
/// With `include_negatives` false (the default reading), only positive
/// annotations contribute: a negative annotation is evidence the attribute is
/// absent, not that it is plausible for the category. Passing true switches to
/// the permissive reading where any annotation, either sign, adds the
/// attribute — kept for ablation.
pub fn build_feasible(train: &Dataset, include_negatives: bool) -> FeasibleSets {
    let mut sets: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for inst in train.instances() {
        let entry = sets.entry(inst.object_id.clone()).or_default();
        entry.extend(inst.positives.iter().copied());
        if include_negatives {
            entry.extend(inst.negatives.iter().copied());
        }
    }
    FeasibleSets { sets }
}

impl FeasibleSets {
    /// Membership test. Objects never seen in training have empty feasible
    /// sets, so this returns false for them.
    pub fn is_feasible(&self, object: &str, attr: usize) -> bool {
        self.sets.get(object).is_some_and(|s| s.contains(&attr))
    }

    pub fn get(&self, object: &str) -> Option<&BTreeSet<usize>> {
        self.sets.get(object)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<usize>)> {
        self.sets.iter()
    }

    pub fn n_objects(&self) -> usize {
        self.sets.len()
    }

    pub fn from_sets(sets: BTreeMap<String, BTreeSet<usize>>) -> Self {
        Self { sets }
    }
}

#[derive(Serialize, Deserialize)]
struct FeasibleRecord {
    object: String,
    attributes: Vec<String>,
}

/// Writes one `{object, attributes: [names]}` record per line, objects in
/// sorted order, for inspection and caching.
pub fn write_feasible(fs: &FeasibleSets, vocab: &AttributeVocabulary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for (object, attrs) in fs.iter() {
        let rec = FeasibleRecord {
            object: object.clone(),
            attributes: attrs.iter().map(|&a| vocab.name(a).to_string()).collect(),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn load_feasible(path: &Path, vocab: &AttributeVocabulary) -> Result<FeasibleSets> {
    let file = File::open(path).map_err(Error::io(path))?;
    let index = vocab.index();
    let mut sets = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeasibleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let attrs: BTreeSet<usize> = rec
            .attributes
            .iter()
            .map(|n| {
                index.get(n.as_str()).copied().ok_or_else(|| {
                    Error::Invariant(format!(
                        "feasible set for `{}` references unknown attribute `{n}`",
                        rec.object
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if sets.insert(rec.object.clone(), attrs).is_some() {
            return Err(Error::Invariant(format!(
                "duplicate feasible record for object `{}`",
                rec.object
            )));
        }
    }
    Ok(FeasibleSets { sets })
}
