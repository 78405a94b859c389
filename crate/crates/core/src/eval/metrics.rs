use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::numerics::Real;

/// Class ids of the `k` highest probabilities, best first. Equal
/// probabilities rank the lower class id first.
pub fn top_k_ids<T: Real>(probs: &[T], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

/// Whether `label` is among the `k` best classes under the lower-id
/// tie-break.
pub fn topk_hit<T: Real>(probs: &[T], label: usize, k: usize) -> Result<bool> {
    ensure!(k >= 1 && k <= probs.len(), "k={k} outside 1..={}", probs.len());
    ensure!(label < probs.len(), "label {label} out of range for {} classes", probs.len());
    // label ranks above every class with strictly higher probability or an
    // equal probability and a lower id
    let p = probs[label];
    let ahead = probs
        .iter()
        .enumerate()
        .filter(|&(c, q)| *q > p || (*q == p && c < label))
        .count();
    Ok(ahead < k)
}

/// A named set of class ids, such as "unseen" or "tail".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSubset {
    pub name: String,
    pub classes: BTreeSet<usize>,
}

impl ClassSubset {
    pub fn new(name: &str, classes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            name: name.to_string(),
            classes: classes.into_iter().collect(),
        }
    }

    /// One class id per line; blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str, source: &str, num_classes: usize) -> Result<Self> {
        let mut classes = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let id: usize = line
                .parse()
                .map_err(|_| Error::parse(source, i as u64 + 1, format!("expected a class id, got {line:?}")))?;
            if id >= num_classes {
                return Err(Error::parse(source, i as u64 + 1, format!("class {id} out of range for {num_classes} classes")));
            }
            classes.insert(id);
        }
        Ok(Self {
            name: name.to_string(),
            classes,
        })
    }

    pub fn read(name: &str, path: &Path, num_classes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(name, &text, &path.display().to_string(), num_classes)
    }
}

/// Top-k recall of one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassRecall {
    pub class: usize,
    pub instances: usize,
    pub hits: usize,
}

impl ClassRecall {
    pub fn recall(&self) -> f64 {
        self.hits as f64 / self.instances as f64
    }
}

/// Per-class top-k recall for every class with at least one instance,
/// ascending by class id.
pub fn per_class_recall<P: AsRef<[T]>, T: Real>(predictions: &[P], labels: &[usize], k: usize) -> Result<Vec<ClassRecall>> {
    ensure!(predictions.len() == labels.len(), "{} predictions for {} labels", predictions.len(), labels.len());
    let mut table = std::collections::BTreeMap::<usize, ClassRecall>::new();
    for (p, &label) in predictions.iter().zip(labels) {
        let hit = topk_hit(p.as_ref(), label, k)?;
        let entry = table.entry(label).or_insert(ClassRecall {
            class: label,
            instances: 0,
            hits: 0,
        });
        entry.instances += 1;
        entry.hits += hit as usize;
    }
    Ok(table.into_values().collect())
}

/// Unweighted mean of per-class top-k recall over represented classes,
/// restricted to `subset` when given. `None` when no class qualifies.
pub fn mean_topk_recall<P: AsRef<[T]>, T: Real>(
    predictions: &[P],
    labels: &[usize],
    k: usize,
    subset: Option<&ClassSubset>,
) -> Result<Option<f64>> {
    let recalls = per_class_recall(predictions, labels, k)?;
    Ok(mean_recall(&recalls, subset))
}

pub(crate) fn mean_recall(recalls: &[ClassRecall], subset: Option<&ClassSubset>) -> Option<f64> {
    let chosen: Vec<f64> = recalls
        .iter()
        .filter(|r| subset.is_none_or(|s| s.classes.contains(&r.class)))
        .map(ClassRecall::recall)
        .collect();
    (!chosen.is_empty()).then(|| chosen.iter().sum::<f64>() / chosen.len() as f64)
}

/// Fraction of samples whose label is in the top k.
pub fn topk_accuracy<P: AsRef<[T]>, T: Real>(predictions: &[P], labels: &[usize], k: usize) -> Result<f64> {
    ensure!(predictions.len() == labels.len(), "{} predictions for {} labels", predictions.len(), labels.len());
    ensure!(!labels.is_empty(), "no samples");
    let mut hits = 0;
    for (p, &l) in predictions.iter().zip(labels) {
        hits += topk_hit(p.as_ref(), l, k)? as usize;
    }
    Ok(hits as f64 / labels.len() as f64)
}
