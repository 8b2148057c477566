//! Classification metrics.

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{a} predictions for {b} labels"
        )));
    }
    if a == 0 {
        return Err(Error::Data("no samples to score".into()));
    }
    Ok(())
}

/// `m[true][predicted]` counts over `classes` classes.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(preds.len(), labels.len())?;
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Invalid(format!(
                "class index out of range for {classes} classes"
            )));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Recall per class; `None` for classes without samples.
pub fn per_class_recall(confusion: &[Vec<usize>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect()
}

/// Mean recall over the classes that occur in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let classes = preds.iter().chain(labels).max().map_or(0, |m| m + 1);
    let recalls = per_class_recall(&confusion_matrix(preds, labels, classes)?);
    let present: Vec<f64> = recalls.into_iter().flatten().collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Macro-averaged one-vs-rest ROC AUC.
///
/// Each class's AUC is the probability that a random positive scores above
/// a random negative, ties counting one half; it is computed from mid-ranks.
/// Classes without positives or without negatives are skipped.
pub fn auc_macro(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let classes = probs[0].len();
    if probs.iter().any(|p| p.len() != classes) {
        return Err(Error::Shape("probability rows differ in length".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Invalid(format!("label {l} out of range")));
    }
    let mut aucs = Vec::new();
    for c in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let n_pos = pos.iter().filter(|&&p| p).count();
        let n_neg = pos.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            continue;
        }
        let ranks = mid_ranks(&scores);
        let rank_sum: f64 = ranks.iter().zip(&pos).filter(|(_, p)| **p).map(|(r, _)| r).sum();
        let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
        aucs.push(u / (n_pos as f64 * n_neg as f64));
    }
    if aucs.is_empty() {
        return Err(Error::Data(
            "AUC is undefined when only one class is present".into(),
        ));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
fn mid_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}
