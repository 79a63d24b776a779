//! Partition agreement (ARI, MCR) and the BIC.

use std::collections::BTreeMap;

use crate::error::{MvstError, Result};

/// Largest number of distinct labels accepted by [`mcr`].
pub const MCR_MAX_LABELS: usize = 8;

fn choose2(k: f64) -> f64 {
    0.5 * k * (k - 1.0)
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(MvstError::LengthMismatch { expected: a.len(), found: b.len() });
    }
    Ok(())
}

fn contingency(a: &[usize], b: &[usize]) -> BTreeMap<(usize, usize), usize> {
    let mut table = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
    }
    table
}

/// Hubert–Arabie adjusted Rand index.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let table = contingency(a, b);
    let mut row_sums: BTreeMap<usize, usize> = BTreeMap::new();
    let mut col_sums: BTreeMap<usize, usize> = BTreeMap::new();
    let mut index = 0.0;
    for (&(x, y), &count) in &table {
        *row_sums.entry(x).or_insert(0) += count;
        *col_sums.entry(y).or_insert(0) += count;
        index += choose2(count as f64);
    }
    let sum_a: f64 = row_sums.values().map(|&c| choose2(c as f64)).sum();
    let sum_b: f64 = col_sums.values().map(|&c| choose2(c as f64)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        // Both partitions trivial (all singletons or one block).
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, arr: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(arr.clone());
            return;
        }
        heap(k - 1, arr, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                arr.swap(i, k - 1);
            } else {
                arr.swap(0, k - 1);
            }
            heap(k - 1, arr, out);
        }
    }
    let mut arr: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    if k == 0 {
        out.push(arr);
    } else {
        heap(k, &mut arr, &mut out);
    }
    out
}

/// The relabeling of `predicted` that agrees with `truth` most often, as a
/// map from each predicted label to a truth label (or to a fresh label
/// when `predicted` has more classes), plus the number of agreements.
pub fn best_relabeling(truth: &[usize], predicted: &[usize]) -> Result<(BTreeMap<usize, usize>, usize)> {
    check_lengths(truth, predicted)?;
    let t_labels = distinct(truth);
    let p_labels = distinct(predicted);
    let k = t_labels.len().max(p_labels.len());
    if k > MCR_MAX_LABELS {
        return Err(MvstError::Capacity(format!(
            "misclassification rate supports at most {MCR_MAX_LABELS} labels, got {k}"
        )));
    }
    let t_index: BTreeMap<usize, usize> = t_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let p_index: BTreeMap<usize, usize> = p_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut counts = vec![vec![0usize; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        counts[p_index[p]][t_index[t]] += 1;
    }
    let mut best: Option<(Vec<usize>, usize)> = None;
    for perm in permutations(k) {
        let agree: usize = (0..k).map(|i| counts[i][perm[i]]).sum();
        if best.as_ref().is_none_or(|(_, b)| agree > *b) {
            best = Some((perm, agree));
        }
    }
    let (perm, agree) = best.expect("at least one permutation");
    let fresh = t_labels.iter().max().copied().unwrap_or(0);
    let mapping = p_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let target = perm[i];
            let mapped = t_labels.get(target).copied().unwrap_or(fresh + 1 + target);
            (l, mapped)
        })
        .collect();
    Ok((mapping, agree))
}

/// Misclassification rate minimized over relabelings of `predicted`.
pub fn mcr(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        check_lengths(truth, predicted)?;
        return Ok(0.0);
    }
    let (_, agree) = best_relabeling(truth, predicted)?;
    Ok(1.0 - agree as f64 / truth.len() as f64)
}

/// BIC = −2ℓ + m ln N (smaller is better).
pub fn bic(loglik: f64, n_params: usize, n_obs: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_obs as f64).ln()
}
