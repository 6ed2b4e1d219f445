//! Clustering agreement (NMI, adjusted Rand) and classification scores (OA, AA, kappa).
//!
//! Everything is computed from a [`ContingencyTable`]; pair counts come from
//! sums of `C(count, 2)` over the table, never from enumerating pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Co-occurrence counts of two labelings. Rows follow labeling A, columns B.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub row_labels: Vec<u32>,
    pub col_labels: Vec<u32>,
    /// Row-major `rows × cols`.
    pub counts: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.cols() + c]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.cols().max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut out = vec![0; self.cols()];
        for row in self.counts.chunks(self.cols().max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Pair classification counts over all `n(n−1)/2` point pairs.
    pub fn pair_counts(&self) -> PairCounts {
        let same_both: u64 = self.counts.iter().map(|&v| choose2(v)).sum();
        let same_a: u64 = self.row_sums().into_iter().map(choose2).sum();
        let same_b: u64 = self.col_sums().into_iter().map(choose2).sum();
        let total = choose2(self.n);
        PairCounts {
            a: same_both,
            b: same_a - same_both,
            c: same_b - same_both,
            d: total + same_both - same_a - same_b,
        }
    }
}

fn choose2(v: u64) -> u64 {
    v * v.saturating_sub(1) / 2
}

/// Pair counts: `a` together in both, `b` together only in A, `c` together
/// only in B, `d` apart in both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// Cross-tabulates two labelings, counting only positions where `include` is true.
pub fn contingency(labels_a: &[u32], labels_b: &[u32], include: Option<&[bool]>) -> Result<ContingencyTable> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Contract(format!(
            "labelings have lengths {} and {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if let Some(m) = include {
        if m.len() != labels_a.len() {
            return Err(Error::Contract(format!("mask length {} != {}", m.len(), labels_a.len())));
        }
    }
    let mut cells: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut n = 0;
    for (i, (&x, &y)) in labels_a.iter().zip(labels_b).enumerate() {
        if include.is_some_and(|m| !m[i]) {
            continue;
        }
        *cells.entry((x, y)).or_default() += 1;
        n += 1;
    }
    let mut row_labels: Vec<u32> = cells.keys().map(|k| k.0).collect();
    row_labels.dedup();
    let mut col_labels: Vec<u32> = cells.keys().map(|k| k.1).collect();
    col_labels.sort_unstable();
    col_labels.dedup();
    let mut counts = vec![0; row_labels.len() * col_labels.len()];
    for ((x, y), v) in cells {
        let r = row_labels.binary_search(&x).expect("row label");
        let c = col_labels.binary_search(&y).expect("col label");
        counts[r * col_labels.len() + c] = v;
    }
    Ok(ContingencyTable { row_labels, col_labels, counts, n })
}

fn entropy(marginal: &[u64], n: f64) -> f64 {
    marginal
        .iter()
        .filter(|&&v| v > 0)
        .map(|&v| {
            let p = v as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `MI(A, B) / ((H(A) + H(B)) / 2)` with natural-log entropies.
///
/// Both entropies zero gives 1; exactly one zero gives 0.
pub fn nmi(table: &ContingencyTable) -> f64 {
    if table.n == 0 {
        return 0.0;
    }
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let ha = entropy(&rows, n);
    let hb = entropy(&cols, n);
    match (ha == 0.0, hb == 0.0) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut mi = 0.0;
    for (r, &rs) in rows.iter().enumerate() {
        for (c, &cs) in cols.iter().enumerate() {
            let v = table.get(r, c);
            if v == 0 {
                continue;
            }
            let pij = v as f64 / n;
            mi += pij * ((v as f64 * n) / (rs as f64 * cs as f64)).ln();
        }
    }
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

/// Adjusted Rand score from pair counts:
/// `[C(n,2)(a+d) − S] / [C(n,2)² − S]` with `S = (a+b)(a+c) + (c+d)(b+d)`.
///
/// Can be negative. When both labelings are trivial (all one cluster, or all
/// singletons) the denominator vanishes and the labelings agree, so 1 is returned.
pub fn ars(pairs: &PairCounts) -> Result<f64> {
    let total = pairs.total();
    if total == 0 {
        return Err(Error::Undefined("adjusted Rand score needs at least two points".into()));
    }
    let (a, b, c, d) = (pairs.a as f64, pairs.b as f64, pairs.c as f64, pairs.d as f64);
    let n2 = total as f64;
    let s = (a + b) * (a + c) + (c + d) * (b + d);
    let num = n2 * (a + d) - s;
    let den = n2 * n2 - s;
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Hubert–Arabie adjusted Rand index computed directly from the table marginals.
pub fn adjusted_rand_contingency(table: &ContingencyTable) -> Result<f64> {
    if table.n < 2 {
        return Err(Error::Undefined("adjusted Rand index needs at least two points".into()));
    }
    let index: f64 = table.counts.iter().map(|&v| choose2(v) as f64).sum();
    let sum_a: f64 = table.row_sums().into_iter().map(|v| choose2(v) as f64).sum();
    let sum_b: f64 = table.col_sums().into_iter().map(|v| choose2(v) as f64).sum();
    let expected = sum_a * sum_b / choose2(table.n) as f64;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Overall accuracy, average per-class recall, and Cohen's kappa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedScores {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

/// Scores a table whose rows are predictions and columns truth, matching
/// classes by label value.
pub fn supervised_scores(table: &ContingencyTable) -> Result<SupervisedScores> {
    if table.n == 0 {
        return Err(Error::Contract("empty contingency table".into()));
    }
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let mut agree = 0u64;
    let mut chance = 0.0;
    let mut recalls = Vec::with_capacity(table.cols());
    for (c, &label) in table.col_labels.iter().enumerate() {
        let hit = table.row_labels.binary_search(&label).ok();
        let diag = hit.map_or(0, |r| table.get(r, c));
        agree += diag;
        recalls.push(diag as f64 / cols[c] as f64);
        if let Some(r) = hit {
            chance += rows[r] as f64 * cols[c] as f64;
        }
    }
    let po = agree as f64 / n;
    let pe = chance / (n * n);
    let kappa = if pe >= 1.0 {
        if po >= 1.0 { 1.0 } else { 0.0 }
    } else {
        1.0 - (1.0 - po) / (1.0 - pe)
    };
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    Ok(SupervisedScores { oa: po, aa, kappa })
}

/// Maps every predicted cluster to the truth class it overlaps most (ties to
/// the smaller label) and returns the relabeled prediction.
pub fn majority_vote_relabel(pred: &[u32], truth: &[u32], include: Option<&[bool]>) -> Result<Vec<u32>> {
    let table = contingency(pred, truth, include)?;
    let mapping: BTreeMap<u32, u32> = table
        .row_labels
        .iter()
        .enumerate()
        .map(|(r, &label)| {
            let best = (0..table.cols())
                .fold(0, |best, c| if table.get(r, c) > table.get(r, best) { c } else { best });
            (label, table.col_labels[best])
        })
        .collect();
    Ok(pred.iter().map(|p| mapping.get(p).copied().unwrap_or(0)).collect())
}

/// The metrics JSON written by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmi: f64,
    pub ars: f64,
    /// OA/AA/kappa after majority-vote cluster→class mapping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supervised_mapping: Option<String>,
    pub n: u64,
    pub clusters_pred: usize,
    pub clusters_true: usize,
    pub masked_background: u64,
}

/// Background-masked (truth label 0) comparison of a prediction with ground truth.
pub fn evaluate(pred: &[u32], truth: &[u32], supervised: bool) -> Result<MetricsReport> {
    let include: Vec<bool> = truth.iter().map(|&t| t != 0).collect();
    let table = contingency(pred, truth, Some(&include))?;
    if table.n == 0 {
        return Err(Error::Undefined("no labeled pixels remain after masking background".into()));
    }
    let ars_value = if table.n >= 2 { ars(&table.pair_counts())? } else { 1.0 };
    let mut report = MetricsReport {
        nmi: nmi(&table),
        ars: ars_value,
        oa: None,
        aa: None,
        kappa: None,
        supervised_mapping: None,
        n: table.n,
        clusters_pred: table.rows(),
        clusters_true: table.cols(),
        masked_background: truth.len() as u64 - table.n,
    };
    if supervised {
        let mapped = majority_vote_relabel(pred, truth, Some(&include))?;
        let scores = supervised_scores(&contingency(&mapped, truth, Some(&include))?)?;
        report.oa = Some(scores.oa);
        report.aa = Some(scores.aa);
        report.kappa = Some(scores.kappa);
        report.supervised_mapping = Some("majority-vote".into());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contingency_cases() {
        let t = contingency(&[1, 2, 3, 1], &[1, 2, 3, 1], None).unwrap();
        assert_eq!(t.counts, vec![2, 0, 0, 0, 1, 0, 0, 0, 1]);
        let t = contingency(&[5, 5, 5, 5], &[1, 1, 2, 2], None).unwrap();
        assert_eq!((t.rows(), t.cols()), (1, 2));
        let t = contingency(&[1, 1, 2, 2], &[1, 2, 1, 2], None).unwrap();
        assert_eq!(t.counts, vec![1, 1, 1, 1]);
        assert!(contingency(&[1], &[1, 2], None).is_err());
        let t = contingency(&[1, 2, 2], &[0, 1, 1], Some(&[false, true, true])).unwrap();
        assert_eq!(t.n, 2);
    }

    #[test]
    fn nmi_cases() {
        let same = contingency(&[1, 1, 2, 2, 3], &[1, 1, 2, 2, 3], None).unwrap();
        assert!((nmi(&same) - 1.0).abs() < 1e-15);
        let t = contingency(&[1, 1, 1, 1], &[1, 1, 2, 2], None).unwrap();
        assert_eq!(nmi(&t), 0.0);
        let t = contingency(&[1, 1, 2, 2], &[1, 2, 1, 2], None).unwrap();
        assert_eq!(nmi(&t), 0.0);
        let t = contingency(&[4, 4], &[7, 7], None).unwrap();
        assert_eq!(nmi(&t), 1.0);
    }

    #[test]
    fn ars_cases() {
        let t = contingency(&[1, 1, 2, 2, 3], &[2, 2, 3, 3, 1], None).unwrap();
        let p = t.pair_counts();
        assert_eq!((p.b, p.c), (0, 0));
        assert_eq!(ars(&p).unwrap(), 1.0);

        let t = contingency(&[1, 1, 2, 2], &[1, 2, 1, 2], None).unwrap();
        let p = t.pair_counts();
        assert_eq!(p, PairCounts { a: 0, b: 2, c: 2, d: 2 });
        assert!((ars(&p).unwrap() + 0.5).abs() < 1e-15);

        let single = contingency(&[1], &[1], None).unwrap();
        assert!(matches!(ars(&single.pair_counts()), Err(Error::Undefined(_))));
    }

    #[test]
    fn supervised_cases() {
        let t = contingency(&[1, 2, 2, 3], &[1, 2, 2, 3], None).unwrap();
        let s = supervised_scores(&t).unwrap();
        assert_eq!((s.oa, s.aa, s.kappa), (1.0, 1.0, 1.0));

        let t = contingency(&[1, 1, 1, 1], &[1, 1, 2, 2], None).unwrap();
        let s = supervised_scores(&t).unwrap();
        assert!(s.kappa.abs() < 1e-15);
        assert_eq!(s.oa, 0.5);

        // [[3,1],[1,3]]
        let pred = [1, 1, 1, 2, 2, 2, 2, 1];
        let truth = [1, 1, 1, 1, 2, 2, 2, 2];
        let t = contingency(&pred, &truth, None).unwrap();
        assert_eq!(t.counts, vec![3, 1, 1, 3]);
        let s = supervised_scores(&t).unwrap();
        assert!((s.oa - 0.75).abs() < 1e-15);
        assert!((s.kappa - 0.5).abs() < 1e-15);

        let empty = contingency(&[], &[], None).unwrap();
        assert!(supervised_scores(&empty).is_err());
    }

    #[test]
    fn majority_vote() {
        let pred = [7, 7, 7, 9, 9];
        let truth = [1, 1, 2, 2, 2];
        assert_eq!(majority_vote_relabel(&pred, &truth, None).unwrap(), vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn evaluate_masks_background() {
        let truth = [0, 1, 1, 2, 2];
        let pred = [3, 5, 5, 6, 6];
        let r = evaluate(&pred, &truth, true).unwrap();
        assert_eq!(r.n, 4);
        assert_eq!(r.masked_background, 1);
        assert!((r.nmi - 1.0).abs() < 1e-15);
        assert_eq!(r.ars, 1.0);
        assert_eq!(r.oa, Some(1.0));
        assert!(matches!(evaluate(&[1, 2], &[0, 0], false), Err(Error::Undefined(_))));
    }
}
