//! Cohen's kappa for two raters, and its mean over annotator pairs.

use serde::{Deserialize, Serialize};

use super::{LabelMatrix, MetricsError, Result};
use crate::domain::AnnotatorId;

/// Cohen's kappa between two equally long label sequences.
///
/// Computed as `(n·agree − Σ_c a_c·b_c) / (n² − Σ_c a_c·b_c)`, i.e.
/// `(p_o − p_e) / (1 − p_e)` with the counts kept integral until the final
/// division. When `p_e = 1` (both raters constant on the same label) the
/// sequences agree everywhere and the result is defined as 1.
pub fn pairwise_kappa<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut labels: Vec<&T> = Vec::new();
    let pairs: Vec<(usize, usize)> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (intern(&mut labels, x), intern(&mut labels, y)))
        .collect();
    Ok(kappa_from_pairs(&pairs, labels.len()))
}

fn intern<'a, T: PartialEq>(labels: &mut Vec<&'a T>, x: &'a T) -> usize {
    match labels.iter().position(|l| *l == x) {
        Some(i) => i,
        None => {
            labels.push(x);
            labels.len() - 1
        }
    }
}

/// Kappa over `(label_a, label_b)` index pairs with labels in `0..k`.
pub(crate) fn kappa_from_pairs(pairs: &[(usize, usize)], k: usize) -> f64 {
    let n = pairs.len() as u64;
    let mut row = vec![0u64; k];
    let mut col = vec![0u64; k];
    let mut agree = 0u64;
    for &(i, j) in pairs {
        row[i] += 1;
        col[j] += 1;
        if i == j {
            agree += 1;
        }
    }
    let chance: u64 = row.iter().zip(&col).map(|(r, c)| r * c).sum();
    let den = n * n - chance;
    if den == 0 {
        return 1.0;
    }
    let num = (n * agree) as f64 - chance as f64;
    (num / den as f64).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub first: AnnotatorId,
    pub second: AnnotatorId,
    /// Items both annotators labeled.
    pub items: usize,
    pub kappa: Option<f64>,
    /// Set when the pair was left out of the mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub mean: f64,
    pub pairs: Vec<PairKappa>,
}

/// Cohen's kappa for every unordered annotator pair on their jointly
/// labeled items, and the unweighted mean over pairs with coverage.
pub fn mean_pairwise_kappa(m: &LabelMatrix) -> Result<AgreementSummary> {
    let n_ann = m.annotators().len();
    if n_ann < 2 {
        return Err(MetricsError::TooFewAnnotators(n_ann));
    }
    let k = m.categories().len();
    let mut pairs = Vec::with_capacity(n_ann * (n_ann - 1) / 2);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for a in 0..n_ann {
        for b in a + 1..n_ann {
            let joint: Vec<(usize, usize)> = m
                .row(a)
                .iter()
                .zip(m.row(b))
                .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                .collect();
            let (kappa, flag) = if joint.is_empty() {
                (None, Some("no jointly labeled items".to_owned()))
            } else {
                let kv = kappa_from_pairs(&joint, k);
                sum += kv;
                counted += 1;
                (Some(kv), None)
            };
            pairs.push(PairKappa {
                first: m.annotators()[a].clone(),
                second: m.annotators()[b].clone(),
                items: joint.len(),
                kappa,
                flag,
            });
        }
    }
    if counted == 0 {
        return Err(MetricsError::NoCoverage);
    }
    Ok(AgreementSummary {
        mean: sum / counted as f64,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Contingency-table route: p_o from the diagonal, p_e from marginals.
    fn oracle(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let mut table = [[0.0f64; 4]; 4];
        for (&x, &y) in a.iter().zip(b) {
            table[x as usize][y as usize] += 1.0;
        }
        let po: f64 = (0..4).map(|c| table[c][c]).sum::<f64>() / n;
        let pe: f64 = (0..4)
            .map(|c| {
                let r: f64 = table[c].iter().sum();
                let col: f64 = (0..4).map(|x| table[x][c]).sum();
                (r / n) * (col / n)
            })
            .sum();
        if (1.0 - pe).abs() < 1e-15 {
            1.0
        } else {
            (po - pe) / (1.0 - pe)
        }
    }

    #[test]
    fn worked_example_is_one_half() {
        let a = ["pos", "pos", "neg", "neg"];
        let b = ["pos", "neg", "neg", "neg"];
        assert_eq!(pairwise_kappa(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn perfect_and_inverse_agreement() {
        let a = ["pos", "neg", "neu", "pos"];
        assert_eq!(pairwise_kappa(&a, &a).unwrap(), 1.0);
        assert_eq!(pairwise_kappa(&["pos", "neg"], &["neg", "pos"]).unwrap(), -1.0);
    }

    #[test]
    fn constant_identical_raters_are_one() {
        assert_eq!(pairwise_kappa(&["x", "x", "x"], &["x", "x", "x"]).unwrap(), 1.0);
    }

    #[test]
    fn length_and_empty_errors() {
        assert_eq!(
            pairwise_kappa(&["a"], &["a", "b"]),
            Err(MetricsError::LengthMismatch { left: 1, right: 2 })
        );
        assert_eq!(pairwise_kappa::<&str>(&[], &[]), Err(MetricsError::Empty));
    }

    fn matrix(rows: Vec<Vec<Option<usize>>>) -> LabelMatrix {
        let n_ann = rows.len();
        let n_inst = rows[0].len();
        LabelMatrix::from_rows(
            vec!["p".into(), "n".into(), "u".into()],
            (0..n_ann).map(|i| AnnotatorId::new(format!("a{i}"))).collect(),
            (0..n_inst).map(|i| format!("i{i}").into()).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn two_annotator_mean_is_the_pair_value() {
        let m = matrix(vec![
            vec![Some(0), Some(0), Some(1), Some(1)],
            vec![Some(0), Some(1), Some(1), Some(1)],
        ]);
        let s = mean_pairwise_kappa(&m).unwrap();
        assert_eq!(s.pairs.len(), 1);
        assert_eq!(s.mean, 0.5);
    }

    #[test]
    fn four_annotators_give_six_pairs() {
        let row = |v: [usize; 5]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
        let m = matrix(vec![
            row([0, 1, 2, 0, 1]),
            row([0, 1, 2, 1, 1]),
            row([0, 2, 2, 0, 1]),
            row([1, 1, 2, 0, 0]),
        ]);
        let s = mean_pairwise_kappa(&m).unwrap();
        assert_eq!(s.pairs.len(), 6);
        let mean: f64 = s.pairs.iter().map(|p| p.kappa.unwrap()).sum::<f64>() / 6.0;
        assert!((s.mean - mean).abs() < 1e-15);
    }

    #[test]
    fn three_annotators_with_constructed_pair_values() {
        // A–B agree on items 0..4 only (B is absent afterwards): kappa 1.
        // B–C on items 0..4: kappa 0.5. A–C on all 8 items: kappa 0.
        let p = Some(0);
        let n = Some(1);
        let a = vec![p, p, n, n, n, n, n, n];
        let b = vec![p, p, n, n, None, None, None, None];
        let c = vec![p, n, n, n, p, p, p, n];
        let as_u8 = |v: &[Option<usize>], idx: &[usize]| -> Vec<u8> {
            idx.iter().map(|&i| v[i].unwrap() as u8).collect()
        };
        let first4: Vec<usize> = (0..4).collect();
        let all8: Vec<usize> = (0..8).collect();
        assert_eq!(oracle(&as_u8(&a, &first4), &as_u8(&b, &first4)), 1.0);
        assert_eq!(oracle(&as_u8(&b, &first4), &as_u8(&c, &first4)), 0.5);
        assert!(oracle(&as_u8(&a, &all8), &as_u8(&c, &all8)).abs() < 1e-15);

        let s = mean_pairwise_kappa(&matrix(vec![a, b, c])).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pair_without_coverage_is_flagged() {
        let m = matrix(vec![
            vec![Some(0), Some(1), None, None],
            vec![None, None, Some(0), Some(1)],
            vec![Some(0), Some(1), Some(0), Some(1)],
        ]);
        let s = mean_pairwise_kappa(&m).unwrap();
        assert!(s.pairs[0].flag.is_some());
        assert_eq!(s.pairs[0].kappa, None);
        assert_eq!(s.mean, 1.0);

        let lone = matrix(vec![vec![Some(0)]]);
        assert_eq!(
            mean_pairwise_kappa(&lone),
            Err(MetricsError::TooFewAnnotators(1))
        );
    }

    #[test]
    fn matches_oracle_on_short_sequences() {
        // Lengths up to 4 over 3 labels; the acceptance suite goes to 6.
        for len in 1..=4u32 {
            let total = 3usize.pow(len);
            let decode = |mut code: usize| -> Vec<u8> {
                (0..len)
                    .map(|_| {
                        let d = (code % 3) as u8;
                        code /= 3;
                        d
                    })
                    .collect()
            };
            for x in 0..total {
                let a = decode(x);
                for y in 0..total {
                    let b = decode(y);
                    let k = pairwise_kappa(&a, &b).unwrap();
                    assert!((k - oracle(&a, &b)).abs() < 1e-12, "{a:?} {b:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..40)) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let ab = pairwise_kappa(&a, &b).unwrap();
            let ba = pairwise_kappa(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn invariant_under_relabeling(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40),
            perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let ra: Vec<usize> = a.iter().map(|&x| perm[x]).collect();
            let rb: Vec<usize> = b.iter().map(|&x| perm[x]).collect();
            let k1 = pairwise_kappa(&a, &b).unwrap();
            let k2 = pairwise_kappa(&ra, &rb).unwrap();
            prop_assert!((k1 - k2).abs() < 1e-12);
        }
    }
}
