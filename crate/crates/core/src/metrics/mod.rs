//! Distances, rank correlation, and the language and generalization
//! reports built on them.

mod eval;
mod language;

pub use eval::{
    etl_transfer, generalization_report, message_blocked_audit, BlockedAudit, EtlReport,
    GeneralizationReport, SplitAccuracy, GENERALIZATION_SPLITS,
};
pub use language::{
    token_distribution, topsim, ComboMessage, DumpRecord, LanguageDump, Space, TokenEntry,
    TokenTable, TopsimReport,
};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agents::TrainError;
use crate::game::GameError;
use crate::rules::{AttributeDomain, Panel, RuleVector};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("language has fewer than two distinct messages")]
    DegenerateLanguage,
    #[error("split `{0}` is missing")]
    MissingSplit(String),
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("no message for {} rule combination(s), e.g. {}", .missing.len(), .missing.first().map(ToString::to_string).unwrap_or_default())]
    MappingIncomplete { missing: Vec<RuleVector> },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Fraction of attributes on which the rule vectors differ.
pub fn hamming_norm(a: &RuleVector, b: &RuleVector) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Context panels flattened to one vector of values divided by N.
pub fn context_vector(contexts: &[Panel], domain: AttributeDomain) -> Vec<f64> {
    let n = domain.cardinality() as f64;
    contexts
        .iter()
        .flat_map(|p| p.0.iter().map(move |&v| v as f64 / n))
        .collect()
}

/// `1 − cos(a, b)`; 1 when either vector is zero.
pub fn panel_cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance("first sequence"));
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance("second sequence"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ over average ranks, with a two-sided p-value from the
/// t-approximation on `n − 2` degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(MetricError::TooFewSamples {
            needed: 3,
            got: xs.len(),
        });
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys))?;
    let df = (xs.len() - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok((rho, p))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::rules::Rule;

    fn rv(rules: &[Rule]) -> RuleVector {
        RuleVector(rules.to_vec())
    }

    #[test]
    fn hamming_examples() {
        use Rule::*;
        let a = rv(&[Add, Minus, Min, Max]);
        assert_eq!(hamming_norm(&a, &a).unwrap(), 0.0);
        assert_eq!(hamming_norm(&a, &rv(&[Minus, Min, Max, Add])).unwrap(), 1.0);
        assert_eq!(hamming_norm(&a, &rv(&[Add, Minus, Min, Add])).unwrap(), 0.25);
        assert!(hamming_norm(&a, &rv(&[Add])).is_err());
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
        assert_eq!(levenshtein(b"abc", b"abd"), 1);
        assert_eq!(levenshtein(b"ab", b"ba"), 2);
        assert_eq!(levenshtein(b"", b"abc"), 3);
    }

    #[test]
    fn cosine_examples() {
        assert!(panel_cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-12);
        assert!((panel_cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((panel_cosine(&[1.0, 1.0], &[-1.0, -1.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(panel_cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn spearman_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&xs, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap().0, 1.0);
        assert_eq!(spearman(&xs, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap().0, -1.0);
        assert!(matches!(spearman(&xs, &[1.0; 5]), Err(MetricError::ZeroVariance(_))));
        let (rho, p) = spearman(&xs, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
        // t = 0.8·√(3/0.36) ≈ 2.3094 on 3 degrees of freedom
        assert!((p - 0.104).abs() < 1e-3, "{p}");
    }

    /// Rank of each entry by counting, independent of the sort-based ranks.
    fn rank_by_counting(xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|x| {
                let below = xs.iter().filter(|y| *y < x).count() as f64;
                let equal = xs.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    /// Spearman's ρ as `1 − 6Σd²/(n(n²−1))` generalized to ties by the
    /// Pearson form over counted ranks.
    fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
        let (rx, ry) = (rank_by_counting(xs), rank_by_counting(ys));
        let n = xs.len() as f64;
        let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    fn levenshtein_oracle(a: &[u8], b: &[u8]) -> usize {
        // plain recursion over prefixes
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let (x, y) = (&a[..a.len() - 1], &b[..b.len() - 1]);
        let sub = levenshtein_oracle(x, y) + usize::from(a[a.len() - 1] != b[b.len() - 1]);
        sub.min(levenshtein_oracle(x, b) + 1).min(levenshtein_oracle(a, y) + 1)
    }

    proptest! {
        #[test]
        fn spearman_matches_counting_oracle(
            pairs in prop::collection::vec((0u8..5, 0u8..5), 3..30)
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match spearman(&xs, &ys) {
                Ok((rho, p)) => {
                    prop_assert!((rho - spearman_oracle(&xs, &ys)).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(&p));
                }
                Err(MetricError::ZeroVariance(_)) => {
                    prop_assert!(xs.iter().all(|&x| x == xs[0]) || ys.iter().all(|&y| y == ys[0]));
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn tie_free_monotone_is_exactly_one(xs in prop::collection::btree_set(-1000i32..1000, 3..40)) {
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x * x * x + 7.0).collect();
            prop_assert_eq!(spearman(&xs, &ys).unwrap().0, 1.0);
        }

        #[test]
        fn levenshtein_is_a_metric(
            a in prop::collection::vec(0u8..4, 0..7),
            b in prop::collection::vec(0u8..4, 0..7),
            c in prop::collection::vec(0u8..4, 0..7),
        ) {
            let d = levenshtein(&a, &b);
            prop_assert_eq!(d, levenshtein_oracle(&a, &b));
            prop_assert_eq!(d, levenshtein(&b, &a));
            prop_assert_eq!(d == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= d + levenshtein(&b, &c));
        }
    }
}
