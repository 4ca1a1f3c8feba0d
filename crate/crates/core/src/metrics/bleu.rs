use std::collections::HashMap;

/// Sentence BLEU with uniform n-gram weights, ε-smoothing of zero precisions
/// and the standard brevity penalty.
///
/// An order `n` for which neither side has any n-gram (both shorter than `n`)
/// is left out of the geometric mean, so identical short inputs still score 1.
pub fn bleu(candidate: &[String], reference: &[String], max_n: usize, epsilon: f64) -> f64 {
    weighted_bleu(candidate, reference, max_n, epsilon, |_| 1.0)
}

/// BLEU where every n-gram carries `weight(ngram)` in both the clipped-match
/// numerator and the candidate-count denominator.
pub fn weighted_bleu<W>(
    candidate: &[String],
    reference: &[String],
    max_n: usize,
    epsilon: f64,
    weight: W,
) -> f64
where
    W: Fn(&[String]) -> f64,
{
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n {
        if candidate.len() < n && reference.len() < n {
            continue;
        }
        orders += 1;
        let cand_counts = ngram_counts(candidate, n);
        let ref_counts = ngram_counts(reference, n);
        let mut matched = 0.0;
        let mut total = 0.0;
        for (gram, &count) in &cand_counts {
            let w = weight(gram);
            let clip = count.min(ref_counts.get(gram).copied().unwrap_or(0));
            matched += w * clip as f64;
            total += w * count as f64;
        }
        let p = if total > 0.0 { matched / total } else { 0.0 };
        log_sum += if p > 0.0 { p.ln() } else { epsilon.ln() };
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_is_one() {
        let a = words("a b c d e f");
        assert_eq!(bleu(&a, &a, 4, 1e-9), 1.0);
        let short = words("x y");
        assert_eq!(bleu(&short, &short, 4, 1e-9), 1.0);
    }

    #[test]
    fn disjoint_hits_epsilon_floor() {
        let s = bleu(&words("a b c d"), &words("e f g h"), 4, 1e-9);
        assert!(s < 1e-6 && s > 0.0);
    }

    #[test]
    fn brevity_penalty_only() {
        // all precisions are 1; BP = exp(1 - 5/4)
        let s = bleu(&words("a b c d"), &words("a b c d e"), 4, 1e-9);
        assert!((s - (-0.25f64).exp()).abs() < 1e-12);
        assert!((s - 0.7788).abs() < 1e-4);
    }

    #[test]
    fn hand_counted_precisions() {
        // cand "a a b c", ref "a b c d"
        // p1 = (1 + 1 + 1)/4, p2 = {aa:0, ab:1, bc:1}/3, p3 = {aab:0, abc:1}/2, p4 = 0 -> eps
        let s = bleu(&words("a a b c"), &words("a b c d"), 4, 1e-9);
        let expected = ((0.75f64).ln() + (2.0f64 / 3.0).ln() + 0.5f64.ln() + 1e-9f64.ln()) / 4.0;
        assert!((s - expected.exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_candidate_is_zero() {
        assert_eq!(bleu(&[], &words("a"), 4, 1e-9), 0.0);
    }

    #[test]
    fn weights_shift_precision() {
        let cand = words("if x");
        let reference = words("if y");
        let plain = weighted_bleu(&cand, &reference, 1, 1e-9, |_| 1.0);
        let heavy = weighted_bleu(&cand, &reference, 1, 1e-9, |g| {
            if g[0] == "if" {
                5.0
            } else {
                1.0
            }
        });
        assert!((plain - 0.5).abs() < 1e-15);
        assert!((heavy - 5.0 / 6.0).abs() < 1e-15);
    }
}
