use serde::{Deserialize, Serialize};

/// `alpha` balances precision and recall, `beta` and `gamma` shape the
/// fragmentation penalty `gamma · (chunks / matches)^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

/// Suffix-stripping stemmer: lowercases and removes one common inflection.
pub fn stem(token: &str) -> String {
    let lower = token.to_lowercase();
    for suffix in [
        "ations", "ation", "ings", "ing", "edly", "ed", "ies", "es", "ly", "s",
    ] {
        if let Some(root) = lower.strip_suffix(suffix) {
            if root.chars().count() >= 3 {
                return root.to_string();
            }
        }
    }
    lower
}

/// METEOR over unigram alignments: exact matches first, then stem matches
/// among the remaining tokens.
pub fn meteor(candidate: &[String], reference: &[String], params: MeteorParams) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut align: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut ref_used = vec![false; reference.len()];

    align_stage(&mut align, &mut ref_used, |i, j| {
        candidate[i] == reference[j]
    });
    let cand_stems: Vec<String> = candidate.iter().map(|t| stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();
    align_stage(&mut align, &mut ref_used, |i, j| {
        cand_stems[i] == ref_stems[j]
    });

    let matches = align.iter().filter(|a| a.is_some()).count();
    if matches == 0 {
        return 0.0;
    }
    let chunks = count_chunks(&align);
    let m = matches as f64;
    let precision = m / candidate.len() as f64;
    let recall = m / reference.len() as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (chunks as f64 / m).powf(params.beta);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// Greedy left-to-right matching that prefers continuing the previous
/// candidate token's chunk, falling back to the leftmost free reference token.
fn align_stage<F>(align: &mut [Option<usize>], ref_used: &mut [bool], eq: F)
where
    F: Fn(usize, usize) -> bool,
{
    for i in 0..align.len() {
        if align[i].is_some() {
            continue;
        }
        let free = |j: usize| !ref_used[j] && eq(i, j);
        let continuation = i
            .checked_sub(1)
            .and_then(|p| align[p])
            .map(|j| j + 1)
            .filter(|&j| j < ref_used.len() && free(j));
        let pick = continuation.or_else(|| (0..ref_used.len()).find(|&j| free(j)));
        if let Some(j) = pick {
            align[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

fn count_chunks(align: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in align {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    chunks
}
