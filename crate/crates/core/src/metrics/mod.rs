//! Translation-quality metrics: BLEU, METEOR, ROUGE-L and CodeBLEU.
//!
//! All scores lie in `[0, 1]`. Token-level metrics run over [`tokenize_code`]
//! output. CodeBLEU combines four parts: plain n-gram BLEU, keyword-weighted
//! n-gram BLEU, syntax-subtree match and def-use dataflow match.

mod bleu;
mod dataflow;
mod meteor;
mod rouge;
mod syntax;
mod tokenize;

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu, weighted_bleu};
pub use dataflow::{dataflow_match, extract_edges, DefUseEdge};
pub use meteor::{meteor, stem, MeteorParams};
pub use rouge::{lcs_length, rouge_l};
pub use syntax::{
    balanced_prefix_len, syntax_match, syntax_match_with, BracketParser, NodeKind,
    ParseTreeProvider, SyntaxNode,
};
pub use tokenize::tokenize_code;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Java,
    CSharp,
    /// Synthetic token language of the toy trainer; has no keywords.
    Toy,
}

impl Language {
    pub fn keywords(self) -> &'static HashSet<&'static str> {
        static JAVA: OnceLock<HashSet<&'static str>> = OnceLock::new();
        static CSHARP: OnceLock<HashSet<&'static str>> = OnceLock::new();
        static NONE: OnceLock<HashSet<&'static str>> = OnceLock::new();
        let load = |text: &'static str| {
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect()
        };
        match self {
            Language::Java => {
                JAVA.get_or_init(|| load(include_str!("../../data/java_keywords.txt")))
            }
            Language::CSharp => {
                CSHARP.get_or_init(|| load(include_str!("../../data/csharp_keywords.txt")))
            }
            Language::Toy => NONE.get_or_init(HashSet::new),
        }
    }

    pub fn is_keyword(self, token: &str) -> bool {
        self.keywords().contains(token)
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Language::Java => "java",
            Language::CSharp => "csharp",
            Language::Toy => "toy",
        })
    }
}

impl std::str::FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Language::Java),
            "csharp" | "cs" | "c#" => Ok(Language::CSharp),
            "toy" | "toy-src" | "toy-tgt" => Ok(Language::Toy),
            other => Err(Error::Argument(format!(
                "unknown language '{other}' (expected java, csharp or toy)"
            ))),
        }
    }
}

/// CodeBLEU mixing weights for (ngram, weighted ngram, syntax, dataflow).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        Self {
            ngram: 0.25,
            weighted_ngram: 0.25,
            syntax: 0.25,
            dataflow: 0.25,
        }
    }
}

impl CodeBleuWeights {
    pub fn new(ngram: f64, weighted_ngram: f64, syntax: f64, dataflow: f64) -> Result<Self> {
        let w = Self {
            ngram,
            weighted_ngram,
            syntax,
            dataflow,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.ngram, self.weighted_ngram, self.syntax, self.dataflow];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Argument(
                "CodeBLEU weights must be non-negative".into(),
            ));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "CodeBLEU weights sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub codebleu_weights: CodeBleuWeights,
    pub bleu_max_ngram: usize,
    /// Replaces zero n-gram precisions before the geometric mean.
    pub bleu_epsilon: f64,
    pub meteor: MeteorParams,
    /// Multiplier on n-grams containing a keyword in weighted BLEU.
    pub keyword_weight: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            codebleu_weights: CodeBleuWeights::default(),
            bleu_max_ngram: 4,
            bleu_epsilon: 1e-9,
            meteor: MeteorParams::default(),
            keyword_weight: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CodeBleuParts {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub syntax: f64,
    pub dataflow: f64,
}

impl CodeBleuParts {
    pub fn combine(&self, w: &CodeBleuWeights) -> f64 {
        (w.ngram * self.ngram
            + w.weighted_ngram * self.weighted_ngram
            + w.syntax * self.syntax
            + w.dataflow * self.dataflow)
            .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub codebleu: f64,
    pub codebleu_parts: CodeBleuParts,
}

impl MetricReport {
    /// The four headline scores, in reporting order.
    pub fn headline(&self) -> [f64; 4] {
        [self.bleu, self.meteor, self.rouge_l, self.codebleu]
    }

    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        if reports.is_empty() {
            return MetricReport::default();
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MetricReport {
            bleu: avg(|r| r.bleu),
            meteor: avg(|r| r.meteor),
            rouge_l: avg(|r| r.rouge_l),
            codebleu: avg(|r| r.codebleu),
            codebleu_parts: CodeBleuParts {
                ngram: avg(|r| r.codebleu_parts.ngram),
                weighted_ngram: avg(|r| r.codebleu_parts.weighted_ngram),
                syntax: avg(|r| r.codebleu_parts.syntax),
                dataflow: avg(|r| r.codebleu_parts.dataflow),
            },
        }
    }
}

pub const HEADLINE_METRICS: [&str; 4] = ["bleu", "meteor", "rouge_l", "codebleu"];

/// CodeBLEU parts and combined score for one candidate/reference pair.
pub fn codebleu(
    candidate: &str,
    reference: &str,
    language: Language,
    config: &MetricConfig,
) -> Result<(CodeBleuParts, f64)> {
    config.codebleu_weights.validate()?;
    let cand = tokenize_code(candidate);
    let refs = tokenize_code(reference);
    let parts = codebleu_parts(&cand, &refs, candidate, reference, language, config);
    Ok((parts, parts.combine(&config.codebleu_weights)))
}

fn codebleu_parts(
    cand: &[String],
    refs: &[String],
    candidate: &str,
    reference: &str,
    language: Language,
    config: &MetricConfig,
) -> CodeBleuParts {
    let kw = config.keyword_weight;
    CodeBleuParts {
        ngram: bleu(cand, refs, config.bleu_max_ngram, config.bleu_epsilon),
        weighted_ngram: weighted_bleu(
            cand,
            refs,
            config.bleu_max_ngram,
            config.bleu_epsilon,
            |g| {
                if g.iter().any(|t| language.is_keyword(t)) {
                    kw
                } else {
                    1.0
                }
            },
        ),
        syntax: syntax_match(candidate, reference, language),
        dataflow: dataflow_match(candidate, reference, language),
    }
}

/// Every metric for one pair.
pub fn evaluate_pair(
    candidate: &str,
    reference: &str,
    language: Language,
    config: &MetricConfig,
) -> Result<MetricReport> {
    config.codebleu_weights.validate()?;
    let cand = tokenize_code(candidate);
    let refs = tokenize_code(reference);
    let parts = codebleu_parts(&cand, &refs, candidate, reference, language, config);
    Ok(MetricReport {
        bleu: parts.ngram,
        meteor: meteor(&cand, &refs, config.meteor),
        rouge_l: rouge_l(&cand, &refs),
        codebleu: parts.combine(&config.codebleu_weights),
        codebleu_parts: parts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub mean: MetricReport,
    pub per_record: Vec<MetricReport>,
}

/// Scores aligned candidate/reference lists; the corpus score is the mean of
/// per-record scores.
pub fn evaluate_corpus<S: AsRef<str>>(
    candidates: &[S],
    references: &[S],
    language: Language,
    config: &MetricConfig,
) -> Result<CorpusReport> {
    if candidates.len() != references.len() {
        return Err(Error::Argument(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let per_record = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| evaluate_pair(c.as_ref(), r.as_ref(), language, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusReport {
        mean: MetricReport::mean(&per_record),
        per_record,
    })
}
