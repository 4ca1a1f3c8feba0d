use fedxlat_core::metrics::{
    bleu, codebleu, evaluate_pair, lcs_length, meteor, rouge_l, tokenize_code, CodeBleuWeights,
    Language, MeteorParams, MetricConfig,
};
use proptest::prelude::*;

const PIECES: &[&str] = &[
    "int", "x", "y", "=", "+", "1", ";", "if", "(", ")", "{", "}", "return", "foo", ".", "bar",
    "\"s\"", "while", "<", "new", "List", ",",
];

fn code() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(PIECES), 0..30).prop_map(|v| v.join(" "))
}

fn lang() -> impl Strategy<Value = Language> {
    prop::sample::select(vec![Language::Java, Language::CSharp, Language::Toy])
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn scores_lie_in_unit_interval(c in code(), r in code(), l in lang()) {
        let rep = evaluate_pair(&c, &r, l, &MetricConfig::default()).unwrap();
        for s in rep.headline() {
            prop_assert!(in_unit(s), "{s}");
        }
        let p = rep.codebleu_parts;
        prop_assert!(in_unit(p.ngram) && in_unit(p.weighted_ngram) && in_unit(p.syntax) && in_unit(p.dataflow));
    }

    #[test]
    fn identical_inputs_score_one(c in code(), l in lang()) {
        prop_assume!(!tokenize_code(&c).is_empty());
        let rep = evaluate_pair(&c, &c, l, &MetricConfig::default()).unwrap();
        prop_assert_eq!(rep.bleu, 1.0);
        prop_assert_eq!(rep.rouge_l, 1.0);
        prop_assert_eq!(rep.codebleu, 1.0);
    }

    #[test]
    fn rouge_is_symmetric_and_bounded_by_lcs(c in code(), r in code()) {
        let (a, b) = (tokenize_code(&c), tokenize_code(&r));
        prop_assert!((rouge_l(&a, &b) - rouge_l(&b, &a)).abs() < 1e-15);
        prop_assert!(lcs_length(&a, &b) <= a.len().min(b.len()));
    }

    #[test]
    fn meteor_below_one(c in code(), r in code()) {
        let (a, b) = (tokenize_code(&c), tokenize_code(&r));
        let m = meteor(&a, &b, MeteorParams::default());
        prop_assert!((0.0..1.0).contains(&m));
    }

    #[test]
    fn degenerate_weights_select_ngram_part(c in code(), r in code(), l in lang()) {
        let config = MetricConfig {
            codebleu_weights: CodeBleuWeights::new(1.0, 0.0, 0.0, 0.0).unwrap(),
            ..MetricConfig::default()
        };
        let (parts, score) = codebleu(&c, &r, l, &config).unwrap();
        prop_assert_eq!(score, parts.ngram);
        prop_assert_eq!(score, bleu(&tokenize_code(&c), &tokenize_code(&r), 4, 1e-9));
    }
}
