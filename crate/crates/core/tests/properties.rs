use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use mcqforge::backends::{BackendError, ScriptedGenerator, ScriptedScorer};
use mcqforge::corpus::normalize_option;
use mcqforge::decoding::{apply_repetition_penalty, DecodingError, Generator};
use mcqforge::humaneval::{
    aggregate_ratings, build_assignment, chi2_survival, chi_squared_test, fleiss_kappa, PlanParams,
    RatingRecord, Q1, Q2,
};
use mcqforge::metrics::{bleu, lcs_length, modified_precision, rouge_l, BleuConfig};
use mcqforge::qafilter::{accuracy, QaFilter};
use mcqforge::{
    BpeVocab, GenerationConfig, LogitVector, McqItem, Source, SpecialTokens, Split, Tokenizer,
};

fn merge_tokenizer() -> Tokenizer {
    let merges: Vec<(String, String)> = [
        ("Ġ", "t"),
        ("h", "e"),
        ("Ġt", "he"),
        ("i", "n"),
        ("Ġ", "a"),
        ("e", "r"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let map: HashMap<String, u32> = merges
        .iter()
        .enumerate()
        .map(|(i, (a, b))| (format!("{a}{b}"), i as u32))
        .collect();
    Tokenizer::new(
        BpeVocab::new(map, merges).unwrap(),
        SpecialTokens::default(),
    )
    .unwrap()
}

// --- tokenizer -----------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn tokenizer_round_trips_any_string(s in any::<String>()) {
        let tok = merge_tokenizer();
        prop_assert_eq!(tok.decode(&tok.encode(&s).ids).unwrap(), s.clone());
        let byte = Tokenizer::byte_level();
        prop_assert_eq!(byte.decode(&byte.encode(&s).ids).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn tokenizer_round_trips_wordlike_text(
        words in prop::collection::vec("[a-zA-Z']{1,8}|[0-9]{1,4}|[ \t\n]{1,3}|[.,!?<|>]", 0..20)
    ) {
        let s: String = words.concat();
        let tok = merge_tokenizer();
        prop_assert_eq!(tok.decode(&tok.encode(&s).ids).unwrap(), s);
    }

    #[test]
    fn markers_are_atomic(prefix in "[a-z ]{0,6}", suffix in "[a-z ]{0,6}") {
        let tok = merge_tokenizer();
        let s = format!("{prefix}<|distractor|>{suffix}");
        let ids = tok.encode(&s).ids;
        let marker = tok.encode("<|distractor|>").ids;
        prop_assert_eq!(marker.len(), 1);
        prop_assert_eq!(ids.iter().filter(|&&i| i == marker[0]).count(), 1);
    }
}

// --- repetition penalty --------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn penalty_identity_at_one(
        logits in prop::collection::vec(-50.0f32..50.0, 1..40),
        picks in prop::collection::btree_set(0u32..40, 0..10),
    ) {
        let l = LogitVector(logits);
        prop_assert_eq!(apply_repetition_penalty(&l, &picks, 1.0).unwrap(), l);
    }

    #[test]
    fn penalty_lowers_penalized_and_keeps_the_rest(
        logits in prop::collection::vec(-50.0f32..50.0, 1..40),
        picks in prop::collection::btree_set(0u32..40, 0..10),
        theta in 1.0f64..5.0,
    ) {
        let l = LogitVector(logits.clone());
        let p = apply_repetition_penalty(&l, &picks, theta).unwrap();
        prop_assert_eq!(p.0.len(), logits.len());
        for (i, (&before, &after)) in logits.iter().zip(&p.0).enumerate() {
            if picks.contains(&(i as u32)) {
                prop_assert!(after <= before);
                prop_assert_eq!(after.signum(), before.signum());
            } else {
                prop_assert_eq!(after, before);
            }
        }
        let untouched: Vec<usize> = (0..logits.len()).filter(|i| !picks.contains(&(*i as u32))).collect();
        for &i in &untouched {
            for &j in &untouched {
                prop_assert_eq!(logits[i] < logits[j], p.0[i] < p.0[j]);
            }
        }
    }
}

// --- distractor generation against adversarial scripts -------------------

fn segment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        Just("   ".to_string()),
        Just("Paris".to_string()),
        Just(" paris ".to_string()),
        Just("PARIS".to_string()),
        "[a-d]{1,2}( [a-d]{1,2})?",
        "[A-D]{1,2}",
        Just("<|question|>".to_string()),
    ]
}

fn continuation() -> impl Strategy<Value = String> {
    prop::collection::vec(segment(), 0..6).prop_map(|segs| segs.join("<|distractor|>"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn distractor_sets_are_valid_or_fail_loudly(
        script in prop::collection::vec(continuation(), 1..8),
        max_retries in 1u32..6,
    ) {
        let tok = Tokenizer::byte_level();
        let backend = ScriptedGenerator::from_texts(&tok, &script).unwrap();
        let cfg = GenerationConfig {
            temperature: 0.0,
            top_p: None,
            max_new_tokens: 256,
            max_retries,
            ..Default::default()
        };
        let g = Generator::new(&backend, &tok, &cfg).unwrap();
        match g.generate_distractors("Paris is the capital of France.", "What is the capital?", "Paris", 0) {
            Ok(set) => {
                prop_assert!(set.retries_used <= max_retries);
                prop_assert_eq!(backend.consumed(), set.retries_used as usize + 1);
                let keys: BTreeSet<String> = set.distractors.iter().map(|d| normalize_option(d)).collect();
                prop_assert_eq!(keys.len(), 3);
                prop_assert!(!keys.contains("paris"));
                prop_assert!(keys.iter().all(|k| !k.is_empty()));
                prop_assert!(set.distractors.iter().all(|d| !d.contains("<|")));
            }
            Err(DecodingError::MaxRetriesExceeded { partial, attempts }) => {
                prop_assert_eq!(attempts, max_retries + 1);
                prop_assert!(partial.len() < 3);
                prop_assert_eq!(backend.consumed(), attempts as usize);
            }
            Err(DecodingError::Backend { source: BackendError::ScriptExhausted { .. }, attempt, .. }) => {
                prop_assert!(attempt <= max_retries);
                prop_assert!(script.len() <= max_retries as usize);
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

// --- metrics ------------------------------------------------------------

fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + lcs_brute(ra, rb)
            } else {
                lcs_brute(ra, b).max(lcs_brute(a, rb))
            }
        }
        _ => 0,
    }
}

fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "c", "d", "the", "cat"]),
        0..max,
    )
    .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn lcs_matches_brute_force(
        a in prop::collection::vec(0u8..4, 0..=8),
        b in prop::collection::vec(0u8..4, 0..=8),
    ) {
        prop_assert_eq!(lcs_length(&a, &b), lcs_brute(&a, &b));
        prop_assert_eq!(lcs_length(&a, &b), lcs_length(&b, &a));
    }

    #[test]
    fn metrics_are_bounded(h in words(12), r in words(12), order in 1usize..=4) {
        let cfg = BleuConfig::new(order).unwrap();
        let b = bleu(&h, &r, &cfg);
        prop_assert!((0.0..=1.0).contains(&b));
        let rl = rouge_l(&h, &r);
        for v in [rl.precision, rl.recall, rl.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for n in 1..=4 {
            let (clipped, total) = modified_precision(&h, &r, n);
            prop_assert!(clipped <= total);
            prop_assert!(clipped <= r.len().saturating_sub(n - 1));
        }
    }

    #[test]
    fn identity_scores_one(h in words(12), order in 1usize..=4) {
        prop_assume!(h.len() >= order);
        let cfg = BleuConfig::new(order).unwrap();
        prop_assert!((bleu(&h, &h, &cfg) - 1.0).abs() < 1e-12);
        let rl = rouge_l(&h, &h);
        prop_assert_eq!((rl.precision, rl.recall, rl.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn bleu1_grows_when_extending_a_prefix_toward_the_reference(r in words(12), cut in 0usize..12, extra in 0usize..12) {
        let cut = cut.min(r.len());
        let longer = (cut + extra).min(r.len());
        let cfg = BleuConfig::new(1).unwrap();
        prop_assert!(bleu(&r[..longer], &r, &cfg) >= bleu(&r[..cut], &r, &cfg) - 1e-12);
    }
}

// --- statistics ---------------------------------------------------------

fn kappa_rows(n: u32) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(0u32..=n, 3), 1..12).prop_map(move |rows| {
        rows.into_iter()
            .map(|r| {
                // Distribute exactly n ratings in proportion to the draw.
                let (a, b) = (r[0].min(n), r[1].min(n - r[0].min(n)));
                vec![a, b, n - a - b]
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn kappa_invariants(rows in kappa_rows(4)) {
        if let Ok(k) = fleiss_kappa(&rows, 4) {
            prop_assert!(k.kappa <= 1.0 + 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&k.mean_observed_agreement));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&k.expected_agreement));
            let mut doubled = rows.clone();
            doubled.push(rows[0].clone());
            let mut all = rows.clone();
            all.extend(rows.iter().cloned());
            let d = fleiss_kappa(&all, 4).unwrap();
            prop_assert!((d.mean_observed_agreement - k.mean_observed_agreement).abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_is_one_under_perfect_agreement(cats in prop::collection::vec(0usize..3, 2..20)) {
        prop_assume!(cats.iter().collect::<BTreeSet<_>>().len() > 1);
        let rows: Vec<[u32; 3]> = cats.iter().map(|&c| {
            let mut r = [0; 3];
            r[c] = 5;
            r
        }).collect();
        prop_assert_eq!(fleiss_kappa(&rows, 5).unwrap().kappa, 1.0);
    }

    #[test]
    fn chi_squared_scales_linearly(
        cells in prop::collection::vec(1u32..50, 6),
        k in 1u32..10,
    ) {
        let t: Vec<Vec<f64>> = cells.chunks(3).map(|c| c.iter().map(|&x| f64::from(x)).collect()).collect();
        let scaled: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(|x| x * f64::from(k)).collect()).collect();
        let a = chi_squared_test(&t).unwrap();
        let b = chi_squared_test(&scaled).unwrap();
        prop_assert!((b.statistic - f64::from(k) * a.statistic).abs() <= 1e-9 * (1.0 + b.statistic));
        prop_assert!(b.p_value <= a.p_value + 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
    }

    #[test]
    fn chi2_survival_is_monotone(x in 0.0f64..80.0, dx in 0.0f64..10.0, df in 1u32..30) {
        let df = f64::from(df);
        let (p, q) = (chi2_survival(x, df), chi2_survival(x + dx, df));
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(q <= p + 1e-12);
    }

    #[test]
    fn percentages_sum_to_one_hundred(
        answers in prop::collection::vec((0usize..3, prop::option::of(0usize..3), any::<bool>()), 1..80)
    ) {
        let ratings: Vec<RatingRecord> = answers.iter().enumerate().map(|(i, &(q1, q2, _))| RatingRecord {
            assessor: "a".into(),
            item: format!("i{i}"),
            q1: Q1::ALL[q1],
            q2: q2.map(|q| Q2::ALL[q]),
            timestamp: 0,
            context_shown: false,
        }).collect();
        let verdicts: HashMap<String, bool> =
            answers.iter().enumerate().map(|(i, a)| (format!("i{i}"), a.2)).collect();
        let t = aggregate_ratings(&ratings, |id| verdicts.get(id).copied()).unwrap();
        for group in [&t.q1.accepted, &t.q1.rejected, &t.q2.accepted, &t.q2.rejected] {
            let sum: f64 = group.percentages.iter().sum();
            if group.n > 0 {
                prop_assert!((sum - 100.0).abs() <= 0.5);
                let rounded: f64 = group.percentages.iter().map(|p| p.round()).sum();
                prop_assert!((rounded - 100.0).abs() <= 1.0);
            } else {
                prop_assert_eq!(sum, 0.0);
            }
        }
    }

    #[test]
    fn assignment_invariants(
        n_assessors in 1usize..6,
        half_shared in 0usize..8,
        unique_n in 0usize..10,
        seed in any::<u64>(),
    ) {
        prop_assume!((n_assessors * unique_n) % 2 == 0);
        let need = half_shared + n_assessors * unique_n / 2;
        let acc: Vec<String> = (0..need + 3).map(|i| format!("a{i}")).collect();
        let rej: Vec<String> = (0..need + 1).map(|i| format!("r{i}")).collect();
        let params = PlanParams { n_assessors, shared_n: 2 * half_shared, unique_n, seed };
        let plan = build_assignment(&acc, &rej, params).unwrap();
        prop_assert_eq!(plan.distinct_items(), 2 * half_shared + n_assessors * unique_n);
        prop_assert_eq!(plan.accepted_items.len(), plan.rejected_items.len());
        prop_assert_eq!(plan.task_count(), n_assessors * (2 * half_shared + unique_n));
        let shared: BTreeSet<&String> = plan.shared_items.iter().collect();
        let mut seen = BTreeSet::new();
        for list in plan.unique_items.values() {
            for it in list {
                prop_assert!(!shared.contains(it));
                prop_assert!(seen.insert(it));
            }
        }
        let shared_acc = plan.shared_items.iter().filter(|s| plan.accepted_items.contains(*s)).count();
        prop_assert_eq!(shared_acc, half_shared);
        let too_few = build_assignment(&acc[..need.saturating_sub(1)], &rej, params);
        prop_assert_eq!(too_few.is_err(), need > 0);
    }
}

// --- QA filter -------------------------------------------------------------

fn mcq(id: usize) -> McqItem {
    McqItem {
        id: format!("item-{id}"),
        context: "A short context.".into(),
        question: "Which one?".into(),
        answer: format!("opt{id}a"),
        distractors: [
            format!("opt{id}b"),
            format!("opt{id}c"),
            format!("opt{id}d"),
        ],
        source: Source::Generated,
        split: Split::Test,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn choice_is_invariant_under_presentation_order(
        scores in prop::collection::vec(-10.0f64..10.0, 4),
        seeds in prop::collection::vec(any::<u64>(), 1..6),
    ) {
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        prop_assume!(distinct.len() == 4);
        let tok = Tokenizer::byte_level();
        let item = mcq(0);
        let table: Vec<(String, f64)> = item.options().iter().map(|o| o.to_string()).zip(scores.iter().copied()).collect();
        let scorer = ScriptedScorer::by_option(&tok, table).unwrap();
        let f = QaFilter::new(&scorer, &tok, None);
        let best = (0..4).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        for seed in seeds {
            let v = f.filter_item(&item, seed).unwrap();
            prop_assert_eq!(v.order[v.chosen], best);
            prop_assert_eq!(v.accepted, best == 0);
            let mut sorted = v.order;
            sorted.sort();
            prop_assert_eq!(sorted, [0, 1, 2, 3]);
            prop_assert!((v.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_matches_recount(answer_wins in prop::collection::vec(any::<bool>(), 1..25), seed in any::<u64>()) {
        let tok = Tokenizer::byte_level();
        let items: Vec<McqItem> = (0..answer_wins.len()).map(mcq).collect();
        let mut table = Vec::new();
        for (it, &wins) in items.iter().zip(&answer_wins) {
            let opts = it.options();
            table.push((opts[0].to_string(), if wins { 3.0 } else { 1.0 }));
            table.push((opts[1].to_string(), 2.0));
            table.push((opts[2].to_string(), 0.0));
            table.push((opts[3].to_string(), -1.0));
        }
        let scorer = ScriptedScorer::by_option(&tok, table).unwrap();
        let f = QaFilter::new(&scorer, &tok, None);
        let verdicts = f.filter_items(&items, seed).unwrap();
        let expected = answer_wins.iter().filter(|&&w| w).count() as f64 / answer_wins.len() as f64;
        prop_assert_eq!(accuracy(&verdicts).unwrap(), expected);
        prop_assert_eq!(f.qa_accuracy(&items, seed).unwrap(), expected);
    }
}
