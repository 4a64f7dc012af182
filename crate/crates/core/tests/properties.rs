use proptest::prelude::*;
use proptest::sample::subsequence;

use rtrc_core::embedding::{cosine, cosine_raw, EmbeddingProvider, EmbeddingVector, HashedBagProvider};
use rtrc_core::protocol::{Discussion, Outcome, Step};
use rtrc_core::stats::{histogram, spearman, spearman_bootstrap, welch_test};
use rtrc_core::{
    extract_reasoning_units, normalize_decision, parse_turn, AgentId, AgreementQuadrant, Codebook, Round,
    TurnId, TurnMeta,
};

fn meta() -> TurnMeta {
    TurnMeta {
        turn_id: TurnId(0),
        agent: AgentId::CoderA,
        round: Round::Round1,
    }
}

fn code_names() -> Vec<String> {
    Codebook::tutoring().names().map(String::from).collect()
}

fn decision_entries() -> impl Strategy<Value = Vec<(String, bool)>> {
    (subsequence(code_names(), 1..=8), proptest::collection::vec(any::<bool>(), 8))
        .prop_map(|(names, vals)| names.into_iter().zip(vals).collect())
}

fn safe_text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 .,!?;\n]{0,120}".prop_map(|s| s.trim().to_string())
}

proptest! {
    #[test]
    fn normalize_is_total_and_idempotent(entries in decision_entries(), upper in any::<bool>()) {
        let cb = Codebook::tutoring();
        let keyed: Vec<(String, bool)> = entries
            .iter()
            .map(|(k, v)| (if upper { k.to_uppercase() } else { format!("  {k} ") }, *v))
            .collect();
        let d = normalize_decision(keyed, &cb).unwrap();
        let keys: Vec<&str> = d.iter().map(|(k, _)| k).collect();
        prop_assert_eq!(keys, cb.names().collect::<Vec<_>>());
        for (k, v) in &entries {
            prop_assert_eq!(d.get(k), Some(*v));
        }
        prop_assert_eq!(d.renormalize(&cb).unwrap(), d.clone());
        let again = normalize_decision(d.iter().map(|(k, v)| (k.to_string(), v)), &cb).unwrap();
        prop_assert_eq!(again, d);
    }

    #[test]
    fn render_then_parse_round_trips(
        reasoning in safe_text(),
        explanation in safe_text(),
        entries in decision_entries(),
    ) {
        let cb = Codebook::tutoring();
        let decision = normalize_decision(entries.clone(), &cb).unwrap();
        let keys = entries
            .iter()
            .map(|(k, v)| format!("'{k}': {}", u8::from(*v)))
            .collect::<Vec<_>>()
            .join(", ");
        let raw = format!("<think>{reasoning}</think>\n{explanation}\n{{{keys}}}");
        let t = parse_turn(&raw, &cb, meta()).unwrap();
        prop_assert_eq!(&t.reasoning, &reasoning);
        prop_assert_eq!(&t.explanation, &explanation);
        prop_assert_eq!(&t.decision, &decision);
        let back = parse_turn(&t.render(), &cb, meta()).unwrap();
        prop_assert_eq!(back.decision, t.decision);
        prop_assert_eq!(back.explanation, t.explanation);
        if !reasoning.is_empty() {
            prop_assert_eq!(back.reasoning, reasoning);
        }
    }

    #[test]
    fn parser_is_total(s in "\\PC{0,300}") {
        let _ = parse_turn(&s, &Codebook::tutoring(), meta());
    }

    #[test]
    fn units_are_ordered_disjoint_and_in_bounds(
        parts in proptest::collection::vec(
            prop_oneof![
                safe_text(),
                Just("Greeting".to_string()),
                Just("GF".to_string()),
                Just("not Instruction".to_string()),
                Just("maybe Encouragement".to_string()),
                Just("Time Management applies".to_string()),
            ],
            0..12,
        )
    ) {
        let cb = Codebook::tutoring();
        let text = parts.join(" ");
        let n = text.chars().count();
        let units = extract_reasoning_units(&text, &cb);
        let mut prev_end = 0;
        for u in &units {
            prop_assert!(u.start < u.end && u.end <= n);
            prop_assert!(u.start >= prev_end);
            prop_assert!(cb.get(&u.code_name).is_some());
            let slice: String = text.chars().skip(u.start).take(u.end - u.start).collect();
            prop_assert_eq!(&slice, &u.text);
            prev_end = u.end;
        }
    }

    #[test]
    fn cosine_properties(
        a in proptest::collection::vec(-10.0f64..10.0, 16),
        b in proptest::collection::vec(-10.0f64..10.0, 16),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let u = EmbeddingVector::new(a, "p").unwrap();
        let v = EmbeddingVector::new(b, "p").unwrap();
        let c = cosine(&u, &v).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&v, &u).unwrap());
        prop_assert!((cosine(&u.scaled(scale), &v).unwrap() - c).abs() < 1e-9);
        prop_assert!((cosine_raw(u.values(), u.values()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hashed_embeddings_are_unit_and_deterministic(text in "[a-z ]{1,80}") {
        prop_assume!(!text.trim().is_empty());
        let p = HashedBagProvider::default();
        let e = p.embed(&text).unwrap();
        let norm: f64 = e.vector.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        prop_assert_eq!(e.vector.dim(), p.dim());
        prop_assert_eq!(p.embed(&text).unwrap(), e);
    }

    #[test]
    fn welch_is_antisymmetric(
        a in proptest::collection::vec(0.0f64..1.0, 2..30),
        b in proptest::collection::vec(0.0f64..1.0, 2..30),
    ) {
        let (Ok(ab), Ok(ba)) = (welch_test(&a, &b), welch_test(&b, &a)) else {
            return Ok(());
        };
        prop_assert!((ab.t + ba.t).abs() < 1e-12 * ab.t.abs().max(1.0));
        prop_assert!((ab.cohens_d + ba.cohens_d).abs() < 1e-12 * ab.cohens_d.abs().max(1.0));
        prop_assert!((ab.df - ba.df).abs() < 1e-9 * ab.df);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn spearman_is_rank_invariant(
        xs in proptest::collection::vec(-5.0f64..5.0, 3..40),
        ys in proptest::collection::vec(any::<bool>(), 40),
    ) {
        let y: Vec<f64> = ys[..xs.len()].iter().map(|&b| f64::from(u8::from(b))).collect();
        let Ok(rho) = spearman(&xs, &y) else { return Ok(()) };
        let transformed: Vec<f64> = xs.iter().map(|x| (x * 0.5).exp() + 3.0).collect();
        prop_assert_eq!(spearman(&transformed, &y).unwrap(), rho);
        let flipped: Vec<f64> = xs.iter().map(|x| -x).collect();
        prop_assert_eq!(spearman(&flipped, &y).unwrap(), -rho);
        let ci = spearman_bootstrap(&xs, &y, 50, 9).unwrap();
        prop_assert!(ci.ci_low <= rho && rho <= ci.ci_high);
        prop_assert_eq!(ci, spearman_bootstrap(&xs, &y, 50, 9).unwrap());
    }

    #[test]
    fn quadrant_matches_definition(agree in any::<bool>(), cs in -1.0f64..=1.0, tau in 0.0f64..1.0) {
        let q = AgreementQuadrant::classify(agree, cs, tau);
        prop_assert_eq!(q.label_agreement(), agree);
        let aligned = matches!(q, AgreementQuadrant::WithinAlign | AgreementQuadrant::BetweenAlign);
        prop_assert_eq!(aligned, cs >= tau);
    }

    #[test]
    fn histogram_conserves_count(xs in proptest::collection::vec(-0.5f64..1.5, 0..200)) {
        let h = histogram(&xs, 50, 0.0, 1.0);
        prop_assert_eq!(h.len(), 50);
        prop_assert_eq!(h.iter().sum::<usize>(), xs.len());
    }

    #[test]
    fn protocol_turn_counts(codes in proptest::collection::vec(0usize..3, 5)) {
        let cb = Codebook::tutoring();
        let names = ["Greeting", "Instruction", "Encouragement"];
        let mut d = Discussion::new("s", "r", 0);
        let mut i = 0;
        let done = loop {
            match d.next_step() {
                Step::Finished(s) => break s,
                Step::Request(_) => {
                    let raw = format!("<think>t</think> e {{'{}': 1}}", names[codes[i]]);
                    d.record(raw, &cb).unwrap();
                    i += 1;
                }
            }
        };
        prop_assert!(done.is_consistent());
        let expected = if codes[0] == codes[1] {
            (Outcome::Round1Consensus, 2)
        } else if codes[2] == codes[3] {
            (Outcome::Round2Consensus, 4)
        } else {
            (Outcome::Arbitrated, 5)
        };
        prop_assert_eq!((done.outcome, done.turns.len()), expected);
    }
}
