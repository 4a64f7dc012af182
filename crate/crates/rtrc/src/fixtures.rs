//! Synthetic comparison sets with known statistics, for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rtrc_core::analytics::{PairComparison, DEFAULT_TAU};
use rtrc_core::triage::Candidate;
use rtrc_core::{normalize_decision, AgentId, AgreementQuadrant, Codebook, ParsedTurn, Round, TurnId};

/// Quadrant counts and mean similarities of the reference distribution, in
/// [`AgreementQuadrant::ALL`] order.
pub const TABLE1_COUNTS: [usize; 4] = [4598, 2680, 2193, 275];
pub const TABLE1_MEANS: [f64; 4] = [0.965, 0.863, 0.916, 0.954];

/// Half-width of the value spread per quadrant, chosen so every value stays
/// on the right side of the default threshold.
const TABLE1_SPREAD: [f64; 4] = [0.02, 0.06, 0.02, 0.01];

/// Agreement and disagreement group parameters: (mean, sd, n).
pub const VALIDATION_AGREE: (f64, f64, usize) = (0.957, 0.025, 6791);
pub const VALIDATION_DISAGREE: (f64, f64, usize) = (0.904, 0.058, 2955);

pub fn pair(segment_id: String, run_id: &str, temperature: f64, agree: bool, cs: f64, tau: f64) -> PairComparison {
    PairComparison {
        segment_id,
        run_id: run_id.to_string(),
        round: Round::Round1,
        temperature,
        agent_pair: (AgentId::CoderA, AgentId::CoderB),
        turn_ids: (TurnId(0), TurnId(1)),
        cs,
        per_code_cs: None,
        label_agreement: agree,
        quadrant: AgreementQuadrant::classify(agree, cs, tau),
        tau,
        degraded: false,
        truncated: false,
    }
}

/// Values symmetric about `mean` (pairs `mean ± d`), so the sample mean is
/// `mean` up to rounding.
fn symmetric_values(n: usize, mean: f64, spread: f64) -> Vec<f64> {
    let half = n / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..half {
        let d = spread * (i as f64 + 1.0) / (half as f64 + 1.0);
        out.push(mean + d);
        out.push(mean - d);
    }
    if n % 2 == 1 {
        out.push(mean);
    }
    out
}

/// 9,746 comparisons reproducing the reference quadrant counts and means at
/// the default threshold.
pub fn table1_pairs() -> Vec<PairComparison> {
    let mut out = Vec::new();
    for (qi, q) in AgreementQuadrant::ALL.iter().enumerate() {
        for (i, cs) in symmetric_values(TABLE1_COUNTS[qi], TABLE1_MEANS[qi], TABLE1_SPREAD[qi])
            .into_iter()
            .enumerate()
        {
            let p = pair(format!("t1-{}-{i:05}", q.as_str()), "table1", 0.0, q.label_agreement(), cs, DEFAULT_TAU);
            debug_assert_eq!(p.quadrant, *q);
            out.push(p);
        }
    }
    out
}

fn draw_clamped(rng: &mut ChaCha8Rng, (mean, sd, n): (f64, f64, usize)) -> Vec<f64> {
    let dist = Normal::new(mean, sd).expect("valid normal");
    (0..n).map(|_| dist.sample(rng).clamp(-1.0, 1.0)).collect()
}

/// Seeded normal draws for the agreement and disagreement groups, clamped
/// to the cosine range.
pub fn gaussian_groups(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = draw_clamped(&mut rng, VALIDATION_AGREE);
    let b = draw_clamped(&mut rng, VALIDATION_DISAGREE);
    (a, b)
}

pub fn gaussian_pairs(seed: u64) -> Vec<PairComparison> {
    let (a, b) = gaussian_groups(seed);
    let agree = a.into_iter().map(|cs| (true, cs));
    let disagree = b.into_iter().map(|cs| (false, cs));
    agree
        .chain(disagree)
        .enumerate()
        .map(|(i, (ag, cs))| pair(format!("g-{i:05}"), "gauss", 0.0, ag, cs, DEFAULT_TAU))
        .collect()
}

/// Comparisons across the temperature grid. Agreement pairs sit higher than
/// disagreement pairs at every temperature, with the gap narrowing as
/// temperature rises.
pub fn temperature_pairs(seed: u64, per_cell: usize) -> Vec<PairComparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (ti, t) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let gap = 0.05 - 0.01 * ti as f64;
        for (agree, mean, sd) in [(true, 0.955, 0.025), (false, 0.955 - gap, 0.05)] {
            let vals = draw_clamped(&mut rng, (mean, sd, per_cell));
            for (i, cs) in vals.into_iter().enumerate() {
                let run = format!("temp-{t}");
                out.push(pair(format!("s-{i:04}-{}", u8::from(agree)), &run, t, agree, cs, DEFAULT_TAU));
            }
        }
    }
    out
}

fn turn(id: u64, agent: AgentId, positives: &[&str], cb: &Codebook) -> ParsedTurn {
    ParsedTurn {
        turn_id: TurnId(id),
        agent,
        round: Round::Round1,
        reasoning: format!("reasoning {id}"),
        explanation: String::from("explanation"),
        decision: normalize_decision(positives.iter().map(|c| (*c, true)), cb).expect("codebook names"),
        parse_flags: Default::default(),
    }
}

/// A candidate pool with `per_code` same-label pairs inside `[0.55, 0.78]`
/// for every code, `between` different-label pairs inside `[0.95, 0.99]`,
/// plus decoys outside both bands.
pub fn sampling_pool(cb: &Codebook, per_code: usize, between: usize, seed: u64) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&str> = cb.names().collect();
    let mut out = Vec::new();
    let push = |seg: String, a: &[&str], b: &[&str], cs: f64, out: &mut Vec<Candidate>| {
        let n = out.len() as u64;
        let (ta, tb) = (turn(2 * n, AgentId::CoderA, a, cb), turn(2 * n + 1, AgentId::CoderB, b, cb));
        let agree = ta.decision == tb.decision;
        let mut p = pair(seg, "pool", 0.0, agree, cs, DEFAULT_TAU);
        p.turn_ids = (ta.turn_id, tb.turn_id);
        out.push(Candidate {
            pair: p,
            turn_a: ta,
            turn_b: tb,
        });
    };
    for name in &names {
        for i in 0..per_code {
            let cs = rng.random_range(0.55..=0.78);
            push(format!("wm-{name}-{i:03}"), &[name], &[name], cs, &mut out);
        }
        // same label, outside the band
        push(format!("wm-{name}-hi"), &[name], &[name], 0.85, &mut out);
        push(format!("wm-{name}-lo"), &[name], &[name], 0.40, &mut out);
    }
    for i in 0..between {
        let (a, b) = (names[i % names.len()], names[(i + 1) % names.len()]);
        let cs = rng.random_range(0.95..=0.99);
        push(format!("ba-{i:03}"), &[a], &[b], cs, &mut out);
    }
    // different labels, similar but outside the band
    push("ba-edge".into(), &[names[0]], &[names[1]], 0.995, &mut out);
    push("bm-low".into(), &[names[0]], &[names[1]], 0.70, &mut out);
    out
}
