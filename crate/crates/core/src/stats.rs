//! Descriptive and inferential statistics used by the analytics layer.
//!
//! Everything here is a pure function over slices. Sums run in input order,
//! so callers that need order-independent results sort first.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("inputs have different lengths")]
    LengthMismatch,
    #[error("degenerate input (constant or too short)")]
    DegenerateInput,
    #[error("each group needs at least two samples")]
    TooFewSamples,
    #[error("both groups have zero variance")]
    ZeroVariance,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample variance with an `n - 1` denominator; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    libm::sqrt(variance(xs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GroupStats {
    pub fn of(xs: &[f64]) -> GroupStats {
        GroupStats {
            n: xs.len(),
            mean: mean(xs).unwrap_or(f64::NAN),
            sd: std_dev(xs),
        }
    }
}

/// Mean with a normal-approximation 95% interval, `mean ± 1.96·sd/√n`.
pub fn mean_ci(xs: &[f64]) -> Option<(f64, f64, f64)> {
    let m = mean(xs)?;
    let half = Z_95 * std_dev(xs) / libm::sqrt(xs.len() as f64);
    Some((m, m - half, m + half))
}

/// Linear-interpolation quantile (R type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> Option<f64> {
    quantile_sorted(&sorted(xs), 0.5)
}

/// Box-plot statistics; whiskers reach the most extreme data inside 1.5·IQR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

pub fn box_stats(xs: &[f64]) -> Option<BoxStats> {
    let s = sorted(xs);
    let q1 = quantile_sorted(&s, 0.25)?;
    let q3 = quantile_sorted(&s, 0.75)?;
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Some(BoxStats {
        n: s.len(),
        median: quantile_sorted(&s, 0.5)?,
        q1,
        q3,
        whisker_low: s.iter().copied().find(|&x| x >= lo_fence).unwrap_or(q1),
        whisker_high: s.iter().rev().copied().find(|&x| x <= hi_fence).unwrap_or(q3),
    })
}

/// Tie groups of `xs` in ascending order: `group[i]` is the group index of
/// `xs[i]`, and the return value is the number of groups.
fn tie_groups(xs: &[f64]) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut group = vec![0usize; xs.len()];
    let mut g = 0;
    for (k, &i) in order.iter().enumerate() {
        if k > 0 && xs[order[k - 1]].total_cmp(&xs[i]).is_ne() {
            g += 1;
        }
        group[i] = g;
    }
    (group, if xs.is_empty() { 0 } else { g + 1 })
}

/// Average ranks (1-based, ties share the mean rank).
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let (group, n_groups) = tie_groups(xs);
    let sizes = group_totals(&group, n_groups, None);
    let doubled = doubled_group_ranks(&sizes);
    group.iter().map(|&g| doubled[g] as f64 / 2.0).collect()
}

fn group_totals(group: &[usize], n_groups: usize, weights: Option<&[u32]>) -> Vec<u64> {
    let mut totals = vec![0u64; n_groups];
    for (i, &g) in group.iter().enumerate() {
        totals[g] += weights.map_or(1, |w| u64::from(w[i]));
    }
    totals
}

/// Twice the average rank of each group, which is always an integer.
fn doubled_group_ranks(sizes: &[u64]) -> Vec<u64> {
    let mut before = 0u64;
    sizes
        .iter()
        .map(|&s| {
            let r = 2 * before + s + 1;
            before += s;
            r
        })
        .collect()
}

/// Spearman's rho from precomputed tie groups, with optional per-point
/// multiplicities (used by the bootstrap).
///
/// Ranks are doubled and centred so all sums are exact integers in `f64`
/// for any practical sample size.
struct RankCorrelator {
    gx: Vec<usize>,
    nx: usize,
    gy: Vec<usize>,
    ny: usize,
}

impl RankCorrelator {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let (gx, nx) = tie_groups(x);
        let (gy, ny) = tie_groups(y);
        RankCorrelator { gx, nx, gy, ny }
    }

    fn rho(&self, weights: Option<&[u32]>) -> Option<f64> {
        let rx = doubled_group_ranks(&group_totals(&self.gx, self.nx, weights));
        let ry = doubled_group_ranks(&group_totals(&self.gy, self.ny, weights));
        let n: u64 = match weights {
            Some(w) => w.iter().map(|&c| u64::from(c)).sum(),
            None => self.gx.len() as u64,
        };
        let centre = (n + 1) as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..self.gx.len() {
            let c = weights.map_or(1.0, |w| f64::from(w[i]));
            if c == 0.0 {
                continue;
            }
            let dx = rx[self.gx[i]] as f64 - centre;
            let dy = ry[self.gy[i]] as f64 - centre;
            sxy += c * dx * dy;
            sxx += c * dx * dx;
            syy += c * dy * dy;
        }
        if sxx == 0.0 || syy == 0.0 {
            return None;
        }
        Some(sxy / libm::sqrt(sxx * syy))
    }
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch);
    }
    if x.len() < 3 {
        return Err(StatsError::DegenerateInput);
    }
    RankCorrelator::new(x, y)
        .rho(None)
        .ok_or(StatsError::DegenerateInput)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    pub seed: u64,
}

/// Spearman's rho with a seeded percentile-bootstrap 95% interval.
///
/// Resamples whose ranks are constant are skipped. The interval is widened
/// to contain the point estimate if the percentiles miss it.
pub fn spearman_bootstrap(
    x: &[f64],
    y: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<RankCorrelation, StatsError> {
    let rho = spearman(x, y)?;
    let corr = RankCorrelator::new(x, y);
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; n];
    let mut draws = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        if let Some(r) = corr.rho(Some(&counts)) {
            draws.push(r);
        }
    }
    draws.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&draws, 0.025).unwrap_or(rho);
    let hi = quantile_sorted(&draws, 0.975).unwrap_or(rho);
    Ok(RankCorrelation {
        rho,
        ci_low: lo.min(rho),
        ci_high: hi.max(rho),
        resamples,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    /// Mean difference over the pooled standard deviation.
    pub cohens_d: f64,
    pub group_a: GroupStats,
    pub group_b: GroupStats,
}

/// Welch's unequal-variance t-test with a pooled-SD Cohen's d.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchTest, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a).unwrap_or(0.0), mean(b).unwrap_or(0.0));
    let (va, vb) = (variance(a), variance(b));
    if va == 0.0 && vb == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let (sa, sb) = (va / na, vb / nb);
    let se = libm::sqrt(sa + sb);
    let t = (ma - mb) / se;
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let pooled = libm::sqrt(((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0));
    Ok(WelchTest {
        t,
        df,
        p_value: student_t_two_sided(t, df),
        cohens_d: (ma - mb) / pooled,
        group_a: GroupStats {
            n: a.len(),
            mean: ma,
            sd: libm::sqrt(va),
        },
        group_b: GroupStats {
            n: b.len(),
            mean: mb,
            sd: libm::sqrt(vb),
        },
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 20_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Normal-approximation 95% interval of a proportion.
pub fn proportion_ci(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let p = k as f64 / n as f64;
    let half = Z_95 * libm::sqrt(p * (1.0 - p) / n as f64);
    ((p - half).max(0.0), (p + half).min(1.0))
}

/// Fixed-bin histogram over `[lo, hi]`; out-of-range values land in the edge bins.
pub fn histogram(xs: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    if bins == 0 {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &x in xs {
        let idx = libm::floor((x - lo) / width);
        let idx = if idx.is_nan() || idx < 0.0 {
            0
        } else {
            (idx as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    counts
}

/// Two-class Otsu threshold over a `bins`-bin histogram spanning the data range.
///
/// Returns the midpoint of the plateau of maximal between-class variance,
/// expressed in data units.
pub fn otsu_threshold(xs: &[f64], bins: usize) -> Result<f64, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(core::cmp::Ordering::Greater) || bins < 2 {
        return Err(StatsError::DegenerateInput);
    }
    let counts = histogram(xs, bins, lo, hi);
    let total = xs.len() as f64;
    let sum_all: f64 = counts.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: f64 = -1.0;
    let (mut first, mut last) = (0usize, 0usize);
    // split k puts bins 0..=k in the lower class
    for (k, &c) in counts.iter().enumerate().take(bins - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        let scale = best.abs().max(1.0);
        if between > best + 1e-12 * scale {
            best = between;
            first = k;
            last = k;
        } else if (between - best).abs() <= 1e-12 * scale {
            last = k;
        }
    }
    let width = (hi - lo) / bins as f64;
    // upper edge of the chosen split bin, averaged over the plateau
    let edge = |k: usize| lo + (k + 1) as f64 * width;
    Ok((edge(first) + edge(last)) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_hand_computed() {
        let w = welch_test(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        // se = sqrt(1/3 + 4/3), t = -2/se
        assert!((w.t - (-2.0 / libm::sqrt(5.0 / 3.0))).abs() < 1e-12);
        assert!((w.df - 50.0 / 17.0).abs() < 1e-12);
        assert!((w.cohens_d - (-2.0 / libm::sqrt(2.5))).abs() < 1e-12);
        assert!((w.t - -1.5492).abs() < 1e-4);
        assert!((w.cohens_d - -1.2649).abs() < 1e-4);
    }

    #[test]
    fn welch_identical_and_errors() {
        let w = welch_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(w.t, 0.0);
        assert_eq!(w.cohens_d, 0.0);
        assert!((w.p_value - 1.0).abs() < 1e-12);
        assert_eq!(welch_test(&[1.0], &[1.0, 2.0]), Err(StatsError::TooFewSamples));
        assert_eq!(welch_test(&[1.0, 1.0], &[2.0, 2.0]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn spearman_hand_ranked() {
        let rho = spearman(&[0.9, 0.8, 0.95, 0.6], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((rho - 4.0 / libm::sqrt(20.0)).abs() < 1e-15);
        assert_eq!(
            spearman(&[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0]),
            Err(StatsError::DegenerateInput)
        );
        assert_eq!(spearman(&[0.1, 0.2], &[0.0, 1.0]), Err(StatsError::DegenerateInput));
        assert_eq!(spearman(&[0.1, 0.2, 0.3], &[0.0, 1.0]), Err(StatsError::LengthMismatch));
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), [1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn bootstrap_interval_brackets_rho() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| if *v > 0.4 { 1.0 } else { 0.0 }).collect();
        let r = spearman_bootstrap(&x, &y, 200, 3).unwrap();
        assert!(r.ci_low <= r.rho && r.rho <= r.ci_high);
        assert_eq!(r, spearman_bootstrap(&x, &y, 200, 3).unwrap());
    }

    #[test]
    fn incomplete_beta_known_values() {
        // I_x(1,1) = x, I_x(a,1) = x^a
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-14);
        assert!((regularized_incomplete_beta(0.5, 3.0, 1.0) - 0.125).abs() < 1e-14);
        // t with 1 df is Cauchy: P(|T|>1) = 0.5
        assert!((student_t_two_sided(1.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantiles_and_box() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), Some(2.5));
        assert_eq!(quantile_sorted(&s, 0.25), Some(1.75));
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(b.median, 3.0);
        assert_eq!(b.whisker_high, 4.0);
        assert_eq!(b.whisker_low, 1.0);
        let single = box_stats(&[0.5]).unwrap();
        assert_eq!((single.median, single.q1, single.q3), (0.5, 0.5, 0.5));
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.5, 1.0, -0.2, 1.3], 2, 0.0, 1.0);
        assert_eq!(h, [2, 3]);
    }

    #[test]
    fn otsu_separates_two_modes() {
        let mut xs = vec![0.85; 100];
        xs.extend(vec![0.97; 100]);
        let t = otsu_threshold(&xs, 1000).unwrap();
        assert!(t > 0.85 && t < 0.97, "{t}");
        assert_eq!(otsu_threshold(&[0.5; 10], 1000), Err(StatsError::DegenerateInput));
    }

    #[test]
    fn proportion_interval() {
        let (lo, hi) = proportion_ci(4598, 9746);
        assert!(lo < 0.4718 && hi > 0.4718);
        assert_eq!(proportion_ci(0, 0), (0.0, 0.0));
    }
}
