//! Nonparametric comparison of treatments over blocks: Friedman omnibus test,
//! Shaffer post-hoc adjustment, exact signed-rank test and confidence
//! intervals.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scores of `k` treatments (columns) over `n` blocks (rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankBlockTable {
    pub treatments: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl RankBlockTable {
    pub fn new(treatments: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let k = treatments.len();
        if scores.iter().any(|row| row.len() != k) {
            return Err(Error::domain("every block needs one score per treatment"));
        }
        if scores.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("scores must be finite"));
        }
        Ok(RankBlockTable { treatments, scores })
    }

    /// Unnamed treatments `T1..Tk`.
    pub fn from_scores(scores: Vec<Vec<f64>>) -> Result<Self> {
        let k = scores.first().map_or(0, Vec::len);
        Self::new((1..=k).map(|i| format!("T{i}")).collect(), scores)
    }

    pub fn blocks(&self) -> usize {
        self.scores.len()
    }

    pub fn treatments_count(&self) -> usize {
        self.treatments.len()
    }

    /// Per-block ranks, 1 = lowest score, ties share the average rank.
    pub fn ranks(&self) -> Vec<Vec<f64>> {
        self.scores.iter().map(|row| average_ranks(row)).collect()
    }

    pub fn mean_ranks(&self) -> Vec<f64> {
        let n = self.blocks() as f64;
        let mut sums = vec![0.0; self.treatments_count()];
        for row in self.ranks() {
            for (s, r) in sums.iter_mut().zip(row) {
                *s += r;
            }
        }
        sums.into_iter().map(|s| s / n).collect()
    }
}

/// Average ranks (1-based) of `values`; tied values share their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    pub mean_ranks: Vec<f64>,
}

/// Friedman test with the tie correction; p from the chi-square tail with
/// `k - 1` degrees of freedom.
pub fn friedman(table: &RankBlockTable) -> Result<FriedmanResult> {
    let (n, k) = (table.blocks(), table.treatments_count());
    if n < 2 || k < 3 {
        return Err(Error::domain(format!("Friedman needs n >= 2 blocks and k >= 3 treatments, got n={n}, k={k}")));
    }
    let statistic = friedman_statistic(&table.ranks())
        .ok_or_else(|| Error::Degenerate("every block is constant".into()))?;
    let dof = k - 1;
    Ok(FriedmanResult { statistic, p_value: chi_square_sf(statistic, dof as f64), dof, mean_ranks: table.mean_ranks() })
}

/// Tie-corrected statistic from per-block ranks; `None` if all blocks are
/// fully tied.
fn friedman_statistic(ranks: &[Vec<f64>]) -> Option<f64> {
    let n = ranks.len() as f64;
    let k = ranks[0].len();
    let kf = k as f64;
    let mut sums = vec![0.0; k];
    for row in ranks {
        for (s, r) in sums.iter_mut().zip(row) {
            *s += r;
        }
    }
    let sum_sq: f64 = sums.iter().map(|r| r * r).sum();
    let raw = 12.0 / (n * kf * (kf + 1.0)) * sum_sq - 3.0 * n * (kf + 1.0);
    let ties: f64 = ranks.iter().map(|row| tie_term(row)).sum();
    let correction = 1.0 - ties / (n * kf * (kf * kf - 1.0));
    if correction <= 1e-12 {
        return None;
    }
    Some((raw / correction).max(0.0))
}

/// Σ (t³ − t) over groups of tied ranks in one block.
fn tie_term(ranks: &[f64]) -> f64 {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

/// Exact permutation p-value of the Friedman statistic: every block's ranks
/// are permuted independently under the null. Feasible for small tables.
pub fn friedman_exact(table: &RankBlockTable) -> Result<f64> {
    let observed = friedman(table)?.statistic;
    let ranks = table.ranks();
    let perms: Vec<Vec<Vec<f64>>> = ranks.iter().map(|row| distinct_permutations(row)).collect();
    let total: f64 = perms.iter().map(|p| p.len() as f64).product();
    if total > 5e6 {
        return Err(Error::domain("table too large for exact enumeration"));
    }
    let mut current: Vec<Vec<f64>> = ranks.clone();
    let mut hits = 0.0;
    enumerate(&perms, 0, &mut current, &mut |rows| {
        let s = friedman_statistic(rows).unwrap_or(0.0);
        if s >= observed - 1e-9 {
            hits += 1.0;
        }
    });
    Ok(hits / total)
}

fn enumerate(perms: &[Vec<Vec<f64>>], depth: usize, current: &mut Vec<Vec<f64>>, visit: &mut dyn FnMut(&[Vec<f64>])) {
    if depth == perms.len() {
        visit(current);
        return;
    }
    for p in &perms[depth] {
        current[depth].clone_from(p);
        enumerate(perms, depth + 1, current, visit);
    }
}

/// All permutations of `values`, one per arrangement; tied values are
/// treated as distinct positions so each arrangement is equally likely.
fn distinct_permutations(values: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..values.len()).collect();
    permute(&mut idx, 0, &mut |p| out.push(p.iter().map(|&i| values[i]).collect()));
    out
}

fn permute(idx: &mut [usize], start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == idx.len() {
        visit(idx);
        return;
    }
    for i in start..idx.len() {
        idx.swap(start, i);
        permute(idx, start + 1, visit);
        idx.swap(start, i);
    }
}

/// Sizes of sets of simultaneously true pairwise hypotheses that are
/// logically possible among `k` treatments, ascending.
pub fn shaffer_true_counts(k: usize) -> Vec<usize> {
    let mut table: Vec<Vec<usize>> = vec![vec![0], vec![0]];
    for m in 2..=k {
        let mut set = Vec::new();
        for j in 1..=m {
            let pairs = j * (j - 1) / 2;
            for &rest in &table[m - j] {
                set.push(pairs + rest);
            }
        }
        set.sort_unstable();
        set.dedup();
        table.push(set);
    }
    table.swap_remove(k.min(table.len() - 1))
}

/// Multipliers of Shaffer's static procedure: the i-th smallest p-value is
/// multiplied by the largest possible number of true hypotheses given that
/// the i hypotheses before it are false.
pub fn shaffer_multipliers(k: usize) -> Vec<usize> {
    let counts = shaffer_true_counts(k);
    let m = k * (k - 1) / 2;
    (0..m).map(|i| *counts.iter().filter(|&&c| c <= m - i).max().unwrap()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: usize,
    pub b: usize,
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

/// Pairwise mean-rank comparisons with Shaffer's static step-down.
pub fn shaffer_posthoc(table: &RankBlockTable) -> Result<Vec<PairwiseComparison>> {
    let (n, k) = (table.blocks(), table.treatments_count());
    if k < 3 {
        return Err(Error::domain(format!("post-hoc comparison needs k >= 3, got {k}")));
    }
    if n < 1 {
        return Err(Error::domain("no blocks"));
    }
    let mean = table.mean_ranks();
    let se = (k as f64 * (k as f64 + 1.0) / (6.0 * n as f64)).sqrt();
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let z = (mean[a] - mean[b]) / se;
            pairs.push(PairwiseComparison { a, b, z, p_raw: two_sided_normal_p(z), p_adjusted: f64::NAN });
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&x, &y| pairs[x].p_raw.total_cmp(&pairs[y].p_raw));
    let mult = shaffer_multipliers(k);
    let mut running = 0.0f64;
    for (i, &idx) in order.iter().enumerate() {
        running = running.max(mult[i] as f64 * pairs[idx].p_raw);
        pairs[idx].p_adjusted = running.min(1.0);
    }
    Ok(pairs)
}

/// Mean and 95% half-width `1.96 · s / √n`.
pub fn confidence_interval(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::domain("confidence interval needs at least 2 samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// `"0.93 ± 0.01"`.
pub fn format_ci(mean: f64, half_width: f64, decimals: usize) -> String {
    format!("{mean:.decimals$} ± {half_width:.decimals$}")
}

/// Parse `"0.93 ± 0.01"`, `".93 ± .01"` or `"0.93 +- 0.01"`.
pub fn parse_ci(text: &str) -> Result<(f64, f64)> {
    let (m, h) = text
        .split_once('±')
        .or_else(|| text.split_once("+-"))
        .ok_or_else(|| Error::Format(format!("no ± in `{text}`")))?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("`{s}`: {e}")));
    Ok((num(m)?, num(h)?))
}

/// Exact one-sided Wilcoxon signed-rank test of `H1: median(diff) > 0`.
/// Zero differences are dropped; tied magnitudes share average ranks.
pub fn wilcoxon_signed_rank_greater(diffs: &[f64]) -> Result<f64> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Ok(1.0);
    }
    let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    // Doubled ranks are integers even with ties.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let observed: usize = doubled.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let all: f64 = counts.iter().sum();
    Ok(counts[observed..].iter().sum::<f64>() / all)
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(dof / 2.0, x / 2.0)
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Complementary error function via `erfc(x) = Q(1/2, x²)`.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        gamma_q(0.5, x * x)
    } else {
        2.0 - gamma_q(0.5, x * x)
    }
}

/// Lanczos approximation (g = 7, 9 terms) of ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma Q(a, x): power series for x < a + 1,
/// modified Lentz continued fraction otherwise.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        log_prefix.exp() * h
    }
}
