//! Two-sided Wilcoxon signed-rank test for paired per-subject scores.

use std::fmt;

use crate::error::{Error, Result};

/// Significance band of a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Marker {
    /// `0.05 < p ≤ 1`
    Ns,
    /// `0.01 < p ≤ 0.05`
    One,
    /// `0.001 < p ≤ 0.01`
    Two,
    /// `0.0001 < p ≤ 0.001`
    Three,
    /// `p ≤ 0.0001`
    Four,
}

impl Marker {
    pub fn from_p(p: f64) -> Self {
        if p <= 1e-4 {
            Marker::Four
        } else if p <= 1e-3 {
            Marker::Three
        } else if p <= 1e-2 {
            Marker::Two
        } else if p <= 0.05 {
            Marker::One
        } else {
            Marker::Ns
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Marker::Ns => "ns",
            Marker::One => "*",
            Marker::Two => "**",
            Marker::Three => "***",
            Marker::Four => "****",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonOptions {
    /// Minimum nonzero differences required.
    pub min_pairs: usize,
    /// Largest `n` that uses the exact null distribution.
    pub exact_max_n: usize,
}

impl Default for WilcoxonOptions {
    fn default() -> Self {
        Self {
            min_pairs: 5,
            exact_max_n: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub exact: bool,
    pub marker: Marker,
}

/// Ranks of `values` (1-based), ties receive their average rank.
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
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_with(a, b, WilcoxonOptions::default())
}

pub fn wilcoxon_with(a: &[f64], b: &[f64], options: WilcoxonOptions) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "wilcoxon_signed_rank",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if let Some(bad) = diffs.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            context: "wilcoxon difference".into(),
            index: bad,
        });
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
            marker: Marker::Ns,
        });
    }
    if n < options.min_pairs {
        return Err(Error::Parameter(format!(
            "{n} nonzero differences, need at least {}",
            options.min_pairs
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    let (p, exact) = if n <= options.exact_max_n {
        (exact_p(&ranks, w_plus), true)
    } else {
        (normal_p(&ranks, w_plus), false)
    };
    let p_value = p.min(1.0);
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        p_value,
        n,
        exact,
        marker: Marker::from_p(p_value),
    })
}

/// Exact two-sided p under the sign-flip null. Doubled ranks are integers
/// even with ties, so the null distribution of `2·W+` is counted directly.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (2.0 * w_plus).round() as usize;
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed].iter().sum();
    let upper: f64 = counts[observed..].iter().sum();
    2.0 * lower.min(upper) / all
}

/// Normal approximation with tie and continuity corrections.
fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2)
}
