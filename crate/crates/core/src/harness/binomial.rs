//! Exact binomial quantiles and the one-sided preference test.
//!
//! Terms are evaluated as `exp(ln C(n,k) + k ln p + (n-k) ln(1-p))` with a
//! table of log factorials, so nothing underflows before the final sum.

use crate::error::{Error, Result};

fn check(n: u64, p: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("binomial n must be >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "binomial p must lie in (0, 1), got {p}"
        )));
    }
    Ok(())
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut t = Vec::with_capacity(n as usize + 1);
    t.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

/// `ln P(X = k)` for `k = 0..=n`. The table is renormalised so its terms
/// sum to one, which cancels rounding shared by every term (mostly from
/// `ln n!`).
fn log_pmf_table(n: u64, p: f64) -> Vec<f64> {
    let lf = ln_factorials(n);
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut t: Vec<f64> = (0..=n)
        .map(|k| {
            let (ki, ni) = (k as usize, n as usize);
            lf[ni] - lf[ki] - lf[ni - ki] + k as f64 * lp + (n - k) as f64 * lq
        })
        .collect();
    let total = log_sum_exp(&t);
    for x in &mut t {
        *x -= total;
    }
    t
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub fn binomial_pmf(n: u64, k: u64, p: f64) -> Result<f64> {
    check(n, p)?;
    if k > n {
        return Ok(0.0);
    }
    Ok(log_pmf_table(n, p)[k as usize].exp())
}

/// `P(X <= m)`.
pub fn binomial_cdf(n: u64, m: u64, p: f64) -> Result<f64> {
    check(n, p)?;
    if m >= n {
        return Ok(1.0);
    }
    let t = log_pmf_table(n, p);
    Ok(log_sum_exp(&t[..=m as usize]).exp().min(1.0))
}

/// `P(X >= k)`, summed over the upper tail directly.
pub fn binomial_upper_tail(n: u64, k: u64, p: f64) -> Result<f64> {
    check(n, p)?;
    if k == 0 {
        return Ok(1.0);
    }
    if k > n {
        return Ok(0.0);
    }
    let t = log_pmf_table(n, p);
    Ok(log_sum_exp(&t[k as usize..]).exp().min(1.0))
}

/// Smallest `m` with `P(X <= m) >= q`.
pub fn binomial_quantile(n: u64, p: f64, q: f64) -> Result<u64> {
    check(n, p)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile order must lie in (0, 1), got {q}"
        )));
    }
    let t = log_pmf_table(n, p);
    let lq = q.ln();
    // running log-CDF
    let mut acc = f64::NEG_INFINITY;
    for (m, &lt) in t.iter().enumerate() {
        acc = if acc == f64::NEG_INFINITY {
            lt
        } else {
            let hi = acc.max(lt);
            hi + ((acc - hi).exp() + (lt - hi).exp()).ln()
        };
        if acc >= lq {
            return Ok(m as u64);
        }
    }
    Ok(n)
}

/// Votes for a candidate out of `n` responses, tested at level `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceTally {
    pub n: u64,
    pub k: u64,
    pub gamma: f64,
}

impl PreferenceTally {
    pub fn new(n: u64, k: u64, gamma: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("tally needs at least one response".into()));
        }
        if k > n {
            return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        Ok(Self { n, k, gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceResult {
    pub reject: bool,
    /// `P(X >= k)` under `p = 0.5`.
    pub p_value: f64,
    /// `b_{n,0.5}(1 - gamma)`.
    pub threshold: u64,
}

/// One-sided test of `H0: p <= 0.5`. Rejects when `k` reaches the
/// `1 - gamma` quantile of `Binomial(n, 0.5)`.
///
/// At `k == threshold` the p-value `P(X >= k)` can exceed `gamma`; the
/// quantile only guarantees `P(X > threshold) <= gamma`.
pub fn significance_test(t: &PreferenceTally) -> Result<SignificanceResult> {
    let t = PreferenceTally::new(t.n, t.k, t.gamma)?;
    let threshold = binomial_quantile(t.n, 0.5, 1.0 - t.gamma)?;
    Ok(SignificanceResult {
        reject: t.k >= threshold,
        p_value: binomial_upper_tail(t.n, t.k, 0.5)?,
        threshold,
    })
}
