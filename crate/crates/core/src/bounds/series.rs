//! Partial sums with integral-comparison tail bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CAP: usize = 10_000;

/// `lower ≤ true value ≤ upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
}

impl Bracket {
    pub fn exact(value: f64) -> Self {
        Self {
            lower: value,
            upper: value,
        }
    }

    pub fn scale(self, factor: f64) -> Self {
        debug_assert!(factor >= 0.0);
        Self {
            lower: self.lower * factor,
            upper: self.upper * factor,
        }
    }

    pub fn shift(self, offset: f64) -> Self {
        Self {
            lower: self.lower + offset,
            upper: self.upper + offset,
        }
    }
}

/// `Σ_{k=first}^{first+cap−1} term(k)` plus a caller-supplied bound on the rest.
pub fn partial_plus_tail(first: i64, cap: usize, term: impl Fn(i64) -> f64, tail: impl Fn(i64) -> f64) -> Bracket {
    let last = first + cap as i64 - 1;
    let partial: f64 = (first..=last).map(term).sum();
    Bracket {
        lower: partial,
        upper: partial + tail(last),
    }
}

/// `Σ_{k≥1} k^{exponent}`, which needs `exponent < −1`.
pub fn zeta(exponent: f64, cap: usize) -> Result<Bracket> {
    if !(exponent < -1.0) {
        return Err(Error::DivergedSeries(format!(
            "Σ k^s with s = {exponent} needs s < −1"
        )));
    }
    let cap = cap.max(1);
    // Σ_{k>K} k^s ≤ ∫_K^∞ x^s dx
    Ok(partial_plus_tail(
        1,
        cap,
        |k| (k as f64).powf(exponent),
        |last| (last as f64).powf(exponent + 1.0) / -(exponent + 1.0),
    ))
}

/// `Σ_{j≥start} r^j` for `0 ≤ r < 1`.
pub fn geometric(r: f64, start: i64, cap: usize) -> Result<Bracket> {
    if !(r < 1.0) || r < 0.0 {
        return Err(Error::DivergedSeries(format!(
            "geometric ratio {r} is not in [0, 1)"
        )));
    }
    if r == 0.0 {
        return Ok(Bracket::exact(if start == 0 { 1.0 } else { 0.0 }));
    }
    let cap = cap.max(1);
    let ln_r = r.ln();
    Ok(partial_plus_tail(
        start,
        cap,
        |j| r.powi(j as i32),
        |last| (ln_r * last as f64).exp() / -ln_r,
    ))
}
