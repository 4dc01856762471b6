//! Dichotomy bound families `a_{m,n}`, `b_{m,n}` and their structural checks.

mod corollary;
pub mod series;

pub use corollary::{
    corollary_threshold, CorollaryCondition, CorollaryKind, CorollaryReport, PerturbEnvelope,
    ThetaInterval,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{Mode, TimeWindow};

/// A positive sequence indexed by integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sequence {
    /// `values[i]` is the term at index `start + i`.
    Table { start: i64, values: Vec<f64> },
    /// `scale · n^exponent`, defined for `n ≥ 1`.
    Power { scale: f64, exponent: f64 },
    /// `scale · e^{rate·n}`.
    Exp { scale: f64, rate: f64 },
}

impl Sequence {
    pub fn eval(&self, n: i64) -> Result<f64> {
        match self {
            Sequence::Table { start, values } => {
                let end = start + values.len() as i64 - 1;
                if n < *start || n > end {
                    return Err(Error::SequenceIndex {
                        index: n,
                        start: *start,
                        end,
                    });
                }
                Ok(values[(n - start) as usize])
            }
            Sequence::Power { scale, exponent } => {
                if n < 1 {
                    return Err(Error::SequenceIndex {
                        index: n,
                        start: 1,
                        end: i64::MAX,
                    });
                }
                Ok(scale * (n as f64).powf(*exponent))
            }
            Sequence::Exp { scale, rate } => Ok(scale * (rate * n as f64).exp()),
        }
    }

    fn validate_positive(&self, what: &str) -> Result<()> {
        let ok = match self {
            Sequence::Table { values, .. } => {
                !values.is_empty() && values.iter().all(|v| v.is_finite() && *v > 0.0)
            }
            Sequence::Power { scale, exponent } => {
                scale.is_finite() && *scale > 0.0 && exponent.is_finite()
            }
            Sequence::Exp { scale, rate } => scale.is_finite() && *scale > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{what} must be a sequence of positive finite numbers"
            )))
        }
    }

    fn validate_increasing(&self, what: &str) -> Result<()> {
        self.validate_positive(what)?;
        let ok = match self {
            Sequence::Table { values, .. } => values.windows(2).all(|w| w[0] < w[1]),
            Sequence::Power { exponent, .. } => *exponent > 0.0,
            Sequence::Exp { rate, .. } => *rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{what} must be strictly increasing"
            )))
        }
    }
}

/// Parameters shared by the closed-form families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    #[serde(rename = "D")]
    pub d: f64,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

impl Rates {
    fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "D must be positive, got {}",
                self.d
            )));
        }
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::InvalidParameter("rates a, b must be finite".into()));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must be nonnegative, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundFamily {
    Tabulated {
        a: BTreeMap<(i64, i64), f64>,
        b: BTreeMap<(i64, i64), f64>,
    },
    /// `a_{m,n} = (a_n/a_m) c_n`, `b_{m,n} = (b_n/b_m) c_n`.
    ProductForm {
        a_seq: Sequence,
        b_seq: Sequence,
        c_seq: Sequence,
    },
    /// `D e^{a(m−n)+ε|n|}`.
    ExpZ(Rates),
    /// `D (m−n+1)^a (|n|+1)^ε`, `D (n−m+1)^b (|n|+1)^ε`.
    PolyZ(Rates),
    /// `D (μ_m/μ_n)^a ν_n^ε` on ℕ.
    MuNu {
        rates: Rates,
        mu: Sequence,
        nu: Sequence,
    },
    /// `D e^{a(m−n)+εn}` on ℕ.
    ExpN(Rates),
    /// `D (m/n)^a n^ε` on ℕ.
    PolyRatioN(Rates),
    /// `D (m−n+1)^a n^ε`, `D (n−m+1)^b n^ε` on ℕ.
    PolyShiftN(Rates),
}

/// How the ratios `λ_{m,n}/a_{m,n}` depend on the outer index, which decides
/// what a window supremum can claim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioStructure {
    ProductForm,
    ClosedForm,
    WindowEvidenceOnly,
}

/// Anything that evaluates dichotomy bounds on pairs of indices.
pub trait DichotomyBounds: Send + Sync {
    /// `a_{m,n}` for `m ≥ n`.
    fn a(&self, m: i64, n: i64) -> Result<f64>;
    /// `b_{m,n}` for `m ≤ n`.
    fn b(&self, m: i64, n: i64) -> Result<f64>;
    fn ratio_structure(&self) -> RatioStructure;
    /// Whether `sup_{m≥j} a_{m,n}/a_{m,j}` and its dual are known finite
    /// without looking at a window.
    fn ratio_hypotheses_analytic(&self) -> bool;
    fn family_name(&self) -> &'static str;
}

fn check_positive(m: i64, n: i64, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::NonPositiveBound { m, n, value })
    }
}

impl BoundFamily {
    pub fn tabulated(
        a: impl IntoIterator<Item = ((i64, i64), f64)>,
        b: impl IntoIterator<Item = ((i64, i64), f64)>,
    ) -> Result<Self> {
        let a: BTreeMap<_, _> = a.into_iter().collect();
        let b: BTreeMap<_, _> = b.into_iter().collect();
        for (&(m, n), &v) in &a {
            if m < n {
                return Err(Error::IndexOutsideFamily {
                    m,
                    n,
                    family: "tabulated",
                });
            }
            check_positive(m, n, v)?;
        }
        for (&(m, n), &v) in &b {
            if m > n {
                return Err(Error::IndexOutsideFamily {
                    m,
                    n,
                    family: "tabulated",
                });
            }
            check_positive(m, n, v)?;
        }
        Ok(BoundFamily::Tabulated { a, b })
    }

    /// Tabulates any bounds over the window pairs.
    pub fn tabulate(bounds: &dyn DichotomyBounds, window: &TimeWindow) -> Result<Self> {
        let a = window
            .forward_pairs()
            .map(|(m, n)| Ok(((m, n), bounds.a(m, n)?)))
            .collect::<Result<Vec<_>>>()?;
        let b = window
            .backward_pairs()
            .map(|(m, n)| Ok(((m, n), bounds.b(m, n)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::tabulated(a, b)
    }

    pub fn product_form(a_seq: Sequence, b_seq: Sequence, c_seq: Sequence) -> Result<Self> {
        a_seq.validate_positive("a_n")?;
        b_seq.validate_positive("b_n")?;
        c_seq.validate_positive("c_n")?;
        Ok(BoundFamily::ProductForm {
            a_seq,
            b_seq,
            c_seq,
        })
    }

    pub fn exp_z(d: f64, a: f64, b: f64, eps: f64) -> Result<Self> {
        let r = Rates { d, a, b, eps };
        r.validate()?;
        Ok(BoundFamily::ExpZ(r))
    }

    pub fn poly_z(d: f64, a: f64, b: f64, eps: f64) -> Result<Self> {
        let r = Rates { d, a, b, eps };
        r.validate()?;
        Ok(BoundFamily::PolyZ(r))
    }

    pub fn mu_nu(d: f64, a: f64, b: f64, eps: f64, mu: Sequence, nu: Sequence) -> Result<Self> {
        let rates = Rates { d, a, b, eps };
        rates.validate()?;
        mu.validate_increasing("mu_n")?;
        nu.validate_increasing("nu_n")?;
        Ok(BoundFamily::MuNu { rates, mu, nu })
    }

    pub fn exp_n(d: f64, a: f64, b: f64, eps: f64) -> Result<Self> {
        let r = Rates { d, a, b, eps };
        r.validate()?;
        Ok(BoundFamily::ExpN(r))
    }

    pub fn poly_ratio_n(d: f64, a: f64, b: f64, eps: f64) -> Result<Self> {
        let r = Rates { d, a, b, eps };
        r.validate()?;
        Ok(BoundFamily::PolyRatioN(r))
    }

    pub fn poly_shift_n(d: f64, a: f64, b: f64, eps: f64) -> Result<Self> {
        let r = Rates { d, a, b, eps };
        r.validate()?;
        Ok(BoundFamily::PolyShiftN(r))
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoundFamily::Tabulated { .. } => "tabulated",
            BoundFamily::ProductForm { .. } => "product-form",
            BoundFamily::ExpZ(_) => "exp-z",
            BoundFamily::PolyZ(_) => "poly-z",
            BoundFamily::MuNu { .. } => "mu-nu",
            BoundFamily::ExpN(_) => "exp-n",
            BoundFamily::PolyRatioN(_) => "poly-ratio-n",
            BoundFamily::PolyShiftN(_) => "poly-shift-n",
        }
    }

    pub fn rates(&self) -> Option<&Rates> {
        match self {
            BoundFamily::ExpZ(r)
            | BoundFamily::PolyZ(r)
            | BoundFamily::ExpN(r)
            | BoundFamily::PolyRatioN(r)
            | BoundFamily::PolyShiftN(r) => Some(r),
            BoundFamily::MuNu { rates, .. } => Some(rates),
            _ => None,
        }
    }

    /// The mode implied by the family's index set, if it fixes one.
    pub fn native_mode(&self) -> Option<Mode> {
        match self {
            BoundFamily::ExpZ(_) | BoundFamily::PolyZ(_) => Some(Mode::FullLine),
            BoundFamily::MuNu { .. }
            | BoundFamily::ExpN(_)
            | BoundFamily::PolyRatioN(_)
            | BoundFamily::PolyShiftN(_) => Some(Mode::HalfLine),
            _ => None,
        }
    }

    fn check_index_set(&self, m: i64, n: i64) -> Result<()> {
        if self.native_mode() == Some(Mode::HalfLine) && (m < 1 || n < 1) {
            return Err(Error::IndexOutsideFamily {
                m,
                n,
                family: self.name(),
            });
        }
        Ok(())
    }

    pub fn eval_a(&self, m: i64, n: i64) -> Result<f64> {
        if m < n {
            return Err(Error::IndexOutsideFamily {
                m,
                n,
                family: self.name(),
            });
        }
        self.check_index_set(m, n)?;
        let value = match self {
            BoundFamily::Tabulated { a, .. } => *a.get(&(m, n)).ok_or(Error::IndexOutsideFamily {
                m,
                n,
                family: "tabulated",
            })?,
            BoundFamily::ProductForm { a_seq, c_seq, .. } => {
                a_seq.eval(n)? / a_seq.eval(m)? * c_seq.eval(n)?
            }
            BoundFamily::ExpZ(r) => r.d * (r.a * (m - n) as f64 + r.eps * n.abs() as f64).exp(),
            BoundFamily::PolyZ(r) => {
                r.d * ((m - n + 1) as f64).powf(r.a) * ((n.abs() + 1) as f64).powf(r.eps)
            }
            BoundFamily::MuNu { rates, mu, nu } => {
                rates.d * (mu.eval(m)? / mu.eval(n)?).powf(rates.a) * nu.eval(n)?.powf(rates.eps)
            }
            BoundFamily::ExpN(r) => r.d * (r.a * (m - n) as f64 + r.eps * n as f64).exp(),
            BoundFamily::PolyRatioN(r) => {
                r.d * (m as f64 / n as f64).powf(r.a) * (n as f64).powf(r.eps)
            }
            BoundFamily::PolyShiftN(r) => {
                r.d * ((m - n + 1) as f64).powf(r.a) * (n as f64).powf(r.eps)
            }
        };
        check_positive(m, n, value)
    }

    pub fn eval_b(&self, m: i64, n: i64) -> Result<f64> {
        if m > n {
            return Err(Error::IndexOutsideFamily {
                m,
                n,
                family: self.name(),
            });
        }
        self.check_index_set(m, n)?;
        let value = match self {
            BoundFamily::Tabulated { b, .. } => *b.get(&(m, n)).ok_or(Error::IndexOutsideFamily {
                m,
                n,
                family: "tabulated",
            })?,
            BoundFamily::ProductForm { b_seq, c_seq, .. } => {
                b_seq.eval(n)? / b_seq.eval(m)? * c_seq.eval(n)?
            }
            BoundFamily::ExpZ(r) => r.d * (r.b * (m - n) as f64 + r.eps * n.abs() as f64).exp(),
            BoundFamily::PolyZ(r) => {
                r.d * ((n - m + 1) as f64).powf(r.b) * ((n.abs() + 1) as f64).powf(r.eps)
            }
            BoundFamily::MuNu { rates, mu, nu } => {
                rates.d * (mu.eval(m)? / mu.eval(n)?).powf(rates.b) * nu.eval(n)?.powf(rates.eps)
            }
            BoundFamily::ExpN(r) => r.d * (r.b * (m - n) as f64 + r.eps * n as f64).exp(),
            BoundFamily::PolyRatioN(r) => {
                r.d * (m as f64 / n as f64).powf(r.b) * (n as f64).powf(r.eps)
            }
            BoundFamily::PolyShiftN(r) => {
                r.d * ((n - m + 1) as f64).powf(r.b) * (n as f64).powf(r.eps)
            }
        };
        check_positive(m, n, value)
    }

    pub fn is_product_form(&self) -> bool {
        matches!(
            self,
            BoundFamily::ProductForm { .. }
                | BoundFamily::ExpZ(_)
                | BoundFamily::ExpN(_)
                | BoundFamily::MuNu { .. }
                | BoundFamily::PolyRatioN(_)
        )
    }

    /// `(a_n, b_n, c_n)` of the product-form representation.
    pub fn product_sequences(&self, n: i64) -> Result<(f64, f64, f64)> {
        self.check_index_set(n, n)?;
        match self {
            BoundFamily::ProductForm {
                a_seq,
                b_seq,
                c_seq,
            } => Ok((a_seq.eval(n)?, b_seq.eval(n)?, c_seq.eval(n)?)),
            BoundFamily::ExpZ(r) => Ok((
                (-r.a * n as f64).exp(),
                (-r.b * n as f64).exp(),
                r.d * (r.eps * n.abs() as f64).exp(),
            )),
            BoundFamily::ExpN(r) => Ok((
                (-r.a * n as f64).exp(),
                (-r.b * n as f64).exp(),
                r.d * (r.eps * n as f64).exp(),
            )),
            BoundFamily::MuNu { rates, mu, nu } => {
                let mu_n = mu.eval(n)?;
                Ok((
                    mu_n.powf(-rates.a),
                    mu_n.powf(-rates.b),
                    rates.d * nu.eval(n)?.powf(rates.eps),
                ))
            }
            BoundFamily::PolyRatioN(r) => {
                let x = n as f64;
                Ok((x.powf(-r.a), x.powf(-r.b), r.d * x.powf(r.eps)))
            }
            other => Err(Error::NotProductForm(other.name())),
        }
    }
}

impl DichotomyBounds for BoundFamily {
    fn a(&self, m: i64, n: i64) -> Result<f64> {
        self.eval_a(m, n)
    }

    fn b(&self, m: i64, n: i64) -> Result<f64> {
        self.eval_b(m, n)
    }

    fn ratio_structure(&self) -> RatioStructure {
        match self {
            BoundFamily::Tabulated { .. } => RatioStructure::WindowEvidenceOnly,
            f if f.is_product_form() => RatioStructure::ProductForm,
            _ => RatioStructure::ClosedForm,
        }
    }

    fn ratio_hypotheses_analytic(&self) -> bool {
        !matches!(self, BoundFamily::Tabulated { .. })
    }

    fn family_name(&self) -> &'static str {
        self.name()
    }
}

/// Window supremum of `a_{m,n}/a_{m,j}` over `m ≥ j` for a pair `j ≥ n`.
pub fn a_ratio_sup(bounds: &dyn DichotomyBounds, window: &TimeWindow, j: i64, n: i64) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for m in j..=window.n_max {
        sup = sup.max(bounds.a(m, n)? / bounds.a(m, j)?);
    }
    Ok(sup)
}

/// Window supremum of `b_{m,n}/b_{m,j}` over `m ≤ j` for a pair `j ≤ n`.
pub fn b_ratio_sup(bounds: &dyn DichotomyBounds, window: &TimeWindow, j: i64, n: i64) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for m in window.n_min..=j {
        sup = sup.max(bounds.b(m, n)? / bounds.b(m, j)?);
    }
    Ok(sup)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioHypothesisReport {
    /// True when the family guarantees both suprema without a sweep.
    pub analytic: bool,
    /// Largest window value of `sup_{m≥j} a_{m,n}/a_{m,j}` over pairs `j ≥ n`.
    pub a_ratio_window_sup: f64,
    /// Largest window value of `sup_{m≤j} b_{m,n}/b_{m,j}` over pairs `j ≤ n`.
    pub b_ratio_window_sup: f64,
    /// On the half-line only the `a` hypothesis is required.
    pub b_required: bool,
    pub window_restricted: bool,
    pub pass: bool,
}

pub fn check_h5_h6(bounds: &dyn DichotomyBounds, window: &TimeWindow) -> Result<RatioHypothesisReport> {
    let mut a_sup: f64 = 0.0;
    for (j, n) in window.forward_pairs() {
        a_sup = a_sup.max(a_ratio_sup(bounds, window, j, n)?);
    }
    let mut b_sup: f64 = 0.0;
    for (j, n) in window.backward_pairs() {
        b_sup = b_sup.max(b_ratio_sup(bounds, window, j, n)?);
    }
    let analytic = bounds.ratio_hypotheses_analytic();
    let b_required = window.mode == Mode::FullLine;
    let finite = a_sup.is_finite() && (!b_required || b_sup.is_finite());
    Ok(RatioHypothesisReport {
        analytic,
        a_ratio_window_sup: a_sup,
        b_ratio_window_sup: b_sup,
        b_required,
        window_restricted: !analytic,
        pass: analytic || finite,
    })
}

/// Constant `C` with `(a_m b_n)/(a_n b_m) ≤ C` for `m ≤ n`.
///
/// Exponential, `(μ,ν)` and ratio-polynomial families with `a ≤ b` give
/// `C = 1` exactly; otherwise the window supremum is returned (at least 1,
/// the value at `m = n`).
///
/// A tabulation is read as a product form through `c_n = a_{n,n} = b_{n,n}`,
/// giving the ratio `a_{n,m} b_{m,n} / (a_{m,m} b_{n,n})`.
pub fn check_c_ratio(family: &BoundFamily, window: &TimeWindow) -> Result<f64> {
    if let BoundFamily::Tabulated { .. } = family {
        let mut c: f64 = 1.0;
        for (m, n) in window.backward_pairs() {
            let ratio = family.eval_a(n, m)? * family.eval_b(m, n)?
                / (family.eval_a(m, m)? * family.eval_b(n, n)?);
            c = c.max(ratio);
        }
        return Ok(c);
    }
    if !family.is_product_form() {
        return Err(Error::NotProductForm(family.name()));
    }
    if let Some(r) = family.rates() {
        if r.a <= r.b {
            return Ok(1.0);
        }
    }
    let seqs: Vec<(f64, f64, f64)> = window
        .indices()
        .map(|n| family.product_sequences(n))
        .collect::<Result<_>>()?;
    let mut c: f64 = 1.0;
    for (m, n) in window.backward_pairs() {
        let (a_m, b_m, _) = seqs[(m - window.n_min) as usize];
        let (a_n, b_n, _) = seqs[(n - window.n_min) as usize];
        c = c.max(a_m * b_n / (a_n * b_m));
    }
    Ok(c)
}
