//! Closed-form smallness thresholds `θ` for perturbations decaying like the
//! bound family allows.

use serde::{Deserialize, Serialize};

use super::series::{self, Bracket};
use super::{check_c_ratio, BoundFamily, Rates, Sequence};
use crate::error::{Error, Result};
use crate::system::{Mode, TimeWindow};

/// Declared decay of `‖B_n‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbEnvelope {
    /// `δ e^{−γ|n+1|}` on ℤ, `δ e^{−γ(n+1)}` on ℕ.
    Exp { delta: f64, gamma: f64 },
    /// `δ (|n+1|+1)^{−γ}` on ℤ, `δ (n+1)^{−γ}` on ℕ.
    Poly { delta: f64, gamma: f64 },
    /// `δ ν_{n+1}^{−γ}`.
    Nu { delta: f64, gamma: f64 },
    /// `(a_n/(a_{n+1}c_{n+1})) β_n` with `β_n` tabulated from `start`
    /// and zero elsewhere.
    SeqBudget { start: i64, values: Vec<f64> },
}

impl PerturbEnvelope {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbEnvelope::Exp { .. } => "exp",
            PerturbEnvelope::Poly { .. } => "poly",
            PerturbEnvelope::Nu { .. } => "nu",
            PerturbEnvelope::SeqBudget { .. } => "seq-budget",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PerturbEnvelope::Exp { delta, gamma }
            | PerturbEnvelope::Poly { delta, gamma }
            | PerturbEnvelope::Nu { delta, gamma } => {
                if !(delta.is_finite() && *delta >= 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "envelope needs δ ≥ 0 and finite γ, got δ = {delta}, γ = {gamma}"
                    )));
                }
            }
            PerturbEnvelope::SeqBudget { values, .. } => {
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "β_n must be nonnegative and finite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn mismatch(&self, family: &BoundFamily) -> Error {
        Error::EnvelopeMismatch {
            envelope: self.name(),
            family: family.name(),
        }
    }

    /// The envelope value for `‖B_k‖` under `family`.
    pub fn norm_bound(&self, family: &BoundFamily, k: i64) -> Result<f64> {
        self.validate()?;
        let half_line = family.native_mode() == Some(Mode::HalfLine);
        match (self, family) {
            (PerturbEnvelope::Exp { delta, gamma }, BoundFamily::ExpZ(_) | BoundFamily::ExpN(_)) => {
                let t = if half_line { (k + 1) as f64 } else { (k + 1).abs() as f64 };
                Ok(delta * (-gamma * t).exp())
            }
            (
                PerturbEnvelope::Poly { delta, gamma },
                BoundFamily::PolyZ(_) | BoundFamily::PolyRatioN(_) | BoundFamily::PolyShiftN(_),
            ) => {
                let t = if half_line {
                    (k + 1) as f64
                } else {
                    ((k + 1).abs() + 1) as f64
                };
                Ok(delta * t.powf(-gamma))
            }
            (PerturbEnvelope::Nu { delta, gamma }, BoundFamily::MuNu { nu, .. }) => {
                Ok(delta * nu.eval(k + 1)?.powf(-gamma))
            }
            (PerturbEnvelope::SeqBudget { start, values }, f) if f.is_product_form() => {
                let beta = usize::try_from(k - start)
                    .ok()
                    .and_then(|i| values.get(i))
                    .copied()
                    .unwrap_or(0.0);
                if beta == 0.0 {
                    return Ok(0.0);
                }
                let (a_k, _, _) = f.product_sequences(k)?;
                let (a_next, _, c_next) = f.product_sequences(k + 1)?;
                Ok(a_k / (a_next * c_next) * beta)
            }
            _ => Err(self.mismatch(family)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorollaryKind {
    /// `βC < 1` on ℤ.
    SequenceBudgetZ,
    /// `βC < 1` on ℕ.
    SequenceBudgetN,
    ExponentialZ,
    PolynomialZ,
    MuNu,
    ExponentialN,
    PolyRatioN,
    PolyShiftN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryCondition {
    pub name: String,
    /// Positive when satisfied.
    pub margin: f64,
    pub pass: bool,
}

impl CorollaryCondition {
    fn at_most(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            margin: rhs - lhs,
            pass: lhs <= rhs,
        }
    }

    fn below(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            margin: rhs - lhs,
            pass: lhs < rhs,
        }
    }
}

pub type ThetaInterval = Bracket;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub kind: CorollaryKind,
    pub theta: ThetaInterval,
    /// `1/(1 − θ_upper)`, absent when `θ_upper ≥ 1`.
    pub sigma_factor: Option<f64>,
    /// Product-form ratio constant, for the sequence-budget case.
    pub c_ratio: Option<f64>,
    pub conditions: Vec<CorollaryCondition>,
    pub notes: Vec<String>,
    pub series_cap: usize,
    pub pass: bool,
}

const THETA_BELOW_ONE: &str = "θ < 1";

fn finish(
    kind: CorollaryKind,
    theta: Bracket,
    c_ratio: Option<f64>,
    mut conditions: Vec<CorollaryCondition>,
    notes: Vec<String>,
    series_cap: usize,
) -> CorollaryReport {
    let threshold_name = match kind {
        CorollaryKind::SequenceBudgetZ | CorollaryKind::SequenceBudgetN => "βC < 1",
        _ => THETA_BELOW_ONE,
    };
    conditions.push(CorollaryCondition::below(threshold_name, theta.upper, 1.0));
    let pass = conditions.iter().all(|c| c.pass);
    CorollaryReport {
        kind,
        theta,
        sigma_factor: (theta.upper < 1.0).then(|| 1.0 / (1.0 - theta.upper)),
        c_ratio,
        conditions,
        notes,
        series_cap,
        pass,
    }
}

fn rate_conditions(r: &Rates, need_b_nonpositive: bool) -> Vec<CorollaryCondition> {
    let mut out = vec![CorollaryCondition::at_most("a ≤ b", r.a, r.b)];
    if need_b_nonpositive {
        out.push(CorollaryCondition::at_most("b ≤ 0", r.b, 0.0));
    }
    out
}

fn decay_rate(r: &Rates, gamma: f64, strict_below: f64) -> Result<f64> {
    let s = r.eps - gamma;
    if !(s < strict_below) {
        return Err(Error::DivergedSeries(format!(
            "ε − γ = {s} must be < {strict_below}"
        )));
    }
    Ok(s)
}

/// `θ` for the family/envelope pairing, evaluated with `cap` series terms.
///
/// `window` is only consulted for the ratio constant `C` of the
/// sequence-budget case.
pub fn corollary_threshold(
    family: &BoundFamily,
    envelope: &PerturbEnvelope,
    window: &TimeWindow,
    cap: usize,
) -> Result<CorollaryReport> {
    envelope.validate()?;
    let mismatch = || envelope.mismatch(family);
    match envelope {
        PerturbEnvelope::SeqBudget { values, .. } => {
            if !family.is_product_form() {
                return Err(mismatch());
            }
            let kind = match family.native_mode().unwrap_or(window.mode) {
                Mode::FullLine => CorollaryKind::SequenceBudgetZ,
                Mode::HalfLine => CorollaryKind::SequenceBudgetN,
            };
            let beta: f64 = values.iter().sum();
            let c = check_c_ratio(family, window)?;
            let notes = match family.rates() {
                Some(r) if r.a <= r.b => vec!["C = 1 exactly since a ≤ b".to_string()],
                _ => vec!["C is the window supremum of (a_m b_n)/(a_n b_m)".to_string()],
            };
            Ok(finish(kind, Bracket::exact(beta * c), Some(c), Vec::new(), notes, cap))
        }
        PerturbEnvelope::Exp { delta, gamma } => match family {
            BoundFamily::ExpZ(r) => {
                let s = decay_rate(r, *gamma, 0.0)?;
                // Σ_{k∈ℤ} e^{s|k+1|} = 1 + 2 Σ_{j≥1} e^{sj}
                let tail = series::geometric(s.exp(), 1, cap)?;
                let theta = tail.scale(2.0).shift(1.0).scale(r.d * delta * (-r.a).exp());
                Ok(finish(
                    CorollaryKind::ExponentialZ,
                    theta,
                    None,
                    rate_conditions(r, false),
                    Vec::new(),
                    cap,
                ))
            }
            BoundFamily::ExpN(r) => {
                let s = decay_rate(r, *gamma, 0.0)?;
                let sum = series::geometric(s.exp(), 2, cap)?;
                let theta = sum.scale(r.d * delta * (-r.a).exp());
                Ok(finish(
                    CorollaryKind::ExponentialN,
                    theta,
                    None,
                    rate_conditions(r, false),
                    Vec::new(),
                    cap,
                ))
            }
            _ => Err(mismatch()),
        },
        PerturbEnvelope::Poly { delta, gamma } => match family {
            BoundFamily::PolyZ(r) => {
                let s = decay_rate(r, *gamma, -1.0)?;
                let z = series::zeta(s, cap)?;
                let theta = z.scale(2.0).shift(-1.0).scale(2f64.powf(-r.a) * r.d * delta);
                Ok(finish(
                    CorollaryKind::PolynomialZ,
                    theta,
                    None,
                    rate_conditions(r, true),
                    Vec::new(),
                    cap,
                ))
            }
            BoundFamily::PolyRatioN(r) => {
                let s = decay_rate(r, *gamma, -1.0)?;
                let z = series::zeta(s, cap)?;
                let theta = z
                    .shift(-1.0)
                    .scale(r.d * delta * 1f64.max(2f64.powf(-r.a)));
                Ok(finish(
                    CorollaryKind::PolyRatioN,
                    theta,
                    None,
                    rate_conditions(r, false),
                    Vec::new(),
                    cap,
                ))
            }
            BoundFamily::PolyShiftN(r) => {
                let s = decay_rate(r, *gamma, -1.0)?;
                let z = series::zeta(s, cap)?;
                let theta = z.shift(-1.0).scale(2f64.powf(-r.a) * r.d * delta);
                let notes = vec![format!(
                    "convergence requires ε − γ < −1 (here {s}); the condition printed as \
                     \"γ+ε<−1\" is treated as a typo for it (γ + ε = {})",
                    gamma + r.eps
                )];
                Ok(finish(
                    CorollaryKind::PolyShiftN,
                    theta,
                    None,
                    rate_conditions(r, true),
                    notes,
                    cap,
                ))
            }
            _ => Err(mismatch()),
        },
        PerturbEnvelope::Nu { delta, gamma } => match family {
            BoundFamily::MuNu { rates, mu, nu } => {
                let kappa = kappa(rates, mu, nu, *gamma, cap)?;
                Ok(finish(
                    CorollaryKind::MuNu,
                    kappa.scale(rates.d * delta),
                    None,
                    rate_conditions(rates, false),
                    Vec::new(),
                    cap,
                ))
            }
            _ => Err(mismatch()),
        },
    }
}

/// `κ = Σ_{k≥1} (μ_k/μ_{k+1})^a ν_{k+1}^{ε−γ}`.
fn kappa(rates: &Rates, mu: &Sequence, nu: &Sequence, gamma: f64, cap: usize) -> Result<Bracket> {
    let s = rates.eps - gamma;
    let cap = cap.max(1);
    let k_last = cap as i64;
    // sup over k > K of (μ_k/μ_{k+1})^a; the ratio lies in (0, 1)
    let ratio_pow_sup = if rates.a >= 0.0 {
        1.0
    } else {
        let inv_ratio_sup = match mu {
            Sequence::Power { exponent, .. } => {
                ((k_last + 2) as f64 / (k_last + 1) as f64).powf(*exponent)
            }
            Sequence::Exp { rate, .. } => rate.exp(),
            Sequence::Table { .. } => {
                return Err(Error::InvalidParameter(
                    "κ needs a closed-form μ_n; a finite table leaves the series undetermined"
                        .into(),
                ))
            }
        };
        inv_ratio_sup.powf(-rates.a)
    };
    // ∫_{K+1}^∞ ν(x)^s dx bounds Σ_{j≥K+2} ν_j^s
    let x0 = (k_last + 1) as f64;
    let nu_tail = match nu {
        Sequence::Power { scale, exponent } => {
            let p = exponent * s;
            if !(p < -1.0) {
                return Err(Error::DivergedSeries(format!(
                    "ν_n^(ε−γ) ~ n^{p} is not summable"
                )));
            }
            scale.powf(s) * x0.powf(p + 1.0) / -(p + 1.0)
        }
        Sequence::Exp { scale, rate } => {
            let p = rate * s;
            if !(p < 0.0) {
                return Err(Error::DivergedSeries(format!(
                    "ν_n^(ε−γ) ~ e^({p} n) is not summable"
                )));
            }
            scale.powf(s) * (p * x0).exp() / -p
        }
        Sequence::Table { .. } => {
            return Err(Error::InvalidParameter(
                "κ needs a closed-form ν_n; a finite table leaves the series undetermined".into(),
            ))
        }
    };
    let mut partial = 0.0;
    for k in 1..=k_last {
        partial += (mu.eval(k)? / mu.eval(k + 1)?).powf(rates.a) * nu.eval(k + 1)?.powf(s);
    }
    Ok(Bracket {
        lower: partial,
        upper: partial + ratio_pow_sup * nu_tail,
    })
}
