//! Half-line systems: extension to ℤ by the identity below index 1, and the
//! ℕ certificate transported back from the full-line pipeline.

use crate::bounds::{check_h5_h6, BoundFamily, DichotomyBounds, RatioHypothesisReport, RatioStructure};
use crate::constructor::{construct, ConstructOptions, PerturbedDichotomy};
use crate::error::{Error, Result};
use crate::linalg;
use crate::robustness::{sup_ratios, sup_ratios_prime, Perturbation, RobustnessSummary};
use crate::system::{Mode, System, TimeWindow};

pub const MIN_PADDING: i64 = 5;

/// `ã`, `b̃` built from half-line bounds by freezing indices below 1 at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedBounds {
    pub inner: BoundFamily,
}

impl DichotomyBounds for ExtendedBounds {
    fn a(&self, m: i64, n: i64) -> Result<f64> {
        if m < n {
            return Err(Error::IndexOutsideFamily {
                m,
                n,
                family: "extended",
            });
        }
        if n >= 1 {
            self.inner.eval_a(m, n)
        } else if m >= 1 {
            self.inner.eval_a(m, 1)
        } else {
            self.inner.eval_a(1, 1)
        }
    }

    fn b(&self, m: i64, n: i64) -> Result<f64> {
        if m > n {
            return Err(Error::IndexOutsideFamily {
                m,
                n,
                family: "extended",
            });
        }
        if m >= 1 {
            self.inner.eval_b(m, n)
        } else if n >= 1 {
            self.inner.eval_b(1, n)
        } else {
            self.inner.eval_b(1, 1)
        }
    }

    fn ratio_structure(&self) -> RatioStructure {
        self.inner.ratio_structure()
    }

    fn ratio_hypotheses_analytic(&self) -> bool {
        self.inner.ratio_hypotheses_analytic()
    }

    fn family_name(&self) -> &'static str {
        "extended"
    }
}

#[derive(Clone, Debug)]
pub struct Extension {
    pub system: System,
    pub bounds: ExtendedBounds,
    pub perturbation: Perturbation,
    pub padding: i64,
}

/// Padding `max(5, largest support index)`.
pub fn default_padding(pert: &Perturbation) -> i64 {
    pert.support().max().unwrap_or(0).max(MIN_PADDING)
}

/// `Ã_m = Id`, `P̃_m = P_1`, `B̃_m = 0` for `1 − padding ≤ m < 1`.
pub fn extend_to_z(
    sys: &System,
    bounds: &BoundFamily,
    pert: &Perturbation,
    padding: i64,
) -> Result<Extension> {
    let w = sys.window();
    if w.mode != Mode::HalfLine || w.n_min != 1 {
        return Err(Error::ModeMismatch { expected: "N" });
    }
    if padding < 1 {
        return Err(Error::InvalidParameter(format!(
            "padding must be positive, got {padding}"
        )));
    }
    pert.check_window(w)?;
    let window = TimeWindow::full_line(1 - padding, w.n_max)?;
    let d = sys.dim();
    let p1 = sys.projection(1)?.clone();
    let mut operators = vec![linalg::identity(d); padding as usize];
    operators.extend(sys.operators().iter().cloned());
    let mut projections = vec![p1; padding as usize];
    projections.extend(sys.projections().iter().cloned());
    Ok(Extension {
        system: System::new(d, window, operators, projections)?,
        bounds: ExtendedBounds {
            inner: bounds.clone(),
        },
        perturbation: pert.clone(),
        padding,
    })
}

#[derive(Clone, Debug)]
pub struct HalfLineCertificate {
    /// `θ = max{sup λ'/a, sup μ'/b}` computed on ℕ.
    pub direct: RobustnessSummary,
    /// The same suprema on the extended system.
    pub extended: RobustnessSummary,
    pub ratio_hypothesis: RatioHypothesisReport,
    pub padding: i64,
    pub theta: f64,
    pub sigma: f64,
    /// Perturbed dichotomy restricted to ℕ indices.
    pub construction: Option<PerturbedDichotomy>,
}

/// Checks the half-line robustness hypotheses directly and through the
/// extension, requires both to agree exactly, and optionally constructs the
/// perturbed dichotomy on the extension.
pub fn check_theorem_n(
    sys: &System,
    bounds: &BoundFamily,
    pert: &Perturbation,
    options: Option<&ConstructOptions>,
) -> Result<HalfLineCertificate> {
    let w = *sys.window();
    if w.mode != Mode::HalfLine {
        return Err(Error::ModeMismatch { expected: "N" });
    }
    let ratio_hypothesis = check_h5_h6(bounds, &w)?;
    let direct = sup_ratios_prime(bounds, pert, &w)?.summary;
    let padding = default_padding(pert);
    let ext = extend_to_z(sys, bounds, pert, padding)?;
    let extended = sup_ratios(&ext.bounds, &ext.perturbation, ext.system.window())?.summary;
    if direct.lambda_sup.to_bits() != extended.lambda_sup.to_bits()
        || direct.mu_sup.to_bits() != extended.mu_sup.to_bits()
    {
        return Err(Error::CertificateMismatch(format!(
            "direct (λ, μ) = ({}, {}), extended (λ, μ) = ({}, {})",
            direct.lambda_sup, direct.mu_sup, extended.lambda_sup, extended.mu_sup
        )));
    }
    let sigma = direct.sigma_or_err()?;
    let construction = match options {
        Some(opts) => {
            let built = construct(&ext.system, &ext.bounds, &ext.perturbation, opts)?;
            if built.sigma.to_bits() != sigma.to_bits() {
                return Err(Error::CertificateMismatch(format!(
                    "σ direct {sigma}, extended {}",
                    built.sigma
                )));
            }
            Some(built.restrict(w)?)
        }
        None => None,
    };
    Ok(HalfLineCertificate {
        theta: direct.max,
        direct,
        extended,
        ratio_hypothesis,
        padding,
        sigma,
        construction,
    })
}
