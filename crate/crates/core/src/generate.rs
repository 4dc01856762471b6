//! Seeded random systems that admit a declared exponential dichotomy by
//! construction.
//!
//! Steps are block-diagonal `Λ_n` (contracting entries `|λ| ≤ e^a`, expanding
//! ones `|λ| ≥ e^b`), conjugated by `S_n = I + E_n` with
//! `‖E_n‖ = 1 − (1−ρ₀)e^{−ε|n|}`, so `‖S_n‖ ≤ 2` and
//! `‖S_n⁻¹‖ ≤ e^{ε|n|}/(1−ρ₀)`. With `ρ₀ = 1/2` the family `D = 4` holds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::BoundFamily;
use crate::document::Document;
use crate::error::{Error, Result};
use crate::linalg::{self, op_norm, Matrix};
use crate::robustness::{sup_ratios, Perturbation};
use crate::system::{Mode, System, TimeWindow};

const RHO0: f64 = 0.5;
pub const GENERATED_D: f64 = 4.0;
/// Scaled perturbations land this far below the requested target.
const TARGET_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GenOptions {
    pub seed: u64,
    pub dim: usize,
    /// Number of contracting directions; `None` picks one in `[1, dim − 1]`
    /// (or 1 when `dim = 1`).
    pub stable_dim: Option<usize>,
    pub window: TimeWindow,
    pub eps: f64,
    /// Requested `max{λ,μ}`; zero gives no perturbation.
    pub target: f64,
}

impl GenOptions {
    pub fn new(seed: u64, dim: usize, window: TimeWindow) -> Self {
        Self {
            seed,
            dim,
            stable_dim: None,
            window,
            eps: 0.0,
            target: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub system: System,
    pub bounds: BoundFamily,
    pub perturbation: Perturbation,
    /// Measured `max{λ,μ}` of `perturbation`.
    pub measured: f64,
}

impl Generated {
    pub fn document(&self) -> Document {
        Document::from_parts(&self.system, &self.bounds, &self.perturbation, None)
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0))
}

fn conjugator(rng: &mut ChaCha8Rng, d: usize, eps: f64, n: i64) -> Matrix {
    let target = 1.0 - (1.0 - RHO0) * (-eps * n.abs() as f64).exp();
    let mut e = random_matrix(rng, d);
    let norm = op_norm(&e);
    if norm > 0.0 {
        e *= target / norm;
    }
    linalg::identity(d) + e
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

pub fn generate(opts: &GenOptions) -> Result<Generated> {
    if opts.dim == 0 || opts.dim > 8 {
        return Err(Error::InvalidParameter(format!(
            "dimension must be in [1, 8], got {}",
            opts.dim
        )));
    }
    if !(opts.target >= 0.0 && opts.target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "infeasible target max{{λ,μ}} = {}: it must lie in [0, 1)",
            opts.target
        )));
    }
    if !(opts.eps.is_finite() && opts.eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be nonnegative, got {}", opts.eps)));
    }
    let d = opts.dim;
    let w = opts.window;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let stable = match opts.stable_dim {
        Some(k) if k <= d => k,
        Some(k) => {
            return Err(Error::InvalidParameter(format!(
                "stable dimension {k} exceeds {d}"
            )))
        }
        None if d == 1 => 1,
        None => rng.gen_range(1..d),
    };
    let a: f64 = rng.gen_range(-0.5..-0.1);
    let b: f64 = rng.gen_range(0.1..0.5);

    let pi = Matrix::from_fn(d, d, |i, j| if i == j && i < stable { 1.0 } else { 0.0 });
    let s: Vec<Matrix> = w.indices().map(|n| conjugator(&mut rng, d, opts.eps, n)).collect();
    let s_inv: Vec<Matrix> = s
        .iter()
        .map(|m| {
            m.clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidParameter("singular conjugator".into()))
        })
        .collect::<Result<_>>()?;
    let mut operators = Vec::with_capacity(w.len() - 1);
    for i in 0..w.len() - 1 {
        let mut lambda = Matrix::zeros(d, d);
        for r in 0..d {
            lambda[(r, r)] = if r < stable {
                signed(&mut rng, 0.5 * a.exp(), a.exp())
            } else {
                signed(&mut rng, b.exp(), 1.25 * b.exp())
            };
        }
        operators.push(&s[i + 1] * lambda * &s_inv[i]);
    }
    let projections = s.iter().zip(&s_inv).map(|(m, inv)| m * &pi * inv).collect();
    let system = System::new(d, w, operators, projections)?;
    let bounds = match w.mode {
        Mode::FullLine => BoundFamily::exp_z(GENERATED_D, a, b, opts.eps)?,
        Mode::HalfLine => BoundFamily::exp_n(GENERATED_D, a, b, opts.eps)?,
    };

    let (perturbation, measured) = if opts.target == 0.0 || w.len() < 2 {
        (Perturbation::zero(d), 0.0)
    } else {
        let count = rng.gen_range(1..=3usize).min(w.len() - 1);
        let mut support: Vec<i64> = Vec::new();
        while support.len() < count {
            let k = rng.gen_range(w.n_min..w.n_max);
            if !support.contains(&k) {
                support.push(k);
            }
        }
        support.sort_unstable();
        let raw = Perturbation::new(d, support.iter().map(|&k| (k, random_matrix(&mut rng, d))))?;
        let unit = sup_ratios(&bounds, &raw, &w)?.summary.max;
        if !(unit > 0.0) {
            return Err(Error::InvalidParameter("sampled perturbation vanished".into()));
        }
        let scaled = raw.scaled(opts.target * (1.0 - TARGET_SLACK) / unit)?;
        let measured = sup_ratios(&bounds, &scaled, &w)?.summary.max;
        (scaled, measured)
    };
    Ok(Generated {
        system,
        bounds,
        perturbation,
        measured,
    })
}
