//! Robustness series `λ_{m,n}`, `μ_{m,n}` and their weighted suprema.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundFamily, DichotomyBounds, PerturbEnvelope, RatioStructure};
use crate::error::{Error, Result};
use crate::linalg::{self, op_norm, Matrix};
use crate::system::{Mode, TimeWindow};

/// Finitely supported perturbation `B_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    dim: usize,
    entries: BTreeMap<i64, Matrix>,
    norms: BTreeMap<i64, f64>,
}

impl Perturbation {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
            norms: BTreeMap::new(),
        }
    }

    /// Exactly zero matrices are dropped from the support.
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (i64, Matrix)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, b) in entries {
            if b.nrows() != dim || b.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "B_{k} is {}x{}, expected {dim}x{dim}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if !linalg::is_finite(&b) {
                return Err(Error::InvalidParameter(format!("B_{k} has non-finite entries")));
            }
            if b.iter().any(|&x| x != 0.0) {
                map.insert(k, b);
            }
        }
        let norms = map.iter().map(|(&k, b)| (k, op_norm(b))).collect();
        Ok(Self {
            dim,
            entries: map,
            norms,
        })
    }

    /// `B_k = envelope(k)·Id` on `[n_min, n_max − 1]`, saturating the envelope.
    pub fn from_envelope(
        dim: usize,
        family: &BoundFamily,
        envelope: &PerturbEnvelope,
        window: &TimeWindow,
    ) -> Result<Self> {
        let entries = (window.n_min..window.n_max)
            .map(|k| Ok((k, linalg::identity(dim) * envelope.norm_bound(family, k)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> impl Iterator<Item = i64> + '_ {
        self.entries.keys().copied()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: i64) -> Option<&Matrix> {
        self.entries.get(&k)
    }

    pub fn entries(&self) -> &BTreeMap<i64, Matrix> {
        &self.entries
    }

    /// `‖B_k‖`, zero off the support.
    pub fn norm(&self, k: i64) -> f64 {
        self.norms.get(&k).copied().unwrap_or(0.0)
    }

    /// `(k, ‖B_k‖)` in ascending `k`.
    pub fn norms(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.norms.iter().map(|(&k, &v)| (k, v))
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.dim, self.entries.iter().map(|(&k, b)| (k, b * t)))
    }

    /// Support must lie in `[n_min, n_max − 1]`.
    pub fn check_window(&self, window: &TimeWindow) -> Result<()> {
        for k in self.support() {
            if k < window.n_min || k >= window.n_max {
                return Err(Error::IndexOutOfWindow {
                    index: k,
                    min: window.n_min,
                    max: window.n_max - 1,
                });
            }
        }
        Ok(())
    }
}

/// `λ_{m,n}` for `m ≥ n`: one ascending pass over the support.
pub fn lambda_mn(bounds: &dyn DichotomyBounds, pert: &Perturbation, m: i64, n: i64) -> Result<f64> {
    if m < n {
        return Err(Error::BackwardTransition { m, n });
    }
    let mut sum = 0.0;
    for (k, norm) in pert.norms() {
        let term = if k < n {
            bounds.a(m, k + 1)? * norm * bounds.b(k, n)?
        } else if k < m {
            bounds.a(m, k + 1)? * norm * bounds.a(k, n)?
        } else {
            bounds.b(m, k + 1)? * norm * bounds.a(k, n)?
        };
        sum += term;
    }
    Ok(sum)
}

/// `μ_{m,n}` for `m ≤ n`.
pub fn mu_mn(bounds: &dyn DichotomyBounds, pert: &Perturbation, m: i64, n: i64) -> Result<f64> {
    if m > n {
        return Err(Error::IndexOutsideFamily {
            m,
            n,
            family: "mu",
        });
    }
    let mut sum = 0.0;
    for (k, norm) in pert.norms() {
        let term = if k < m {
            bounds.a(m, k + 1)? * norm * bounds.b(k, n)?
        } else if k < n {
            bounds.b(m, k + 1)? * norm * bounds.b(k, n)?
        } else {
            bounds.b(m, k + 1)? * norm * bounds.a(k, n)?
        };
        sum += term;
    }
    Ok(sum)
}

fn require_half_line(window: &TimeWindow, pert: &Perturbation) -> Result<()> {
    if window.mode != Mode::HalfLine {
        return Err(Error::ModeMismatch { expected: "N" });
    }
    match pert.support().next() {
        Some(k) if k < 1 => Err(Error::IndexOutOfWindow {
            index: k,
            min: 1,
            max: window.n_max - 1,
        }),
        _ => Ok(()),
    }
}

/// `λ'_{m,n}`: the sum starting at `k = 1`. With the support inside ℕ this
/// is the same accumulation as [`lambda_mn`].
pub fn lambda_prime_mn(
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    window: &TimeWindow,
    m: i64,
    n: i64,
) -> Result<f64> {
    require_half_line(window, pert)?;
    lambda_mn(bounds, pert, m, n)
}

pub fn mu_prime_mn(
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    window: &TimeWindow,
    m: i64,
    n: i64,
) -> Result<f64> {
    require_half_line(window, pert)?;
    mu_mn(bounds, pert, m, n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessResult {
    pub lambda_table: BTreeMap<(i64, i64), f64>,
    pub mu_table: BTreeMap<(i64, i64), f64>,
    pub summary: RobustnessSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub lambda_sup: f64,
    pub lambda_at: Option<(i64, i64)>,
    pub mu_sup: f64,
    pub mu_at: Option<(i64, i64)>,
    pub max: f64,
    /// `1/(1 − max)`; absent when `max ≥ 1`.
    pub sigma: Option<f64>,
    pub ratio_structure: RatioStructure,
    /// True when the window supremum is the global one.
    pub global: bool,
    pub pass: bool,
}

impl RobustnessSummary {
    pub fn sigma_or_err(&self) -> Result<f64> {
        self.sigma.ok_or(Error::NonContraction { max: self.max })
    }
}

pub const COND_CONTRACTION: &str = "max{λ,μ} < 1";

type Row = Vec<((i64, i64), f64, f64)>;

fn sweep(
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    window: &TimeWindow,
) -> Result<(Vec<Row>, Vec<Row>)> {
    pert.check_window(window)?;
    let anchors: Vec<i64> = window.indices().collect();
    let lambda_rows = anchors
        .par_iter()
        .map(|&n| {
            (n..=window.n_max)
                .map(|m| Ok(((m, n), lambda_mn(bounds, pert, m, n)?, bounds.a(m, n)?)))
                .collect::<Result<Row>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mu_rows = anchors
        .par_iter()
        .map(|&n| {
            (window.n_min..=n)
                .map(|m| Ok(((m, n), mu_mn(bounds, pert, m, n)?, bounds.b(m, n)?)))
                .collect::<Result<Row>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((lambda_rows, mu_rows))
}

fn reduce(rows: &[Row]) -> (f64, Option<(i64, i64)>) {
    let mut best = 0.0;
    let mut at = None;
    for &(pair, value, bound) in rows.iter().flatten() {
        let ratio = value / bound;
        if ratio > best {
            best = ratio;
            at = Some(pair);
        }
    }
    (best, at)
}

/// Window suprema of `λ_{m,n}/a_{m,n}` and `μ_{m,n}/b_{m,n}`.
pub fn sup_ratios(
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    window: &TimeWindow,
) -> Result<RobustnessResult> {
    let (lambda_rows, mu_rows) = sweep(bounds, pert, window)?;
    let (lambda_sup, lambda_at) = reduce(&lambda_rows);
    let (mu_sup, mu_at) = reduce(&mu_rows);
    let max = lambda_sup.max(mu_sup);
    let pass = max < 1.0;
    let ratio_structure = bounds.ratio_structure();
    let summary = RobustnessSummary {
        lambda_sup,
        lambda_at,
        mu_sup,
        mu_at,
        max,
        sigma: pass.then(|| 1.0 / (1.0 - max)),
        ratio_structure,
        global: ratio_structure == RatioStructure::ProductForm,
        pass,
    };
    let table = |rows: Vec<Row>| {
        rows.into_iter()
            .flatten()
            .map(|(pair, value, _)| (pair, value))
            .collect()
    };
    Ok(RobustnessResult {
        lambda_table: table(lambda_rows),
        mu_table: table(mu_rows),
        summary,
    })
}

/// `θ = max{sup λ'/a, sup μ'/b}` on a half-line window.
pub fn sup_ratios_prime(
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    window: &TimeWindow,
) -> Result<RobustnessResult> {
    require_half_line(window, pert)?;
    sup_ratios(bounds, pert, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn halving() -> BoundFamily {
        BoundFamily::exp_z(1.0, -LN_2, LN_2, 0.0).unwrap()
    }

    fn single(dim: usize, k: i64, delta: f64) -> Perturbation {
        Perturbation::new(dim, [(k, linalg::identity(dim) * delta)]).unwrap()
    }

    #[test]
    fn zero_perturbation_gives_zero() {
        let w = TimeWindow::full_line(-3, 3).unwrap();
        let r = sup_ratios(&halving(), &Perturbation::zero(2), &w).unwrap();
        assert_eq!(r.summary.max, 0.0);
        assert_eq!(r.summary.sigma, Some(1.0));
        assert!(r.lambda_table.values().all(|&v| v == 0.0));
    }

    #[test]
    fn single_term_hand_values() {
        let delta = 0.05;
        let f = halving();
        let p = single(2, 0, delta);
        let lambda = lambda_mn(&f, &p, 1, 0).unwrap();
        assert!((lambda - delta).abs() < 1e-15);
        assert!((lambda / f.eval_a(1, 0).unwrap() - 2.0 * delta).abs() < 1e-15);
        let mu = mu_mn(&f, &p, 0, 1).unwrap();
        assert!((mu - delta / 4.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_formula() {
        // λ_{1,0}/a_{1,0} = 2δ is the maximum; δ = 0.1 gives max 0.2
        let w = TimeWindow::full_line(-6, 6).unwrap();
        let r = sup_ratios(&halving(), &single(2, 0, 0.1), &w).unwrap();
        assert!((r.summary.max - 0.2).abs() < 1e-14);
        assert!((r.summary.sigma.unwrap() - 1.25).abs() < 1e-12);
    }

    /// Three separate range sums over the whole window, zeros included.
    fn reference_lambda(f: &BoundFamily, p: &Perturbation, w: &TimeWindow, m: i64, n: i64) -> f64 {
        let ks = w.n_min..w.n_max;
        let below: f64 = ks.clone().filter(|&k| k < n).map(|k| f.eval_a(m, k + 1).unwrap() * p.norm(k) * f.eval_b(k, n).unwrap()).sum();
        let middle: f64 = ks.clone().filter(|&k| n <= k && k < m).map(|k| f.eval_a(m, k + 1).unwrap() * p.norm(k) * f.eval_a(k, n).unwrap()).sum();
        let above: f64 = ks.filter(|&k| k >= m).map(|k| f.eval_b(m, k + 1).unwrap() * p.norm(k) * f.eval_a(k, n).unwrap()).sum();
        below + middle + above
    }

    fn reference_mu(f: &BoundFamily, p: &Perturbation, w: &TimeWindow, m: i64, n: i64) -> f64 {
        let ks = w.n_min..w.n_max;
        let below: f64 = ks.clone().filter(|&k| k < m).map(|k| f.eval_a(m, k + 1).unwrap() * p.norm(k) * f.eval_b(k, n).unwrap()).sum();
        let middle: f64 = ks.clone().filter(|&k| m <= k && k < n).map(|k| f.eval_b(m, k + 1).unwrap() * p.norm(k) * f.eval_b(k, n).unwrap()).sum();
        let above: f64 = ks.filter(|&k| k >= n).map(|k| f.eval_b(m, k + 1).unwrap() * p.norm(k) * f.eval_a(k, n).unwrap()).sum();
        below + middle + above
    }

    #[test]
    fn matches_range_split_reference() {
        let f = BoundFamily::exp_z(2.0, -0.7, 0.4, 0.1).unwrap();
        let w = TimeWindow::full_line(-4, 4).unwrap();
        let p = Perturbation::new(
            1,
            [
                (-2, Matrix::from_element(1, 1, 0.3)),
                (0, Matrix::from_element(1, 1, -0.2)),
                (3, Matrix::from_element(1, 1, 0.1)),
            ],
        )
        .unwrap();
        for (m, n) in w.forward_pairs() {
            let l = lambda_mn(&f, &p, m, n).unwrap();
            let r = reference_lambda(&f, &p, &w, m, n);
            assert!((l - r).abs() <= 1e-14 * r.max(1.0), "({m},{n}) {l} vs {r}");
        }
        for (m, n) in w.backward_pairs() {
            let u = mu_mn(&f, &p, m, n).unwrap();
            let r = reference_mu(&f, &p, &w, m, n);
            assert!((u - r).abs() <= 1e-14 * r.max(1.0), "({m},{n}) {u} vs {r}");
        }
    }

    #[test]
    fn prime_requires_half_line() {
        let w = TimeWindow::full_line(-3, 3).unwrap();
        assert!(matches!(
            lambda_prime_mn(&halving(), &Perturbation::zero(1), &w, 1, 1),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn support_outside_window_is_rejected() {
        let w = TimeWindow::full_line(-3, 3).unwrap();
        assert!(sup_ratios(&halving(), &single(1, 3, 0.1), &w).is_err());
    }
}
