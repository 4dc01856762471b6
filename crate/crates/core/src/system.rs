//! Unperturbed system: window, operators `A_n`, projections `P_n`, the
//! cocycle and its kernel inverses, and the splitting/dichotomy checks.

use serde::{Deserialize, Serialize};

use crate::bounds::DichotomyBounds;
use crate::error::{Error, Result};
use crate::linalg::{
    self, idempotence_defect, min_singular_value, op_norm, projection_range_basis,
    projection_rank, Matrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Indices in ℤ.
    #[serde(rename = "Z")]
    FullLine,
    /// Indices in ℕ = {1, 2, ...}.
    #[serde(rename = "N")]
    HalfLine,
}

impl Mode {
    pub fn symbol(self) -> &'static str {
        match self {
            Mode::FullLine => "Z",
            Mode::HalfLine => "N",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub n_min: i64,
    pub n_max: i64,
    pub mode: Mode,
}

impl TimeWindow {
    pub fn new(n_min: i64, n_max: i64, mode: Mode) -> Result<Self> {
        if n_min > n_max {
            return Err(Error::InvalidParameter(format!(
                "window min {n_min} exceeds max {n_max}"
            )));
        }
        if mode == Mode::HalfLine && n_min != 1 {
            return Err(Error::InvalidParameter(format!(
                "half-line windows start at 1, got {n_min}"
            )));
        }
        Ok(Self { n_min, n_max, mode })
    }

    pub fn full_line(n_min: i64, n_max: i64) -> Result<Self> {
        Self::new(n_min, n_max, Mode::FullLine)
    }

    pub fn half_line(n_max: i64) -> Result<Self> {
        Self::new(1, n_max, Mode::HalfLine)
    }

    pub fn contains(&self, n: i64) -> bool {
        self.n_min <= n && n <= self.n_max
    }

    pub fn check(&self, n: i64) -> Result<()> {
        if self.contains(n) {
            Ok(())
        } else {
            Err(Error::IndexOutOfWindow {
                index: n,
                min: self.n_min,
                max: self.n_max,
            })
        }
    }

    pub fn len(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        self.n_min..=self.n_max
    }

    /// All pairs `(m, n)` with `m ≥ n` in the window, `n` ascending then `m`.
    pub fn forward_pairs(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.indices()
            .flat_map(move |n| (n..=self.n_max).map(move |m| (m, n)))
    }

    /// All pairs `(m, n)` with `m ≤ n` in the window, `n` ascending then `m`.
    pub fn backward_pairs(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.indices()
            .flat_map(move |n| (self.n_min..=n).map(move |m| (m, n)))
    }

    fn offset(&self, n: i64) -> usize {
        (n - self.n_min) as usize
    }
}

/// Numerical tolerances shared by the checks and the construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub proj: f64,
    pub split: f64,
    pub inv: f64,
    pub dichotomy: f64,
    pub fixed_point: f64,
    pub identity: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            proj: 1e-9,
            split: 1e-9,
            inv: 1e-12,
            dichotomy: 1e-9,
            fixed_point: 1e-12,
            identity: 1e-8,
            max_iterations: 10_000,
        }
    }
}

/// `x_{n+1} = A_n x_n` on a finite window together with projections `P_n`.
///
/// `A_n` is stored for `n ∈ [n_min, n_max − 1]` and `P_n` for
/// `n ∈ [n_min, n_max]`. `Q_n = Id − P_n` is derived on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct System {
    dim: usize,
    window: TimeWindow,
    operators: Vec<Matrix>,
    projections: Vec<Matrix>,
}

impl System {
    pub fn new(
        dim: usize,
        window: TimeWindow,
        operators: Vec<Matrix>,
        projections: Vec<Matrix>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let steps = window.len() - 1;
        if operators.len() != steps {
            return Err(Error::DimensionMismatch(format!(
                "expected {steps} operators, got {}",
                operators.len()
            )));
        }
        if projections.len() != window.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} projections, got {}",
                window.len(),
                projections.len()
            )));
        }
        for (label, list) in [("operator", &operators), ("projection", &projections)] {
            for (i, m) in list.iter().enumerate() {
                let n = window.n_min + i as i64;
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "{label} at {n} is {}x{}, expected {dim}x{dim}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if !linalg::is_finite(m) {
                    return Err(Error::InvalidParameter(format!(
                        "{label} at {n} has non-finite entries"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            window,
            operators,
            projections,
        })
    }

    pub fn from_fn(
        dim: usize,
        window: TimeWindow,
        operator: impl Fn(i64) -> Matrix,
        projection: impl Fn(i64) -> Matrix,
    ) -> Result<Self> {
        let operators = (window.n_min..window.n_max).map(&operator).collect();
        let projections = window.indices().map(&projection).collect();
        Self::new(dim, window, operators, projections)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> &TimeWindow {
        &self.window
    }

    pub fn mode(&self) -> Mode {
        self.window.mode
    }

    pub fn operator(&self, n: i64) -> Result<&Matrix> {
        if n < self.window.n_min || n >= self.window.n_max {
            return Err(Error::IndexOutOfWindow {
                index: n,
                min: self.window.n_min,
                max: self.window.n_max - 1,
            });
        }
        Ok(&self.operators[self.window.offset(n)])
    }

    pub fn projection(&self, n: i64) -> Result<&Matrix> {
        self.window.check(n)?;
        Ok(&self.projections[self.window.offset(n)])
    }

    /// `Q_n = Id − P_n`.
    pub fn complement(&self, n: i64) -> Result<Matrix> {
        Ok(linalg::identity(self.dim) - self.projection(n)?)
    }

    pub fn operators(&self) -> &[Matrix] {
        &self.operators
    }

    pub fn projections(&self) -> &[Matrix] {
        &self.projections
    }

    /// `𝒜_{m,n} = A_{m−1}···A_n`, multiplied sequentially from `n` upward.
    pub fn transition(&self, m: i64, n: i64) -> Result<Matrix> {
        self.window.check(m)?;
        self.window.check(n)?;
        if m < n {
            return Err(Error::BackwardTransition { m, n });
        }
        let mut acc = linalg::identity(self.dim);
        for k in n..m {
            acc = self.operator(k)? * acc;
        }
        Ok(acc)
    }

    /// `𝒜_{n,m} Q_m` for `n ≤ m`: the inverse of `𝒜_{m,n}` restricted to
    /// `F_n = ker P_n`, as a full matrix annihilating `E_m`.
    pub fn kernel_inverse(&self, n: i64, m: i64, tol_inv: f64) -> Result<Matrix> {
        let forward = self.transition(m, n)?;
        if m == n {
            return self.complement(n);
        }
        kernel_inverse_of(
            &forward,
            &self.complement(n)?,
            &self.complement(m)?,
            m,
            n,
            tol_inv,
        )
    }
}

/// Inverse of `forward|_{range q_n} : range q_n → range q_m`, composed with `q_m`.
fn kernel_inverse_of(
    forward: &Matrix,
    q_n: &Matrix,
    q_m: &Matrix,
    m: i64,
    n: i64,
    tol_inv: f64,
) -> Result<Matrix> {
    let d = forward.nrows();
    let basis_n = projection_range_basis(q_n);
    let basis_m = projection_range_basis(q_m);
    if basis_n.ncols() != basis_m.ncols() {
        return Err(Error::KernelRankMismatch {
            m,
            n,
            rank_m: basis_m.ncols(),
            rank_n: basis_n.ncols(),
        });
    }
    if basis_n.ncols() == 0 {
        return Ok(Matrix::zeros(d, d));
    }
    let restricted = basis_m.transpose() * forward * &basis_n;
    let min_sv = min_singular_value(&restricted);
    if !(min_sv >= tol_inv) {
        return Err(Error::SingularKernelRestriction { m, n, min_sv });
    }
    let inv = restricted
        .try_inverse()
        .ok_or(Error::SingularKernelRestriction { m, n, min_sv })?;
    Ok(basis_n * inv * basis_m.transpose() * q_m)
}

/// Cached forward transitions and kernel inverses over a whole window.
#[derive(Clone, Debug)]
pub struct Cocycle {
    window: TimeWindow,
    dim: usize,
    // forward[n][m - n] = 𝒜_{m,n}
    forward: Vec<Vec<Matrix>>,
    // backward[n][m - n] = 𝒜_{n,m} Q_m, n ≤ m
    backward: Vec<Vec<Matrix>>,
    projections: Vec<Matrix>,
    complements: Vec<Matrix>,
}

impl Cocycle {
    pub fn new(sys: &System, tol_inv: f64) -> Result<Self> {
        let w = *sys.window();
        let mut forward = Vec::with_capacity(w.len());
        for n in w.indices() {
            let mut row = Vec::with_capacity((w.n_max - n + 1) as usize);
            let mut acc = linalg::identity(sys.dim());
            row.push(acc.clone());
            for k in n..w.n_max {
                acc = sys.operator(k)? * acc;
                row.push(acc.clone());
            }
            forward.push(row);
        }
        let projections: Vec<Matrix> = sys.projections().to_vec();
        let complements: Vec<Matrix> = w
            .indices()
            .map(|n| sys.complement(n))
            .collect::<Result<_>>()?;
        let mut backward = Vec::with_capacity(w.len());
        for n in w.indices() {
            let i = w.offset(n);
            let mut row = Vec::with_capacity((w.n_max - n + 1) as usize);
            row.push(complements[i].clone());
            for m in (n + 1)..=w.n_max {
                let j = w.offset(m);
                row.push(kernel_inverse_of(
                    &forward[i][(m - n) as usize],
                    &complements[i],
                    &complements[j],
                    m,
                    n,
                    tol_inv,
                )?);
            }
            backward.push(row);
        }
        Ok(Self {
            window: w,
            dim: sys.dim(),
            forward,
            backward,
            projections,
            complements,
        })
    }

    pub fn window(&self) -> &TimeWindow {
        &self.window
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `𝒜_{m,n}` for `m ≥ n`.
    pub fn forward(&self, m: i64, n: i64) -> &Matrix {
        debug_assert!(m >= n && self.window.contains(m) && self.window.contains(n));
        &self.forward[self.window.offset(n)][(m - n) as usize]
    }

    /// `𝒜_{m,n} Q_n` for `m ≤ n` (kernel inverse, backward in time).
    pub fn backward(&self, m: i64, n: i64) -> &Matrix {
        debug_assert!(m <= n && self.window.contains(m) && self.window.contains(n));
        &self.backward[self.window.offset(m)][(n - m) as usize]
    }

    pub fn projection(&self, n: i64) -> &Matrix {
        &self.projections[self.window.offset(n)]
    }

    pub fn complement(&self, n: i64) -> &Matrix {
        &self.complements[self.window.offset(n)]
    }

    /// `𝒜_{m,n} Q_n` for any window pair: forward product when `m ≥ n`,
    /// kernel inverse when `m < n`.
    pub fn along_kernel(&self, m: i64, n: i64) -> Matrix {
        if m >= n {
            self.forward(m, n) * self.complement(n)
        } else {
            self.backward(m, n).clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    pub projection_defect: f64,
    pub projection_at: i64,
    /// Max of `‖P_m𝒜_{m,n} − 𝒜_{m,n}P_n‖ / max(1, ‖𝒜_{m,n}‖·max(‖P_m‖,‖P_n‖))`.
    pub s1_residual: f64,
    pub s1_at: (i64, i64),
    /// Max of `‖P_m𝒜_{m,n}Q_n‖ / max(1, ‖𝒜_{m,n}‖·‖P_m‖·‖Q_n‖)`.
    pub s2_residual: f64,
    pub s2_at: (i64, i64),
    pub s2_rank_preserved: bool,
    pub s3_invertible: bool,
    pub s3_min_singular_value: f64,
    pub s3_at: (i64, i64),
    pub failed: Vec<String>,
    pub pass: bool,
}

pub const COND_IDEMPOTENT: &str = "P_n² = P_n (projection idempotence)";
pub const COND_S1: &str = "(S1) P_m 𝒜_{m,n} = 𝒜_{m,n} P_n";
pub const COND_S2: &str = "(S2) 𝒜_{m,n}(ker P_n) = ker P_m";
pub const COND_S3: &str = "(S3) 𝒜_{m,n}|ker P_n invertible";
pub const COND_D1: &str = "(D1) ‖𝒜_{m,n} P_n‖ ≤ a_{m,n}";
pub const COND_D2: &str = "(D2) ‖𝒜_{m,n} Q_n‖ ≤ b_{m,n}";

pub fn verify_splitting(sys: &System, tol: &Tolerances) -> SplittingReport {
    let w = *sys.window();
    let mut projection_defect = 0.0;
    let mut projection_at = w.n_min;
    for n in w.indices() {
        let defect = idempotence_defect(sys.projection(n).expect("in window"));
        if defect > projection_defect || defect.is_nan() {
            projection_defect = defect;
            projection_at = n;
        }
    }

    let d = sys.dim();
    let complements: Vec<Matrix> = w.indices().map(|n| sys.complement(n).unwrap()).collect();
    let bases: Vec<Matrix> = complements.iter().map(projection_range_basis).collect();
    let ranks: Vec<usize> = complements.iter().map(projection_rank).collect();
    let norms_p: Vec<f64> = sys.projections().iter().map(op_norm).collect();
    let norms_q: Vec<f64> = complements.iter().map(op_norm).collect();

    let mut s1_residual = 0.0;
    let mut s1_at = (w.n_min, w.n_min);
    let mut s2_residual = 0.0;
    let mut s2_at = (w.n_min, w.n_min);
    let mut s2_rank_preserved = true;
    let mut s3_min = f64::INFINITY;
    let mut s3_at = (w.n_min, w.n_min);

    for n in w.indices() {
        let i = w.offset(n);
        let mut acc = linalg::identity(d);
        for m in n..=w.n_max {
            if m > n {
                acc = sys.operator(m - 1).unwrap() * acc;
            }
            let j = w.offset(m);
            let p_m = &sys.projections()[j];
            let p_n = &sys.projections()[i];
            let norm_a = op_norm(&acc);

            let s1 = op_norm(&(p_m * &acc - &acc * p_n))
                / (norm_a * norms_p[i].max(norms_p[j])).max(1.0);
            if s1 > s1_residual || s1.is_nan() {
                s1_residual = s1;
                s1_at = (m, n);
            }

            let image_of_kernel = &acc * &complements[i];
            let s2 = op_norm(&(p_m * &image_of_kernel))
                / (norm_a * norms_p[j] * norms_q[i]).max(1.0);
            if s2 > s2_residual || s2.is_nan() {
                s2_residual = s2;
                s2_at = (m, n);
            }
            let carried = &complements[j] * &image_of_kernel;
            if ranks[i] != ranks[j] || linalg::rank(&carried, tol.inv) != ranks[i] {
                s2_rank_preserved = false;
            }

            if ranks[i] == ranks[j] && ranks[i] > 0 {
                let restricted = bases[j].transpose() * &acc * &bases[i];
                let sv = min_singular_value(&restricted);
                if sv < s3_min || sv.is_nan() {
                    s3_min = sv;
                    s3_at = (m, n);
                }
            } else if ranks[i] != ranks[j] {
                s3_min = 0.0;
                s3_at = (m, n);
            }
        }
    }

    let s3_invertible = s3_min >= tol.inv;
    let mut failed = Vec::new();
    if !(projection_defect <= tol.proj) {
        failed.push(COND_IDEMPOTENT.to_string());
    }
    if !(s1_residual <= tol.split) {
        failed.push(COND_S1.to_string());
    }
    if !(s2_residual <= tol.split) || !s2_rank_preserved {
        failed.push(COND_S2.to_string());
    }
    if !s3_invertible {
        failed.push(COND_S3.to_string());
    }
    SplittingReport {
        projection_defect,
        projection_at,
        s1_residual,
        s1_at,
        s2_residual,
        s2_at,
        s2_rank_preserved,
        s3_invertible,
        s3_min_singular_value: s3_min,
        s3_at,
        pass: failed.is_empty(),
        failed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DichotomyCondition {
    D1,
    D2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: DichotomyCondition,
    pub at: (i64, i64),
    pub norm: f64,
    pub bound: f64,
}

/// Margins are `1 − norm / bound`; a pair passes when `norm ≤ bound·(1+tol)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub d1_worst_margin: f64,
    pub d1_at: (i64, i64),
    pub d2_worst_margin: f64,
    pub d2_at: (i64, i64),
    pub first_violation: Option<Violation>,
    pub failed: Vec<String>,
    pub pass: bool,
}

pub fn verify_dichotomy(
    sys: &System,
    bounds: &dyn DichotomyBounds,
    tol: &Tolerances,
) -> Result<DichotomyReport> {
    let cocycle = Cocycle::new(sys, tol.inv)?;
    verify_dichotomy_on(&cocycle, bounds, tol.dichotomy)
}

pub fn verify_dichotomy_on(
    cocycle: &Cocycle,
    bounds: &dyn DichotomyBounds,
    tol: f64,
) -> Result<DichotomyReport> {
    let w = *cocycle.window();
    let mut first_violation = None;
    let mut d1_worst_margin = f64::INFINITY;
    let mut d1_at = (w.n_min, w.n_min);
    for (m, n) in w.forward_pairs() {
        let norm = op_norm(&(cocycle.forward(m, n) * cocycle.projection(n)));
        let bound = bounds.a(m, n)?;
        let margin = 1.0 - norm / bound;
        if margin < d1_worst_margin {
            d1_worst_margin = margin;
            d1_at = (m, n);
        }
        if norm > bound * (1.0 + tol) && first_violation.is_none() {
            first_violation = Some(Violation {
                condition: DichotomyCondition::D1,
                at: (m, n),
                norm,
                bound,
            });
        }
    }
    let mut d2_worst_margin = f64::INFINITY;
    let mut d2_at = (w.n_min, w.n_min);
    let mut d2_violation = None;
    for (m, n) in w.backward_pairs() {
        let norm = op_norm(cocycle.backward(m, n));
        let bound = bounds.b(m, n)?;
        let margin = 1.0 - norm / bound;
        if margin < d2_worst_margin {
            d2_worst_margin = margin;
            d2_at = (m, n);
        }
        if norm > bound * (1.0 + tol) && d2_violation.is_none() {
            d2_violation = Some(Violation {
                condition: DichotomyCondition::D2,
                at: (m, n),
                norm,
                bound,
            });
        }
    }
    let mut failed = Vec::new();
    if d1_worst_margin < -tol {
        failed.push(COND_D1.to_string());
    }
    if d2_worst_margin < -tol {
        failed.push(COND_D2.to_string());
    }
    Ok(DichotomyReport {
        d1_worst_margin,
        d1_at,
        d2_worst_margin,
        d2_at,
        first_violation: first_violation.or(d2_violation),
        pass: failed.is_empty(),
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundFamily;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(values: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_row_slice(values))
    }

    fn diagonal_system(n_min: i64, n_max: i64) -> System {
        System::from_fn(
            2,
            TimeWindow::full_line(n_min, n_max).unwrap(),
            |_| diag(&[0.5, 2.0]),
            |_| diag(&[1.0, 0.0]),
        )
        .unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
        Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// `S_n diag S_n⁻¹` with `S_n = I + E_n`, `‖E_n‖ ≤ 1/2`.
    fn conjugated_system(seed: u64, d: usize, rank: usize) -> System {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = TimeWindow::full_line(-4, 4).unwrap();
        let sims: Vec<Matrix> = w
            .indices()
            .map(|_| {
                let e = random_matrix(&mut rng, d);
                let e = &e * (0.5 / op_norm(&e));
                linalg::identity(d) + e
            })
            .collect();
        let diags: Vec<Matrix> = (w.n_min..w.n_max)
            .map(|_| {
                let v: Vec<f64> = (0..d)
                    .map(|i| {
                        if i < rank {
                            rng.gen_range(0.3..0.8)
                        } else {
                            rng.gen_range(1.3..2.0)
                        }
                    })
                    .collect();
                diag(&v)
            })
            .collect();
        let pi = diag(&(0..d).map(|i| if i < rank { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        let at = |n: i64| (n - w.n_min) as usize;
        System::from_fn(
            d,
            w,
            |n| &sims[at(n + 1)] * &diags[at(n)] * sims[at(n)].clone().try_inverse().unwrap(),
            |n| &sims[at(n)] * &pi * sims[at(n)].clone().try_inverse().unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn window_validation() {
        assert!(TimeWindow::full_line(3, 2).is_err());
        assert!(TimeWindow::new(0, 4, Mode::HalfLine).is_err());
        assert!(TimeWindow::half_line(4).is_ok());
    }

    #[test]
    fn transition_at_equal_indices_is_identity() {
        let sys = diagonal_system(0, 5);
        assert_eq!(sys.transition(3, 3).unwrap(), linalg::identity(2));
    }

    #[test]
    fn transition_of_diagonal_system() {
        let sys = diagonal_system(0, 5);
        assert_eq!(sys.transition(2, 0).unwrap(), diag(&[0.25, 4.0]));
    }

    #[test]
    fn transition_errors() {
        let sys = diagonal_system(0, 5);
        assert!(matches!(
            sys.transition(1, 2),
            Err(Error::BackwardTransition { .. })
        ));
        assert!(matches!(
            sys.transition(6, 0),
            Err(Error::IndexOutOfWindow { .. })
        ));
    }

    #[test]
    fn transition_factors_through_intermediate_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ops: Vec<Matrix> = (0..6).map(|_| random_matrix(&mut rng, 3)).collect();
        let sys = System::from_fn(
            3,
            TimeWindow::full_line(0, 6).unwrap(),
            |n| ops[n as usize].clone(),
            |_| linalg::identity(3),
        )
        .unwrap();
        // brute-force ordered product A_4 A_3 A_2 A_1
        let brute = &ops[4] * &ops[3] * &ops[2] * &ops[1];
        let direct = sys.transition(5, 1).unwrap();
        let split = sys.transition(5, 3).unwrap() * sys.transition(3, 1).unwrap();
        assert!(op_norm(&(&direct - &brute)) < 1e-12);
        assert!(op_norm(&(&direct - &split)) < 1e-12);
    }

    #[test]
    fn kernel_inverse_of_diagonal_system() {
        let sys = diagonal_system(0, 5);
        let k = sys.kernel_inverse(0, 2, 1e-12).unwrap();
        assert!(op_norm(&(k - diag(&[0.0, 0.25]))) < 1e-15);
        assert_eq!(sys.kernel_inverse(3, 3, 1e-12).unwrap(), diag(&[0.0, 1.0]));
    }

    #[test]
    fn kernel_inverse_inverts_on_kernel() {
        for seed in 0..5 {
            let sys = conjugated_system(seed, 2, 1);
            for (m, n) in sys.window().forward_pairs() {
                let k = sys.kernel_inverse(n, m, 1e-12).unwrap();
                let a = sys.transition(m, n).unwrap();
                let q_m = sys.complement(m).unwrap();
                let q_n = sys.complement(n).unwrap();
                let scale = op_norm(&a) * op_norm(&k);
                assert!(op_norm(&(&a * &k - &q_m)) < 1e-10 * scale.max(1.0), "{m},{n}: {} scale {scale}", op_norm(&(&a * &k - &q_m)));
                assert!(op_norm(&(&k * &q_m * &a * &q_n - &q_n)) < 1e-10);
            }
        }
    }

    #[test]
    fn singular_kernel_restriction_is_reported() {
        let sys = System::from_fn(
            2,
            TimeWindow::full_line(0, 2).unwrap(),
            |_| diag(&[0.5, 0.0]),
            |_| diag(&[1.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(
            sys.kernel_inverse(0, 1, 1e-12),
            Err(Error::SingularKernelRestriction { .. })
        ));
        let report = verify_splitting(&sys, &Tolerances::default());
        assert!(!report.s3_invertible);
        assert!(!report.pass);
    }

    #[test]
    fn splitting_of_diagonal_system_is_exact() {
        let report = verify_splitting(&diagonal_system(-3, 3), &Tolerances::default());
        assert!(report.pass);
        assert_eq!(report.projection_defect, 0.0);
        assert_eq!(report.s1_residual, 0.0);
        assert_eq!(report.s2_residual, 0.0);
    }

    #[test]
    fn non_idempotent_projection_fails_splitting() {
        let sys = System::from_fn(
            2,
            TimeWindow::full_line(-3, 3).unwrap(),
            |_| diag(&[0.5, 2.0]),
            |n| if n == 1 { diag(&[1.0, 0.5]) } else { diag(&[1.0, 0.0]) },
        )
        .unwrap();
        let report = verify_splitting(&sys, &Tolerances::default());
        assert!(!report.pass);
        assert_eq!(report.projection_at, 1);
        assert!(report.failed.contains(&COND_IDEMPOTENT.to_string()));
    }

    #[test]
    fn conjugated_systems_split() {
        for seed in 0..10 {
            let d = 2 + (seed as usize % 3);
            let sys = conjugated_system(seed, d, 1 + seed as usize % (d - 1));
            let report = verify_splitting(&sys, &Tolerances::default());
            assert!(report.pass, "seed {seed}: {report:?}");
            assert!(report.s1_residual < 1e-9 && report.s2_residual < 1e-9);
        }
    }

    #[test]
    fn dichotomy_of_diagonal_system() {
        let sys = diagonal_system(-5, 5);
        let ln2 = std::f64::consts::LN_2;
        let tight = BoundFamily::exp_z(1.0, -ln2, ln2, 0.0).unwrap();
        let report = verify_dichotomy(&sys, &tight, &Tolerances::default()).unwrap();
        assert!(report.pass);
        assert!(report.d1_worst_margin.abs() < 1e-12);
        assert!(report.d2_worst_margin.abs() < 1e-12);

        let short = BoundFamily::exp_z(0.5, -ln2, ln2, 0.0).unwrap();
        let report = verify_dichotomy(&sys, &short, &Tolerances::default()).unwrap();
        assert!(!report.pass);
        let v = report.first_violation.unwrap();
        assert_eq!(v.condition, DichotomyCondition::D1);
        assert_eq!(v.at.0, v.at.1);
    }

    #[test]
    fn dichotomy_against_measured_norms() {
        let sys = conjugated_system(3, 3, 2);
        let cocycle = Cocycle::new(&sys, 1e-12).unwrap();
        let w = *sys.window();
        let a: Vec<_> = w
            .forward_pairs()
            .map(|(m, n)| ((m, n), op_norm(&(cocycle.forward(m, n) * cocycle.projection(n)))))
            .collect();
        let b: Vec<_> = w
            .backward_pairs()
            .map(|(m, n)| ((m, n), op_norm(cocycle.backward(m, n))))
            .collect();
        let family = BoundFamily::tabulated(a, b).unwrap();
        let report = verify_dichotomy_on(&cocycle, &family, 0.0).unwrap();
        assert!(report.pass);
        assert_eq!(report.d1_worst_margin, 0.0);
        assert_eq!(report.d2_worst_margin, 0.0);
    }
}
