//! The perturbed dichotomy: fixed points `(U, V)` per anchor, the projections
//! `P̂_n = U_{n,n}`, `Q̂_n = Id − P̂_n`, and residuals of every identity the
//! construction is supposed to satisfy.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::DichotomyBounds;
use crate::error::{Error, Result};
use crate::linalg::{self, op_norm, projection_rank, Matrix};
use crate::robustness::{sup_ratios, Perturbation, RobustnessSummary};
use crate::system::{Cocycle, System, TimeWindow, Tolerances};

/// `𝒜_{m,k+1} P_{k+1}` and `𝒜_{m,k+1} Q_{k+1}` applied to `B_k`, for `k` in
/// the support.
pub struct Operators<'a> {
    cocycle: &'a Cocycle,
    pert: &'a Perturbation,
    pb: BTreeMap<i64, Matrix>,
    qb: BTreeMap<i64, Matrix>,
}

impl<'a> Operators<'a> {
    pub fn new(cocycle: &'a Cocycle, pert: &'a Perturbation) -> Result<Self> {
        pert.check_window(cocycle.window())?;
        let mut pb = BTreeMap::new();
        let mut qb = BTreeMap::new();
        for (&k, b) in pert.entries() {
            pb.insert(k, cocycle.projection(k + 1) * b);
            qb.insert(k, cocycle.complement(k + 1) * b);
        }
        Ok(Self {
            cocycle,
            pert,
            pb,
            qb,
        })
    }

    pub fn window(&self) -> &TimeWindow {
        self.cocycle.window()
    }

    pub fn dim(&self) -> usize {
        self.cocycle.dim()
    }

    pub fn support(&self) -> impl Iterator<Item = i64> + '_ {
        self.pert.support()
    }

    /// `C_{m,k} = 𝒜_{m,k+1} P_{k+1} B_k` for `m ≥ k + 1`.
    pub fn c_op(&self, m: i64, k: i64) -> Matrix {
        match self.pb.get(&k) {
            Some(pb) if m > k => self.cocycle.forward(m, k + 1) * pb,
            Some(_) => panic!("C_{{m,k}} needs m ≥ k + 1, got m = {m}, k = {k}"),
            None => Matrix::zeros(self.dim(), self.dim()),
        }
    }

    /// `D_{m,k} = 𝒜_{m,k+1} Q_{k+1} B_k`, through the kernel inverse when
    /// `m ≤ k + 1`.
    pub fn d_op(&self, m: i64, k: i64) -> Matrix {
        match self.pb.get(&k) {
            None => Matrix::zeros(self.dim(), self.dim()),
            Some(_) if m <= k + 1 => {
                self.cocycle.backward(m, k + 1) * self.pert.get(k).expect("in support")
            }
            Some(_) => self.cocycle.forward(m, k + 1) * &self.qb[&k],
        }
    }

    /// `J_{m,n}(W, Z)` for `m ≥ n`, with `w(k) = W_{k,n}` (`k ≥ n`) and
    /// `z(k) = Z_{k,n}` (`k < n`).
    pub fn apply_j<'t>(
        &self,
        w: impl Fn(i64) -> &'t Matrix,
        z: impl Fn(i64) -> &'t Matrix,
        m: i64,
        n: i64,
    ) -> Matrix {
        let d = self.dim();
        let mut acc = Matrix::zeros(d, d);
        for k in self.support() {
            if k < n {
                acc -= self.c_op(m, k) * z(k);
            } else if k < m {
                acc += self.c_op(m, k) * w(k);
            } else {
                acc -= self.d_op(m, k) * w(k);
            }
        }
        acc
    }

    /// `L_{m,n}(W, Z)` for `m ≤ n`.
    pub fn apply_l<'t>(
        &self,
        w: impl Fn(i64) -> &'t Matrix,
        z: impl Fn(i64) -> &'t Matrix,
        m: i64,
        n: i64,
    ) -> Matrix {
        let d = self.dim();
        let mut acc = Matrix::zeros(d, d);
        for k in self.support() {
            if k < m {
                acc += self.c_op(m, k) * z(k);
            } else if k < n {
                acc -= self.d_op(m, k) * z(k);
            } else {
                acc += self.d_op(m, k) * w(k);
            }
        }
        acc
    }
}

/// `(U_{m,n})_{m ≥ n}` and `(V_{m,n})_{m ≤ n}` on the window for one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct SplittingTable {
    pub anchor: i64,
    n_min: i64,
    u: Vec<Matrix>,
    v: Vec<Matrix>,
    pub weighted_norm: f64,
}

impl SplittingTable {
    pub fn u(&self, m: i64) -> &Matrix {
        &self.u[(m - self.anchor) as usize]
    }

    pub fn v(&self, m: i64) -> &Matrix {
        &self.v[(m - self.n_min) as usize]
    }

    fn gamma(cocycle: &Cocycle, n: i64) -> Self {
        let w = cocycle.window();
        let u = (n..=w.n_max)
            .map(|m| cocycle.forward(m, n) * cocycle.projection(n))
            .collect();
        let v = (w.n_min..=n).map(|m| cocycle.backward(m, n).clone()).collect();
        Self {
            anchor: n,
            n_min: w.n_min,
            u,
            v,
            weighted_norm: f64::NAN,
        }
    }

    fn zeros(window: &TimeWindow, d: usize, n: i64) -> Self {
        Self {
            anchor: n,
            n_min: window.n_min,
            u: vec![Matrix::zeros(d, d); (window.n_max - n + 1) as usize],
            v: vec![Matrix::zeros(d, d); (n - window.n_min + 1) as usize],
            weighted_norm: 0.0,
        }
    }
}

/// Bound weights `a_{m,n}`, `b_{m,n}` for one anchor.
struct Weights {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Weights {
    fn new(bounds: &dyn DichotomyBounds, window: &TimeWindow, n: i64) -> Result<Self> {
        Ok(Self {
            a: (n..=window.n_max)
                .map(|m| bounds.a(m, n))
                .collect::<Result<_>>()?,
            b: (window.n_min..=n)
                .map(|m| bounds.b(m, n))
                .collect::<Result<_>>()?,
        })
    }

    /// `‖(W, Z)‖_n = max(sup ‖W_m‖/a_{m,n}, sup ‖Z_m‖/b_{m,n})`.
    fn norm(&self, t: &SplittingTable) -> f64 {
        let up = t.u.iter().zip(&self.a).map(|(x, a)| op_norm(x) / a);
        let down = t.v.iter().zip(&self.b).map(|(x, b)| op_norm(x) / b);
        up.chain(down).fold(0.0, f64::max)
    }

    fn distance(&self, x: &SplittingTable, y: &SplittingTable) -> f64 {
        let up = x.u.iter().zip(&y.u).zip(&self.a).map(|((p, q), a)| op_norm(&(p - q)) / a);
        let down = x.v.iter().zip(&y.v).zip(&self.b).map(|((p, q), b)| op_norm(&(p - q)) / b);
        up.chain(down).fold(0.0, f64::max)
    }
}

/// `Γ_n + T_n(W, Z)` over the whole window.
fn apply_upsilon(ops: &Operators, t: &SplittingTable, gamma: &SplittingTable) -> SplittingTable {
    let w = *ops.window();
    let n = t.anchor;
    let u = (n..=w.n_max)
        .map(|m| gamma.u(m) + ops.apply_j(|k| t.u(k), |k| t.v(k), m, n))
        .collect();
    let v = (w.n_min..=n)
        .map(|m| gamma.v(m) + ops.apply_l(|k| t.u(k), |k| t.v(k), m, n))
        .collect();
    SplittingTable {
        anchor: n,
        n_min: w.n_min,
        u,
        v,
        weighted_norm: f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedPointMethod {
    Direct,
    Picard,
    /// Direct solution, cross-checked by Picard iteration.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterations: usize,
    pub final_step: f64,
    /// `‖X_picard − X_direct‖_n`, when the direct solution was computed.
    pub agreement: Option<f64>,
    /// Largest observed `e_{i+1}/e_i` of the error against the direct solution.
    pub contraction_ratio: Option<f64>,
}

/// Solves the fixed-point equation at anchor `n` exactly by one block linear
/// system in the unknowns `U_{k,n}` (`k ≥ n`) and `V_{k,n}` (`k < n`), `k` in
/// the support, weighted by `a_{k,n}` resp. `b_{k,n}`.
fn solve_direct(ops: &Operators, weights: &Weights, n: i64) -> Result<SplittingTable> {
    let w = *ops.window();
    let d = ops.dim();
    let cocycle = ops.cocycle;
    // (k, is_u)
    let unknowns: Vec<(i64, bool)> = ops
        .support()
        .filter(|&k| k < n)
        .map(|k| (k, false))
        .chain(ops.support().filter(|&k| k >= n).map(|k| (k, true)))
        .collect();
    let count = unknowns.len();
    let weight = |&(k, is_u): &(i64, bool)| {
        if is_u {
            weights.a[(k - n) as usize]
        } else {
            weights.b[(k - w.n_min) as usize]
        }
    };

    let mut solved = SplittingTable::zeros(&w, d, n);
    if count > 0 {
        let mut lhs = Matrix::identity(count * d, count * d);
        let mut rhs = Matrix::zeros(count * d, d);
        for (i, row) in unknowns.iter().enumerate() {
            let (m, row_is_u) = *row;
            let w_i = weight(row);
            let gamma = if row_is_u {
                cocycle.forward(m, n) * cocycle.projection(n)
            } else {
                cocycle.backward(m, n).clone()
            };
            rhs.view_mut((i * d, 0), (d, d)).copy_from(&(gamma / w_i));
            for (j, col) in unknowns.iter().enumerate() {
                let (k, col_is_u) = *col;
                let coeff = match (row_is_u, col_is_u) {
                    // U equation at m ≥ n
                    (true, false) => -ops.c_op(m, k),
                    (true, true) if k < m => ops.c_op(m, k),
                    (true, true) => -ops.d_op(m, k),
                    // V equation at m < n
                    (false, false) if k < m => ops.c_op(m, k),
                    (false, false) => -ops.d_op(m, k),
                    (false, true) => ops.d_op(m, k),
                };
                let block = coeff * (weight(col) / w_i);
                let mut view = lhs.view_mut((i * d, j * d), (d, d));
                view -= block;
            }
        }
        let x = lhs
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularFixedPointSystem { anchor: n })?;
        if !linalg::is_finite(&x) {
            return Err(Error::SingularFixedPointSystem { anchor: n });
        }
        for (i, unknown) in unknowns.iter().enumerate() {
            let (k, is_u) = *unknown;
            let y = x.view((i * d, 0), (d, d)) * weight(unknown);
            if is_u {
                solved.u[(k - n) as usize] = y;
            } else {
                solved.v[(k - w.n_min) as usize] = y;
            }
        }
    }
    let gamma = SplittingTable::gamma(cocycle, n);
    let mut table = apply_upsilon(ops, &solved, &gamma);
    table.weighted_norm = weights.norm(&table);
    Ok(table)
}

fn solve_picard(
    ops: &Operators,
    weights: &Weights,
    n: i64,
    tol: &Tolerances,
    reference: Option<&SplittingTable>,
) -> Result<(SplittingTable, PicardReport)> {
    let w = *ops.window();
    let gamma = SplittingTable::gamma(ops.cocycle, n);
    let mut current = SplittingTable::zeros(&w, ops.dim(), n);
    let scale = reference.map_or(1.0, |r| weights.norm(r).max(1.0));
    let mut error = reference.map(|r| weights.distance(&current, r));
    let mut ratio: Option<f64> = None;
    for iteration in 1..=tol.max_iterations {
        let next = apply_upsilon(ops, &current, &gamma);
        let step = weights.distance(&next, &current);
        if let Some(r) = reference {
            let e = weights.distance(&next, r);
            let prev = error.expect("set with the reference");
            // ratios below the roundoff floor say nothing about the rate
            if prev > 1e-9 * scale {
                let q = e / prev;
                ratio = Some(ratio.map_or(q, |best: f64| best.max(q)));
            }
            error = Some(e);
        }
        current = next;
        if step <= tol.fixed_point {
            current.weighted_norm = weights.norm(&current);
            let report = PicardReport {
                iterations: iteration,
                final_step: step,
                agreement: reference.map(|r| weights.distance(&current, r)),
                contraction_ratio: ratio,
            };
            return Ok((current, report));
        }
    }
    let residual = weights.distance(&apply_upsilon(ops, &current, &gamma), &current);
    Err(Error::IterationCapExceeded {
        iterations: tol.max_iterations,
        residual,
    })
}

/// Fixed point `(U, V)` of `Υ_n` at one anchor.
pub fn solve_fixed_point(
    cocycle: &Cocycle,
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    n: i64,
    method: FixedPointMethod,
    tol: &Tolerances,
) -> Result<(SplittingTable, Option<PicardReport>)> {
    let window = *cocycle.window();
    window.check(n)?;
    let summary = sup_ratios(bounds, pert, &window)?.summary;
    if !summary.pass {
        return Err(Error::NonContraction { max: summary.max });
    }
    let ops = Operators::new(cocycle, pert)?;
    solve_anchor(&ops, bounds, n, method, tol)
}

fn solve_anchor(
    ops: &Operators,
    bounds: &dyn DichotomyBounds,
    n: i64,
    method: FixedPointMethod,
    tol: &Tolerances,
) -> Result<(SplittingTable, Option<PicardReport>)> {
    let weights = Weights::new(bounds, ops.window(), n)?;
    match method {
        FixedPointMethod::Direct => Ok((solve_direct(ops, &weights, n)?, None)),
        FixedPointMethod::Picard => {
            let (table, report) = solve_picard(ops, &weights, n, tol, None)?;
            Ok((table, Some(report)))
        }
        FixedPointMethod::Both => {
            let direct = solve_direct(ops, &weights, n)?;
            let (_, report) = solve_picard(ops, &weights, n, tol, Some(&direct))?;
            Ok((direct, Some(report)))
        }
    }
}

/// `Â_{m,n}`: ordered product of `(A_k + B_k)` for `n ≤ k < m`.
pub fn perturbed_transition(sys: &System, pert: &Perturbation, m: i64, n: i64) -> Result<Matrix> {
    let w = sys.window();
    w.check(m)?;
    w.check(n)?;
    if m < n {
        return Err(Error::BackwardTransition { m, n });
    }
    let mut acc = linalg::identity(sys.dim());
    for k in n..m {
        let step = match pert.get(k) {
            Some(b) => sys.operator(k)? + b,
            None => sys.operator(k)?.clone(),
        };
        acc = step * acc;
    }
    Ok(acc)
}

/// `‖Â_{m,n} − 𝒜_{m,n} − Σ_{k=n}^{m−1} 𝒜_{m,k+1} B_k Â_{k,n}‖ / (1 + ‖Â_{m,n}‖)`.
pub fn recursion_residual(sys: &System, pert: &Perturbation, m: i64, n: i64) -> Result<f64> {
    let hat = perturbed_transition(sys, pert, m, n)?;
    let mut rhs = sys.transition(m, n)?;
    for k in n..m {
        if let Some(b) = pert.get(k) {
            rhs += sys.transition(m, k + 1)? * b * perturbed_transition(sys, pert, k, n)?;
        }
    }
    Ok(op_norm(&(&hat - rhs)) / (1.0 + op_norm(&hat)))
}

pub const ID_SOLUTION_U: &str = "U_{m+1,n} = (A_m+B_m) U_{m,n}";
pub const ID_SOLUTION_V: &str = "V_{m+1,n} = (A_m+B_m) V_{m,n}";
pub const ID_SEMIGROUP_UU: &str = "U_{m,j} U_{j,n} = U_{m,n}";
pub const ID_SEMIGROUP_VU: &str = "V_{m,j} U_{j,n} = 0";
pub const ID_DUAL_UV: &str = "U_{m,j} V_{j,n} = 0";
pub const ID_DUAL_VV: &str = "V_{m,j} V_{j,n} = V_{m,n}";
pub const ID_MIXED_U: &str = "U_{m,j} Â_{j,n} V_{n,n} = 0";
pub const ID_MIXED_V_FORWARD: &str = "V_{m,j} Â_{j,n} V_{n,n} = Â_{m,n} V_{n,n} (n ≤ m ≤ j)";
pub const ID_MIXED_V_BACKWARD: &str = "V_{m,j} Â_{j,n} V_{n,n} = V_{m,n} (m ≤ n ≤ j)";
pub const ID_INVARIANT_E: &str = "Q̂_m Â_{m,n} P̂_n = 0";
pub const ID_INVARIANT_F: &str = "P̂_m Â_{m,n} Q̂_n = 0";
pub const ID_INVERSE: &str = "Â_{m,n} V_{n,m} Q̂_m = Q̂_m";
pub const ID_IDEMPOTENT: &str = "P̂_n² = P̂_n";
pub const ID_COMPLEMENT: &str = "V_{n,n} = Id − P̂_n";
pub const ID_BOUND_U: &str = "‖U_{m,n}‖ ≤ σ a_{m,n}";
pub const ID_BOUND_V: &str = "‖V_{m,n}‖ ≤ σ b_{m,n}";
pub const ID_BOUND_HAT_P: &str = "‖Â_{m,n} P̂_n‖ ≤ σ a_{m,n}";
pub const ID_BOUND_INVERSE: &str = "‖V_{n,m} V_{m,m}‖ ≤ σ b_{n,m}";
pub const ID_RANK: &str = "rank P̂_n = rank P_n";

/// Largest residual of one identity and where it occurs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub identity: String,
    pub residual: f64,
    pub tolerance: f64,
    /// Indices `(m, j, n)` or `(m, n)` of the worst case.
    pub at: Vec<i64>,
    pub pass: bool,
}

#[derive(Default)]
struct Tracker {
    worst: BTreeMap<&'static str, (f64, Vec<i64>)>,
    order: Vec<&'static str>,
}

impl Tracker {
    fn record(&mut self, id: &'static str, value: f64, at: &[i64]) {
        match self.worst.get_mut(id) {
            Some(entry) => {
                if value > entry.0 || value.is_nan() {
                    *entry = (value, at.to_vec());
                }
            }
            None => {
                self.order.push(id);
                self.worst.insert(id, (value, at.to_vec()));
            }
        }
    }

    fn finish(self, tolerance: impl Fn(&str) -> f64) -> Vec<Residual> {
        self.order
            .iter()
            .map(|&id| {
                let (residual, at) = self.worst[id].clone();
                let tolerance = tolerance(id);
                Residual {
                    identity: id.to_string(),
                    residual,
                    tolerance,
                    at,
                    pass: residual <= tolerance,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructOptions {
    pub method: FixedPointMethod,
    pub tolerances: Tolerances,
}

impl Default for ConstructOptions {
    fn default() -> Self {
        Self {
            method: FixedPointMethod::Direct,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardSummary {
    pub max_iterations: usize,
    pub max_agreement: Option<f64>,
    pub max_contraction_ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PerturbedDichotomy {
    pub window: TimeWindow,
    pub sigma: f64,
    pub robustness: RobustnessSummary,
    pub p_hat: Vec<Matrix>,
    pub q_hat: Vec<Matrix>,
    pub tables: Vec<SplittingTable>,
    pub residuals: Vec<Residual>,
    pub ranks_preserved: bool,
    pub picard: Option<PicardSummary>,
    /// `tol_identity · σ · max(1, max bound)`.
    pub identity_tolerance: f64,
}

impl PerturbedDichotomy {
    pub fn p_hat(&self, n: i64) -> &Matrix {
        &self.p_hat[(n - self.window.n_min) as usize]
    }

    pub fn q_hat(&self, n: i64) -> &Matrix {
        &self.q_hat[(n - self.window.n_min) as usize]
    }

    pub fn table(&self, n: i64) -> &SplittingTable {
        &self.tables[(n - self.window.n_min) as usize]
    }

    /// Anchors and table entries with indices `≥ n_min` only.
    pub fn restrict(&self, window: TimeWindow) -> Result<Self> {
        window.check(window.n_min)?;
        if window.n_min < self.window.n_min || window.n_max != self.window.n_max {
            return Err(Error::IndexOutOfWindow {
                index: window.n_min,
                min: self.window.n_min,
                max: self.window.n_max,
            });
        }
        let skip = (window.n_min - self.window.n_min) as usize;
        let tables = self.tables[skip..]
            .iter()
            .map(|t| SplittingTable {
                anchor: t.anchor,
                n_min: window.n_min,
                u: t.u.clone(),
                v: t.v[skip..].to_vec(),
                weighted_norm: t.weighted_norm,
            })
            .collect();
        Ok(Self {
            window,
            sigma: self.sigma,
            robustness: self.robustness.clone(),
            p_hat: self.p_hat[skip..].to_vec(),
            q_hat: self.q_hat[skip..].to_vec(),
            tables,
            residuals: self.residuals.clone(),
            ranks_preserved: self.ranks_preserved,
            picard: self.picard.clone(),
            identity_tolerance: self.identity_tolerance,
        })
    }

    pub fn pass(&self) -> bool {
        self.ranks_preserved && self.residuals.iter().all(|r| r.pass)
    }

    /// The offender with the largest residual-to-tolerance ratio, as an error.
    pub fn check(&self) -> Result<()> {
        let worst = self
            .residuals
            .iter()
            .filter(|r| !r.pass)
            .max_by(|x, y| {
                (x.residual / x.tolerance)
                    .partial_cmp(&(y.residual / y.tolerance))
                    .unwrap_or(std::cmp::Ordering::Greater)
            });
        if let Some(r) = worst {
            return Err(Error::ConstructionInconsistent {
                identity: r.identity.clone(),
                residual: r.residual,
                tolerance: r.tolerance,
                location: format!("{:?}", r.at),
            });
        }
        if !self.ranks_preserved {
            return Err(Error::ConstructionInconsistent {
                identity: ID_RANK.to_string(),
                residual: 1.0,
                tolerance: 0.0,
                location: "window".to_string(),
            });
        }
        Ok(())
    }
}

/// Builds and verifies the perturbed dichotomy; fails with the worst
/// offending identity if any residual exceeds its tolerance.
pub fn build_perturbed_dichotomy(
    sys: &System,
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    options: &ConstructOptions,
) -> Result<PerturbedDichotomy> {
    let built = construct(sys, bounds, pert, options)?;
    built.check()?;
    Ok(built)
}

/// Like [`build_perturbed_dichotomy`] but returns the residual report even
/// when some identity fails.
pub fn construct(
    sys: &System,
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    options: &ConstructOptions,
) -> Result<PerturbedDichotomy> {
    let tol = &options.tolerances;
    let window = *sys.window();
    if pert.dim() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "perturbation is {}-dimensional, system is {}-dimensional",
            pert.dim(),
            sys.dim()
        )));
    }
    let robustness = sup_ratios(bounds, pert, &window)?.summary;
    let sigma = robustness.sigma_or_err()?;
    let cocycle = Cocycle::new(sys, tol.inv)?;
    let ops = Operators::new(&cocycle, pert)?;

    let anchors: Vec<i64> = window.indices().collect();
    let solved = anchors
        .par_iter()
        .map(|&n| solve_anchor(&ops, bounds, n, options.method, tol))
        .collect::<Result<Vec<_>>>()?;
    let picard = if options.method == FixedPointMethod::Direct {
        None
    } else {
        let reports: Vec<&PicardReport> = solved.iter().filter_map(|(_, r)| r.as_ref()).collect();
        let max_opt = |f: fn(&PicardReport) -> Option<f64>| {
            reports.iter().filter_map(|r| f(r)).reduce(f64::max)
        };
        Some(PicardSummary {
            max_iterations: reports.iter().map(|r| r.iterations).max().unwrap_or(0),
            max_agreement: max_opt(|r| r.agreement),
            max_contraction_ratio: max_opt(|r| r.contraction_ratio),
        })
    };
    let tables: Vec<SplittingTable> = solved.into_iter().map(|(t, _)| t).collect();

    let d = sys.dim();
    let id = linalg::identity(d);
    let p_hat: Vec<Matrix> = tables.iter().map(|t| t.u(t.anchor).clone()).collect();
    let q_hat: Vec<Matrix> = p_hat.iter().map(|p| &id - p).collect();
    let ranks_preserved = window
        .indices()
        .zip(&p_hat)
        .all(|(n, p)| projection_rank(p) == projection_rank(cocycle.projection(n)));

    let mut max_bound: f64 = 1.0;
    for (m, n) in window.forward_pairs() {
        max_bound = max_bound.max(bounds.a(m, n)?);
    }
    for (m, n) in window.backward_pairs() {
        max_bound = max_bound.max(bounds.b(m, n)?);
    }
    let identity_tolerance = tol.identity * sigma * max_bound;
    let bound_tolerance = tol.identity.max(tol.dichotomy);

    let residuals = verify_identities(
        sys,
        bounds,
        pert,
        &window,
        &tables,
        &p_hat,
        &q_hat,
        sigma,
        identity_tolerance,
        bound_tolerance,
    )?;

    Ok(PerturbedDichotomy {
        window,
        sigma,
        robustness,
        p_hat,
        q_hat,
        tables,
        residuals,
        ranks_preserved,
        picard,
        identity_tolerance,
    })
}

fn is_bound_identity(id: &str) -> bool {
    [ID_BOUND_U, ID_BOUND_V, ID_BOUND_HAT_P, ID_BOUND_INVERSE].contains(&id)
}

#[allow(clippy::too_many_arguments)]
fn verify_identities(
    sys: &System,
    bounds: &dyn DichotomyBounds,
    pert: &Perturbation,
    w: &TimeWindow,
    tables: &[SplittingTable],
    p_hat: &[Matrix],
    q_hat: &[Matrix],
    sigma: f64,
    identity_tolerance: f64,
    bound_tolerance: f64,
) -> Result<Vec<Residual>> {
    let at = |n: i64| (n - w.n_min) as usize;
    let table = |n: i64| &tables[at(n)];
    let d = sys.dim();
    let id = linalg::identity(d);

    // hat[n][m − n] = Â_{m,n}
    let mut hat: Vec<Vec<Matrix>> = Vec::with_capacity(w.len());
    let steps: Vec<Matrix> = (w.n_min..w.n_max)
        .map(|k| {
            let a = sys.operator(k)?;
            Ok(match pert.get(k) {
                Some(b) => a + b,
                None => a.clone(),
            })
        })
        .collect::<Result<_>>()?;
    for n in w.indices() {
        let mut row = Vec::with_capacity((w.n_max - n + 1) as usize);
        let mut acc = id.clone();
        row.push(acc.clone());
        for k in n..w.n_max {
            acc = &steps[at(k)] * acc;
            row.push(acc.clone());
        }
        hat.push(row);
    }
    let hat_at = |m: i64, n: i64| &hat[at(n)][(m - n) as usize];
    let hat_norm: Vec<Vec<f64>> = hat.iter().map(|r| r.iter().map(op_norm).collect()).collect();
    let hat_norm_at = |m: i64, n: i64| hat_norm[at(n)][(m - n) as usize];

    let mut t = Tracker::default();

    for n in w.indices() {
        let tn = table(n);
        // solution property
        for m in n..w.n_max {
            let step = &steps[at(m)];
            let r = op_norm(&(step * tn.u(m) - tn.u(m + 1))) / op_norm(step).max(1.0);
            t.record(ID_SOLUTION_U, r, &[m, n]);
        }
        for m in w.n_min..n {
            let step = &steps[at(m)];
            let r = op_norm(&(step * tn.v(m) - tn.v(m + 1))) / op_norm(step).max(1.0);
            t.record(ID_SOLUTION_V, r, &[m, n]);
        }
        // projection algebra
        let p = &p_hat[at(n)];
        t.record(ID_IDEMPOTENT, op_norm(&(p * p - p)), &[n]);
        t.record(ID_COMPLEMENT, op_norm(&(tn.v(n) - &q_hat[at(n)])), &[n]);
        // bound certificates
        for m in n..=w.n_max {
            let a = bounds.a(m, n)?;
            t.record(ID_BOUND_U, op_norm(tn.u(m)) / (sigma * a), &[m, n]);
            t.record(ID_BOUND_HAT_P, op_norm(&(hat_at(m, n) * p)) / (sigma * a), &[m, n]);
        }
        for m in w.n_min..=n {
            let b = bounds.b(m, n)?;
            t.record(ID_BOUND_V, op_norm(tn.v(m)) / (sigma * b), &[m, n]);
            // V_{m,n} V_{n,n} is the inverse of Â_{n,m} on F̂_n
            t.record(ID_BOUND_INVERSE, op_norm(&(tn.v(m) * tn.v(n))) / (sigma * b), &[m, n]);
        }
    }

    for j in w.indices() {
        let tj = table(j);
        for n in w.indices() {
            let tn = table(n);
            if j >= n {
                for m in w.indices() {
                    if m >= j {
                        let r = op_norm(&(tj.u(m) * tn.u(j) - tn.u(m)));
                        t.record(ID_SEMIGROUP_UU, r, &[m, j, n]);
                    } else {
                        t.record(ID_SEMIGROUP_VU, op_norm(&(tj.v(m) * tn.u(j))), &[m, j, n]);
                    }
                }
                // Â_{j,n} V_{n,n}
                let hv = hat_at(j, n) * tn.v(n);
                let scale = hat_norm_at(j, n).max(1.0);
                for m in w.indices() {
                    if m >= j {
                        t.record(ID_MIXED_U, op_norm(&(tj.u(m) * &hv)) / scale, &[m, j, n]);
                    } else if m >= n {
                        let r = op_norm(&(tj.v(m) * &hv - hat_at(m, n) * tn.v(n))) / scale;
                        t.record(ID_MIXED_V_FORWARD, r, &[m, j, n]);
                    } else {
                        let r = op_norm(&(tj.v(m) * &hv - tn.v(m))) / scale;
                        t.record(ID_MIXED_V_BACKWARD, r, &[m, j, n]);
                    }
                }
            }
            if j <= n {
                for m in w.indices() {
                    if m >= j {
                        t.record(ID_DUAL_UV, op_norm(&(tj.u(m) * tn.v(j))), &[m, j, n]);
                    } else {
                        let r = op_norm(&(tj.v(m) * tn.v(j) - tn.v(m)));
                        t.record(ID_DUAL_VV, r, &[m, j, n]);
                    }
                }
            }
        }
    }

    for (m, n) in w.forward_pairs() {
        let h = hat_at(m, n);
        let scale = hat_norm_at(m, n).max(1.0);
        let r = op_norm(&(&q_hat[at(m)] * h * &p_hat[at(n)])) / scale;
        t.record(ID_INVARIANT_E, r, &[m, n]);
        let r = op_norm(&(&p_hat[at(m)] * h * &q_hat[at(n)])) / scale;
        t.record(ID_INVARIANT_F, r, &[m, n]);
        let q_m = &q_hat[at(m)];
        let r = op_norm(&(h * table(m).v(n) * q_m - q_m)) / scale;
        t.record(ID_INVERSE, r, &[m, n]);
    }

    Ok(t.finish(|id| {
        if is_bound_identity(id) {
            1.0 + bound_tolerance
        } else {
            identity_tolerance
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundFamily;
    use nalgebra::DVector;
    use std::f64::consts::LN_2;

    fn diag(values: &[f64]) -> Matrix {
        Matrix::from_diagonal(&DVector::from_row_slice(values))
    }

    fn worked(n_min: i64, n_max: i64) -> (System, BoundFamily) {
        let sys = System::from_fn(
            2,
            TimeWindow::full_line(n_min, n_max).unwrap(),
            |_| diag(&[0.5, 2.0]),
            |_| diag(&[1.0, 0.0]),
        )
        .unwrap();
        (sys, BoundFamily::exp_z(1.0, -LN_2, LN_2, 0.0).unwrap())
    }

    fn b0(delta: f64) -> Perturbation {
        Perturbation::new(2, [(0, linalg::identity(2) * delta)]).unwrap()
    }

    #[test]
    fn c_and_d_hand_products() {
        let (sys, _) = worked(-4, 4);
        let cocycle = Cocycle::new(&sys, 1e-12).unwrap();
        let pert = b0(0.05);
        let ops = Operators::new(&cocycle, &pert).unwrap();
        assert!(op_norm(&(ops.c_op(2, 0) - diag(&[0.025, 0.0]))) < 1e-16);
        // D_{0,0} = 𝒜_{0,1} Q_1 B_0 = diag(0, 1/2)·δ
        assert!(op_norm(&(ops.d_op(0, 0) - diag(&[0.0, 0.025]))) < 1e-16);
        assert_eq!(ops.c_op(3, 1), Matrix::zeros(2, 2));
    }

    #[test]
    fn zero_perturbation_reproduces_unperturbed_splitting() {
        let (sys, f) = worked(-4, 4);
        let options = ConstructOptions {
            method: FixedPointMethod::Both,
            ..Default::default()
        };
        let built = build_perturbed_dichotomy(&sys, &f, &Perturbation::zero(2), &options).unwrap();
        assert_eq!(built.sigma, 1.0);
        for n in -4..=4 {
            assert_eq!(built.p_hat(n), sys.projection(n).unwrap());
        }
        let picard = built.picard.unwrap();
        assert_eq!(picard.max_iterations, 2);
    }

    #[test]
    fn worked_example_passes_every_identity() {
        let (sys, f) = worked(-8, 8);
        let options = ConstructOptions {
            method: FixedPointMethod::Both,
            ..Default::default()
        };
        let built = build_perturbed_dichotomy(&sys, &f, &b0(0.05), &options).unwrap();
        assert!((built.robustness.max - 0.1).abs() < 1e-14);
        for r in &built.residuals {
            if !is_bound_identity(&r.identity) {
                assert!(r.residual <= 1e-8, "{}: {}", r.identity, r.residual);
            }
        }
        assert!(built.ranks_preserved);
        let picard = built.picard.unwrap();
        assert!(picard.max_agreement.unwrap() < 1e-10);
        assert!(picard.max_contraction_ratio.unwrap() <= 0.1 + 0.05);
    }

    #[test]
    fn j_is_contractive_on_random_tables() {
        use rand::{Rng, SeedableRng};
        let (sys, f) = worked(-5, 5);
        let cocycle = Cocycle::new(&sys, 1e-12).unwrap();
        let pert = Perturbation::new(
            2,
            [
                (-2, Matrix::from_row_slice(2, 2, &[0.02, -0.01, 0.03, 0.0])),
                (1, Matrix::from_row_slice(2, 2, &[0.0, 0.04, -0.02, 0.01])),
            ],
        )
        .unwrap();
        let lambda = sup_ratios(&f, &pert, sys.window()).unwrap().summary;
        let ops = Operators::new(&cocycle, &pert).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = *sys.window();
        for n in [-3, 0, 2] {
            let weights = Weights::new(&f, &w, n).unwrap();
            for _ in 0..20 {
                let mut t = SplittingTable::zeros(&w, 2, n);
                for x in t.u.iter_mut().chain(t.v.iter_mut()) {
                    *x = Matrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
                }
                let norm = weights.norm(&t);
                let mut j_sup: f64 = 0.0;
                for m in n..=w.n_max {
                    let j = ops.apply_j(|k| t.u(k), |k| t.v(k), m, n);
                    j_sup = j_sup.max(op_norm(&j) / f.eval_a(m, n).unwrap());
                }
                let mut l_sup: f64 = 0.0;
                for m in w.n_min..=n {
                    let l = ops.apply_l(|k| t.u(k), |k| t.v(k), m, n);
                    l_sup = l_sup.max(op_norm(&l) / f.eval_b(m, n).unwrap());
                }
                assert!(j_sup <= lambda.lambda_sup * norm * (1.0 + 1e-12));
                assert!(l_sup <= lambda.mu_sup * norm * (1.0 + 1e-12));
                // linearity
                let mut scaled = t.clone();
                for x in scaled.u.iter_mut().chain(scaled.v.iter_mut()) {
                    *x *= 0.3;
                }
                let j1 = ops.apply_j(|k| scaled.u(k), |k| scaled.v(k), w.n_max, n);
                let j0 = ops.apply_j(|k| t.u(k), |k| t.v(k), w.n_max, n) * 0.3;
                assert!(op_norm(&(j1 - &j0)) <= 1e-13 * op_norm(&j0).max(1.0));
            }
        }
    }

    #[test]
    fn c_norm_is_bounded_by_a() {
        let (sys, f) = worked(-5, 5);
        let cocycle = Cocycle::new(&sys, 1e-12).unwrap();
        let pert = Perturbation::new(2, [(-1, Matrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.05]))]).unwrap();
        let ops = Operators::new(&cocycle, &pert).unwrap();
        let norm_b = pert.norm(-1);
        for m in 0..=5 {
            let c = op_norm(&ops.c_op(m, -1));
            assert!(c <= f.eval_a(m, 0).unwrap() * norm_b * (1.0 + 1e-12));
        }
    }

    #[test]
    fn non_contraction_is_rejected() {
        let (sys, f) = worked(-4, 4);
        let err = build_perturbed_dichotomy(&sys, &f, &b0(0.6), &ConstructOptions::default());
        assert!(matches!(err, Err(Error::NonContraction { .. })));
    }

    #[test]
    fn perturbed_transition_basics() {
        let (sys, _) = worked(-4, 4);
        let zero = Perturbation::zero(2);
        assert_eq!(perturbed_transition(&sys, &zero, 3, -1).unwrap(), sys.transition(3, -1).unwrap());
        assert_eq!(perturbed_transition(&sys, &b0(0.1), 2, 2).unwrap(), linalg::identity(2));
        for m in -4..=4 {
            for n in -4..=m {
                assert!(recursion_residual(&sys, &b0(0.1), m, n).unwrap() < 1e-14);
            }
        }
    }
}
