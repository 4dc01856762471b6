//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;

use dichotomy_lab::bounds::{corollary_threshold, BoundFamily, PerturbEnvelope, Sequence};
use dichotomy_lab::constructor::{construct, recursion_residual, ConstructOptions, FixedPointMethod};
use dichotomy_lab::generate::{generate, GenOptions, Generated};
use dichotomy_lab::halfline::{check_theorem_n, extend_to_z};
use dichotomy_lab::linalg::{identity, op_norm, Matrix};
use dichotomy_lab::robustness::{
    lambda_mn, lambda_prime_mn, mu_mn, mu_prime_mn, sup_ratios, sup_ratios_prime, Perturbation,
};
use dichotomy_lab::system::{verify_dichotomy, System, TimeWindow, Tolerances, COND_IDEMPOTENT};
use nalgebra::DVector;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&DVector::from_row_slice(values))
}

/// Desk-scale random system: `d ≤ 4`, at most 17 indices.
fn random_z(seed: u64, target: f64) -> Generated {
    let half = 3 + (seed % 6) as i64;
    let mut o = GenOptions::new(seed, 1 + (seed % 4) as usize, TimeWindow::full_line(-half, half).unwrap());
    o.eps = [0.0, 0.02, 0.05][(seed % 3) as usize];
    o.target = target;
    generate(&o).unwrap()
}

fn random_n(seed: u64, target: f64) -> Generated {
    let mut o = GenOptions::new(seed, 1 + (seed % 4) as usize, TimeWindow::half_line(6 + (seed % 10) as i64).unwrap());
    o.eps = [0.0, 0.03][(seed % 2) as usize];
    o.target = target;
    generate(&o).unwrap()
}

fn target_for(seed: u64, hi: f64) -> f64 {
    hi * (0.1 + 0.9 * ((seed * 7919) % 1000) as f64 / 1000.0)
}

fn zero_perturbation_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let g = random_z(1000 + seed, 0.0);
        let built = construct(&g.system, &g.bounds, &g.perturbation, &ConstructOptions::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let r = &built.robustness;
        ensure(r.lambda_sup == 0.0 && r.mu_sup == 0.0 && built.sigma == 1.0, || {
            format!("seed {seed}: λ {}, μ {}, σ {}", r.lambda_sup, r.mu_sup, built.sigma)
        })?;
        for n in g.system.window().indices() {
            let diff = op_norm(&(built.p_hat(n) - g.system.projection(n).unwrap()));
            worst = worst.max(diff);
            ensure(diff <= 1e-12, || format!("seed {seed}, n {n}: ‖P̂−P‖ = {diff:e}"))?;
        }
    }
    Ok(format!("50 systems, max ‖P̂_n − P_n‖ = {worst:e}"))
}

fn worked_diagonal_system() -> Outcome {
    let window = TimeWindow::full_line(-8, 8).unwrap();
    let sys = System::from_fn(2, window, |_| diag(&[0.5, 2.0]), |_| diag(&[1.0, 0.0])).unwrap();
    let bounds = BoundFamily::exp_z(1.0, -LN_2, LN_2, 0.0).unwrap();
    let tol = Tolerances::default();
    let dich = verify_dichotomy(&sys, &bounds, &tol).map_err(|e| e.to_string())?;
    ensure(dich.pass, || format!("dichotomy fails: {:?}", dich.failed))?;
    ensure(dich.d1_worst_margin.abs() <= 1e-12 && dich.d2_worst_margin.abs() <= 1e-12, || {
        format!("margins {} {}", dich.d1_worst_margin, dich.d2_worst_margin)
    })?;

    let pert = Perturbation::new(2, [(0, identity(2) * 0.05)]).unwrap();
    let lambda = lambda_mn(&bounds, &pert, 1, 0).map_err(|e| e.to_string())?;
    // only k = 0 contributes: a_{1,1}·‖B_0‖·a_{0,0} = 1·0.05·1, and a_{1,0} = 1/2
    ensure((lambda - 0.05).abs() <= 0.05 * 1e-15, || format!("λ_(1,0) = {lambda}"))?;
    let ratio = lambda / bounds.eval_a(1, 0).unwrap();
    ensure((ratio - 0.10).abs() <= 0.10 * 1e-15, || format!("λ_(1,0)/a_(1,0) = {ratio}"))?;

    let built = construct(&sys, &bounds, &pert, &ConstructOptions::default()).map_err(|e| e.to_string())?;
    let mut worst_identity: f64 = 0.0;
    for r in &built.residuals {
        if r.identity.starts_with('‖') {
            ensure(r.pass, || format!("{} ratio {} at {:?}", r.identity, r.residual, r.at))?;
        } else {
            worst_identity = worst_identity.max(r.residual);
            ensure(r.residual <= 1e-8, || format!("{} residual {:e} at {:?}", r.identity, r.residual, r.at))?;
        }
    }
    ensure(built.pass(), || "construction reports a failure".to_string())?;
    Ok(format!(
        "λ_(1,0) = {lambda}, ratio {ratio}, σ = {}, max identity residual {worst_identity:e}",
        built.sigma
    ))
}

fn picard_direct_equivalence() -> Outcome {
    let options = ConstructOptions {
        method: FixedPointMethod::Both,
        tolerances: Tolerances::default(),
    };
    let mut worst_agreement: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    for seed in 0..100 {
        let g = random_z(2000 + seed, target_for(seed, 0.5));
        let built = construct(&g.system, &g.bounds, &g.perturbation, &options)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let max = built.robustness.max;
        ensure(max <= 0.5, || format!("seed {seed}: max {max}"))?;
        let p = built.picard.as_ref().ok_or("no Picard report")?;
        let agreement = p.max_agreement.unwrap_or(0.0);
        worst_agreement = worst_agreement.max(agreement);
        ensure(agreement <= 1e-10, || format!("seed {seed}: agreement {agreement:e}"))?;
        if let Some(ratio) = p.max_contraction_ratio {
            worst_excess = worst_excess.max(ratio - max);
            ensure(ratio <= max + 0.05, || format!("seed {seed}: contraction {ratio} vs max {max}"))?;
        }
    }
    Ok(format!(
        "100 systems, max agreement {worst_agreement:e}, max (ratio − max{{λ,μ}}) {worst_excess:.3e}"
    ))
}

fn linearity_law() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let g = random_z(3000 + seed, 0.4);
        let w = *g.system.window();
        let base = sup_ratios(&g.bounds, &g.perturbation, &w).map_err(|e| e.to_string())?;
        for t in [0.1, 0.5, 1.0] {
            let scaled = sup_ratios(&g.bounds, &g.perturbation.scaled(t).unwrap(), &w).map_err(|e| e.to_string())?;
            let pairs = base
                .lambda_table
                .iter()
                .zip(&scaled.lambda_table)
                .chain(base.mu_table.iter().zip(&scaled.mu_table));
            for ((key, &x), (_, &y)) in pairs {
                let expected = t * x;
                let err = if expected == 0.0 { y.abs() } else { (y - expected).abs() / expected };
                worst = worst.max(err);
                ensure(err <= 1e-13, || format!("seed {seed}, t {t}, {key:?}: rel err {err:e}"))?;
            }
        }
    }
    Ok(format!("20 systems × 3 scales, max relative error {worst:e}"))
}

/// `Σ_{k∈ℤ} term(|k|)` truncated at `|k| ≤ limit`.
fn two_sided(limit: i64, term: impl Fn(i64) -> f64) -> f64 {
    let mut s = term(0);
    for k in 1..=limit {
        s += 2.0 * term(k);
    }
    s
}

fn corollary_dominance() -> Outcome {
    let zw = TimeWindow::full_line(-10, 10).unwrap();
    let nw = TimeWindow::half_line(20).unwrap();
    let exp_set = [(1.0, -1.0, 1.0, 0.0, 0.01, 0.5), (2.5, -0.8, 0.5, 0.05, 0.02, 0.6), (4.0, -0.3, 0.3, 0.1, 0.005, 0.4)];
    let poly_set = [(1.0, -1.0, 0.0, 0.0, 0.05, 2.0), (2.0, -2.0, -0.5, 0.2, 0.01, 2.5), (3.0, -0.5, 0.0, 0.0, 0.02, 1.8)];
    let mut cases: Vec<(&str, BoundFamily, PerturbEnvelope, TimeWindow)> = Vec::new();
    for &(d, a, b, eps, delta, gamma) in &exp_set {
        cases.push(("exponential ℤ", BoundFamily::exp_z(d, a, b, eps).unwrap(), PerturbEnvelope::Exp { delta, gamma }, zw));
        cases.push(("exponential ℕ", BoundFamily::exp_n(d, a, b, eps).unwrap(), PerturbEnvelope::Exp { delta, gamma }, nw));
        let mu = Sequence::Power { scale: 1.0, exponent: 1.0 };
        let nu = Sequence::Power { scale: 1.0, exponent: 1.5 };
        cases.push(("(μ,ν)", BoundFamily::mu_nu(d, a, b, eps, mu, nu).unwrap(), PerturbEnvelope::Nu { delta, gamma: gamma + 1.0 }, nw));
    }
    for &(d, a, b, eps, delta, gamma) in &poly_set {
        cases.push(("polynomial ℤ", BoundFamily::poly_z(d, a, b, eps).unwrap(), PerturbEnvelope::Poly { delta, gamma }, zw));
        cases.push(("polynomial ratio ℕ", BoundFamily::poly_ratio_n(d, a, b, eps).unwrap(), PerturbEnvelope::Poly { delta, gamma }, nw));
    }
    let mut tightest: f64 = 0.0;
    for (label, family, env, w) in &cases {
        let report = corollary_threshold(family, env, w, 10_000).map_err(|e| format!("{label}: {e}"))?;
        let pert = Perturbation::from_envelope(2, family, env, w).unwrap();
        let summary = if w.n_min == 1 {
            sup_ratios_prime(family, &pert, w)
        } else {
            sup_ratios(family, &pert, w)
        }
        .map_err(|e| format!("{label}: {e}"))?
        .summary;
        ensure(summary.max <= report.theta.upper, || {
            format!("{label} {family:?}: window max {} > θ {}", summary.max, report.theta.upper)
        })?;
        tightest = tightest.max(summary.max / report.theta.upper);
    }

    let exp = corollary_threshold(
        &BoundFamily::exp_z(1.0, -1.0, 1.0, 0.0).unwrap(),
        &PerturbEnvelope::Exp { delta: 0.01, gamma: 0.5 },
        &zw,
        10_000,
    )
    .map_err(|e| e.to_string())?;
    let exp_oracle = 0.01 * 1f64.exp() * two_sided(200, |k| (-0.5 * k as f64).exp());
    let poly = corollary_threshold(
        &BoundFamily::poly_z(1.0, -1.0, 0.0, 0.0).unwrap(),
        &PerturbEnvelope::Poly { delta: 0.05, gamma: 2.0 },
        &zw,
        10_000,
    )
    .map_err(|e| e.to_string())?;
    let poly_oracle = 2.0 * 0.05 * two_sided(2_000_000, |k| ((k + 1) as f64).powi(-2));
    for (name, theta, oracle, printed) in [
        ("exponential", exp.theta.upper, exp_oracle, 0.11099),
        ("polynomial", poly.theta.upper, poly_oracle, 0.22899),
    ] {
        ensure((theta - oracle).abs() <= 1e-6, || format!("{name}: θ {theta} vs summation {oracle}"))?;
        ensure((theta - printed).abs() <= 5e-6, || format!("{name}: θ {theta} vs {printed}"))?;
    }
    Ok(format!(
        "{} cases dominated (largest max/θ = {tightest:.4}); θ = {:.6}, {:.6}",
        cases.len(),
        exp.theta.upper,
        poly.theta.upper
    ))
}

fn half_line_consistency() -> Outcome {
    let mut pairs = 0usize;
    for seed in 0..50 {
        let g = random_n(4000 + seed, target_for(seed, 0.8));
        let w = *g.system.window();
        let ext = extend_to_z(&g.system, &g.bounds, &g.perturbation, 5).map_err(|e| e.to_string())?;
        for (m, n) in w.forward_pairs() {
            let direct = lambda_prime_mn(&g.bounds, &g.perturbation, &w, m, n).unwrap();
            let extended = lambda_mn(&ext.bounds, &g.perturbation, m, n).unwrap();
            ensure(direct.to_bits() == extended.to_bits(), || format!("seed {seed} λ({m},{n}): {direct} vs {extended}"))?;
            pairs += 1;
        }
        for (m, n) in w.backward_pairs() {
            let direct = mu_prime_mn(&g.bounds, &g.perturbation, &w, m, n).unwrap();
            let extended = mu_mn(&ext.bounds, &g.perturbation, m, n).unwrap();
            ensure(direct.to_bits() == extended.to_bits(), || format!("seed {seed} μ({m},{n}): {direct} vs {extended}"))?;
            pairs += 1;
        }
        let cert = check_theorem_n(&g.system, &g.bounds, &g.perturbation, None).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(cert.direct.max.to_bits() == cert.extended.max.to_bits(), || format!("seed {seed}: θ differs"))?;
        ensure(cert.direct.sigma.map(f64::to_bits) == cert.extended.sigma.map(f64::to_bits), || {
            format!("seed {seed}: σ differs")
        })?;
    }
    Ok(format!("50 systems, {pairs} pairs bitwise equal"))
}

fn perturbed_cocycle_recursion() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let g = random_z(5000 + seed, target_for(seed, 0.9));
        for (m, n) in g.system.window().forward_pairs() {
            let r = recursion_residual(&g.system, &g.perturbation, m, n).map_err(|e| e.to_string())?;
            worst = worst.max(r);
            ensure(r <= 1e-10, || format!("seed {seed} ({m},{n}): residual {r:e}"))?;
        }
    }
    Ok(format!("50 systems, max residual {worst:e}"))
}

const WORKED_DOC: &str = r#"{
  "dim": 2,
  "window": {"min": -8, "max": 8, "mode": "Z"},
  "operators": {"default": [[0.5, 0.0], [0.0, 2.0]]},
  "projections": {"default": [[1.0, 0.0], [0.0, 0.0]]},
  "bounds": {"kind": "exp-z", "D": 1.0, "a": -0.6931471805599453, "b": 0.6931471805599453, "eps": 0.0},
  "perturbation": {"entries": {"0": [[DELTA, 0.0], [0.0, DELTA]]}}
}"#;

fn run_cli(doc: &str) -> (i32, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("input.json");
    std::fs::write(&path, doc).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dichotomy-lab"))
        .args(["certify", "--input"])
        .arg(&path)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn negative_controls() -> Outcome {
    let (code, _) = run_cli(&WORKED_DOC.replace("DELTA", "0.05"));
    ensure(code == 0, || format!("baseline exit {code}"))?;

    let corrupt = WORKED_DOC
        .replace("DELTA", "0.05")
        .replace(r#""projections": {"default": [[1.0, 0.0], [0.0, 0.0]]}"#, r#""projections": {"default": [[1.0, 0.5], [0.0, 0.5]]}"#);
    let (code, text) = run_cli(&corrupt);
    ensure(code == 1 && text.contains(COND_IDEMPOTENT), || format!("idempotence control: exit {code}\n{text}"))?;

    // λ/a is linear in δ with value 0.1 at δ = 0.05, so δ = 0.75 gives 1.5
    let (code, text) = run_cli(&WORKED_DOC.replace("DELTA", "0.75"));
    ensure(code == 1 && text.contains("failed condition: max{λ,μ} < 1"), || format!("δ control: exit {code}\n{text}"))?;

    let (code, _) = run_cli("{ not json");
    ensure(code == 2, || format!("parse control: exit {code}"))?;
    Ok("idempotence → 1, inflated δ → 1, malformed input → 2".to_string())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("zero-perturbation exactness", zero_perturbation_exactness),
        ("worked diagonal system", worked_diagonal_system),
        ("Picard / direct equivalence", picard_direct_equivalence),
        ("linearity law", linearity_law),
        ("corollary dominance", corollary_dominance),
        ("ℕ/ℤ consistency", half_line_consistency),
        ("perturbed-cocycle recursion", perturbed_cocycle_recursion),
        ("negative controls", negative_controls),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".to_string()))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL  criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
