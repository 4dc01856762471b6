//! Pipelines that turn a loaded document into a certificate, and its JSON and
//! text renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::bounds::{
    check_h5_h6, corollary_threshold, CorollaryReport, DichotomyBounds, RatioHypothesisReport,
};
use crate::constructor::{self, ConstructOptions, FixedPointMethod, PerturbedDichotomy, PicardSummary, Residual};
use crate::document::{Loaded, Rows};
use crate::error::{Error, Result};
use crate::halfline::check_theorem_n;
use crate::linalg;
use crate::robustness::{sup_ratios, sup_ratios_prime, RobustnessSummary, COND_CONTRACTION};
use crate::system::{verify_dichotomy, verify_splitting, DichotomyReport, Mode, SplittingReport, TimeWindow, Tolerances};

pub const COND_RATIO_HYPOTHESES: &str =
    "sup_{m≥j} a_{m,n}/a_{m,j} < ∞ and sup_{m≤j} b_{m,n}/b_{m,j} < ∞";
pub const COND_ENVELOPE: &str = "‖B_n‖ ≤ envelope(n)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    HypothesisFailure,
    Inconsistent,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::HypothesisFailure => 1,
            Verdict::Inconsistent => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub tolerances: Tolerances,
    pub series_cap: usize,
    pub method: FixedPointMethod,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            series_cap: crate::bounds::series::DEFAULT_CAP,
            method: FixedPointMethod::Direct,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HalfLineSection {
    pub padding: i64,
    /// Suprema recomputed on the extension to ℤ.
    pub extended: RobustnessSummary,
    pub bitwise_agreement: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeCheck {
    pub worst_ratio: f64,
    pub at: Option<i64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructionSection {
    pub sigma: f64,
    pub identity_tolerance: f64,
    pub ranks_preserved: bool,
    pub residuals: Vec<Residual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardSummary>,
    pub p_hat: BTreeMap<i64, Rows>,
    pub q_hat: BTreeMap<i64, Rows>,
}

impl ConstructionSection {
    fn new(built: &PerturbedDichotomy) -> Self {
        let dump = |get: &dyn Fn(i64) -> Rows| built.window.indices().map(|n| (n, get(n))).collect();
        Self {
            sigma: built.sigma,
            identity_tolerance: built.identity_tolerance,
            ranks_preserved: built.ranks_preserved,
            residuals: built.residuals.clone(),
            picard: built.picard.clone(),
            p_hat: dump(&|n| linalg::to_rows(built.p_hat(n))),
            q_hat: dump(&|n| linalg::to_rows(built.q_hat(n))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub command: &'static str,
    pub verdict: Verdict,
    /// Names of the violated conditions.
    pub failed: Vec<String>,
    pub dim: usize,
    pub window: TimeWindow,
    pub bounds_family: &'static str,
    pub settings: Settings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splitting: Option<SplittingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dichotomy: Option<DichotomyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_hypothesis: Option<RatioHypothesisReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_line: Option<HalfLineSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_check: Option<EnvelopeCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corollary: Option<CorollaryReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub construction: Option<ConstructionSection>,
    pub notes: Vec<String>,
}

impl Certificate {
    fn empty(command: &'static str, loaded: &Loaded, settings: &Settings) -> Self {
        Self {
            command,
            verdict: Verdict::Pass,
            failed: Vec::new(),
            dim: loaded.system.dim(),
            window: *loaded.system.window(),
            bounds_family: loaded.bounds.name(),
            settings: *settings,
            splitting: None,
            dichotomy: None,
            ratio_hypothesis: None,
            robustness: None,
            half_line: None,
            envelope_check: None,
            corollary: None,
            construction: None,
            notes: Vec::new(),
        }
    }

    fn fail(&mut self, condition: impl Into<String>) {
        self.failed.push(condition.into());
        if self.verdict == Verdict::Pass {
            self.verdict = Verdict::HypothesisFailure;
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("certificates serialize");
        text.push('\n');
        text
    }

    pub fn to_text(&self) -> String {
        render_text(self)
    }
}

fn envelope_check(loaded: &Loaded, tol: f64) -> Result<Option<EnvelopeCheck>> {
    let Some(env) = &loaded.envelope else {
        return Ok(None);
    };
    let mut worst: f64 = 0.0;
    let mut at = None;
    let mut pass = true;
    for (k, norm) in loaded.perturbation.norms() {
        let bound = env.norm_bound(&loaded.bounds, k)?;
        if norm > bound * (1.0 + tol) {
            pass = false;
        }
        let ratio = if bound > 0.0 { norm / bound } else { f64::INFINITY };
        if ratio > worst {
            worst = ratio;
            at = Some(k);
        }
    }
    Ok(Some(EnvelopeCheck {
        worst_ratio: worst,
        at,
        pass,
    }))
}

fn corollary_section(cert: &mut Certificate, loaded: &Loaded, settings: &Settings) -> Result<()> {
    let Some(env) = &loaded.envelope else {
        return Ok(());
    };
    match corollary_threshold(&loaded.bounds, env, loaded.system.window(), settings.series_cap) {
        Ok(report) => {
            for c in report.conditions.iter().filter(|c| !c.pass) {
                cert.fail(format!("corollary: {}", c.name));
            }
            cert.notes.extend(report.notes.iter().cloned());
            cert.corollary = Some(report);
        }
        Err(Error::DivergedSeries(msg)) => cert.fail(format!("corollary series converges: {msg}")),
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Splitting, dichotomy, ratio hypotheses, robustness suprema and, when an
/// envelope is declared, the closed-form threshold.
pub fn certify(loaded: &Loaded, settings: &Settings) -> Result<Certificate> {
    let mut cert = Certificate::empty("certify", loaded, settings);
    run_hypotheses(&mut cert, loaded, settings)?;
    Ok(cert)
}

fn run_hypotheses(cert: &mut Certificate, loaded: &Loaded, settings: &Settings) -> Result<()> {
    let sys = &loaded.system;
    let window = *sys.window();
    let tol = &settings.tolerances;
    cert.notes.push(format!(
        "claims are restricted to the window [{}, {}] ({})",
        window.n_min,
        window.n_max,
        window.mode.symbol()
    ));

    let splitting = verify_splitting(sys, tol);
    let split_ok = splitting.pass;
    for f in &splitting.failed {
        cert.fail(f.clone());
    }
    cert.splitting = Some(splitting);
    if !split_ok {
        return Ok(());
    }

    let dichotomy = verify_dichotomy(sys, &loaded.bounds, tol)?;
    let dichotomy_ok = dichotomy.pass;
    for f in &dichotomy.failed {
        cert.fail(f.clone());
    }
    cert.dichotomy = Some(dichotomy);
    if !dichotomy_ok {
        return Ok(());
    }

    let ratio = check_h5_h6(&loaded.bounds, &window)?;
    if !ratio.pass {
        cert.fail(COND_RATIO_HYPOTHESES);
    }
    if ratio.window_restricted {
        cert.notes
            .push("ratio hypotheses are supported by window evidence only".to_string());
    }
    cert.ratio_hypothesis = Some(ratio);

    let summary = match window.mode {
        Mode::FullLine => sup_ratios(&loaded.bounds, &loaded.perturbation, &window)?.summary,
        Mode::HalfLine => sup_ratios_prime(&loaded.bounds, &loaded.perturbation, &window)?.summary,
    };
    if !summary.pass {
        cert.fail(COND_CONTRACTION);
    } else if window.mode == Mode::HalfLine {
        let half = check_theorem_n(sys, &loaded.bounds, &loaded.perturbation, None)?;
        cert.half_line = Some(HalfLineSection {
            padding: half.padding,
            bitwise_agreement: true,
            extended: half.extended,
        });
    }
    if !summary.global {
        cert.notes.push(format!(
            "the suprema of λ/a and μ/b are window suprema for the {} family",
            loaded.bounds.family_name()
        ));
    }
    cert.robustness = Some(summary);

    if let Some(check) = envelope_check(loaded, tol.dichotomy)? {
        if !check.pass {
            cert.fail(COND_ENVELOPE);
        }
        cert.envelope_check = Some(check);
    }
    corollary_section(cert, loaded, settings)
}

/// The certify pipeline followed by the perturbed-dichotomy construction.
pub fn construct(loaded: &Loaded, settings: &Settings) -> Result<Certificate> {
    let mut cert = Certificate::empty("construct", loaded, settings);
    run_hypotheses(&mut cert, loaded, settings)?;
    if cert.verdict != Verdict::Pass {
        return Ok(cert);
    }
    let options = ConstructOptions {
        method: settings.method,
        tolerances: settings.tolerances,
    };
    let built = match loaded.system.mode() {
        Mode::FullLine => constructor::construct(
            &loaded.system,
            &loaded.bounds,
            &loaded.perturbation,
            &options,
        )?,
        Mode::HalfLine => check_theorem_n(
            &loaded.system,
            &loaded.bounds,
            &loaded.perturbation,
            Some(&options),
        )?
        .construction
        .expect("options given"),
    };
    if !built.pass() {
        cert.verdict = Verdict::Inconsistent;
        for r in built.residuals.iter().filter(|r| !r.pass) {
            cert.failed.push(r.identity.clone());
        }
        if !built.ranks_preserved {
            cert.failed.push(constructor::ID_RANK.to_string());
        }
    }
    cert.construction = Some(ConstructionSection::new(&built));
    Ok(cert)
}

/// Closed-form threshold for the declared envelope only.
pub fn corollary(loaded: &Loaded, settings: &Settings) -> Result<Certificate> {
    if loaded.envelope.is_none() {
        return Err(Error::Document(
            "the corollary command needs a perturb_envelope".into(),
        ));
    }
    let mut cert = Certificate::empty("corollary", loaded, settings);
    corollary_section(&mut cert, loaded, settings)?;
    Ok(cert)
}

fn pair(at: (i64, i64)) -> String {
    format!("({}, {})", at.0, at.1)
}

fn opt_pair(at: Option<(i64, i64)>) -> String {
    at.map_or_else(|| "-".to_string(), pair)
}

fn render_text(c: &Certificate) -> String {
    let mut s = String::new();
    let verdict = match c.verdict {
        Verdict::Pass => "PASS",
        Verdict::HypothesisFailure => "FAIL (hypothesis)",
        Verdict::Inconsistent => "FAIL (construction inconsistent)",
    };
    let _ = writeln!(s, "command: {}", c.command);
    let _ = writeln!(s, "verdict: {verdict}");
    let _ = writeln!(
        s,
        "system: dim {}, window [{}, {}] ({}), bounds {}",
        c.dim,
        c.window.n_min,
        c.window.n_max,
        c.window.mode.symbol(),
        c.bounds_family
    );
    if let Some(sp) = &c.splitting {
        let _ = writeln!(
            s,
            "splitting: {} (idempotence {:e} at {}, S1 {:e} at {}, S2 {:e} at {}, S3 min singular value {:e} at {})",
            if sp.pass { "pass" } else { "fail" },
            sp.projection_defect,
            sp.projection_at,
            sp.s1_residual,
            pair(sp.s1_at),
            sp.s2_residual,
            pair(sp.s2_at),
            sp.s3_min_singular_value,
            pair(sp.s3_at)
        );
    }
    if let Some(d) = &c.dichotomy {
        let _ = writeln!(
            s,
            "dichotomy: {} (D1 worst margin {:e} at {}, D2 worst margin {:e} at {})",
            if d.pass { "pass" } else { "fail" },
            d.d1_worst_margin,
            pair(d.d1_at),
            d.d2_worst_margin,
            pair(d.d2_at)
        );
    }
    if let Some(r) = &c.ratio_hypothesis {
        let _ = writeln!(
            s,
            "ratio hypotheses: {} (analytic {}, a-ratio window sup {}, b-ratio window sup {})",
            if r.pass { "pass" } else { "fail" },
            r.analytic,
            r.a_ratio_window_sup,
            r.b_ratio_window_sup
        );
    }
    if let Some(r) = &c.robustness {
        let sigma = r.sigma.map_or_else(|| "-".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "robustness: lambda {} at {}, mu {} at {}, max {}, sigma {}",
            r.lambda_sup,
            opt_pair(r.lambda_at),
            r.mu_sup,
            opt_pair(r.mu_at),
            r.max,
            sigma
        );
    }
    if let Some(h) = &c.half_line {
        let _ = writeln!(
            s,
            "half-line extension: padding {}, extended max {}, bitwise agreement {}",
            h.padding, h.extended.max, h.bitwise_agreement
        );
    }
    if let Some(e) = &c.envelope_check {
        let _ = writeln!(
            s,
            "envelope: {} (worst ‖B_n‖/envelope {} at {})",
            if e.pass { "pass" } else { "fail" },
            e.worst_ratio,
            e.at.map_or_else(|| "-".to_string(), |k| k.to_string())
        );
    }
    if let Some(k) = &c.corollary {
        let sigma = k.sigma_factor.map_or_else(|| "-".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "corollary: {:?} theta in [{}, {}], sigma factor {}, cap {}",
            k.kind, k.theta.lower, k.theta.upper, sigma, k.series_cap
        );
        for cond in &k.conditions {
            let _ = writeln!(
                s,
                "  {} {} (margin {})",
                if cond.pass { "ok  " } else { "FAIL" },
                cond.name,
                cond.margin
            );
        }
    }
    if let Some(b) = &c.construction {
        let _ = writeln!(
            s,
            "construction: sigma {}, identity tolerance {:e}, ranks preserved {}",
            b.sigma, b.identity_tolerance, b.ranks_preserved
        );
        if let Some(p) = &b.picard {
            let _ = writeln!(
                s,
                "  picard: max iterations {}, max agreement {:?}, max contraction ratio {:?}",
                p.max_iterations, p.max_agreement, p.max_contraction_ratio
            );
        }
        for r in &b.residuals {
            let _ = writeln!(
                s,
                "  {} {} residual {:e} (tol {:e}) at {:?}",
                if r.pass { "ok  " } else { "FAIL" },
                r.identity,
                r.residual,
                r.tolerance,
                r.at
            );
        }
        for (n, rows) in &b.p_hat {
            let _ = writeln!(s, "  P̂_{n} = {rows:?}");
        }
    }
    for f in &c.failed {
        let _ = writeln!(s, "failed: {f}");
    }
    for n in &c.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}
