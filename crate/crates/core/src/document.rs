//! JSON input documents: system, bounds, perturbation, optional envelope.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundFamily, DichotomyBounds, PerturbEnvelope, Rates, Sequence};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::robustness::Perturbation;
use crate::system::{Mode, System, TimeWindow};

pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub min: i64,
    pub max: i64,
    pub mode: Mode,
}

/// A matrix per index: `overrides[n]` if present, otherwise `default`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSequence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Rows>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<i64, Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundsSpec {
    ExpZ {
        #[serde(rename = "D")]
        d: f64,
        a: f64,
        b: f64,
        eps: f64,
    },
    PolyZ {
        #[serde(rename = "D")]
        d: f64,
        a: f64,
        b: f64,
        eps: f64,
    },
    MuNu {
        #[serde(rename = "D")]
        d: f64,
        a: f64,
        b: f64,
        eps: f64,
        mu: Sequence,
        nu: Sequence,
    },
    ExpN {
        #[serde(rename = "D")]
        d: f64,
        a: f64,
        b: f64,
        eps: f64,
    },
    PolyRatioN {
        #[serde(rename = "D")]
        d: f64,
        a: f64,
        b: f64,
        eps: f64,
    },
    PolyShiftN {
        #[serde(rename = "D")]
        d: f64,
        a: f64,
        b: f64,
        eps: f64,
    },
    ProductForm {
        a_seq: Sequence,
        b_seq: Sequence,
        c_seq: Sequence,
    },
    /// Entries `[m, n, value]`.
    Tabulated {
        a: Vec<(i64, i64, f64)>,
        b: Vec<(i64, i64, f64)>,
    },
}

impl BoundsSpec {
    pub fn build(&self) -> Result<BoundFamily> {
        match self.clone() {
            BoundsSpec::ExpZ { d, a, b, eps } => BoundFamily::exp_z(d, a, b, eps),
            BoundsSpec::PolyZ { d, a, b, eps } => BoundFamily::poly_z(d, a, b, eps),
            BoundsSpec::MuNu {
                d,
                a,
                b,
                eps,
                mu,
                nu,
            } => BoundFamily::mu_nu(d, a, b, eps, mu, nu),
            BoundsSpec::ExpN { d, a, b, eps } => BoundFamily::exp_n(d, a, b, eps),
            BoundsSpec::PolyRatioN { d, a, b, eps } => BoundFamily::poly_ratio_n(d, a, b, eps),
            BoundsSpec::PolyShiftN { d, a, b, eps } => BoundFamily::poly_shift_n(d, a, b, eps),
            BoundsSpec::ProductForm {
                a_seq,
                b_seq,
                c_seq,
            } => BoundFamily::product_form(a_seq, b_seq, c_seq),
            BoundsSpec::Tabulated { a, b } => BoundFamily::tabulated(
                a.into_iter().map(|(m, n, v)| ((m, n), v)),
                b.into_iter().map(|(m, n, v)| ((m, n), v)),
            ),
        }
    }
}

impl From<&BoundFamily> for BoundsSpec {
    fn from(family: &BoundFamily) -> Self {
        let unpack = |r: &Rates| (r.d, r.a, r.b, r.eps);
        match family {
            BoundFamily::ExpZ(r) => {
                let (d, a, b, eps) = unpack(r);
                BoundsSpec::ExpZ { d, a, b, eps }
            }
            BoundFamily::PolyZ(r) => {
                let (d, a, b, eps) = unpack(r);
                BoundsSpec::PolyZ { d, a, b, eps }
            }
            BoundFamily::MuNu { rates, mu, nu } => {
                let (d, a, b, eps) = unpack(rates);
                BoundsSpec::MuNu {
                    d,
                    a,
                    b,
                    eps,
                    mu: mu.clone(),
                    nu: nu.clone(),
                }
            }
            BoundFamily::ExpN(r) => {
                let (d, a, b, eps) = unpack(r);
                BoundsSpec::ExpN { d, a, b, eps }
            }
            BoundFamily::PolyRatioN(r) => {
                let (d, a, b, eps) = unpack(r);
                BoundsSpec::PolyRatioN { d, a, b, eps }
            }
            BoundFamily::PolyShiftN(r) => {
                let (d, a, b, eps) = unpack(r);
                BoundsSpec::PolyShiftN { d, a, b, eps }
            }
            BoundFamily::ProductForm {
                a_seq,
                b_seq,
                c_seq,
            } => BoundsSpec::ProductForm {
                a_seq: a_seq.clone(),
                b_seq: b_seq.clone(),
                c_seq: c_seq.clone(),
            },
            BoundFamily::Tabulated { a, b } => BoundsSpec::Tabulated {
                a: a.iter().map(|(&(m, n), &v)| (m, n, v)).collect(),
                b: b.iter().map(|(&(m, n), &v)| (m, n, v)).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub entries: BTreeMap<i64, Rows>,
    /// `B_k = envelope(k)·Id` across the window, from `perturb_envelope`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub envelope_scalar: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub dim: usize,
    pub window: WindowSpec,
    pub operators: MatrixSequence,
    pub projections: MatrixSequence,
    pub bounds: BoundsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_envelope: Option<PerturbEnvelope>,
}

/// A validated document.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub system: System,
    pub bounds: BoundFamily,
    pub perturbation: Perturbation,
    pub envelope: Option<PerturbEnvelope>,
}

fn matrix(dim: usize, rows: &Rows, what: &str) -> Result<Matrix> {
    let m = linalg::from_rows(rows)
        .ok_or_else(|| Error::Document(format!("{what}: rows have unequal lengths")))?;
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::Document(format!(
            "{what}: expected {dim}x{dim}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !linalg::is_finite(&m) {
        return Err(Error::Document(format!("{what}: non-finite entry")));
    }
    Ok(m)
}

impl MatrixSequence {
    fn expand(&self, dim: usize, indices: std::ops::Range<i64>, what: &str) -> Result<Vec<Matrix>> {
        for &n in self.overrides.keys() {
            if !indices.contains(&n) {
                return Err(Error::Document(format!(
                    "{what}: override at {n} outside [{}, {}]",
                    indices.start,
                    indices.end - 1
                )));
            }
        }
        let default = self
            .default
            .as_ref()
            .map(|rows| matrix(dim, rows, &format!("{what}.default")))
            .transpose()?;
        indices
            .map(|n| match (self.overrides.get(&n), &default) {
                (Some(rows), _) => matrix(dim, rows, &format!("{what}[{n}]")),
                (None, Some(m)) => Ok(m.clone()),
                (None, None) => Err(Error::Document(format!(
                    "{what}: no matrix for index {n} and no default"
                ))),
            })
            .collect()
    }

    /// Every matrix listed as an override, in index order.
    pub fn explicit(matrices: &[Matrix], first: i64) -> Self {
        Self {
            default: None,
            overrides: matrices
                .iter()
                .enumerate()
                .map(|(i, m)| (first + i as i64, linalg::to_rows(m)))
                .collect(),
        }
    }
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn from_parts(
        system: &System,
        bounds: &BoundFamily,
        perturbation: &Perturbation,
        envelope: Option<&PerturbEnvelope>,
    ) -> Self {
        let w = system.window();
        let perturbation = (!perturbation.is_zero()).then(|| PerturbationSpec {
            entries: perturbation
                .entries()
                .iter()
                .map(|(&k, b)| (k, linalg::to_rows(b)))
                .collect(),
            envelope_scalar: false,
        });
        Self {
            dim: system.dim(),
            window: WindowSpec {
                min: w.n_min,
                max: w.n_max,
                mode: w.mode,
            },
            operators: MatrixSequence::explicit(system.operators(), w.n_min),
            projections: MatrixSequence::explicit(system.projections(), w.n_min),
            bounds: BoundsSpec::from(bounds),
            perturbation,
            perturb_envelope: envelope.cloned(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("documents serialize");
        text.push('\n');
        text
    }

    pub fn load(&self) -> Result<Loaded> {
        if self.dim == 0 {
            return Err(Error::Document("dim must be positive".into()));
        }
        let window = TimeWindow::new(self.window.min, self.window.max, self.window.mode)
            .map_err(|e| Error::Document(format!("window: {e}")))?;
        let operators = self
            .operators
            .expand(self.dim, window.n_min..window.n_max, "operators")?;
        let projections =
            self.projections
                .expand(self.dim, window.n_min..window.n_max + 1, "projections")?;
        let system = System::new(self.dim, window, operators, projections)?;

        let bounds = self.bounds.build()?;
        if let Some(mode) = bounds.native_mode() {
            if mode != window.mode {
                return Err(Error::Document(format!(
                    "bounds family '{}' lives on {} but the window mode is {}",
                    bounds.family_name(),
                    mode.symbol(),
                    window.mode.symbol()
                )));
            }
        }

        let envelope = self.perturb_envelope.clone();
        let perturbation = match &self.perturbation {
            None => Perturbation::zero(self.dim),
            Some(spec) if spec.envelope_scalar => {
                if !spec.entries.is_empty() {
                    return Err(Error::Document(
                        "perturbation: give either entries or envelope_scalar, not both".into(),
                    ));
                }
                let env = envelope.as_ref().ok_or_else(|| {
                    Error::Document("perturbation.envelope_scalar needs perturb_envelope".into())
                })?;
                Perturbation::from_envelope(self.dim, &bounds, env, &window)?
            }
            Some(spec) => {
                let entries = spec
                    .entries
                    .iter()
                    .map(|(&k, rows)| Ok((k, matrix(self.dim, rows, &format!("perturbation[{k}]"))?)))
                    .collect::<Result<Vec<_>>>()?;
                Perturbation::new(self.dim, entries)?
            }
        };
        perturbation
            .check_window(&window)
            .map_err(|e| Error::Document(format!("perturbation: {e}")))?;
        Ok(Loaded {
            system,
            bounds,
            perturbation,
            envelope,
        })
    }
}
