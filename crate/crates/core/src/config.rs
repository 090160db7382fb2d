//! JSON file formats for systems, observers and scenarios.
//!
//! Matrices are row-major arrays of rows. Complex poles are `[re, im]` pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Complex64};
use crate::system_model::{LtiSystem, LtvCanonicalSystem, RelativeDegreeProfile};
use crate::time_expr::SourceExpr;
use crate::uio_synth::{Design, FunctionalObserverRealization, QMode};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Lti {
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
        #[serde(rename = "C")]
        c: Rows,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_override: Option<Vec<usize>>,
    },
    LtvChain {
        n: usize,
        c: Vec<SourceExpr>,
    },
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("system file: {e}")))
    }

    pub fn lti(sys: &LtiSystem, r_override: Option<Vec<usize>>) -> Self {
        SystemSpec::Lti {
            a: linalg::matrix_to_rows(&sys.a),
            b: linalg::matrix_to_rows(&sys.b),
            c: linalg::matrix_to_rows(&sys.c),
            r_override,
        }
    }
}

pub fn lti_from_rows(a: &Rows, b: &Rows, c: &Rows) -> Result<LtiSystem> {
    LtiSystem::new(
        linalg::matrix_from_rows("A", a)?,
        linalg::matrix_from_rows("B", b)?,
        linalg::matrix_from_rows("C", c)?,
    )
}

pub fn ltv_from_spec(n: usize, c: &[SourceExpr]) -> Result<LtvCanonicalSystem> {
    LtvCanonicalSystem::new(n, c.to_vec())
}

/// Plant matrices embedded in an observer file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiPlantFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiObserverFile {
    pub system: LtiPlantFile,
    pub r: Vec<usize>,
    pub mode: QMode,
    pub poles: Vec<[f64; 2]>,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "M")]
    pub m: Rows,
    #[serde(rename = "L")]
    pub l: Rows,
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    /// Column `i` is `F^(r_i) G e_i`, stored row-major (n x l).
    #[serde(rename = "Gamma")]
    pub gamma: Rows,
    /// Column `i` is `Q F^(r_i - 1) G e_i`, stored row-major (q x l).
    #[serde(rename = "Theta")]
    pub theta: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtvObserverFile {
    pub n: usize,
    pub beta: usize,
    pub c: Vec<SourceExpr>,
    #[serde(rename = "Q")]
    pub q: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ObserverFile {
    LtiUio(LtiObserverFile),
    LtvGpebo(LtvObserverFile),
}

impl ObserverFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("observer file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("observer files always serialize")
    }
}

impl LtiObserverFile {
    pub fn from_design(sys: &LtiSystem, design: &Design) -> Self {
        let real = &design.realization;
        LtiObserverFile {
            system: LtiPlantFile {
                a: linalg::matrix_to_rows(&sys.a),
                b: linalg::matrix_to_rows(&sys.b),
                c: linalg::matrix_to_rows(&sys.c),
            },
            r: real.r.degrees().to_vec(),
            mode: design.mode,
            poles: design.gains.poles.iter().map(|p| [p.re, p.im]).collect(),
            g: linalg::matrix_to_rows(&design.gains.g),
            m: linalg::matrix_to_rows(&design.gains.m),
            l: linalg::matrix_to_rows(&design.gains.l),
            f: linalg::matrix_to_rows(&design.gains.f),
            q: linalg::matrix_to_rows(&real.q),
            gamma: linalg::matrix_to_rows(&real.gamma),
            theta: linalg::matrix_to_rows(&real.theta),
        }
    }

    pub fn plant(&self) -> Result<LtiSystem> {
        lti_from_rows(&self.system.a, &self.system.b, &self.system.c)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.poles
            .iter()
            .map(|p| Complex64::new(p[0], p[1]))
            .collect()
    }

    pub fn profile(&self) -> Result<RelativeDegreeProfile> {
        RelativeDegreeProfile::from_values(self.r.clone(), self.system.a.len())
    }

    pub fn matrix(&self, name: &'static str) -> Result<DMatrix<f64>> {
        let rows = match name {
            "G" => &self.g,
            "M" => &self.m,
            "L" => &self.l,
            "F" => &self.f,
            "Q" => &self.q,
            "Gamma" => &self.gamma,
            "Theta" => &self.theta,
            _ => return Err(Error::InvalidArgument(format!("no matrix named {name}"))),
        };
        linalg::matrix_from_rows(name, rows)
    }

    /// Rebuilds the realization from `F`, `L`, `G`, `Q` and `r` as stored.
    /// `Gamma` and `Theta` are recomputed, no design condition is checked.
    pub fn realization(&self) -> Result<FunctionalObserverRealization> {
        FunctionalObserverRealization::assemble(
            self.matrix("F")?,
            self.matrix("L")?,
            self.matrix("G")?,
            self.matrix("Q")?,
            self.profile()?,
        )
    }
}

/// Initial auxiliary state: `"zero"`, `"match"` (reproduce `xhat0` at
/// `t = 0`), or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZInitSpec {
    Keyword(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantMatrices {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<ZInitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xhat0: Option<Vec<f64>>,
    /// Unknown inputs of an LTI plant, one expression per input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<SourceExpr>>,
    /// Input of a time-varying chain plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<SourceExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi0: Option<Vec<f64>>,
    /// True plant of a time-varying scenario; the bare chain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantMatrices>,
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decimation: Option<usize>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("scenario file: {e}")))
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }

    pub fn xhat0(&self) -> Option<DVector<f64>> {
        self.xhat0.clone().map(DVector::from_vec)
    }

    /// Inputs of an `m`-input plant; zero when not given.
    pub fn inputs(&self, m: usize) -> Result<Vec<SourceExpr>> {
        match &self.f {
            Some(f) if f.len() == m => Ok(f.clone()),
            Some(f) => Err(Error::Dimension(format!(
                "scenario gives {} input expressions, plant has {m} inputs",
                f.len()
            ))),
            None => Ok(vec![SourceExpr::parse("0")?; m]),
        }
    }

    pub fn z_init(&self) -> Result<crate::sim_engine::ZInit> {
        use crate::sim_engine::ZInit;
        match &self.z0 {
            None => Ok(ZInit::Zero),
            Some(ZInitSpec::Keyword(k)) if k == "zero" => Ok(ZInit::Zero),
            Some(ZInitSpec::Keyword(k)) if k == "match" => {
                let xhat0 = self
                    .xhat0()
                    .ok_or_else(|| Error::InvalidArgument("z0 = \"match\" needs xhat0".into()))?;
                Ok(ZInit::MatchEstimate(xhat0))
            }
            Some(ZInitSpec::Keyword(k)) => Err(Error::InvalidArgument(format!(
                "unknown z0 policy `{k}` (expected zero, match or a vector)"
            ))),
            Some(ZInitSpec::Values(v)) => Ok(ZInit::Explicit(DVector::from_vec(v.clone()))),
        }
    }
}
