//! JSON chain-spec files.
//!
//! Either an explicit chain
//! `{"label": "...", "Q": [[...], ...], "f": [...], "pi": [...]}`
//! (`f` defaults to all ones, `pi` is solved for when absent) or a built-in
//! family `{"family": "example21" | "example22" | "birth_death", ...}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chain::{
    build_birth_death, build_example21, build_example22, ChainSpec, Distribution, RateMatrix,
    Validation, WeightFunction,
};
use crate::error::{ErgoError, Result};
use crate::tol::Tolerances;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitChain {
    #[serde(default)]
    pub label: String,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyChain {
    Example21 {
        pi: Vec<f64>,
        beta: f64,
    },
    Example22 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f: Option<Vec<f64>>,
    },
    BirthDeath {
        birth: Vec<f64>,
        death: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ChainFile {
    Explicit(ExplicitChain),
    Family(FamilyChain),
}

fn check_finite(v: &Value, path: &str) -> Result<()> {
    match v {
        Value::Number(n) if n.as_f64().is_none_or(|x| !x.is_finite()) => {
            Err(ErgoError::Parse(format!("{path}: number out of range")))
        }
        Value::Array(a) => a
            .iter()
            .enumerate()
            .try_for_each(|(k, x)| check_finite(x, &format!("{path}[{k}]"))),
        Value::Object(o) => o
            .iter()
            .try_for_each(|(k, x)| check_finite(x, &format!("{path}.{k}"))),
        _ => Ok(()),
    }
}

impl ChainFile {
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ErgoError::Parse(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(obj) = &value else {
            return Err(ErgoError::Parse("chain spec must be a JSON object".into()));
        };
        check_finite(&value, "$")?;
        let parsed = if obj.contains_key("family") {
            serde_json::from_value(value).map(ChainFile::Family)
        } else {
            serde_json::from_value(value).map(ChainFile::Explicit)
        };
        parsed.map_err(|e| ErgoError::Parse(e.to_string()))
    }

    /// Explicit form of an existing spec, including its stationary law.
    pub fn from_spec(spec: &ChainSpec) -> Self {
        ChainFile::Explicit(ExplicitChain {
            label: spec.label.clone(),
            q: spec.rate_matrix().to_rows(),
            f: Some(spec.weight().as_slice().to_vec()),
            pi: Some(spec.stationary().as_slice().to_vec()),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain files always serialize")
    }

    pub fn build(&self) -> Result<ChainSpec> {
        self.build_with(&Tolerances::default())
    }

    pub fn build_with(&self, tol: &Tolerances) -> Result<ChainSpec> {
        let weight = |f: &Option<Vec<f64>>| f.clone().map(WeightFunction::new).transpose();
        match self {
            ChainFile::Explicit(e) => {
                let n = e.q.len();
                if let Some(row) = e.q.iter().find(|r| r.len() != n) {
                    return Err(ErgoError::NotSquare {
                        rows: n,
                        cols: row.len(),
                    });
                }
                let m = nalgebra::DMatrix::from_fn(n, n, |i, j| e.q[i][j]);
                let q = RateMatrix::validate(m, Validation::Strict, tol)?;
                let f = weight(&e.f)?.unwrap_or_else(|| WeightFunction::ones(n));
                let pi = e.pi.clone().map(Distribution::new).transpose()?;
                let label = if e.label.is_empty() {
                    format!("chain(n={n})")
                } else {
                    e.label.clone()
                };
                ChainSpec::with_tolerances(label, q, f, pi, tol)
            }
            ChainFile::Family(FamilyChain::Example21 { pi, beta }) => {
                build_example21(&Distribution::new(pi.clone())?, *beta)
            }
            ChainFile::Family(FamilyChain::Example22 { f }) => build_example22(weight(f)?),
            ChainFile::Family(FamilyChain::BirthDeath { birth, death, f }) => {
                build_birth_death(birth, death, weight(f)?)
            }
        }
    }
}

pub fn load_str(text: &str) -> Result<ChainSpec> {
    ChainFile::parse(text)?.build()
}
