//! JSON model files.
//!
//! ```json
//! {
//!   "states": [1, 2],
//!   "actions": [[0], [0]],
//!   "rates": [[1, 0, 2, 3.0]],
//!   "costs": [[[1, 0, 5.0], [2, 0, "inf"]]],
//!   "alpha": 1.0,
//!   "bounds": [],
//!   "initial": 1
//! }
//! ```
//!
//! A `"family"` block may replace `"rates"` (and make `"states"`/`"actions"`
//! optional). Unknown keys are rejected.

use super::family::{Boundary, FamilyKind, ModelFamily, RateLaw};
use super::{CostEntry, CtmdpModel, ModelError, ModelParts, RateEntry, RateKernel, StateId};
use crate::conditions::CertificateFile;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;

/// A state label as written in JSON: integer or string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(i64),
    Text(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(i) => write!(f, "{i}"),
            Label::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        match s.parse::<i64>() {
            Ok(i) if i.to_string() == s => Label::Int(i),
            _ => Label::Text(s.to_string()),
        }
    }
}

/// Cost value: a number or the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostValue {
    Num(f64),
    Text(String),
}

impl CostValue {
    fn to_f64(&self) -> Result<f64, ModelError> {
        match self {
            CostValue::Num(v) => Ok(*v),
            CostValue::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
                other => Err(ModelError::Schema(format!("cost value {other:?} is neither a number nor \"inf\""))),
            },
        }
    }

}

impl From<f64> for CostValue {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            CostValue::Text("inf".into())
        } else {
            CostValue::Num(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth: Option<RateLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death: Option<RateLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<(usize, usize, f64)>>,
    pub truncation: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl FamilyFile {
    fn to_family(&self) -> Result<ModelFamily, ModelError> {
        let need = |law: &Option<RateLaw>, what: &str| {
            law.ok_or_else(|| ModelError::Schema(format!("family {:?} needs {what:?}", self.kind)))
        };
        let kind = match self.kind.as_str() {
            "pure_birth" => FamilyKind::PureBirth {
                birth: need(&self.birth, "birth")?,
            },
            "birth_death" => FamilyKind::BirthDeath {
                birth: need(&self.birth, "birth")?,
                death: need(&self.death, "death")?,
            },
            "explicit" => FamilyKind::Explicit {
                rates: self
                    .rates
                    .clone()
                    .ok_or_else(|| ModelError::Schema("explicit family needs \"rates\"".into()))?,
            },
            other => return Err(ModelError::Schema(format!("unknown family kind {other:?}"))),
        };
        Ok(ModelFamily {
            kind,
            truncation: self.truncation,
            boundary: self.boundary,
        })
    }
}

/// On-disk model schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Label>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<(Label, usize, Label, f64)>>,
    pub costs: Vec<Vec<(Label, usize, CostValue)>>,
    pub alpha: f64,
    #[serde(default)]
    pub bounds: Vec<f64>,
    pub initial: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateFile>,
    /// Informational: label of the cemetery state in transformed models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_state: Option<Label>,
    /// Informational: cost shift of transformed models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: CtmdpModel,
    pub family: Option<ModelFamily>,
    pub certificate: Option<CertificateFile>,
}

fn classify(e: serde_json::Error) -> ModelError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => ModelError::Schema(e.to_string()),
        _ => ModelError::Parse(e.to_string()),
    }
}

/// Parses a model file. `truncation` overrides a family's truncation level.
pub fn parse_model(text: &str, truncation: Option<usize>) -> Result<LoadedModel, ModelError> {
    let file: ModelFile = serde_json::from_str(text).map_err(classify)?;
    from_file(file, truncation)
}

/// Reads and parses a model file.
pub fn load_model_file(path: impl AsRef<Path>, truncation: Option<usize>) -> Result<LoadedModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text, truncation)
}

/// Reads a model file and returns the validated model.
pub fn load_model(path: impl AsRef<Path>) -> Result<CtmdpModel, ModelError> {
    load_model_file(path, None).map(|l| l.model)
}

fn from_file(file: ModelFile, truncation: Option<usize>) -> Result<LoadedModel, ModelError> {
    let family = match &file.family {
        Some(ff) => {
            if file.rates.is_some() {
                return Err(ModelError::Schema("\"family\" and \"rates\" are mutually exclusive".into()));
            }
            let mut f = ff.to_family()?;
            if let Some(m) = truncation {
                f.truncation = m;
            }
            Some(f)
        }
        None => None,
    };

    let (labels, family_rates): (Vec<String>, Option<Vec<(usize, usize, f64)>>) = match &family {
        Some(f) => {
            let rates = f.transitions()?;
            let labels = (1..=f.truncation).map(|x| x.to_string()).collect();
            (labels, Some(rates))
        }
        None => {
            let states = file
                .states
                .as_ref()
                .ok_or_else(|| ModelError::Schema("missing field \"states\"".into()))?;
            (states.iter().map(|l| l.to_string()).collect(), None)
        }
    };
    let n = labels.len();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        if index.insert(l.as_str(), i).is_some() {
            return Err(ModelError::Schema(format!("duplicate state label {l:?}")));
        }
    }
    let lookup = |l: &Label| -> Result<usize, ModelError> {
        index
            .get(l.to_string().as_str())
            .copied()
            .ok_or_else(|| ModelError::Schema(format!("unknown state label {l}")))
    };

    let action_sets = match (&file.actions, &family) {
        (Some(a), Some(_)) if a.len() != n || a.iter().any(|acts| acts != &[0]) => {
            return Err(ModelError::Schema("family models have the single action 0 per state".into()))
        }
        (Some(a), _) => a.clone(),
        (None, Some(_)) => vec![vec![0]; n],
        (None, None) => return Err(ModelError::Schema("missing field \"actions\"".into())),
    };
    if action_sets.len() != n {
        return Err(ModelError::Schema(format!("{} action lists for {n} states", action_sets.len())));
    }

    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    match family_rates {
        Some(rates) => {
            for (x, y, rate) in rates {
                entries.push(RateEntry { x: x - 1, action: 0, y: y - 1, rate });
            }
        }
        None => {
            let rates = file
                .rates
                .as_ref()
                .ok_or_else(|| ModelError::Schema("missing field \"rates\"".into()))?;
            for (xl, a, yl, rate) in rates {
                let (x, y) = (lookup(xl)?, lookup(yl)?);
                if *rate < 0.0 || !rate.is_finite() {
                    return Err(ModelError::Schema(format!("rate {rate} at ({xl}, {a}, {yl}) must be finite and >= 0")));
                }
                if !seen.insert((x, *a, y)) {
                    return Err(ModelError::Schema(format!("duplicate rate entry ({xl}, {a}, {yl})")));
                }
                entries.push(RateEntry { x, action: *a, y, rate: *rate });
            }
        }
    }

    let mut costs = Vec::with_capacity(file.costs.len());
    for (i, table) in file.costs.iter().enumerate() {
        let mut out = Vec::with_capacity(table.len());
        let mut keys = std::collections::HashSet::new();
        for (xl, a, v) in table {
            let x = match lookup(xl) {
                Ok(x) => x,
                // family truncation may drop labelled states
                Err(_) if family.is_some() => continue,
                Err(e) => return Err(e),
            };
            if !keys.insert((x, *a)) {
                return Err(ModelError::Schema(format!("duplicate cost c_{i} entry ({xl}, {a})")));
            }
            out.push(CostEntry { x, action: *a, value: v.to_f64()? });
        }
        costs.push(out);
    }
    let initial = lookup(&file.initial)?;

    let parts = ModelParts {
        states: labels
            .iter()
            .enumerate()
            .map(|(index, l)| StateId {
                index,
                label: Some(l.clone()),
            })
            .collect(),
        action_sets,
        rates: RateKernel { entries },
        costs,
        alpha: file.alpha,
        constraint_bounds: file.bounds.clone(),
        initial_state: initial,
    };
    Ok(LoadedModel {
        model: CtmdpModel::new(parts)?,
        family,
        certificate: file.certificate,
    })
}

/// Serializes a model in the file schema (rates listed explicitly).
pub fn model_to_json(m: &CtmdpModel) -> ModelFile {
    let lab = |x: usize| Label::from(m.label(x));
    let parts = m.to_parts();
    ModelFile {
        states: Some((0..m.n_states()).map(lab).collect()),
        actions: Some(parts.action_sets.clone()),
        rates: Some(
            parts
                .rates
                .entries
                .iter()
                .map(|e| (lab(e.x), e.action, lab(e.y), e.rate))
                .collect(),
        ),
        costs: parts
            .costs
            .iter()
            .map(|t| t.iter().map(|e| (lab(e.x), e.action, CostValue::from(e.value))).collect())
            .collect(),
        alpha: m.alpha(),
        bounds: m.constraint_bounds().to_vec(),
        initial: lab(m.initial_state()),
        family: None,
        certificate: None,
        delta_state: None,
        shift: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_state_model_has_zero_exit_rate() {
        let text = r#"{"states": ["x"], "actions": [[0]], "rates": [],
            "costs": [[["x", 0, 5.0]]], "alpha": 1.0, "initial": "x"}"#;
        let m = parse_model(text, None).unwrap().model;
        assert_eq!(m.n_states(), 1);
        assert_eq!(m.exit_rate(0, 0), 0.0);
        assert_eq!(m.cost(0, 0, 0), 5.0);
    }

    #[test]
    fn pure_birth_family_file() {
        let text = r#"{"family": {"kind": "pure_birth", "birth": {"coef": 2.0}, "truncation": 4},
            "costs": [[]], "alpha": 2.0, "initial": 1}"#;
        let m = parse_model(text, None).unwrap().model;
        assert_eq!(m.n_states(), 4);
        for x in 0..3 {
            assert_eq!(m.exit_rate(x, 0), 2.0 * (x + 1) as f64);
        }
        assert_eq!(m.exit_rate(3, 0), 0.0);
        let m6 = parse_model(text, Some(6)).unwrap().model;
        assert_eq!(m6.n_states(), 6);
    }

    #[test]
    fn negative_rate_is_schema_error() {
        let text = r#"{"states": [1, 2], "actions": [[0], [0]], "rates": [[1, 0, 2, -1.0]],
            "costs": [[]], "alpha": 1.0, "initial": 1}"#;
        assert!(matches!(parse_model(text, None), Err(ModelError::Schema(_))));
    }

    #[test]
    fn duplicate_rate_is_schema_error() {
        let text = r#"{"states": [1, 2], "actions": [[0], [0]],
            "rates": [[1, 0, 2, 1.0], [1, 0, 2, 2.0]],
            "costs": [[]], "alpha": 1.0, "initial": 1}"#;
        assert!(matches!(parse_model(text, None), Err(ModelError::Schema(_))));
    }

    #[test]
    fn unknown_key_and_missing_field_are_schema_errors() {
        let unknown = r#"{"states": [1], "actions": [[0]], "rates": [], "costs": [[]],
            "alpha": 1.0, "initial": 1, "colour": "red"}"#;
        assert!(matches!(parse_model(unknown, None), Err(ModelError::Schema(_))));
        let missing = r#"{"states": [1], "actions": [[0]], "rates": [], "costs": [[]], "initial": 1}"#;
        assert!(matches!(parse_model(missing, None), Err(ModelError::Schema(_))));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_model("{\"states\": [1,", None), Err(ModelError::Parse(_))));
    }

    #[test]
    fn infinite_costs_and_validation_errors() {
        let text = r#"{"states": [1], "actions": [[0, 1]], "rates": [],
            "costs": [[[1, 0, "inf"], [1, 1, 1.0]]], "alpha": 1.0, "initial": 1}"#;
        let m = parse_model(text, None).unwrap().model;
        assert!(m.is_forbidden(0, 0));
        assert!(!m.is_forbidden(0, 1));

        let bad_alpha = r#"{"states": [1], "actions": [[0]], "rates": [], "costs": [[]],
            "alpha": -1.0, "initial": 1}"#;
        assert!(matches!(parse_model(bad_alpha, None), Err(ModelError::Validation(_))));
    }

    #[test]
    fn written_models_load_back() {
        let text = r#"{"states": ["a", 2], "actions": [[0, 3], [0]],
            "rates": [["a", 3, 2, 0.25], [2, 0, "a", 1.5]],
            "costs": [[["a", 0, 1.0], ["a", 3, "inf"]], [[2, 0, -1.0]]],
            "alpha": 0.7, "bounds": [4.0], "initial": 2}"#;
        let m = parse_model(text, None).unwrap().model;
        let out = serde_json::to_string(&model_to_json(&m)).unwrap();
        let again = parse_model(&out, None).unwrap().model;
        assert_eq!(m, again);
    }
}
