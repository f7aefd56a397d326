//! The scenario file format: a UTF-8 JSON document whose function fields are
//! expression strings, with strict validation and canonical round-tripping.
//!
//! Top-level keys are exactly `{name, x_law, u_law, mu0, mu1, pi0, metadata?}`;
//! anything else is rejected. Three scenarios ship built in (`toy`,
//! `table1-witness`, `expertise-witness`) so every experiment runs without an
//! authored file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr;
use crate::scenario::{ConfounderLaw, CovariateLaw, ScenarioModel, WeightedPoint};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDoc {
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum XLawDoc {
    Uniform { lo: f64, hi: f64 },
    Discrete { points: Vec<PointDoc> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ULawDoc {
    pub levels: Vec<PointDoc>,
}

/// The declarative scenario document as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub name: String,
    pub x_law: XLawDoc,
    pub u_law: ULawDoc,
    pub mu0: String,
    pub mu1: String,
    pub pi0: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
}

fn parse_field(field: &str, source: &str) -> Result<expr::Expr> {
    expr::parse(source).map_err(|e| Error::Validation(format!("{field}: {e}")))
}

impl ScenarioDocument {
    /// Validate the document into a model.
    pub fn into_model(self) -> Result<ScenarioModel> {
        let x_law = match self.x_law {
            XLawDoc::Uniform { lo, hi } => CovariateLaw::Uniform { lo, hi },
            XLawDoc::Discrete { points } => CovariateLaw::Discrete {
                points: points
                    .into_iter()
                    .map(|p| WeightedPoint { value: p.value, weight: p.weight })
                    .collect(),
            },
        };
        let u_law = ConfounderLaw {
            levels: self
                .u_law
                .levels
                .into_iter()
                .map(|p| WeightedPoint { value: p.value, weight: p.weight })
                .collect(),
        };
        ScenarioModel::new(
            self.name,
            x_law,
            u_law,
            parse_field("mu0", &self.mu0)?,
            parse_field("mu1", &self.mu1)?,
            parse_field("pi0", &self.pi0)?,
            self.metadata.unwrap_or_default(),
        )
    }

    /// Canonical document for a model: expressions in canonical form, laws
    /// and metadata echoed.
    pub fn from_model(model: &ScenarioModel) -> ScenarioDocument {
        let x_law = match model.x_law() {
            CovariateLaw::Uniform { lo, hi } => XLawDoc::Uniform { lo: *lo, hi: *hi },
            CovariateLaw::Discrete { points } => XLawDoc::Discrete {
                points: points.iter().map(|p| PointDoc { value: p.value, weight: p.weight }).collect(),
            },
        };
        let u_law = ULawDoc {
            levels: model
                .u_law()
                .levels
                .iter()
                .map(|p| PointDoc { value: p.value, weight: p.weight })
                .collect(),
        };
        ScenarioDocument {
            name: model.name().to_string(),
            x_law,
            u_law,
            mu0: model.mu0().to_string(),
            mu1: model.mu1().to_string(),
            pi0: model.pi0().to_string(),
            metadata: if model.metadata().is_empty() {
                None
            } else {
                Some(model.metadata().clone())
            },
        }
    }
}

/// Parse and validate a scenario from JSON text.
pub fn parse_scenario(text: &str) -> Result<ScenarioModel> {
    let doc: ScenarioDocument = serde_json::from_str(text)?;
    doc.into_model()
}

/// Load and validate a scenario from a file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioModel> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Serialize a model to its canonical document text: stable key order,
/// canonical expression strings, shortest round-trip number literals.
pub fn dump_scenario(model: &ScenarioModel) -> String {
    let doc = ScenarioDocument::from_model(model);
    let mut text = serde_json::to_string_pretty(&doc).expect("documents always serialize");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// Built-in scenarios
// ---------------------------------------------------------------------------

const TOY: &str = r#"{
  "name": "toy",
  "x_law": { "kind": "uniform", "lo": 0.0, "hi": 1.0 },
  "u_law": { "levels": [] },
  "mu0": "x",
  "mu1": "(0.7 - x)^2",
  "pi0": "x"
}"#;

const TABLE1_WITNESS: &str = r#"{
  "name": "table1-witness",
  "x_law": { "kind": "discrete", "points": [ { "value": 0.0, "weight": 1.0 } ] },
  "u_law": { "levels": [] },
  "mu0": "0.8",
  "mu1": "0.2",
  "pi0": "1/3",
  "metadata": { "comparator": "gt", "theta": "0.5" }
}"#;

const EXPERTISE_WITNESS: &str = r#"{
  "name": "expertise-witness",
  "x_law": { "kind": "discrete", "points": [ { "value": 0.0, "weight": 1.0 } ] },
  "u_law": { "levels": [ { "value": 0.0, "weight": 0.5 }, { "value": 1.0, "weight": 0.5 } ] },
  "mu0": "0.9 - 0.8*u",
  "mu1": "0.1 + 0.4*u",
  "pi0": "0.5",
  "metadata": { "pi0_skilled": "0.9 - 0.8*u", "theta": "0.3" }
}"#;

/// Names of the scenarios shipped in the binary.
pub const BUILTIN_NAMES: [&str; 3] = ["toy", "table1-witness", "expertise-witness"];

/// A built-in scenario by name, if one exists.
pub fn builtin(name: &str) -> Option<Result<ScenarioModel>> {
    let text = match name {
        "toy" => TOY,
        "table1-witness" => TABLE1_WITNESS,
        "expertise-witness" => EXPERTISE_WITNESS,
        _ => return None,
    };
    Some(parse_scenario(text))
}

/// Resolve a scenario argument: built-in names take precedence, anything
/// else is read as a file path.
pub fn resolve_scenario(spec: &str) -> Result<ScenarioModel> {
    match builtin(spec) {
        Some(model) => model,
        None => load_scenario(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{score_from, Policy};

    #[test]
    fn builtin_toy_reproduces_the_closed_forms() {
        let m = builtin("toy").unwrap().unwrap();
        let s = score_from(&m, &Policy::baseline(&m));
        assert!((s.eval(0.5) - 0.27).abs() < 1e-15);
        assert_eq!(m.name(), "toy");
    }

    #[test]
    fn builtin_witnesses_load() {
        let m = builtin("table1-witness").unwrap().unwrap();
        let s = score_from(&m, &Policy::baseline(&m));
        assert!((s.eval(0.0) - 0.6).abs() < 1e-12);

        let m = builtin("expertise-witness").unwrap().unwrap();
        assert_eq!(m.u_law().levels.len(), 2);
        assert_eq!(m.metadata().get("pi0_skilled").unwrap(), "0.9 - 0.8*u");
        assert!(builtin("nonsense").is_none());
    }

    #[test]
    fn out_of_range_function_is_rejected_with_its_name() {
        let text = r#"{
            "name": "bad", "x_law": {"kind": "uniform", "lo": 0, "hi": 1},
            "u_law": {"levels": []}, "mu0": "x", "mu1": "1.5", "pi0": "x"
        }"#;
        let err = parse_scenario(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mu1"), "{msg}");
    }

    #[test]
    fn unbound_confounder_reference_is_rejected() {
        let text = r#"{
            "name": "bad", "x_law": {"kind": "uniform", "lo": 0, "hi": 1},
            "u_law": {"levels": []}, "mu0": "x", "mu1": "0.5*u", "pi0": "x"
        }"#;
        assert!(parse_scenario(text).is_err());
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let text = r#"{
            "name": "bad", "x_law": {"kind": "uniform", "lo": 0, "hi": 1},
            "u_law": {"levels": []}, "mu0": "x", "mu1": "x", "pi0": "x",
            "extra": 1
        }"#;
        assert!(matches!(parse_scenario(text).unwrap_err(), Error::Json(_)));
        assert!(matches!(parse_scenario("not json").unwrap_err(), Error::Json(_)));
    }

    #[test]
    fn dump_then_load_is_grid_identical() {
        let m = builtin("toy").unwrap().unwrap();
        let text = dump_scenario(&m);
        let m2 = parse_scenario(&text).unwrap();
        for x in m.x_law().validation_grid() {
            let a = m.mu1().eval(x, None);
            let b = m2.mu1().eval(x, None);
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // canonicalization is idempotent
        assert_eq!(text, dump_scenario(&m2));
    }

    #[test]
    fn key_order_and_literal_spelling_are_canonicalized()  {
        let shuffled = r#"{
            "pi0": "x", "mu1": "(0.70 - x)^2", "mu0": "x",
            "u_law": {"levels": []},
            "x_law": {"hi": 1.0, "kind": "uniform", "lo": 0.0},
            "name": "toy"
        }"#;
        let m = parse_scenario(shuffled).unwrap();
        let canonical = dump_scenario(&builtin("toy").unwrap().unwrap());
        assert_eq!(dump_scenario(&m), canonical);
        assert!(canonical.contains("(0.7 - x)^2"));
    }

    #[test]
    fn discrete_law_documents_validate_weights() {
        let text = r#"{
            "name": "bad",
            "x_law": {"kind": "discrete", "points": [{"value": 0.0, "weight": 0.4}, {"value": 1.0, "weight": 0.4}]},
            "u_law": {"levels": []}, "mu0": "x", "mu1": "x", "pi0": "0.5"
        }"#;
        assert!(matches!(parse_scenario(text).unwrap_err(), Error::Validation(_)));
    }

    #[test]
    fn resolve_prefers_builtins_then_paths() {
        assert!(resolve_scenario("toy").is_ok());
        assert!(matches!(resolve_scenario("no-such-file.json").unwrap_err(), Error::Io(_)));
    }
}
