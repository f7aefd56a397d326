//! Counterfactual primitives: the covariate law, the discrete confounder law,
//! the outcome regressions for both treatment arms, and the baseline
//! treatment propensity, plus the policies and risk scores built on them.
//!
//! A [`ScenarioModel`] is immutable once constructed and never changes across
//! deployment steps; only the policy (and hence the observable outcome
//! distribution) moves. The confounder is taken independent of the covariate,
//! which keeps every marginalization an exact weighted sum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Number of equispaced points per continuous dimension on the validation grid.
pub const VALIDATION_GRID_POINTS: usize = 1001;

/// Tolerance for range checks of expressions that must stay inside [0, 1].
pub const RANGE_TOL: f64 = 1e-9;

/// Tolerance for probability weights summing to one.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A support point with its probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub value: f64,
    pub weight: f64,
}

/// Marginal law of the observed covariate.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateLaw {
    Uniform { lo: f64, hi: f64 },
    Discrete { points: Vec<WeightedPoint> },
}

impl CovariateLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            CovariateLaw::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(Error::Validation(format!(
                        "uniform covariate law requires finite lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
            CovariateLaw::Discrete { points } => {
                validate_weighted_points(points, "x_law")?;
            }
        }
        Ok(())
    }

    /// Whether `x` lies in the support (within 1e-12 of a point for the
    /// discrete case).
    pub fn contains(&self, x: f64) -> bool {
        match self {
            CovariateLaw::Uniform { lo, hi } => x >= *lo && x <= *hi,
            CovariateLaw::Discrete { points } => {
                points.iter().any(|p| (p.value - x).abs() <= 1e-12)
            }
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            CovariateLaw::Uniform { lo, hi } => (*lo, *hi),
            CovariateLaw::Discrete { points } => {
                (points.first().expect("nonempty").value, points.last().expect("nonempty").value)
            }
        }
    }

    /// Deterministic check grid: 1001 equispaced points including the
    /// endpoints for the continuous case, the exact support otherwise.
    pub fn validation_grid(&self) -> Vec<f64> {
        match self {
            CovariateLaw::Uniform { lo, hi } => {
                let n = VALIDATION_GRID_POINTS;
                (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect()
            }
            CovariateLaw::Discrete { points } => points.iter().map(|p| p.value).collect(),
        }
    }

    /// Probability of the interval [a, b] intersected with the support.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        match self {
            CovariateLaw::Uniform { lo, hi } => {
                let left = a.max(*lo);
                let right = b.min(*hi);
                ((right - left) / (hi - lo)).max(0.0)
            }
            CovariateLaw::Discrete { points } => points
                .iter()
                .filter(|p| p.value >= a && p.value <= b)
                .map(|p| p.weight)
                .sum(),
        }
    }
}

fn validate_weighted_points(points: &[WeightedPoint], what: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Validation(format!("{what}: discrete support must be nonempty")));
    }
    let mut sum = 0.0;
    for p in points {
        if !p.value.is_finite() {
            return Err(Error::Validation(format!("{what}: non-finite support value")));
        }
        if !p.weight.is_finite() || p.weight <= 0.0 {
            return Err(Error::Validation(format!(
                "{what}: weight {} at value {} must be strictly positive",
                p.weight, p.value
            )));
        }
        sum += p.weight;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Validation(format!("{what}: weights sum to {sum}, expected 1")));
    }
    for w in points.windows(2) {
        if w[1].value <= w[0].value {
            return Err(Error::Validation(format!(
                "{what}: support values must be strictly increasing ({} then {})",
                w[0].value, w[1].value
            )));
        }
    }
    Ok(())
}

/// Law of the unobserved confounder; an empty level list means there is no
/// confounder at all.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfounderLaw {
    pub levels: Vec<WeightedPoint>,
}

impl ConfounderLaw {
    pub fn none() -> Self {
        ConfounderLaw { levels: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Ok(());
        }
        validate_weighted_points(&self.levels, "u_law")
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Iterate the confounder levels with their weights; a missing confounder
    /// contributes the single pseudo-level `None` with weight one.
    pub fn weighted_levels(&self) -> Vec<(Option<f64>, f64)> {
        if self.levels.is_empty() {
            vec![(None, 1.0)]
        } else {
            self.levels.iter().map(|p| (Some(p.value), p.weight)).collect()
        }
    }

    pub fn contains(&self, u: Option<f64>) -> bool {
        match u {
            None => self.levels.is_empty(),
            Some(v) => self.levels.iter().any(|p| (p.value - v).abs() <= 1e-12),
        }
    }
}

/// Treatment arm of the binary intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "control")]
    Control,
    #[serde(rename = "treat")]
    Treat,
}

/// How a risk score is compared against the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    /// Treat when the score is at or above the cutoff.
    #[serde(rename = "ge")]
    Ge,
    /// Treat only when the score strictly exceeds the cutoff.
    #[serde(rename = "gt")]
    Gt,
}

impl Comparator {
    pub fn decide(self, score: f64, theta: f64) -> bool {
        match self {
            Comparator::Ge => score >= theta,
            Comparator::Gt => score > theta,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
        }
    }
}

/// The invariant counterfactual model: covariate law, confounder law, the two
/// outcome regressions, and the baseline propensity.
#[derive(Debug, Clone)]
pub struct ScenarioModel {
    name: String,
    x_law: CovariateLaw,
    u_law: ConfounderLaw,
    mu0: Expr,
    mu1: Expr,
    pi0: Expr,
    metadata: std::collections::BTreeMap<String, String>,
}

impl ScenarioModel {
    /// Build and fully validate a model. Expression ranges are checked on the
    /// validation grid (all covariate grid points crossed with all confounder
    /// levels) to tolerance [`RANGE_TOL`].
    pub fn new(
        name: impl Into<String>,
        x_law: CovariateLaw,
        u_law: ConfounderLaw,
        mu0: Expr,
        mu1: Expr,
        pi0: Expr,
        metadata: std::collections::BTreeMap<String, String>,
    ) -> Result<Self> {
        x_law.validate()?;
        u_law.validate()?;
        let model = ScenarioModel { name: name.into(), x_law, u_law, mu0, mu1, pi0, metadata };
        for (label, expr) in [("mu0", &model.mu0), ("mu1", &model.mu1), ("pi0", &model.pi0)] {
            model.check_unit_range(label, expr)?;
        }
        Ok(model)
    }

    /// Validate that `expr` stays within [0, 1] (to tolerance) and evaluates
    /// finitely on the whole validation grid. Used for the model's own
    /// functions and for stochastic policy propensities.
    pub fn check_unit_range(&self, label: &str, expr: &Expr) -> Result<()> {
        if self.u_law.is_empty() && expr.references_u() {
            return Err(Error::Validation(format!(
                "{label} references `u` but the scenario has no confounder levels"
            )));
        }
        for x in self.x_law.validation_grid() {
            for (u, _w) in self.u_law.weighted_levels() {
                let v = expr.eval(x, u);
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "{label} is not finite at (x={x}, u={u:?}); check for division by zero"
                    )));
                }
                if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&v) {
                    return Err(Error::Range { function: label.to_string(), x, u, value: v });
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x_law(&self) -> &CovariateLaw {
        &self.x_law
    }

    pub fn u_law(&self) -> &ConfounderLaw {
        &self.u_law
    }

    pub fn mu0(&self) -> &Expr {
        &self.mu0
    }

    pub fn mu1(&self) -> &Expr {
        &self.mu1
    }

    pub fn pi0(&self) -> &Expr {
        &self.pi0
    }

    pub fn metadata(&self) -> &std::collections::BTreeMap<String, String> {
        &self.metadata
    }

    /// A copy of this model with a different baseline propensity; everything
    /// counterfactual (laws and outcome regressions) is shared unchanged.
    pub fn with_pi0(&self, pi0: Expr) -> Result<ScenarioModel> {
        ScenarioModel::new(
            self.name.clone(),
            self.x_law.clone(),
            self.u_law.clone(),
            self.mu0.clone(),
            self.mu1.clone(),
            pi0,
            self.metadata.clone(),
        )
    }

    fn check_point(&self, x: f64, u: Option<f64>) -> Result<()> {
        if !self.x_law.contains(x) {
            return Err(Error::Domain(format!("x = {x} is outside the covariate support")));
        }
        if !self.u_law.contains(u) {
            return Err(Error::Domain(match u {
                None => "u must be supplied because the scenario has confounder levels".into(),
                Some(v) if self.u_law.is_empty() => {
                    format!("u = {v} supplied but the scenario has no confounder")
                }
                Some(v) => format!("u = {v} is not a confounder level"),
            }));
        }
        Ok(())
    }

    fn arm_expr(&self, arm: Arm) -> &Expr {
        match arm {
            Arm::Control => &self.mu0,
            Arm::Treat => &self.mu1,
        }
    }

    /// Mean potential outcome for one arm at a support point.
    pub fn potential_mean(&self, arm: Arm, x: f64, u: Option<f64>) -> Result<f64> {
        self.check_point(x, u)?;
        let label = match arm {
            Arm::Control => "mu0",
            Arm::Treat => "mu1",
        };
        let v = self.arm_expr(arm).eval(x, u);
        if !v.is_finite() || !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&v) {
            return Err(Error::Range { function: label.to_string(), x, u, value: v });
        }
        Ok(v.clamp(0.0, 1.0))
    }

    /// The optimal treatment decision at a point: treat exactly when the
    /// treated mean outcome is strictly below the untreated one (ties are
    /// resolved to no treatment).
    pub fn optimal_rule(&self, x: f64, u: Option<f64>) -> Result<bool> {
        let m0 = self.potential_mean(Arm::Control, x, u)?;
        let m1 = self.potential_mean(Arm::Treat, x, u)?;
        Ok(m1 < m0)
    }

    /// Outcome regression for one arm marginalized over the confounder.
    pub fn marginal_mean(&self, arm: Arm, x: f64) -> f64 {
        let expr = self.arm_expr(arm);
        self.u_law
            .weighted_levels()
            .iter()
            .map(|(u, w)| w * expr.eval(x, *u))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Risk scores
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum ScoreSource {
    /// Score fit under a stochastic propensity.
    Stochastic { propensity: Expr },
    /// Score fit under a threshold deployment of a previous score.
    Threshold { prev: RiskScore, theta: f64, comparator: Comparator },
}

#[derive(Debug)]
struct ScoreRepr {
    model: ScenarioModel,
    source: ScoreSource,
}

/// The observable-outcome predictor `s(x) = E[Y | X = x]` induced by a
/// (model, policy) pair, frozen at construction. The generation tag counts
/// how many fit-deploy rounds produced it.
#[derive(Debug, Clone)]
pub struct RiskScore {
    repr: Arc<ScoreRepr>,
    generation: u32,
}

impl RiskScore {
    /// `s(x)`: the observable mean outcome at `x` under the generating
    /// policy, marginalized over the confounder.
    pub fn eval(&self, x: f64) -> f64 {
        let model = &self.repr.model;
        match &self.repr.source {
            ScoreSource::Stochastic { propensity } => model
                .u_law
                .weighted_levels()
                .iter()
                .map(|(u, w)| {
                    let pi = propensity.eval(x, *u);
                    w * (pi * model.mu1.eval(x, *u) + (1.0 - pi) * model.mu0.eval(x, *u))
                })
                .sum(),
            ScoreSource::Threshold { prev, theta, comparator } => {
                if comparator.decide(prev.eval(x), *theta) {
                    model.marginal_mean(Arm::Treat, x)
                } else {
                    model.marginal_mean(Arm::Control, x)
                }
            }
        }
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }
}

/// Fit the observable-outcome risk score to the system induced by `policy`:
/// `s(x) = sum_u w(u) [pi(x,u) mu1(x,u) + (1 - pi(x,u)) mu0(x,u)]`, with the
/// generation advanced by one round.
pub fn score_from(model: &ScenarioModel, policy: &Policy) -> RiskScore {
    let generation = policy.generation() + 1;
    let source = match policy {
        Policy::Stochastic { propensity } => {
            ScoreSource::Stochastic { propensity: propensity.clone() }
        }
        Policy::Threshold { score, theta, comparator } => ScoreSource::Threshold {
            prev: score.clone(),
            theta: *theta,
            comparator: *comparator,
        },
    };
    RiskScore { repr: Arc::new(ScoreRepr { model: model.clone(), source }), generation }
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// A treatment assignment rule: either a stochastic propensity over `(x, u)`
/// or a deterministic cutoff on a risk score. Threshold rules read only the
/// covariate, never the confounder, because the score itself only sees `x`.
#[derive(Debug, Clone)]
pub enum Policy {
    Stochastic { propensity: Expr },
    Threshold { score: RiskScore, theta: f64, comparator: Comparator },
}

impl Policy {
    /// A stochastic policy, validated against the model's support grid.
    pub fn stochastic(model: &ScenarioModel, propensity: Expr) -> Result<Policy> {
        model.check_unit_range("policy propensity", &propensity)?;
        Ok(Policy::Stochastic { propensity })
    }

    /// The model's own baseline propensity as a policy.
    pub fn baseline(model: &ScenarioModel) -> Policy {
        Policy::Stochastic { propensity: model.pi0.clone() }
    }

    pub fn treat_all() -> Policy {
        Policy::Stochastic { propensity: Expr::Literal(1.0) }
    }

    pub fn treat_none() -> Policy {
        Policy::Stochastic { propensity: Expr::Literal(0.0) }
    }

    /// A deterministic cutoff rule on a fitted risk score.
    pub fn threshold(score: RiskScore, theta: f64, comparator: Comparator) -> Result<Policy> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain(format!("theta = {theta} must lie in [0, 1]")));
        }
        Ok(Policy::Threshold { score, theta, comparator })
    }

    /// Treatment probability at a point, without support checks.
    pub fn propensity(&self, x: f64, u: Option<f64>) -> f64 {
        match self {
            Policy::Stochastic { propensity } => propensity.eval(x, u),
            Policy::Threshold { score, theta, comparator } => {
                if comparator.decide(score.eval(x), *theta) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Fit-deploy round this policy belongs to: 0 for stochastic baselines,
    /// the embedded score's generation for threshold rules.
    pub fn generation(&self) -> u32 {
        match self {
            Policy::Stochastic { .. } => 0,
            Policy::Threshold { score, .. } => score.generation(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Policy::Threshold { .. })
    }

    /// Stable human-readable description (used by trace summaries and CLI
    /// output).
    pub fn describe(&self) -> String {
        match self {
            Policy::Stochastic { propensity } => format!("stochastic({propensity})"),
            Policy::Threshold { theta, comparator, score } => {
                format!("threshold(s{} {} {theta})", score.generation(), comparator.symbol())
            }
        }
    }
}

/// Treatment probability at a support point, with domain and range checks.
pub fn propensity_at(model: &ScenarioModel, policy: &Policy, x: f64, u: Option<f64>) -> Result<f64> {
    model.check_point(x, u)?;
    let v = policy.propensity(x, u);
    if !v.is_finite() || !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&v) {
        return Err(Error::Range { function: "propensity".to_string(), x, u, value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}
