//! Population-level causal quantities for a (model, policy) pair: mean
//! outcomes, the deployment difference against a baseline, regret against the
//! optimal regime, stratum-conditional effects, treated sets, threshold
//! sweeps, and assumption audits.
//!
//! Every expectation is reduced to an integral over the covariate by summing
//! out the confounder first (it is independent of the covariate), then routed
//! through the requested numeric backend. Integrands containing threshold
//! indicators are split at the indicator's roots so each quadrature panel is
//! smooth.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{self, Backend, Estimate, QuadratureSpec, DEFAULT_ROOT_TOL};
use crate::scenario::{Comparator, CovariateLaw, Policy, ScenarioModel};

/// Strata with probability mass below this are rejected as empty.
pub const ZERO_MASS_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

/// Conditional mean outcome on one stratum of the population.
#[derive(Debug, Clone, Serialize)]
pub struct StratumMean {
    pub stratum: String,
    pub mass: f64,
    pub conditional_mean: Estimate,
}

/// Mean outcome, optimal value, regret, and per-stratum conditional means for
/// one deployed policy.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub mean_outcome: Estimate,
    pub optimal_value: Estimate,
    /// `mean_outcome - optimal_value`; nonnegative up to numeric error.
    pub regret: f64,
    pub strata: Vec<StratumMean>,
}

/// A closed sub-interval of the covariate support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// The set of covariate values a threshold policy treats.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreatedSet {
    Intervals { intervals: Vec<Interval> },
    Points { points: Vec<f64> },
}

impl TreatedSet {
    pub fn is_empty(&self) -> bool {
        match self {
            TreatedSet::Intervals { intervals } => intervals.is_empty(),
            TreatedSet::Points { points } => points.is_empty(),
        }
    }

    /// Probability mass of the set under the covariate law.
    pub fn mass(&self, law: &CovariateLaw) -> f64 {
        match self {
            TreatedSet::Intervals { intervals } => {
                intervals.iter().map(|iv| law.interval_mass(iv.lo, iv.hi)).sum()
            }
            TreatedSet::Points { points } => match law {
                CovariateLaw::Discrete { points: support } => support
                    .iter()
                    .filter(|p| points.iter().any(|t| (p.value - *t).abs() <= 1e-12))
                    .map(|p| p.weight)
                    .sum(),
                CovariateLaw::Uniform { .. } => 0.0,
            },
        }
    }

    /// Equality up to `tol` on interval boundaries; exact on point sets.
    pub fn approx_eq(&self, other: &TreatedSet, tol: f64) -> bool {
        match (self, other) {
            (TreatedSet::Points { points: a }, TreatedSet::Points { points: b }) => a == b,
            (TreatedSet::Intervals { intervals: a }, TreatedSet::Intervals { intervals: b }) => {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| (x.lo - y.lo).abs() <= tol && (x.hi - y.hi).abs() <= tol)
            }
            _ => false,
        }
    }

    /// Compact display such as `{0.185..0.725}` or `{0; 1}`; `{}` when empty.
    pub fn summary(&self) -> String {
        fn sig6(v: f64) -> String {
            crate::fmt_sig(v, 6)
        }
        match self {
            TreatedSet::Intervals { intervals } => {
                let parts: Vec<String> =
                    intervals.iter().map(|iv| format!("{}..{}", sig6(iv.lo), sig6(iv.hi))).collect();
                format!("{{{}}}", parts.join(" u "))
            }
            TreatedSet::Points { points } => {
                let parts: Vec<String> = points.iter().map(|p| sig6(*p)).collect();
                format!("{{{}}}", parts.join("; "))
            }
        }
    }
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    /// Deployment difference relative to the baseline policy.
    pub delta: Estimate,
    pub mean_outcome_t1: Estimate,
    pub treated_mass: f64,
}

/// Result of the positivity audit at deployment time zero.
#[derive(Debug, Clone, Serialize)]
pub struct PositivityCheck {
    pub passed: bool,
    /// A few points where the propensity is degenerate, if any.
    pub witnesses: Vec<PositivityWitness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityWitness {
    pub x: f64,
    pub u: Option<f64>,
    pub propensity: f64,
}

/// Sharp lower bounds on the probabilities that treatment strictly helps or
/// strictly hurts, derived from the marginal outcome regressions alone. Each
/// positive bound is sufficient (never necessary) evidence for the
/// corresponding event having positive probability.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrechetBounds {
    /// Lower bound on P(treated outcome < untreated outcome).
    pub treatment_helps: f64,
    /// Lower bound on P(untreated outcome < treated outcome).
    pub treatment_hurts: f64,
}

/// Outcome of the scenario assumption audit.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub positivity_t0: PositivityCheck,
    pub assumption5_lower_bounds: FrechetBounds,
    pub notes: Vec<String>,
}

/// A measurable subset of the (covariate, confounder) space, given as a
/// predicate plus optional covariate split points where the predicate flips
/// (quadrature uses them to keep panels smooth).
#[derive(Clone)]
pub struct Stratum {
    label: String,
    x_breakpoints: Vec<f64>,
    pred: Arc<dyn Fn(f64, Option<f64>) -> bool + Send + Sync>,
}

impl std::fmt::Debug for Stratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stratum").field("label", &self.label).finish()
    }
}

impl Stratum {
    pub fn new(
        label: impl Into<String>,
        pred: impl Fn(f64, Option<f64>) -> bool + Send + Sync + 'static,
    ) -> Self {
        Stratum { label: label.into(), x_breakpoints: Vec::new(), pred: Arc::new(pred) }
    }

    pub fn with_x_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.x_breakpoints = breakpoints;
        self
    }

    /// `{x < c}`.
    pub fn x_below(c: f64) -> Self {
        Stratum::new(format!("x < {c}"), move |x, _| x < c).with_x_breakpoints(vec![c])
    }

    /// `{x >= c}`.
    pub fn x_at_least(c: f64) -> Self {
        Stratum::new(format!("x >= {c}"), move |x, _| x >= c).with_x_breakpoints(vec![c])
    }

    /// The whole support.
    pub fn full() -> Self {
        Stratum::new("full support", |_, _| true)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn x_breakpoints(&self) -> &[f64] {
        &self.x_breakpoints
    }

    pub fn contains(&self, x: f64, u: Option<f64>) -> bool {
        (self.pred)(x, u)
    }
}

// ---------------------------------------------------------------------------
// Expectation plumbing
// ---------------------------------------------------------------------------

/// `E[f(X)]` under the model's covariate law via the chosen backend.
pub(crate) fn expect_x(
    model: &ScenarioModel,
    f: impl Fn(f64) -> f64,
    breakpoints: &[f64],
    backend: &Backend,
) -> Result<Estimate> {
    match backend {
        Backend::Quadrature(spec) => {
            numerics::integrate_piecewise(f, model.x_law(), spec, breakpoints)
        }
        Backend::MonteCarlo(spec) => Ok(numerics::mc_mean(f, model.x_law(), spec)),
        Backend::Exact => match model.x_law() {
            CovariateLaw::Discrete { .. } => {
                numerics::integrate_piecewise(f, model.x_law(), &QuadratureSpec::default(), breakpoints)
            }
            CovariateLaw::Uniform { .. } => Err(Error::Domain(
                "exact enumeration requires a discrete covariate law".into(),
            )),
        },
    }
}

/// Covariate values where a threshold policy's decision flips.
fn policy_breakpoints(model: &ScenarioModel, policy: &Policy) -> Vec<f64> {
    match policy {
        Policy::Stochastic { .. } => Vec::new(),
        Policy::Threshold { score, theta, .. } => match model.x_law() {
            CovariateLaw::Uniform { lo, hi } => {
                let s = score.clone();
                let th = *theta;
                numerics::find_roots(move |x| s.eval(x) - th, *lo, *hi, DEFAULT_ROOT_TOL)
            }
            CovariateLaw::Discrete { .. } => Vec::new(),
        },
    }
}

/// Covariate values where the sign of `mu1 - mu0` flips for some confounder
/// level (kinks of `min(mu0, mu1)` and boundaries of the optimal regime).
pub(crate) fn gap_breakpoints(model: &ScenarioModel) -> Vec<f64> {
    match model.x_law() {
        CovariateLaw::Uniform { lo, hi } => {
            let mut roots = Vec::new();
            for (u, _) in model.u_law().weighted_levels() {
                let gap = |x: f64| model.mu1().eval(x, u) - model.mu0().eval(x, u);
                roots.extend(numerics::find_roots(gap, *lo, *hi, DEFAULT_ROOT_TOL));
            }
            roots.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));
            roots
        }
        CovariateLaw::Discrete { .. } => Vec::new(),
    }
}

/// Observable mean outcome at covariate `x` under `policy`, confounder
/// summed out: `sum_u w(u) [pi mu1 + (1 - pi) mu0]`.
fn outcome_at(model: &ScenarioModel, policy: &Policy, x: f64) -> f64 {
    model
        .u_law()
        .weighted_levels()
        .iter()
        .map(|(u, w)| {
            let pi = policy.propensity(x, *u);
            w * (pi * model.mu1().eval(x, *u) + (1.0 - pi) * model.mu0().eval(x, *u))
        })
        .sum()
}

/// Pointwise deployment-difference integrand:
/// `sum_u w(u) (pi1 - pi0)(mu1 - mu0)`.
fn gap_at(model: &ScenarioModel, policy0: &Policy, policy1: &Policy, x: f64) -> f64 {
    model
        .u_law()
        .weighted_levels()
        .iter()
        .map(|(u, w)| {
            let shift = policy1.propensity(x, *u) - policy0.propensity(x, *u);
            w * shift * (model.mu1().eval(x, *u) - model.mu0().eval(x, *u))
        })
        .sum()
}

fn consistency_tol(errors: &[f64]) -> f64 {
    4.0 * errors.iter().sum::<f64>() + 1e-9
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Population mean outcome `E[Y]` under `policy`.
pub fn mean_outcome(model: &ScenarioModel, policy: &Policy, backend: &Backend) -> Result<Estimate> {
    let bps = policy_breakpoints(model, policy);
    expect_x(model, |x| outcome_at(model, policy, x), &bps, backend)
}

/// Deployment difference between two policies, computed directly as
/// `E[(pi1 - pi0)(mu1 - mu0)]` and cross-checked against the difference of
/// the two mean outcomes. The direct form is returned; disagreement beyond
/// combined numeric tolerance raises [`Error::Inconsistency`].
pub fn delta(
    model: &ScenarioModel,
    policy0: &Policy,
    policy1: &Policy,
    backend: &Backend,
) -> Result<Estimate> {
    let mut bps = policy_breakpoints(model, policy0);
    bps.extend(policy_breakpoints(model, policy1));
    let direct = expect_x(model, |x| gap_at(model, policy0, policy1, x), &bps, backend)?;
    let m0 = mean_outcome(model, policy0, backend)?;
    let m1 = mean_outcome(model, policy1, backend)?;
    let difference = m1.value - m0.value;
    let tol = consistency_tol(&[direct.error_bound, m0.error_bound, m1.error_bound]);
    if (direct.value - difference).abs() > tol {
        return Err(Error::Inconsistency { direct: direct.value, difference, tolerance: tol });
    }
    Ok(direct)
}

/// Probability mass of a stratum.
pub fn stratum_mass(model: &ScenarioModel, stratum: &Stratum, backend: &Backend) -> Result<Estimate> {
    let indicator = |x: f64| {
        model
            .u_law()
            .weighted_levels()
            .iter()
            .map(|(u, w)| if stratum.contains(x, *u) { *w } else { 0.0 })
            .sum::<f64>()
    };
    expect_x(model, indicator, &stratum.x_breakpoints, backend)
}

/// Deployment difference conditional on a stratum of positive mass.
pub fn conditional_delta(
    model: &ScenarioModel,
    policy0: &Policy,
    policy1: &Policy,
    stratum: &Stratum,
    backend: &Backend,
) -> Result<Estimate> {
    let mass = stratum_mass(model, stratum, backend)?;
    if mass.value <= ZERO_MASS_TOL {
        return Err(Error::Domain(format!(
            "stratum `{}` has probability mass {} (effectively empty)",
            stratum.label(),
            mass.value
        )));
    }
    let mut bps = policy_breakpoints(model, policy0);
    bps.extend(policy_breakpoints(model, policy1));
    bps.extend_from_slice(&stratum.x_breakpoints);
    let numerator = expect_x(
        model,
        |x| {
            model
                .u_law()
                .weighted_levels()
                .iter()
                .map(|(u, w)| {
                    if stratum.contains(x, *u) {
                        let shift = policy1.propensity(x, *u) - policy0.propensity(x, *u);
                        w * shift * (model.mu1().eval(x, *u) - model.mu0().eval(x, *u))
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        },
        &bps,
        backend,
    )?;
    let value = numerator.value / mass.value;
    let error_bound =
        (numerator.error_bound + value.abs() * mass.error_bound) / mass.value;
    Ok(Estimate { value, error_bound, backend: numerator.backend })
}

/// Value of the optimal full-information regime:
/// `E[min(mu0, mu1)]` over the (covariate, confounder) law.
pub fn optimal_value(model: &ScenarioModel, backend: &Backend) -> Result<Estimate> {
    let bps = gap_breakpoints(model);
    expect_x(
        model,
        |x| {
            model
                .u_law()
                .weighted_levels()
                .iter()
                .map(|(u, w)| w * model.mu0().eval(x, *u).min(model.mu1().eval(x, *u)))
                .sum::<f64>()
        },
        &bps,
        backend,
    )
}

/// Merge the panels between consecutive boundary candidates into the
/// intervals where `member` holds (classified at panel midpoints).
fn intervals_where(lo: f64, hi: f64, roots: &[f64], member: impl Fn(f64) -> bool) -> Vec<Interval> {
    let mut edges = vec![lo];
    edges.extend(roots.iter().copied().filter(|r| *r > lo && *r < hi));
    edges.push(hi);
    let mut intervals: Vec<Interval> = Vec::new();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        if member(0.5 * (a + b)) {
            match intervals.last_mut() {
                Some(last) if last.hi == a => last.hi = b,
                _ => intervals.push(Interval { lo: a, hi: b }),
            }
        }
    }
    intervals
}

/// The covariate set a threshold policy treats: intervals bounded by the
/// roots of `s(x) - theta` for continuous laws, the treated support points
/// for discrete laws.
pub fn treated_set(model: &ScenarioModel, policy: &Policy) -> Result<TreatedSet> {
    let Policy::Threshold { score, theta, comparator } = policy else {
        return Err(Error::Domain("treated_set requires a threshold policy".into()));
    };
    match model.x_law() {
        CovariateLaw::Discrete { points } => {
            let treated: Vec<f64> = points
                .iter()
                .map(|p| p.value)
                .filter(|v| comparator.decide(score.eval(*v), *theta))
                .collect();
            Ok(TreatedSet::Points { points: treated })
        }
        CovariateLaw::Uniform { lo, hi } => {
            let roots = numerics::find_roots(|x| score.eval(x) - theta, *lo, *hi, DEFAULT_ROOT_TOL);
            let intervals =
                intervals_where(*lo, *hi, &roots, |mid| comparator.decide(score.eval(mid), *theta));
            Ok(TreatedSet::Intervals { intervals })
        }
    }
}

// ---------------------------------------------------------------------------
// Decision regions
// ---------------------------------------------------------------------------

/// Sliver intervals thinner than this (root-finding noise around coinciding
/// boundaries) are dropped from set differences.
const SLIVER_TOL: f64 = 1e-9;

/// Set difference of sorted disjoint interval lists.
fn interval_difference(a: &[Interval], b: &[Interval]) -> Vec<Interval> {
    let mut out = Vec::new();
    for iv in a {
        let mut segments = vec![*iv];
        for cut in b {
            let mut next = Vec::with_capacity(segments.len() + 1);
            for seg in segments {
                if cut.hi <= seg.lo || cut.lo >= seg.hi {
                    next.push(seg);
                    continue;
                }
                if cut.lo > seg.lo {
                    next.push(Interval { lo: seg.lo, hi: cut.lo });
                }
                if cut.hi < seg.hi {
                    next.push(Interval { lo: cut.hi, hi: seg.hi });
                }
            }
            segments = next;
        }
        out.extend(segments);
    }
    out.retain(|iv| iv.hi - iv.lo > SLIVER_TOL);
    out
}

fn set_difference(a: &TreatedSet, b: &TreatedSet) -> TreatedSet {
    match (a, b) {
        (TreatedSet::Intervals { intervals: ia }, TreatedSet::Intervals { intervals: ib }) => {
            TreatedSet::Intervals { intervals: interval_difference(ia, ib) }
        }
        (TreatedSet::Points { points: pa }, TreatedSet::Points { points: pb }) => TreatedSet::Points {
            points: pa
                .iter()
                .copied()
                .filter(|p| !pb.iter().any(|q| (p - q).abs() <= 1e-12))
                .collect(),
        },
        _ => a.clone(),
    }
}

/// Regions of agreement and disagreement between a threshold deployment and
/// the optimal regime, per confounder level.
#[derive(Debug, Clone, Serialize)]
pub struct StratumRegions {
    /// Confounder level this row conditions on (`null` when there is none).
    pub u: Option<f64>,
    /// Where the optimal regime treats, given `u`.
    pub optimal: TreatedSet,
    /// Optimal-to-treat but not treated: harmed by withheld treatment.
    pub under_treated: TreatedSet,
    /// Treated but not optimal-to-treat: harmed by unnecessary treatment.
    pub over_treated: TreatedSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionsReport {
    pub theta: f64,
    pub comparator: Comparator,
    /// The covariate set the threshold rule treats (it cannot read `u`).
    pub treated: TreatedSet,
    pub strata: Vec<StratumRegions>,
}

/// Compare a threshold policy's treated set against the optimal regime.
pub fn decision_regions(model: &ScenarioModel, policy: &Policy) -> Result<RegionsReport> {
    let Policy::Threshold { theta, comparator, .. } = policy else {
        return Err(Error::Domain("decision_regions requires a threshold policy".into()));
    };
    let treated = treated_set(model, policy)?;
    let mut strata = Vec::new();
    for (u, _) in model.u_law().weighted_levels() {
        let optimal = match model.x_law() {
            CovariateLaw::Uniform { lo, hi } => {
                let gap = |x: f64| model.mu1().eval(x, u) - model.mu0().eval(x, u);
                let roots = numerics::find_roots(gap, *lo, *hi, DEFAULT_ROOT_TOL);
                TreatedSet::Intervals {
                    intervals: intervals_where(*lo, *hi, &roots, |mid| gap(mid) < 0.0),
                }
            }
            CovariateLaw::Discrete { points } => TreatedSet::Points {
                points: points
                    .iter()
                    .map(|p| p.value)
                    .filter(|x| model.mu1().eval(*x, u) < model.mu0().eval(*x, u))
                    .collect(),
            },
        };
        strata.push(StratumRegions {
            u,
            under_treated: set_difference(&optimal, &treated),
            over_treated: set_difference(&treated, &optimal),
            optimal,
        });
    }
    Ok(RegionsReport { theta: *theta, comparator: *comparator, treated, strata })
}

/// Sweep a cutoff grid: the risk score is fit once to the baseline system,
/// then each grid point is evaluated as a fresh threshold deployment (cutoff
/// compared with `>=`). The baseline mean outcome is computed once and reused
/// in every row's consistency check.
pub fn sweep_theta(
    model: &ScenarioModel,
    policy0: &Policy,
    thetas: &[f64],
    backend: &Backend,
) -> Result<Vec<SweepRow>> {
    for w in thetas.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Domain(format!(
                "theta grid must be strictly ascending, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let (Some(first), Some(last)) = (thetas.first(), thetas.last()) {
        if *first < 0.0 || *last > 1.0 {
            return Err(Error::Domain("theta grid must lie within [0, 1]".into()));
        }
    }
    let score = crate::scenario::score_from(model, policy0);
    let m0 = mean_outcome(model, policy0, backend)?;
    let bps0 = policy_breakpoints(model, policy0);
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let policy1 = Policy::threshold(score.clone(), theta, Comparator::Ge)?;
        let mut bps = bps0.clone();
        bps.extend(policy_breakpoints(model, &policy1));
        let direct = expect_x(model, |x| gap_at(model, policy0, &policy1, x), &bps, backend)?;
        let m1 = mean_outcome(model, &policy1, backend)?;
        let tol = consistency_tol(&[direct.error_bound, m0.error_bound, m1.error_bound]);
        if (direct.value - (m1.value - m0.value)).abs() > tol {
            return Err(Error::Inconsistency {
                direct: direct.value,
                difference: m1.value - m0.value,
                tolerance: tol,
            });
        }
        let treated = treated_set(model, &policy1)?;
        rows.push(SweepRow {
            theta,
            delta: direct,
            mean_outcome_t1: m1,
            treated_mass: treated.mass(model.x_law()),
        });
    }
    Ok(rows)
}

/// Audit the scenario assumptions for the audited policy: strict interior
/// positivity of the propensity at time zero, and lower bounds certifying
/// that treatment sometimes helps and sometimes hurts. Deterministic
/// threshold policies are flagged; every deployment step after the first one
/// violates positivity by construction.
pub fn check_assumptions(model: &ScenarioModel, policy: &Policy) -> Result<AssumptionReport> {
    let mut notes = Vec::new();
    let mut witnesses = Vec::new();

    // Interior grid: measure-zero endpoints of a continuous support are not
    // positivity violations.
    let grid = model.x_law().validation_grid();
    let interior: &[f64] = match model.x_law() {
        CovariateLaw::Uniform { .. } => &grid[1..grid.len() - 1],
        CovariateLaw::Discrete { .. } => &grid,
    };
    for &x in interior {
        for (u, _) in model.u_law().weighted_levels() {
            let pi = policy.propensity(x, u);
            if !(pi > 0.0 && pi < 1.0) {
                if witnesses.len() < 8 {
                    witnesses.push(PositivityWitness { x, u, propensity: pi });
                } else {
                    break;
                }
            }
        }
    }
    let passed = witnesses.is_empty();

    if policy.is_deterministic() {
        notes.push(
            "deterministic propensity in {0,1}: a threshold rule violates positivity at every \
             deployment step t >= 1"
                .to_string(),
        );
    }

    let backend = Backend::default();
    let bps = gap_breakpoints(model);
    let helps = expect_x(
        model,
        |x| {
            model
                .u_law()
                .weighted_levels()
                .iter()
                .map(|(u, w)| w * (model.mu0().eval(x, *u) - model.mu1().eval(x, *u)).max(0.0))
                .sum::<f64>()
        },
        &bps,
        &backend,
    )?;
    let hurts = expect_x(
        model,
        |x| {
            model
                .u_law()
                .weighted_levels()
                .iter()
                .map(|(u, w)| w * (model.mu1().eval(x, *u) - model.mu0().eval(x, *u)).max(0.0))
                .sum::<f64>()
        },
        &bps,
        &backend,
    )?;
    if helps.value <= 0.0 {
        notes.push(
            "lower bound on P(treatment helps) is zero: the bound cannot certify that treatment \
             ever helps"
                .to_string(),
        );
    }
    if hurts.value <= 0.0 {
        notes.push(
            "lower bound on P(treatment hurts) is zero: the bound cannot certify that treatment \
             ever hurts"
                .to_string(),
        );
    }

    Ok(AssumptionReport {
        positivity_t0: PositivityCheck { passed, witnesses },
        assumption5_lower_bounds: FrechetBounds {
            treatment_helps: helps.value,
            treatment_hurts: hurts.value,
        },
        notes,
    })
}

/// Full evaluation of one policy: mean outcome, optimal value, regret, and
/// conditional mean outcomes on the two optimal-regime strata.
pub fn evaluation_report(
    model: &ScenarioModel,
    policy: &Policy,
    backend: &Backend,
) -> Result<EvaluationReport> {
    let mean = mean_outcome(model, policy, backend)?;
    let optimal = optimal_value(model, backend)?;

    let gap_bps = gap_breakpoints(model);
    let mut strata = Vec::new();
    for (label, want_treat) in
        [("optimal-treat (mu1 < mu0)", true), ("optimal-no-treat (mu1 >= mu0)", false)]
    {
        let stratum = {
            let m = model.clone();
            Stratum::new(label, move |x, u| {
                (m.mu1().eval(x, u) < m.mu0().eval(x, u)) == want_treat
            })
            .with_x_breakpoints(gap_bps.clone())
        };
        let mass = stratum_mass(model, &stratum, backend)?;
        if mass.value <= ZERO_MASS_TOL {
            continue;
        }
        let mut bps = policy_breakpoints(model, policy);
        bps.extend_from_slice(&stratum.x_breakpoints);
        let numerator = expect_x(
            model,
            |x| {
                model
                    .u_law()
                    .weighted_levels()
                    .iter()
                    .map(|(u, w)| {
                        if stratum.contains(x, *u) {
                            let pi = policy.propensity(x, *u);
                            w * (pi * model.mu1().eval(x, *u)
                                + (1.0 - pi) * model.mu0().eval(x, *u))
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
            },
            &bps,
            backend,
        )?;
        strata.push(StratumMean {
            stratum: label.to_string(),
            mass: mass.value,
            conditional_mean: Estimate {
                value: numerator.value / mass.value,
                error_bound: (numerator.error_bound
                    + (numerator.value / mass.value).abs() * mass.error_bound)
                    / mass.value,
                backend: numerator.backend,
            },
        });
    }

    Ok(EvaluationReport {
        regret: mean.value - optimal.value,
        mean_outcome: mean,
        optimal_value: optimal,
        strata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::numerics::EstimateBackend;
    use crate::scenario::{score_from, ConfounderLaw, WeightedPoint};
    use std::collections::BTreeMap;

    fn toy() -> ScenarioModel {
        ScenarioModel::new(
            "toy",
            CovariateLaw::Uniform { lo: 0.0, hi: 1.0 },
            ConfounderLaw::none(),
            parse("x").unwrap(),
            parse("(0.7 - x)^2").unwrap(),
            parse("x").unwrap(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn quad() -> Backend {
        Backend::default()
    }

    fn toy_threshold(model: &ScenarioModel, theta: f64) -> Policy {
        let s = score_from(model, &Policy::baseline(model));
        Policy::threshold(s, theta, Comparator::Ge).unwrap()
    }

    #[test]
    fn mean_outcomes_match_closed_forms() {
        let m = toy();
        let v = mean_outcome(&m, &Policy::baseline(&m), &quad()).unwrap();
        assert!((v.value - 0.195).abs() < 1e-12, "{}", v.value);
        let v = mean_outcome(&m, &Policy::treat_none(), &quad()).unwrap();
        assert!((v.value - 0.5).abs() < 1e-12);
        let v = mean_outcome(&m, &Policy::treat_all(), &quad()).unwrap();
        assert!((v.value - 0.37 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_outcome_mc_within_four_se() {
        let m = toy();
        let mc = Backend::MonteCarlo(crate::numerics::MonteCarloSpec { n_samples: 1_000_000, seed: 3 });
        let v = mean_outcome(&m, &Policy::baseline(&m), &mc).unwrap();
        assert!((v.value - 0.195).abs() <= 4.0 * v.error_bound, "{} +/- {}", v.value, v.error_bound);
    }

    #[test]
    fn delta_of_identical_policies_is_zero() {
        let m = toy();
        let p = Policy::baseline(&m);
        let d = delta(&m, &p, &p, &quad()).unwrap();
        assert_eq!(d.value, 0.0);
        // a re-declared copy of the same propensity is also zero
        let p2 = Policy::stochastic(&m, parse("x").unwrap()).unwrap();
        let d = delta(&m, &p, &p2, &quad()).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn delta_at_unreachable_cutoff_is_the_no_treatment_gap() {
        // theta = 0.30 exceeds the score's maximum, so deployment treats
        // nobody: delta = E[Y0] - E0[Y] = 0.5 - 0.195.
        let m = toy();
        let d = delta(&m, &Policy::baseline(&m), &toy_threshold(&m, 0.30), &quad()).unwrap();
        assert!((d.value - 0.305).abs() < 1e-9, "{}", d.value);
    }

    #[test]
    fn conditional_delta_on_full_support_equals_delta() {
        let m = toy();
        let p1 = toy_threshold(&m, 0.2);
        let d = delta(&m, &Policy::baseline(&m), &p1, &quad()).unwrap();
        let c = conditional_delta(&m, &Policy::baseline(&m), &p1, &Stratum::full(), &quad()).unwrap();
        assert!((d.value - c.value).abs() < 1e-10);
    }

    #[test]
    fn conditional_delta_signs_match_geometry() {
        let m = toy();
        let boundary = (2.4 - 3.8f64.sqrt()) / 2.0;
        // Over-treating the region where treatment hurts is harmful.
        let c = conditional_delta(
            &m,
            &Policy::baseline(&m),
            &toy_threshold(&m, 0.05),
            &Stratum::x_below(boundary),
            &quad(),
        )
        .unwrap();
        assert!(c.value > 0.0, "{}", c.value);
        // Withholding treatment from the sickest group is harmful too.
        let c = conditional_delta(
            &m,
            &Policy::baseline(&m),
            &toy_threshold(&m, 0.22),
            &Stratum::x_at_least(0.67),
            &quad(),
        )
        .unwrap();
        assert!(c.value > 0.0, "{}", c.value);
    }

    #[test]
    fn zero_mass_stratum_is_a_domain_error() {
        let m = toy();
        let p1 = toy_threshold(&m, 0.2);
        let empty = Stratum::new("x > 2", |x, _| x > 2.0);
        let err =
            conditional_delta(&m, &Policy::baseline(&m), &p1, &empty, &quad()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn delta_decomposes_over_a_partition() {
        let m = toy();
        let p1 = toy_threshold(&m, 0.2);
        let p0 = Policy::baseline(&m);
        let total = delta(&m, &p0, &p1, &quad()).unwrap().value;
        let cut = 0.4;
        let mut recomposed = 0.0;
        for s in [Stratum::x_below(cut), Stratum::x_at_least(cut)] {
            let mass = stratum_mass(&m, &s, &quad()).unwrap().value;
            let cond = conditional_delta(&m, &p0, &p1, &s, &quad()).unwrap().value;
            recomposed += mass * cond;
        }
        assert!((total - recomposed).abs() < 1e-9, "{total} vs {recomposed}");
    }

    #[test]
    fn optimal_value_matches_piecewise_integral() {
        let m = toy();
        let c = (2.4 - 3.8f64.sqrt()) / 2.0;
        // int_0^c x dx + int_c^1 (0.7 - x)^2 dx
        let expected = c * c / 2.0 + (0.009 + (0.7 - c).powi(3) / 3.0);
        let v = optimal_value(&m, &quad()).unwrap();
        assert!((v.value - expected).abs() < 1e-12, "{} vs {expected}", v.value);
    }

    #[test]
    fn optimal_value_is_attained_when_treatment_is_irrelevant() {
        let m = ScenarioModel::new(
            "flat",
            CovariateLaw::Uniform { lo: 0.0, hi: 1.0 },
            ConfounderLaw::none(),
            parse("0.2 + 0.5*x").unwrap(),
            parse("0.2 + 0.5*x").unwrap(),
            parse("0.5").unwrap(),
            BTreeMap::new(),
        )
        .unwrap();
        let opt = optimal_value(&m, &quad()).unwrap().value;
        for p in [Policy::baseline(&m), Policy::treat_all(), Policy::treat_none()] {
            let v = mean_outcome(&m, &p, &quad()).unwrap().value;
            assert!((v - opt).abs() < 1e-12);
        }
    }

    #[test]
    fn treated_sets_match_root_geometry() {
        let m = toy();
        // above the score's maximum nothing is treated
        let t = treated_set(&m, &toy_threshold(&m, 0.28)).unwrap();
        assert!(t.is_empty());
        // theta = 0.05 has a single lower crossing (s(1) = 0.09 > 0.05)
        let t = treated_set(&m, &toy_threshold(&m, 0.05)).unwrap();
        let TreatedSet::Intervals { intervals } = &t else { panic!() };
        assert_eq!(intervals.len(), 1);
        assert!((intervals[0].lo - 0.0355641316).abs() < 1e-6, "{}", intervals[0].lo);
        assert_eq!(intervals[0].hi, 1.0);
        // theta = 0.2 is an interior band
        let t = treated_set(&m, &toy_threshold(&m, 0.2)).unwrap();
        let TreatedSet::Intervals { intervals } = &t else { panic!() };
        assert_eq!(intervals.len(), 1);
        assert!((intervals[0].lo - 0.1852248814).abs() < 1e-6);
        assert!((intervals[0].hi - 0.7245838692).abs() < 1e-6);
    }

    #[test]
    fn treated_set_and_score_cohere() {
        let m = toy();
        let theta = 0.2;
        let p = toy_threshold(&m, theta);
        let Policy::Threshold { score, .. } = &p else { panic!() };
        let t = treated_set(&m, &p).unwrap();
        let TreatedSet::Intervals { intervals } = &t else { panic!() };
        for iv in intervals {
            let inside = 0.5 * (iv.lo + iv.hi);
            assert!(score.eval(inside) >= theta);
        }
        for x in [0.01, 0.1, 0.8, 0.99] {
            let member = intervals.iter().any(|iv| x >= iv.lo && x <= iv.hi);
            assert_eq!(score.eval(x) >= theta, member, "x = {x}");
        }
    }

    #[test]
    fn sweep_rows_echo_grid_and_nest_downward() {
        let m = toy();
        let rows = sweep_theta(&m, &Policy::baseline(&m), &[0.05, 0.20, 0.30], &quad()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].theta, 0.05);
        assert_eq!(rows[2].theta, 0.30);
        assert!(rows[0].treated_mass > rows[1].treated_mass);
        assert!(rows[1].treated_mass > rows[2].treated_mass);
        assert!((rows[2].delta.value - 0.305).abs() < 1e-9);
        assert_eq!(rows[2].treated_mass, 0.0);
        // treated mass agrees with the integral of the deployed propensity
        for row in &rows {
            let p1 = toy_threshold(&m, row.theta);
            let mass = mean_outcome_free_indicator(&m, &p1);
            assert!((row.treated_mass - mass).abs() < 1e-6);
        }
    }

    fn mean_outcome_free_indicator(model: &ScenarioModel, policy: &Policy) -> f64 {
        let bps = super::policy_breakpoints(model, policy);
        super::expect_x(model, |x| policy.propensity(x, None), &bps, &Backend::default())
            .unwrap()
            .value
    }

    #[test]
    fn non_ascending_grid_is_rejected() {
        let m = toy();
        let err = sweep_theta(&m, &Policy::baseline(&m), &[0.2, 0.1], &quad()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn assumption_audit_passes_on_the_toy_scenario() {
        let m = toy();
        let report = check_assumptions(&m, &Policy::baseline(&m)).unwrap();
        assert!(report.positivity_t0.passed, "{:?}", report.positivity_t0.witnesses);
        // closed forms: E[max(0, mu0 - mu1)] = E[mu0] - E[min] and
        // E[max(0, mu1 - mu0)] = E[mu1] - E[min]
        let c = (2.4 - 3.8f64.sqrt()) / 2.0;
        let e_min = c * c / 2.0 + 0.009 + (0.7 - c).powi(3) / 3.0;
        let helps = 0.5 - e_min;
        let hurts = 0.37 / 3.0 - e_min;
        assert!((report.assumption5_lower_bounds.treatment_helps - helps).abs() < 1e-9);
        assert!((report.assumption5_lower_bounds.treatment_hurts - hurts).abs() < 1e-9);
        assert!(report.assumption5_lower_bounds.treatment_helps > 0.0);
        assert!(report.assumption5_lower_bounds.treatment_hurts > 0.0);
    }

    #[test]
    fn degenerate_propensity_fails_positivity_with_witness() {
        let m = ScenarioModel::new(
            "never-treat",
            CovariateLaw::Uniform { lo: 0.0, hi: 1.0 },
            ConfounderLaw::none(),
            parse("x").unwrap(),
            parse("(0.7 - x)^2").unwrap(),
            parse("0").unwrap(),
            BTreeMap::new(),
        )
        .unwrap();
        let report = check_assumptions(&m, &Policy::baseline(&m)).unwrap();
        assert!(!report.positivity_t0.passed);
        assert!(!report.positivity_t0.witnesses.is_empty());
        assert_eq!(report.positivity_t0.witnesses[0].propensity, 0.0);
    }

    #[test]
    fn threshold_policies_are_flagged_as_deterministic() {
        let m = toy();
        let report = check_assumptions(&m, &toy_threshold(&m, 0.2)).unwrap();
        assert!(report.notes.iter().any(|n| n.contains("deterministic propensity in {0,1}")));
        assert!(!report.positivity_t0.passed);
    }

    #[test]
    fn evaluation_report_is_internally_consistent() {
        let m = toy();
        let report = evaluation_report(&m, &Policy::baseline(&m), &quad()).unwrap();
        assert!((report.mean_outcome.value - 0.195).abs() < 1e-12);
        assert!((report.regret - (0.195 - report.optimal_value.value)).abs() < 1e-15);
        assert!(report.regret >= -1e-12);
        // strata recompose the population mean
        let recomposed: f64 =
            report.strata.iter().map(|s| s.mass * s.conditional_mean.value).sum();
        assert!((recomposed - report.mean_outcome.value).abs() < 1e-9);
    }

    #[test]
    fn regions_locate_the_under_and_over_treated_groups() {
        let m = toy();
        let report = decision_regions(&m, &toy_threshold(&m, 0.22)).unwrap();
        assert_eq!(report.strata.len(), 1);
        let s = &report.strata[0];
        let boundary = (2.4 - 3.8f64.sqrt()) / 2.0;
        let TreatedSet::Intervals { intervals } = &s.optimal else { panic!() };
        assert!((intervals[0].lo - boundary).abs() < 1e-8);
        // Withheld treatment hits the upper tail: the treated band ends where
        // the score falls back through theta, near x = 0.6745.
        let TreatedSet::Intervals { intervals } = &s.under_treated else { panic!() };
        assert_eq!(intervals.len(), 1);
        assert!((intervals[0].lo - 0.6744695).abs() < 1e-5, "{}", intervals[0].lo);
        assert_eq!(intervals[0].hi, 1.0);
        // Unnecessary treatment hits the band below the optimal boundary.
        let TreatedSet::Intervals { intervals } = &s.over_treated else { panic!() };
        assert_eq!(intervals.len(), 1);
        assert!((intervals[0].lo - 0.2160956).abs() < 1e-5);
        assert!((intervals[0].hi - boundary).abs() < 1e-8);
    }

    #[test]
    fn regions_above_the_score_maximum_withhold_everything() {
        let m = toy();
        let report = decision_regions(&m, &toy_threshold(&m, 0.29)).unwrap();
        assert!(report.treated.is_empty());
        let s = &report.strata[0];
        assert_eq!(s.under_treated, s.optimal);
        assert!(s.over_treated.is_empty());
    }

    #[test]
    fn low_cutoffs_over_treat_the_benefit_free_group() {
        let m = toy();
        let report = decision_regions(&m, &toy_threshold(&m, 0.05)).unwrap();
        let s = &report.strata[0];
        let TreatedSet::Intervals { intervals } = &s.over_treated else { panic!() };
        assert_eq!(intervals.len(), 1);
        assert!((intervals[0].lo - 0.0355641).abs() < 1e-5);
        assert!((intervals[0].hi - (2.4 - 3.8f64.sqrt()) / 2.0).abs() < 1e-8);
    }

    #[test]
    fn exact_backend_requires_discrete_support() {
        let m = toy();
        let err = mean_outcome(&m, &Policy::baseline(&m), &Backend::Exact).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn exact_backend_enumerates_discrete_scenarios() {
        let m = ScenarioModel::new(
            "two-point",
            CovariateLaw::Discrete {
                points: vec![
                    WeightedPoint { value: 0.0, weight: 0.25 },
                    WeightedPoint { value: 1.0, weight: 0.75 },
                ],
            },
            ConfounderLaw::none(),
            parse("0.8 - 0.2*x").unwrap(),
            parse("0.1 + 0.3*x").unwrap(),
            parse("0.5").unwrap(),
            BTreeMap::new(),
        )
        .unwrap();
        let v = mean_outcome(&m, &Policy::baseline(&m), &Backend::Exact).unwrap();
        let expected = 0.25 * (0.5 * 0.1 + 0.5 * 0.8) + 0.75 * (0.5 * 0.4 + 0.5 * 0.6);
        assert!((v.value - expected).abs() < 1e-15);
        assert_eq!(v.backend, EstimateBackend::ExactEnumeration);
        // quadrature backend collapses to the same enumeration on discrete laws
        let q = mean_outcome(&m, &Policy::baseline(&m), &quad()).unwrap();
        assert_eq!(q.value, v.value);
        assert_eq!(q.backend, EstimateBackend::ExactEnumeration);
    }
}
