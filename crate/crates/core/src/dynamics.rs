//! Deployment dynamics: the retrain-redeploy iteration and the expertise
//! inversion experiment.
//!
//! The iteration refits the observable-outcome score to whatever system the
//! previous policy induced, then redeploys it as a threshold rule. The score
//! deployed at step `t` is always fit to the step `t - 1` system; there is no
//! within-step feedback.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{self, mean_outcome, treated_set, Stratum, TreatedSet, ZERO_MASS_TOL};
use crate::expr::Expr;
use crate::numerics::{Backend, Estimate, DEFAULT_ROOT_TOL};
use crate::scenario::{score_from, Comparator, Policy, RiskScore, ScenarioModel};

/// Interval boundaries within this tolerance are treated as equal when
/// comparing treated sets across steps; root-finding jitter must not mask a
/// true cycle.
const CYCLE_BOUNDARY_TOL: f64 = 10.0 * DEFAULT_ROOT_TOL;

/// A detected eventual cycle: the trace repeats with `period` from `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Cycle {
    pub start: usize,
    pub period: usize,
}

/// One step of a deployment trace. Step 0 carries the baseline policy and no
/// fitted score; every later step deploys the score fit to the previous
/// step's system. Stochastic policies have no treated set.
#[derive(Debug, Clone)]
pub struct DeploymentStep {
    pub t: u32,
    pub score: Option<RiskScore>,
    pub policy: Policy,
    pub mean_outcome: Estimate,
    pub treated: Option<TreatedSet>,
}

/// Time-indexed record of the retrain-redeploy loop.
#[derive(Debug, Clone)]
pub struct DeploymentTrace {
    pub steps: Vec<DeploymentStep>,
    pub cycle: Option<Cycle>,
}

#[derive(Debug, Clone)]
enum StepSig {
    /// Canonical propensity text; only equal stochastic policies compare equal.
    Stochastic(String),
    Treated(TreatedSet),
}

fn sig_eq(a: &StepSig, b: &StepSig) -> bool {
    match (a, b) {
        (StepSig::Stochastic(x), StepSig::Stochastic(y)) => x == y,
        (StepSig::Treated(x), StepSig::Treated(y)) => x.approx_eq(y, CYCLE_BOUNDARY_TOL),
        _ => false,
    }
}

/// Smallest (start, then period) cycle covering the tail of the trace, with
/// at least two full periods observed before it is reported.
fn detect_cycle(sigs: &[StepSig]) -> Option<Cycle> {
    let n = sigs.len();
    for start in 0..n {
        for period in 1..=(n - start) / 2 {
            if (start..n - period).all(|t| sig_eq(&sigs[t], &sigs[t + period])) {
                return Some(Cycle { start, period });
            }
        }
    }
    None
}

/// Run the retrain-redeploy loop for `horizon` steps (step 0 evaluates the
/// baseline). Each step `t >= 1` fits the score to step `t - 1`'s system and
/// deploys it as `threshold(score, theta, comparator)`.
pub fn iterate_deployment(
    model: &ScenarioModel,
    baseline: &Policy,
    theta: f64,
    comparator: Comparator,
    horizon: u32,
    backend: &Backend,
) -> Result<DeploymentTrace> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let mut steps: Vec<DeploymentStep> = Vec::with_capacity(horizon as usize);
    let mut sigs: Vec<StepSig> = Vec::with_capacity(horizon as usize);
    for t in 0..horizon {
        let (score, policy) = if t == 0 {
            (None, baseline.clone())
        } else {
            let prev = &steps[(t - 1) as usize].policy;
            let s = score_from(model, prev);
            let p = Policy::threshold(s.clone(), theta, comparator)?;
            (Some(s), p)
        };
        let mean = mean_outcome(model, &policy, backend)?;
        let treated = match &policy {
            Policy::Threshold { .. } => Some(treated_set(model, &policy)?),
            Policy::Stochastic { propensity } => {
                sigs.push(StepSig::Stochastic(propensity.to_string()));
                None
            }
        };
        if let Some(tset) = &treated {
            sigs.push(StepSig::Treated(tset.clone()));
        }
        steps.push(DeploymentStep { t, score, policy, mean_outcome: mean, treated });
    }
    let cycle = detect_cycle(&sigs);
    Ok(DeploymentTrace { steps, cycle })
}

// ---------------------------------------------------------------------------
// Expertise experiment
// ---------------------------------------------------------------------------

/// Population means of two systems that share all counterfactual structure
/// and differ only in how skilled the baseline decision makers are, before
/// and after a threshold score deployment.
#[derive(Debug, Clone, Serialize)]
pub struct ExpertiseComparison {
    pub pi0_base: String,
    pub pi0_skilled: String,
    pub theta: f64,
    pub comparator: Comparator,
    /// Baseline mean outcome of the ordinary system.
    pub e0: Estimate,
    /// Baseline mean outcome of the skilled system.
    pub e0_star: Estimate,
    /// Post-deployment mean outcome of the ordinary system.
    pub e1: Estimate,
    /// Post-deployment mean outcome of the skilled system.
    pub e1_star: Estimate,
    /// Whether the skilled system is better off before deployment and worse
    /// off after it.
    pub inversion: bool,
    pub notes: Vec<String>,
}

/// Compare two baselines that differ only in the propensity, where the
/// skilled one treats the group that benefits from treatment at a strictly
/// higher rate, and report whether score deployment inverts their ranking.
pub fn expertise_experiment(
    model: &ScenarioModel,
    pi0_base: &Expr,
    pi0_skilled: &Expr,
    theta: f64,
    comparator: Comparator,
    backend: &Backend,
) -> Result<ExpertiseComparison> {
    let base = model.with_pi0(pi0_base.clone())?;
    let skilled = model.with_pi0(pi0_skilled.clone())?;
    let mut notes = Vec::new();

    // No skill gap at all is a degenerate comparison.
    let mut max_gap = 0.0f64;
    for x in model.x_law().validation_grid() {
        for (u, _) in model.u_law().weighted_levels() {
            max_gap = max_gap.max((pi0_skilled.eval(x, u) - pi0_base.eval(x, u)).abs());
        }
    }
    if max_gap == 0.0 {
        return Err(Error::Domain(
            "skilled and base propensities are identical on the support grid".into(),
        ));
    }

    // Skill precondition: strictly higher treatment probability conditional
    // on the group the optimal regime treats.
    let optimal_group = {
        let m = model.clone();
        Stratum::new("optimal-treat", move |x, u| m.mu1().eval(x, u) < m.mu0().eval(x, u))
            .with_x_breakpoints(evaluation::gap_breakpoints(model))
    };
    let group_mass = evaluation::stratum_mass(model, &optimal_group, backend)?;
    if group_mass.value > ZERO_MASS_TOL {
        let conditional_rate = |m: &ScenarioModel, pi: &Expr| -> Result<f64> {
            let est = evaluation::expect_x(
                m,
                |x| {
                    m.u_law()
                        .weighted_levels()
                        .iter()
                        .map(|(u, w)| {
                            if optimal_group.contains(x, *u) {
                                w * pi.eval(x, *u)
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>()
                },
                optimal_group.x_breakpoints(),
                backend,
            )?;
            Ok(est.value / group_mass.value)
        };
        let rate_base = conditional_rate(&base, pi0_base)?;
        let rate_skilled = conditional_rate(&skilled, pi0_skilled)?;
        if rate_skilled <= rate_base + 1e-12 {
            return Err(Error::Domain(format!(
                "skill precondition violated: treatment rate on the optimal-treat group is \
                 {rate_skilled} (skilled) vs {rate_base} (base)"
            )));
        }
    } else {
        notes.push(
            "optimal-treat group has zero mass (treatment never strictly helps): the skill \
             precondition is vacuous"
                .to_string(),
        );
    }

    let base_policy = Policy::baseline(&base);
    let skilled_policy = Policy::baseline(&skilled);
    let e0 = mean_outcome(&base, &base_policy, backend)?;
    let e0_star = mean_outcome(&skilled, &skilled_policy, backend)?;

    let deployed_base =
        Policy::threshold(score_from(&base, &base_policy), theta, comparator)?;
    let deployed_skilled =
        Policy::threshold(score_from(&skilled, &skilled_policy), theta, comparator)?;
    let e1 = mean_outcome(&base, &deployed_base, backend)?;
    let e1_star = mean_outcome(&skilled, &deployed_skilled, backend)?;

    let inversion = e0_star.value < e0.value && e1_star.value > e1.value;
    Ok(ExpertiseComparison {
        pi0_base: pi0_base.to_string(),
        pi0_skilled: pi0_skilled.to_string(),
        theta,
        comparator,
        e0,
        e0_star,
        e1,
        e1_star,
        inversion,
        notes,
    })
}
