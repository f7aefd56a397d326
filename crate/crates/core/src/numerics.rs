//! Deterministic numeric backends: adaptive quadrature, counter-seeded Monte
//! Carlo, bracketing root finding, and 1-D maximization.
//!
//! Every expectation in the crate flows through [`integrate`] or [`mc_mean`],
//! so the two backends can be cross-checked against each other. All routines
//! are pure: identical inputs (including seeds) produce bit-identical output
//! regardless of call order or thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::CovariateLaw;

/// Default number of scan cells used to bracket sign changes and maxima.
pub const DEFAULT_SCAN_CELLS: usize = 2048;

/// Default interval tolerance for root refinement.
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;

/// Adaptive quadrature configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Absolute tolerance on the expectation.
    pub abs_tol: f64,
    /// Total interval-split budget for one integration call.
    pub max_subdivisions: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { abs_tol: 1e-9, max_subdivisions: 10_000 }
    }
}

/// Monte Carlo configuration. The seed fully determines the sample stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub n_samples: u64,
    pub seed: u64,
}

/// Which numeric backend produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateBackend {
    #[serde(rename = "quadrature")]
    Quadrature,
    #[serde(rename = "monte-carlo")]
    MonteCarlo,
    #[serde(rename = "exact-enumeration")]
    ExactEnumeration,
}

/// A numeric expectation with an error estimate: the quadrature residual, the
/// Monte Carlo standard error, or zero for exact enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error_bound: f64,
    pub backend: EstimateBackend,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, error_bound: 0.0, backend: EstimateBackend::ExactEnumeration }
    }
}

/// Backend selector threaded through the evaluation layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Quadrature(QuadratureSpec),
    MonteCarlo(MonteCarloSpec),
    /// Exact weighted enumeration; requires a discrete covariate law.
    Exact,
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Quadrature(QuadratureSpec::default())
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

struct AdaptiveState<'f> {
    f: &'f dyn Fn(f64) -> f64,
    /// Absolute tolerance on the raw integral (not yet divided by the
    /// support width).
    tol: f64,
    budget: u32,
    exhausted: bool,
    err_accum: f64,
}

/// Composite Simpson estimate over [a, b] with midpoint m.
fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    estimate: f64,
}

fn adapt(st: &mut AdaptiveState, panel: Panel, tol: f64, depth: u32) -> f64 {
    let Panel { a, b, fa, fm, fb, estimate } = panel;
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = (st.f)(lm);
    let frm = (st.f)(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = (left + right - estimate) / 15.0;
    // A minimum depth guards against spurious early agreement on symmetric
    // integrands; Richardson extrapolation sharpens the accepted panel.
    if depth >= 2 && (err.abs() <= tol || st.budget == 0) {
        if st.budget == 0 && err.abs() > tol {
            st.exhausted = true;
        }
        st.err_accum += err.abs();
        return left + right + err;
    }
    st.budget = st.budget.saturating_sub(1);
    let lp = Panel { a, b: m, fa, fm: flm, fb: fm, estimate: left };
    let rp = Panel { a: m, b, fa: fm, fm: frm, fb, estimate: right };
    adapt(st, lp, 0.5 * tol, depth + 1) + adapt(st, rp, 0.5 * tol, depth + 1)
}

fn integrate_panel(st: &mut AdaptiveState, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = (st.f)(a);
    let fm = (st.f)(m);
    let fb = (st.f)(b);
    let estimate = simpson(fa, fm, fb, b - a);
    adapt(st, Panel { a, b, fa, fm, fb, estimate }, tol, 0)
}

/// Expectation `E[f(X)]` under `law`.
///
/// Discrete laws are summed exactly. Continuous laws use adaptive Simpson
/// quadrature with Richardson extrapolation; `f` must be piecewise continuous
/// with at most finitely many jumps (split those with
/// [`integrate_piecewise`]). Exhausting the subdivision budget yields
/// [`Error::NumericFailure`] carrying the best estimate found.
pub fn integrate(f: impl Fn(f64) -> f64, law: &CovariateLaw, spec: &QuadratureSpec) -> Result<Estimate> {
    integrate_piecewise(f, law, spec, &[])
}

/// Like [`integrate`], but splits the continuous domain at the given interior
/// breakpoints first so each panel is smooth. Breakpoints outside the support
/// are ignored; discrete laws are summed exactly regardless.
pub fn integrate_piecewise(
    f: impl Fn(f64) -> f64,
    law: &CovariateLaw,
    spec: &QuadratureSpec,
    breakpoints: &[f64],
) -> Result<Estimate> {
    match law {
        CovariateLaw::Discrete { points } => {
            let value = points.iter().map(|p| p.weight * f(p.value)).sum();
            Ok(Estimate { value, error_bound: 0.0, backend: EstimateBackend::ExactEnumeration })
        }
        CovariateLaw::Uniform { lo, hi } => {
            let width = hi - lo;
            let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|b| *b > *lo && *b < *hi).collect();
            cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
            cuts.dedup();
            let mut edges = Vec::with_capacity(cuts.len() + 2);
            edges.push(*lo);
            edges.extend(cuts);
            edges.push(*hi);

            let mut st = AdaptiveState {
                f: &f,
                tol: spec.abs_tol * width,
                budget: spec.max_subdivisions,
                exhausted: false,
                err_accum: 0.0,
            };
            let mut total = 0.0;
            let n_panels = edges.len() - 1;
            for w in edges.windows(2) {
                let panel_tol = st.tol / n_panels as f64;
                total += integrate_panel(&mut st, w[0], w[1], panel_tol);
            }
            let est = Estimate {
                value: total / width,
                error_bound: st.err_accum / width,
                backend: EstimateBackend::Quadrature,
            };
            if st.exhausted {
                return Err(Error::NumericFailure {
                    message: format!("subdivision budget {} exhausted", spec.max_subdivisions),
                    best: est,
                });
            }
            Ok(est)
        }
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer keyed by (seed, counter). Sample `i` depends only on
/// the pair, never on evaluation order.
fn counter_u64(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) for sample index `i` of the stream `seed`.
pub fn counter_uniform(seed: u64, i: u64) -> f64 {
    (counter_u64(seed, i) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

fn sample_law(law: &CovariateLaw, unit: f64) -> f64 {
    match law {
        CovariateLaw::Uniform { lo, hi } => lo + unit * (hi - lo),
        CovariateLaw::Discrete { points } => {
            let mut acc = 0.0;
            for p in points {
                acc += p.weight;
                if unit < acc {
                    return p.value;
                }
            }
            points.last().expect("discrete law is nonempty").value
        }
    }
}

/// Sample mean of `f(X)` with its standard error. The per-sample counter
/// seeding makes the result independent of summation batching; this
/// implementation accumulates sequentially with Welford's recurrence.
pub fn mc_mean(f: impl Fn(f64) -> f64, law: &CovariateLaw, spec: &MonteCarloSpec) -> Estimate {
    let n = spec.n_samples.max(1);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let x = sample_law(law, counter_uniform(spec.seed, i));
        let v = f(x);
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let se = if n > 1 { (m2 / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
    Estimate { value: mean, error_bound: se, backend: EstimateBackend::MonteCarlo }
}

// ---------------------------------------------------------------------------
// Root finding and maximization
// ---------------------------------------------------------------------------

/// All sign-change roots of `f` on [lo, hi], ascending, refined by bisection
/// to interval width `tol`, deduplicated with minimum gap `tol`. Sign changes
/// are bracketed on a scan grid of [`DEFAULT_SCAN_CELLS`] cells.
pub fn find_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Vec<f64> {
    find_roots_scan(f, lo, hi, tol, DEFAULT_SCAN_CELLS)
}

/// [`find_roots`] with an explicit scan density.
pub fn find_roots_scan(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64, cells: usize) -> Vec<f64> {
    let cells = cells.max(1);
    let mut roots = Vec::new();
    let step = (hi - lo) / cells as f64;
    let mut x0 = lo;
    let mut f0 = f(x0);
    for i in 1..=cells {
        let x1 = if i == cells { hi } else { lo + step * i as f64 };
        let f1 = f(x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0.signum() != f1.signum() && f1 != 0.0 {
            roots.push(bisect(&f, x0, x1, f0, tol));
        }
        x0 = x1;
        f0 = f1;
    }
    if f0 == 0.0 {
        roots.push(x0);
    }
    roots.dedup_by(|b, a| (*b - *a).abs() < tol);
    roots
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, fa: f64, tol: f64) -> f64 {
    let neg_at_a = fa < 0.0;
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == neg_at_a {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Location and value of the maximum of `f` on [lo, hi]: coarse scan over
/// [`DEFAULT_SCAN_CELLS`] cells followed by golden-section refinement of the
/// best bracket down to width `tol`.
pub fn maximize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let cells = DEFAULT_SCAN_CELLS;
    let step = (hi - lo) / cells as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=cells {
        let x = if i == cells { hi } else { lo + step * i as f64 };
        let v = f(x);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = if best_i == 0 { lo } else { lo + step * (best_i - 1) as f64 };
    let mut b = if best_i >= cells { hi } else { lo + step * (best_i + 1) as f64 };

    // Golden-section search on the bracket around the best scan point.
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let xm = 0.5 * (a + b);
    let fm = f(xm);
    // The maximum may sit on the original boundary.
    let mut arg = xm;
    let mut val = fm;
    for (x, v) in [(lo, f(lo)), (hi, f(hi))] {
        if v > val {
            arg = x;
            val = v;
        }
    }
    (arg, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::WeightedPoint;
    use proptest::prelude::*;

    fn unit() -> CovariateLaw {
        CovariateLaw::Uniform { lo: 0.0, hi: 1.0 }
    }

    fn toy_score(x: f64) -> f64 {
        x * (0.7 - x) * (0.7 - x) + (1.0 - x) * x
    }

    #[test]
    fn quadrature_is_exact_on_polynomials() {
        let spec = QuadratureSpec::default();
        let e = integrate(|x| x, &unit(), &spec).unwrap();
        assert!((e.value - 0.5).abs() < 1e-13);
        assert_eq!(e.backend, EstimateBackend::Quadrature);

        let e = integrate(|x| (0.7 - x) * (0.7 - x), &unit(), &spec).unwrap();
        assert!((e.value - 0.37 / 3.0).abs() < 1e-13, "{}", e.value);

        let e = integrate(|x| x * x * x - 2.4 * x * x + 1.49 * x, &unit(), &spec).unwrap();
        assert!((e.value - 0.195).abs() < 1e-13, "{}", e.value);
    }

    #[test]
    fn discrete_law_is_enumerated_exactly() {
        let law = CovariateLaw::Discrete {
            points: vec![
                WeightedPoint { value: 0.0, weight: 0.25 },
                WeightedPoint { value: 0.5, weight: 0.5 },
                WeightedPoint { value: 1.0, weight: 0.25 },
            ],
        };
        let e = integrate(|x| x, &law, &QuadratureSpec::default()).unwrap();
        assert_eq!(e.value, 0.5);
        assert_eq!(e.error_bound, 0.0);
        assert_eq!(e.backend, EstimateBackend::ExactEnumeration);
    }

    #[test]
    fn budget_exhaustion_reports_best_estimate() {
        let spec = QuadratureSpec { abs_tol: 1e-12, max_subdivisions: 3 };
        let err = integrate(|x| (1e5 * x).sin().abs(), &unit(), &spec).unwrap_err();
        match err {
            Error::NumericFailure { best, .. } => {
                assert!(best.value.is_finite());
                assert!(best.error_bound > 0.0);
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn piecewise_split_handles_indicators() {
        // E[1{x >= 0.3} * x] = (1 - 0.09) / 2
        let spec = QuadratureSpec::default();
        let f = |x: f64| if x >= 0.3 { x } else { 0.0 };
        let e = integrate_piecewise(f, &unit(), &spec, &[0.3]).unwrap();
        assert!((e.value - 0.455).abs() < 1e-12, "{}", e.value);
    }

    #[test]
    fn mc_constant_has_zero_se() {
        let spec = MonteCarloSpec { n_samples: 1000, seed: 42 };
        let e = mc_mean(|_| 1.0, &unit(), &spec);
        assert_eq!(e.value, 1.0);
        assert_eq!(e.error_bound, 0.0);
    }

    #[test]
    fn mc_mean_agrees_with_lln() {
        let spec = MonteCarloSpec { n_samples: 1_000_000, seed: 7 };
        let e = mc_mean(|x| x, &unit(), &spec);
        assert!((e.value - 0.5).abs() <= 4.0 * e.error_bound, "{} +/- {}", e.value, e.error_bound);
    }

    #[test]
    fn mc_matches_quadrature_on_threshold_integrand() {
        // The deployment-difference integrand at theta = 0.30: nobody scores
        // that high, so the indicator is identically zero.
        let theta = 0.30;
        let f = move |x: f64| {
            let treated = if toy_score(x) >= theta { 1.0 } else { 0.0 };
            (treated - x) * ((0.7 - x) * (0.7 - x) - x)
        };
        let q = integrate(f, &unit(), &QuadratureSpec::default()).unwrap();
        let m = mc_mean(f, &unit(), &MonteCarloSpec { n_samples: 1_000_000, seed: 11 });
        assert!((q.value - m.value).abs() <= 4.0 * m.error_bound);
        assert!((q.value - 0.305).abs() < 1e-12);
    }

    #[test]
    fn mc_is_deterministic_and_order_free() {
        let spec = MonteCarloSpec { n_samples: 10_000, seed: 99 };
        let a = mc_mean(|x| x * x, &unit(), &spec);
        let b = mc_mean(|x| x * x, &unit(), &spec);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.error_bound.to_bits(), b.error_bound.to_bits());
        // sample i is a pure function of (seed, i)
        let s1 = counter_uniform(99, 1234);
        let s2 = counter_uniform(99, 1234);
        assert_eq!(s1.to_bits(), s2.to_bits());
    }

    #[test]
    fn roots_of_toy_treatment_gap() {
        // mu1 - mu0 = (0.7 - x)^2 - x has one root in (0, 1)
        let roots = find_roots(|x| (0.7 - x) * (0.7 - x) - x, 0.0, 1.0, 1e-10);
        assert_eq!(roots.len(), 1);
        let expected = (2.4 - 3.8f64.sqrt()) / 2.0;
        assert!((roots[0] - expected).abs() < 1e-9, "{} vs {}", roots[0], expected);
    }

    #[test]
    fn roots_of_score_threshold_match_dense_scan() {
        let f = |x: f64| toy_score(x) - 0.2;
        let roots = find_roots(f, 0.0, 1.0, 1e-10);
        assert_eq!(roots.len(), 2);
        // dense-scan oracle
        let n = 1_000_000;
        let mut oracle = Vec::new();
        for i in 0..n {
            let a = i as f64 / n as f64;
            let b = (i + 1) as f64 / n as f64;
            if f(a).signum() != f(b).signum() {
                oracle.push(0.5 * (a + b));
            }
        }
        assert_eq!(oracle.len(), 2);
        for (r, o) in roots.iter().zip(&oracle) {
            assert!((r - o).abs() < 1e-5, "{r} vs {o}");
        }
    }

    #[test]
    fn no_sign_change_means_no_roots() {
        assert!(find_roots(|_| 1.0, 0.0, 1.0, 1e-10).is_empty());
    }

    #[test]
    fn maximizer_locates_toy_score_peak() {
        let (arg, val) = maximize_1d(toy_score, 0.0, 1.0, 1e-9);
        let expected_arg = (4.8 - 5.16f64.sqrt()) / 6.0;
        assert!((arg - expected_arg).abs() < 1e-6, "{arg}");
        assert!((val - 0.276530248386).abs() < 1e-9, "{val}");
        assert!(val <= 0.30);
    }

    #[test]
    fn maximizer_handles_parabola_and_boundary() {
        let (arg, val) = maximize_1d(|x| -(x - 0.5) * (x - 0.5), 0.0, 1.0, 1e-9);
        assert!((arg - 0.5).abs() < 1e-6);
        assert!(val.abs() < 1e-12);
        let (arg, _) = maximize_1d(|x| x, 0.0, 1.0, 1e-9);
        assert!((arg - 1.0).abs() < 1e-6);
    }

    proptest! {
        /// Every reported root is certified: the function either changes
        /// sign across it or nearly vanishes at it.
        #[test]
        fn roots_are_certified(c0 in -1.0f64..1.0, c1 in -2.0f64..2.0, c2 in -2.0f64..2.0) {
            let f = move |x: f64| c0 + c1 * x + c2 * x * x * x;
            let tol = 1e-9;
            let roots = find_roots(f, 0.0, 1.0, tol);
            for w in roots.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
            for r in roots {
                let crossed = f((r - tol).max(0.0)).signum() != f((r + tol).min(1.0)).signum();
                prop_assert!(crossed || f(r).abs() <= tol);
            }
        }

        #[test]
        fn quadrature_matches_enumeration_on_discrete(vals in proptest::collection::vec(0.0f64..1.0, 1..6)) {
            let n = vals.len();
            let mut points: Vec<WeightedPoint> = vals
                .iter()
                .enumerate()
                .map(|(i, _)| WeightedPoint { value: i as f64, weight: 1.0 / n as f64 })
                .collect();
            // make weights sum to exactly 1
            let partial: f64 = points.iter().take(n - 1).map(|p| p.weight).sum();
            points[n - 1].weight = 1.0 - partial;
            let law = CovariateLaw::Discrete { points };
            let f = |x: f64| vals[x as usize];
            let a = integrate(f, &law, &QuadratureSpec::default()).unwrap();
            let direct: f64 = vals.iter().map(|v| v / n as f64).sum();
            // adjust for the corrected last weight
            let exact: f64 = match &law {
                CovariateLaw::Discrete { points } => points.iter().map(|p| p.weight * f(p.value)).sum(),
                _ => unreachable!(),
            };
            prop_assert!((a.value - exact).abs() <= 1e-12);
            prop_assert!((a.value - direct).abs() <= 1e-9);
        }
    }
}
