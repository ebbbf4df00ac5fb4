//! Robust tuning over a KL-divergence ball of workloads, and estimation of
//! the ball radius from observed workloads.
//!
//! The worst case over `{ŵ : KL(ŵ, w) ≤ ρ}` is handled through its dual
//! `g(λ, η) = η + ρλ + λ Σ w_i φ*((c_i − η)/λ)` with `φ*(s) = e^s − 1`.
//! For fixed `λ` the minimizing `η` has the closed form
//! `η* = λ ln Σ w_i e^{c_i/λ}`, which leaves a one-dimensional problem in `λ`.

use serde::{Deserialize, Serialize};

use crate::cost_model::{cost_vector, CostVector, LsmDesign, SystemParams, Workload, QUERY_TYPES};
use crate::error::{Error, Result};
use crate::nominal::{finish, solve_nominal, tune, Criterion, Family, SolverStatus, TuningBounds, TuningProblem};
use crate::scalar::Scalar;
use crate::solver::SolverOptions;

/// Smallest admissible dual multiplier.
pub const LAMBDA_MIN: f64 = 1e-6;
/// Largest dual multiplier searched.
pub const LAMBDA_MAX: f64 = 1e8;
/// Radii below this are solved nominally.
pub const RHO_EPSILON: f64 = 1e-6;
/// Arguments of `φ*` above this continue quadratically instead of
/// exponentially.
pub const EXP_GUARD: f64 = 30.0;

/// KL ball `{ŵ : KL(ŵ, center) ≤ rho}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRegion<F> {
    pub center: Workload<F>,
    pub rho: F,
}

impl<F: Scalar> UncertaintyRegion<F> {
    pub fn new(center: Workload<F>, rho: F) -> Result<Self> {
        let r = UncertaintyRegion { center, rho };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        self.center.validate()?;
        if !self.rho.is_finite() || self.rho < F::zero() {
            return Err(Error::InvalidRegion(format!("rho = {} must be finite and >= 0", self.rho)));
        }
        if self.rho > F::zero() && self.center.to_array().iter().any(|&x| x <= F::zero()) {
            return Err(Error::InvalidRegion(
                "center must be strictly positive in every component when rho > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `Σ p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_divergence<F: Scalar>(p: &Workload<F>, q: &Workload<F>) -> Result<F> {
    p.validate()?;
    q.validate()?;
    let (p, q) = (p.to_array(), q.to_array());
    let mut total = F::zero();
    for i in 0..QUERY_TYPES {
        if p[i] == F::zero() {
            continue;
        }
        if q[i] == F::zero() {
            return Err(Error::DivergenceInfinite);
        }
        total = total + p[i] * (p[i] / q[i]).ln();
    }
    Ok(total.max(F::zero()))
}

/// Convex conjugate of `t ln t − t + 1`: `e^s − 1`.
pub fn kl_conjugate<F: Scalar>(s: F) -> F {
    s.exp() - F::one()
}

fn guarded_conjugate(s: f64) -> f64 {
    if s <= EXP_GUARD {
        s.exp() - 1.0
    } else {
        let d = s - EXP_GUARD;
        EXP_GUARD.exp() * (1.0 + d + 0.5 * d * d) - 1.0
    }
}

/// `g(λ, η)` for explicit multipliers and a cost vector.
pub fn dual_value(costs: &CostVector<f64>, lambda: f64, eta: f64, region: &UncertaintyRegion<f64>) -> Result<f64> {
    if !(lambda >= LAMBDA_MIN) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda = {lambda} must be >= {LAMBDA_MIN}")));
    }
    if !eta.is_finite() {
        return Err(Error::Domain("eta must be finite".into()));
    }
    let w = region.center.to_array();
    let c = costs.to_array();
    let sum: f64 = (0..QUERY_TYPES)
        .map(|i| w[i] * guarded_conjugate((c[i] - eta) / lambda))
        .sum();
    Ok(eta + region.rho * lambda + lambda * sum)
}

/// `g(λ, η)` for a design.
pub fn dual_objective(
    design: &LsmDesign<f64>,
    lambda: f64,
    eta: f64,
    region: &UncertaintyRegion<f64>,
    sys: &SystemParams<f64>,
) -> Result<f64> {
    region.validate()?;
    dual_value(&cost_vector(design, sys)?, lambda, eta, region)
}

/// `η* = λ ln Σ w_i e^{c_i/λ}`, evaluated stably.
pub fn optimal_eta(costs: &CostVector<f64>, lambda: f64, center: &Workload<f64>) -> f64 {
    let w = center.to_array();
    let c = costs.to_array();
    let top = (0..QUERY_TYPES)
        .filter(|&i| w[i] > 0.0)
        .map(|i| c[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = (0..QUERY_TYPES)
        .filter(|&i| w[i] > 0.0)
        .map(|i| w[i] * ((c[i] - top) / lambda).exp())
        .sum();
    top + lambda * s.ln()
}

/// `min_η g(λ, η) = η*(λ) + ρλ`.
pub fn profiled_dual(costs: &CostVector<f64>, lambda: f64, region: &UncertaintyRegion<f64>) -> f64 {
    optimal_eta(costs, lambda, &region.center) + region.rho * lambda
}

/// Multipliers minimizing the dual for a fixed cost vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda: f64,
    pub eta: f64,
    pub value: f64,
}

/// Golden-section search of the profiled dual over `ln λ`.
pub fn minimize_dual(costs: &CostVector<f64>, region: &UncertaintyRegion<f64>) -> DualSolution {
    let f = |x: f64| profiled_dual(costs, x.exp(), region);
    let (mut a, mut b) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
    let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..160 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    let mut best = if f1 <= f2 { x1 } else { x2 };
    for edge in [LAMBDA_MIN.ln(), LAMBDA_MAX.ln()] {
        if f(edge) < f(best) {
            best = edge;
        }
    }
    let lambda = best.exp();
    let eta = optimal_eta(costs, lambda, &region.center);
    DualSolution { lambda, eta, value: eta + region.rho * lambda }
}

struct WorstCase<'a>(&'a UncertaintyRegion<f64>);

impl Criterion for WorstCase<'_> {
    fn extra_dims(&self) -> usize {
        1
    }

    fn extra_start(&self) -> Vec<Option<f64>> {
        // λ = 1
        vec![Some(-LAMBDA_MIN.ln() / (LAMBDA_MAX.ln() - LAMBDA_MIN.ln()))]
    }

    fn smooth(&self, c: &CostVector<f64>, extra: &[f64]) -> f64 {
        let (lo, hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
        let lambda = (lo + extra[0].clamp(0.0, 1.0) * (hi - lo)).exp();
        profiled_dual(c, lambda, self.0)
    }

    fn exact(&self, c: &CostVector<f64>) -> f64 {
        minimize_dual(c, self.0).value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustResult {
    pub design: LsmDesign<f64>,
    pub deployed_design: LsmDesign<f64>,
    pub lambda: f64,
    pub eta: f64,
    /// Worst-case expected cost over the region, `g(λ, η)`.
    pub dual_objective: f64,
    /// Worst-case expected cost of the deployed design.
    pub deployed_dual_objective: f64,
    /// Expected cost at the region center.
    pub nominal_cost: f64,
    pub status: SolverStatus,
    pub rounding_flagged: bool,
}

/// Minimizes the worst-case expected cost over `region`.
pub fn solve_robust(
    region: &UncertaintyRegion<f64>,
    sys: &SystemParams<f64>,
    family: Family,
    bounds: &TuningBounds,
    opts: &SolverOptions,
    seed: u64,
) -> Result<RobustResult> {
    region.validate()?;
    if region.rho < RHO_EPSILON {
        let nominal = solve_nominal(&TuningProblem {
            expected_workload: region.center,
            sys: *sys,
            family,
            bounds: *bounds,
            solver: *opts,
            seed,
        })?;
        let c = cost_vector(&nominal.design, sys)?;
        let dual = minimize_dual(&c, region);
        let deployed_dual = minimize_dual(&cost_vector(&nominal.deployed_design, sys)?, region).value;
        return Ok(RobustResult {
            design: nominal.design,
            deployed_design: nominal.deployed_design,
            lambda: dual.lambda,
            eta: dual.eta,
            dual_objective: dual.value,
            deployed_dual_objective: deployed_dual,
            nominal_cost: nominal.objective,
            status: nominal.status,
            rounding_flagged: nominal.rounding_flagged,
        });
    }
    let crit = WorstCase(region);
    let tuned = tune(family, sys, bounds, &crit, opts, seed)?;
    let res = finish(tuned, sys, |d| Ok(minimize_dual(&cost_vector(d, sys)?, region).value))?;
    let c = cost_vector(&res.design, sys)?;
    let dual = minimize_dual(&c, region);
    Ok(RobustResult {
        nominal_cost: region.center.dot(&c),
        design: res.design,
        deployed_design: res.deployed_design,
        lambda: dual.lambda,
        eta: dual.eta,
        dual_objective: dual.value,
        deployed_dual_objective: res.deployed_objective,
        status: res.status,
        rounding_flagged: res.rounding_flagged,
    })
}

/// Largest divergence of any historical workload from their mean.
pub fn rho_from_history<F: Scalar>(history: &[Workload<F>]) -> Result<F> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let n = F::from_usize_lossy(history.len());
    let mut mean = [F::zero(); QUERY_TYPES];
    for w in history {
        w.validate()?;
        for (m, x) in mean.iter_mut().zip(w.to_array()) {
            *m = *m + x / n;
        }
    }
    // renormalize away rounding in the running sum
    let s = mean.iter().fold(F::zero(), |a, &b| a + b);
    let mean = Workload::from_array(mean.map(|x| x / s))?;
    history
        .iter()
        .try_fold(F::zero(), |acc, w| Ok(acc.max(kl_divergence(w, &mean)?)))
}

/// Divergence of the off-period workload from the expected one.
pub fn rho_from_pair<F: Scalar>(w_expected: &Workload<F>, w_offperiod: &Workload<F>) -> Result<F> {
    kl_divergence(w_offperiod, w_expected)
}
