//! Nominal tuning: the design minimizing expected cost for one known workload.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost_model::{
    cost_vector, level_count, smooth_level_count, CostVector, LevelLayout, LsmDesign, Policy,
    SystemParams, Workload,
};
use crate::error::{Error, Result};
use crate::scalar::ceil_tol;
use crate::solver::{minimize_box, start_points, LocalResult, SolverOptions};

/// Relative gap between deployed and continuous objective above which the
/// rounding is flagged.
pub const ROUNDING_BAND: f64 = 0.15;

/// Design family searched by the tuners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Leveling,
    Tiering,
    #[serde(alias = "lazy-leveling")]
    Lazy,
    OneLeveling,
    Fluid,
    Klsm,
    /// Best of leveling and tiering.
    Classic,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Leveling,
        Family::Tiering,
        Family::Lazy,
        Family::OneLeveling,
        Family::Fluid,
        Family::Klsm,
        Family::Classic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Leveling => "leveling",
            Family::Tiering => "tiering",
            Family::Lazy => "lazy",
            Family::OneLeveling => "one-leveling",
            Family::Fluid => "fluid",
            Family::Klsm => "klsm",
            Family::Classic => "classic",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "leveling" => Ok(Family::Leveling),
            "tiering" => Ok(Family::Tiering),
            "lazy" | "lazy-leveling" => Ok(Family::Lazy),
            "one-leveling" | "1-leveling" => Ok(Family::OneLeveling),
            "fluid" => Ok(Family::Fluid),
            "klsm" | "k-lsm" => Ok(Family::Klsm),
            "classic" => Ok(Family::Classic),
            other => Err(Error::InvalidDesign(format!("unknown design family '{other}'"))),
        }
    }
}

/// Box bounds on the tunable knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningBounds {
    pub t_min: f64,
    pub t_max: f64,
    pub filter_min_bits: f64,
    /// Defaults to `m - E`.
    pub filter_max_bits: Option<f64>,
}

impl Default for TuningBounds {
    fn default() -> Self {
        TuningBounds { t_min: 2.0, t_max: 100.0, filter_min_bits: 0.0, filter_max_bits: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningProblem {
    pub expected_workload: Workload<f64>,
    pub sys: SystemParams<f64>,
    pub family: Family,
    #[serde(default)]
    pub bounds: TuningBounds,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
}

impl TuningProblem {
    pub fn new(expected_workload: Workload<f64>, sys: SystemParams<f64>, family: Family) -> Self {
        TuningProblem {
            expected_workload,
            sys,
            family,
            bounds: TuningBounds::default(),
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub converged: bool,
    /// Iterations of the winning start.
    pub iterations: usize,
    pub starts: usize,
    pub converged_starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    /// Continuous solution.
    pub design: LsmDesign<f64>,
    /// Integer size ratio and run capacities.
    pub deployed_design: LsmDesign<f64>,
    /// Expected cost of `design`.
    pub objective: f64,
    /// Expected cost of `deployed_design`.
    pub deployed_objective: f64,
    pub status: SolverStatus,
    /// Deployed objective deviates from the continuous one by more than
    /// [`ROUNDING_BAND`].
    pub rounding_flagged: bool,
    /// System the designs are evaluated against (differs from the input
    /// only under pinned memory).
    pub sys: SystemParams<f64>,
}

/// Objective over cost vectors. `smooth` may use extra solver coordinates
/// (in the unit box); `exact` must optimize them out.
pub(crate) trait Criterion: Sync {
    fn extra_dims(&self) -> usize {
        0
    }
    fn extra_start(&self) -> Vec<Option<f64>> {
        vec![None; self.extra_dims()]
    }
    fn smooth(&self, c: &CostVector<f64>, extra: &[f64]) -> f64;
    fn exact(&self, c: &CostVector<f64>) -> f64;
}

pub(crate) struct Expected<'a>(pub &'a Workload<f64>);

impl Criterion for Expected<'_> {
    fn smooth(&self, c: &CostVector<f64>, _: &[f64]) -> f64 {
        self.0.dot(c)
    }
    fn exact(&self, c: &CostVector<f64>) -> f64 {
        self.0.dot(c)
    }
}

/// A point of the search space in natural units. Run capacities are kept as
/// fractions `s` of `[1, T-1]` so they follow `T`.
#[derive(Debug, Clone, PartialEq)]
struct Point {
    t: f64,
    filter: f64,
    shares: Vec<f64>,
}

fn capacity(share: f64, t: f64) -> f64 {
    1.0 + share.clamp(0.0, 1.0) * (t - 2.0)
}

struct Space {
    family: Family,
    sys: SystemParams<f64>,
    t: (f64, f64),
    filter: (f64, f64),
    shares: usize,
}

impl Space {
    fn new(family: Family, sys: &SystemParams<f64>, bounds: &TuningBounds) -> Result<Self> {
        sys.validate()?;
        let filter_cap = sys.memory_bits - sys.entry_bits;
        let f_hi = bounds.filter_max_bits.unwrap_or(filter_cap);
        let f_lo = bounds.filter_min_bits;
        if !(bounds.t_min >= 2.0) || !(bounds.t_max >= bounds.t_min) || !bounds.t_max.is_finite() {
            return Err(Error::InfeasibleBounds(format!(
                "size ratio bounds [{}, {}] must satisfy 2 <= t_min <= t_max < inf",
                bounds.t_min, bounds.t_max
            )));
        }
        if !(f_lo >= 0.0) || !(f_hi >= f_lo) || f_hi > filter_cap * (1.0 + 1e-12) {
            return Err(Error::InfeasibleBounds(format!(
                "filter memory bounds [{f_lo}, {f_hi}] must satisfy 0 <= lo <= hi <= m - E = {filter_cap}"
            )));
        }
        let f_hi = f_hi.min(filter_cap);
        let shares = match family {
            Family::Fluid => 2,
            Family::Klsm => level_count(bounds.t_min, sys, sys.memory_bits - f_hi)?,
            _ => 0,
        };
        Ok(Space { family, sys: *sys, t: bounds.t_min_max(), filter: (f_lo, f_hi), shares })
    }

    fn t_var(&self) -> bool {
        self.t.1 > self.t.0
    }

    fn filter_var(&self) -> bool {
        self.filter.1 > self.filter.0
    }

    fn dims(&self) -> usize {
        usize::from(self.t_var()) + usize::from(self.filter_var()) + self.shares
    }

    fn decode(&self, u: &[f64]) -> Point {
        let mut idx = 0;
        let mut take = |lo: f64, hi: f64, var: bool| {
            if var {
                let v = lo + u[idx].clamp(0.0, 1.0) * (hi - lo);
                idx += 1;
                v
            } else {
                lo
            }
        };
        let t = take(self.t.0, self.t.1, self.t_var());
        let filter = take(self.filter.0, self.filter.1, self.filter_var());
        let shares = u[idx..idx + self.shares].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Point { t, filter, shares }
    }

    /// Unit-box coordinates of a design found for the sub-family `from`.
    fn encode(&self, design: &LsmDesign<f64>, from: Family) -> Vec<f64> {
        let unit = |v: f64, (lo, hi): (f64, f64)| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        let mut u = Vec::with_capacity(self.dims());
        if self.t_var() {
            u.push(unit(design.size_ratio, self.t));
        }
        if self.filter_var() {
            u.push(unit(design.filter_bits, self.filter));
        }
        let levels = design.levels();
        u.extend((0..self.shares).map(|i| match (from, self.family) {
            (Family::Tiering, _) => 1.0,
            (Family::Lazy, Family::Fluid) => {
                if i == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            (Family::Lazy, _) => {
                if i + 1 < levels {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }));
        u
    }

    fn smooth_costs(&self, p: &Point) -> Result<CostVector<f64>> {
        let t = p.t;
        let top = t - 1.0;
        let blend = |upper: f64, last: f64, i: usize, n: usize, frac: f64| {
            if i == n {
                last
            } else if i + 1 == n {
                frac * upper + (1.0 - frac) * last
            } else {
                upper
            }
        };
        let layout = LevelLayout::smooth(t, p.filter, &self.sys, |i, n, frac| match self.family {
            Family::Leveling | Family::Classic => 1.0,
            Family::Tiering => top,
            Family::Lazy => blend(top, 1.0, i, n, frac),
            Family::OneLeveling => {
                if i == 1 {
                    top
                } else {
                    1.0
                }
            }
            Family::Fluid => blend(capacity(p.shares[0], t), capacity(p.shares[1], t), i, n, frac),
            Family::Klsm => capacity(p.shares[(i - 1).min(p.shares.len() - 1)], t),
        })?;
        Ok(layout.costs(&self.sys))
    }

    fn policy(&self, p: &Point) -> Policy<f64> {
        match self.family {
            Family::Leveling | Family::Classic => Policy::Leveling,
            Family::Tiering => Policy::Tiering,
            Family::Lazy => Policy::LazyLeveling,
            Family::OneLeveling => Policy::OneLeveling,
            Family::Fluid => Policy::Fluid {
                upper: capacity(p.shares[0], p.t),
                last: capacity(p.shares[1], p.t),
            },
            Family::Klsm => Policy::KLsm {
                capacities: p.shares.iter().map(|&s| capacity(s, p.t)).collect(),
            },
        }
    }

    fn design(&self, p: &Point) -> Result<LsmDesign<f64>> {
        LsmDesign::new(self.policy(p), p.t, p.filter, &self.sys)
    }

    /// The point itself plus variants with an integral level count: a
    /// partially filled last level is either removed (larger buffer or size
    /// ratio) or completed (smaller buffer or size ratio).
    fn snapped(&self, p: &Point) -> Vec<Point> {
        let mut out = vec![p.clone()];
        let m = self.sys.memory_bits;
        let Ok(depth) = smooth_level_count(p.t, &self.sys, m - p.filter) else {
            return out;
        };
        let full = ceil_tol(depth);
        if full - depth <= 1e-9 || depth < 1.0 {
            return out;
        }
        let data = self.sys.entries * self.sys.entry_bits;
        for k in [full - 1.0, full] {
            if k < 1.0 {
                continue;
            }
            if self.filter_var() {
                let filter = m - data / (p.t.powf(k) - 1.0);
                if filter >= self.filter.0 && filter <= self.filter.1 {
                    out.push(Point { filter, ..p.clone() });
                }
            }
            if self.t_var() {
                let t = (data / (m - p.filter) + 1.0).powf(1.0 / k);
                if t >= self.t.0 && t <= self.t.1 {
                    out.push(Point { t, ..p.clone() });
                }
            }
        }
        out
    }
}

impl TuningBounds {
    fn t_min_max(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }
}

/// Best design of one family under `crit`.
pub(crate) struct Tuned {
    pub design: LsmDesign<f64>,
    pub value: f64,
    pub status: SolverStatus,
}

fn better(a: &(LsmDesign<f64>, f64), b: &(LsmDesign<f64>, f64)) -> bool {
    let tol = 1e-9 * a.1.abs().max(b.1.abs()).max(1e-300);
    if (a.1 - b.1).abs() > tol {
        return a.1 < b.1;
    }
    if a.0.size_ratio != b.0.size_ratio {
        return a.0.size_ratio < b.0.size_ratio;
    }
    a.0.filter_bits < b.0.filter_bits
}

fn tune_family<C: Criterion>(
    family: Family,
    sys: &SystemParams<f64>,
    bounds: &TuningBounds,
    crit: &C,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Tuned> {
    let space = Space::new(family, sys, bounds)?;
    let dd = space.dims();
    let objective = |u: &[f64]| -> f64 {
        let p = space.decode(&u[..dd]);
        match space.smooth_costs(&p) {
            Ok(c) => crit.smooth(&c, &u[dd..]),
            Err(_) => f64::INFINITY,
        }
    };
    let extra_start = crit.extra_start();
    let mut fixed = vec![None; dd];
    fixed.extend(extra_start.iter().copied());
    let mut starts = start_points(dd + crit.extra_dims(), opts.starts.max(1), seed, &fixed);

    // Flexible families also start from the optima of the classical layouts
    // they contain, so they never end up worse than those.
    let mut warm = Vec::new();
    if matches!(family, Family::Fluid | Family::Klsm) {
        for sub in [Family::Leveling, Family::Tiering, Family::Lazy] {
            let Ok(t) = tune_family(sub, sys, bounds, crit, opts, seed) else { continue };
            let mut u = space.encode(&t.design, sub);
            u.extend(extra_start.iter().map(|v| v.unwrap_or(0.5)));
            warm.push(u);
        }
    }
    let n_sobol = starts.len();
    starts.extend(warm.iter().cloned());
    let runs: Vec<LocalResult> = starts.iter().map(|x0| minimize_box(&objective, x0, opts)).collect();

    let mut best: Option<((LsmDesign<f64>, f64), usize)> = None;
    let converged_starts = runs.iter().filter(|r| r.converged).count();
    let finals = runs.iter().enumerate().filter(|(_, r)| r.converged).map(|(i, r)| (i, &r.x));
    let initial = warm.iter().enumerate().map(|(j, u)| (n_sobol + j, u));
    for (i, x) in finals.chain(initial) {
        for p in space.snapped(&space.decode(&x[..dd])) {
            let Ok(design) = space.design(&p) else { continue };
            let Ok(c) = cost_vector(&design, &space.sys) else { continue };
            let v = crit.exact(&c);
            if !v.is_finite() {
                continue;
            }
            let cand = (design, v);
            if best.as_ref().is_none_or(|(b, _)| better(&cand, b)) {
                best = Some((cand, i));
            }
        }
    }
    let Some(((design, value), idx)) = best else {
        return Err(Error::SolverFailed(format!(
            "no start of the {family} search converged to a finite objective"
        )));
    };
    Ok(Tuned {
        design,
        value,
        status: SolverStatus {
            converged: true,
            iterations: runs[idx].iterations,
            starts: runs.len(),
            converged_starts,
        },
    })
}

/// Tunes `family`, expanding [`Family::Classic`] into leveling and tiering.
pub(crate) fn tune<C: Criterion>(
    family: Family,
    sys: &SystemParams<f64>,
    bounds: &TuningBounds,
    crit: &C,
    opts: &SolverOptions,
    seed: u64,
) -> Result<Tuned> {
    if family != Family::Classic {
        return tune_family(family, sys, bounds, crit, opts, seed);
    }
    let a = tune_family(Family::Leveling, sys, bounds, crit, opts, seed)?;
    let b = tune_family(Family::Tiering, sys, bounds, crit, opts, seed)?;
    let pick_b = better(&(b.design.clone(), b.value), &(a.design.clone(), a.value));
    Ok(if pick_b { b } else { a })
}

fn round_capacity(k: f64, t: f64) -> f64 {
    k.round().clamp(1.0, (t - 1.0).max(1.0))
}

/// Integer deployment of a continuous design: `ceil(T)` and each run
/// capacity rounded to the nearest integer in `[1, ceil(T) - 1]`.
pub fn deploy(design: &LsmDesign<f64>, sys: &SystemParams<f64>) -> Result<LsmDesign<f64>> {
    let t = ceil_tol(design.size_ratio).max(2.0);
    let policy = match &design.policy {
        Policy::Fluid { upper, last } => Policy::Fluid {
            upper: round_capacity(*upper, t),
            last: round_capacity(*last, t),
        },
        Policy::KLsm { capacities } => Policy::KLsm {
            capacities: capacities.iter().map(|&k| round_capacity(k, t)).collect(),
        },
        other => other.clone(),
    };
    LsmDesign::new(policy, t, design.filter_bits, sys)
}

pub(crate) fn finish(
    tuned: Tuned,
    sys: &SystemParams<f64>,
    eval: impl Fn(&LsmDesign<f64>) -> Result<f64>,
) -> Result<TuningResult> {
    let deployed_design = deploy(&tuned.design, sys)?;
    let deployed_objective = eval(&deployed_design)?;
    let rounding_flagged =
        (deployed_objective - tuned.value).abs() > ROUNDING_BAND * tuned.value.abs();
    if rounding_flagged {
        log::warn!(
            "deployed objective {deployed_objective} deviates more than {}% from continuous {}",
            ROUNDING_BAND * 100.0,
            tuned.value
        );
    }
    Ok(TuningResult {
        design: tuned.design,
        deployed_design,
        objective: tuned.value,
        deployed_objective,
        status: tuned.status,
        rounding_flagged,
        sys: *sys,
    })
}

/// Minimizes the expected cost of `problem.expected_workload` over the
/// requested family.
pub fn solve_nominal(problem: &TuningProblem) -> Result<TuningResult> {
    let w = &problem.expected_workload;
    w.validate()?;
    let tuned = tune(
        problem.family,
        &problem.sys,
        &problem.bounds,
        &Expected(w),
        &problem.solver,
        problem.seed,
    )?;
    finish(tuned, &problem.sys, |d| Ok(w.dot(&cost_vector(d, &problem.sys)?)))
}

/// Fluid tuning with filter and buffer memory pinned. The memory budget
/// becomes `m_filt_fixed + m_buf_fixed`; only the size ratio and the two
/// run capacities are searched.
pub fn solve_nominal_fixed_memory(
    problem: &TuningProblem,
    m_filt_fixed: f64,
    m_buf_fixed: f64,
) -> Result<TuningResult> {
    let sys = &problem.sys;
    if !(m_buf_fixed > 0.0) || m_buf_fixed >= sys.memory_bits {
        return Err(Error::InfeasibleBounds(format!(
            "pinned buffer of {m_buf_fixed} bits must lie in (0, m = {})",
            sys.memory_bits
        )));
    }
    if !(m_filt_fixed >= 0.0) || !m_filt_fixed.is_finite() {
        return Err(Error::InfeasibleBounds(format!(
            "pinned filter memory {m_filt_fixed} must be finite and non-negative"
        )));
    }
    if m_buf_fixed < sys.entry_bits {
        return Err(Error::InfeasibleBounds("pinned buffer holds no entry".into()));
    }
    let pinned = SystemParams { memory_bits: m_filt_fixed + m_buf_fixed, ..*sys };
    let bounds = TuningBounds {
        filter_min_bits: m_filt_fixed,
        filter_max_bits: Some(m_filt_fixed),
        ..problem.bounds
    };
    let w = &problem.expected_workload;
    w.validate()?;
    let tuned = tune(Family::Fluid, &pinned, &bounds, &Expected(w), &problem.solver, problem.seed)?;
    finish(tuned, &pinned, |d| Ok(w.dot(&cost_vector(d, &pinned)?)))
}
