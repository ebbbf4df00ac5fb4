//! Comparison metrics and model-based experiments: ρ sweeps over the
//! benchmark set and the cost-versus-divergence drift study.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{cost_vector, CostVector, LsmDesign, SystemParams, Workload};
use crate::error::{Error, Result};
use crate::nominal::{solve_nominal, Family, TuningBounds, TuningProblem};
use crate::robust::{kl_divergence, solve_robust, UncertaintyRegion};
use crate::solver::SolverOptions;

/// `C1/C2 − 1`: relative throughput gain of the second configuration.
pub fn delta_from_costs(c1: f64, c2: f64) -> Result<f64> {
    if !(c1 > 0.0) || !(c2 > 0.0) {
        return Err(Error::ZeroCost);
    }
    Ok(c1 / c2 - 1.0)
}

/// Normalized delta throughput of `phi2` over `phi1` on `w`.
pub fn delta_throughput(
    w: &Workload<f64>,
    phi1: &LsmDesign<f64>,
    phi2: &LsmDesign<f64>,
    sys: &SystemParams<f64>,
) -> Result<f64> {
    w.validate()?;
    let c1 = w.dot(&cost_vector(phi1, sys)?);
    let c2 = w.dot(&cost_vector(phi2, sys)?);
    delta_from_costs(c1, c2)
}

/// `1/min C − 1/max C` over a set of costs.
pub fn range_from_costs(costs: impl IntoIterator<Item = f64>) -> Result<f64> {
    let (mut lo, mut hi, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for c in costs {
        if !(c > 0.0) {
            return Err(Error::ZeroCost);
        }
        lo = lo.min(c);
        hi = hi.max(c);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyBenchmark);
    }
    Ok(1.0 / lo - 1.0 / hi)
}

/// Spread between best and worst throughput of `phi` over `bench`.
pub fn throughput_range(bench: &[Workload<f64>], phi: &LsmDesign<f64>, sys: &SystemParams<f64>) -> Result<f64> {
    let c = cost_vector(phi, sys)?;
    range_from_costs(bench.iter().map(|w| w.dot(&c)))
}

/// Shared knobs of the model-based experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sys: SystemParams<f64>,
    pub family: Family,
    #[serde(default)]
    pub bounds: TuningBounds,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(sys: SystemParams<f64>, family: Family) -> Self {
        ExperimentConfig {
            sys,
            family,
            bounds: TuningBounds::default(),
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub center_id: usize,
    pub center: Workload<f64>,
    pub rho: f64,
    pub observed: Workload<f64>,
    pub kl_observed: f64,
    pub cost_nominal: Option<f64>,
    pub cost_robust: Option<f64>,
    /// `cost_nominal / cost_robust − 1`.
    pub delta_throughput: Option<f64>,
}

/// Tunings of one (center, ρ) cell; `None` where the solver failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub center_id: usize,
    pub center: Workload<f64>,
    pub rho: f64,
    pub nominal: Option<LsmDesign<f64>>,
    pub robust: Option<LsmDesign<f64>>,
    pub error: Option<String>,
}

impl SweepCell {
    fn costs(&self, sys: &SystemParams<f64>) -> (Option<CostVector<f64>>, Option<CostVector<f64>>) {
        let c = |d: &Option<LsmDesign<f64>>| d.as_ref().and_then(|d| cost_vector(d, sys).ok());
        (c(&self.nominal), c(&self.robust))
    }

    /// One record per benchmark workload, in benchmark order.
    pub fn records<'a>(
        &'a self,
        bench: &'a [Workload<f64>],
        sys: &SystemParams<f64>,
    ) -> impl Iterator<Item = ComparisonRecord> + 'a {
        let (cn, cr) = self.costs(sys);
        bench.iter().map(move |w| {
            let cost_nominal = cn.map(|c| w.dot(&c));
            let cost_robust = cr.map(|c| w.dot(&c));
            let delta_throughput = match (cost_nominal, cost_robust) {
                (Some(a), Some(b)) => delta_from_costs(a, b).ok(),
                _ => None,
            };
            ComparisonRecord {
                center_id: self.center_id,
                center: self.center,
                rho: self.rho,
                observed: *w,
                kl_observed: kl_divergence(w, &self.center).unwrap_or(f64::INFINITY),
                cost_nominal,
                cost_robust,
                delta_throughput,
            }
        })
    }

    pub fn summary(&self, bench: &[Workload<f64>], sys: &SystemParams<f64>) -> CellSummary {
        let (cn, cr) = self.costs(sys);
        let mut deltas: Vec<f64> = match (cn, cr) {
            (Some(a), Some(b)) => bench
                .iter()
                .filter_map(|w| delta_from_costs(w.dot(&a), w.dot(&b)).ok())
                .collect(),
            _ => Vec::new(),
        };
        let theta = |c: Option<CostVector<f64>>| c.and_then(|c| range_from_costs(bench.iter().map(|w| w.dot(&c))).ok());
        CellSummary {
            center_id: self.center_id,
            rho: self.rho,
            mean_delta: mean(&deltas),
            median_delta: median(&mut deltas),
            theta_nominal: theta(cn),
            theta_robust: theta(cr),
            count: deltas.len(),
        }
    }
}

/// Aggregates of one sweep cell over the benchmark set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub center_id: usize,
    pub rho: f64,
    pub mean_delta: Option<f64>,
    pub median_delta: Option<f64>,
    pub theta_nominal: Option<f64>,
    pub theta_robust: Option<f64>,
    pub count: usize,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

/// Solves the nominal tuning of every center once and the robust tuning of
/// every (center, ρ) pair. Cells are returned sorted by (center, ρ index).
pub fn solve_sweep(centers: &[(usize, Workload<f64>)], rhos: &[f64], cfg: &ExperimentConfig) -> Vec<SweepCell> {
    let nominal: Vec<std::result::Result<LsmDesign<f64>, String>> = centers
        .par_iter()
        .map(|(_, w)| {
            let mut p = TuningProblem::new(*w, cfg.sys, cfg.family);
            p.bounds = cfg.bounds;
            p.solver = cfg.solver;
            p.seed = cfg.seed;
            solve_nominal(&p).map(|r| r.deployed_design).map_err(|e| e.to_string())
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..centers.len())
        .flat_map(|c| (0..rhos.len()).map(move |r| (c, r)))
        .collect();
    jobs.par_iter()
        .map(|&(c, r)| {
            let (center_id, center) = centers[c];
            let rho = rhos[r];
            let robust = UncertaintyRegion::new(center, rho).and_then(|region| {
                solve_robust(&region, &cfg.sys, cfg.family, &cfg.bounds, &cfg.solver, cfg.seed)
            });
            let mut errors = Vec::new();
            let nominal = nominal[c].clone().map_err(|e| errors.push(format!("nominal: {e}"))).ok();
            let robust = robust
                .map(|r| r.deployed_design)
                .map_err(|e| errors.push(format!("robust: {e}")))
                .ok();
            for e in &errors {
                log::warn!("center {center_id} rho {rho}: {e}");
            }
            SweepCell {
                center_id,
                center,
                rho,
                nominal,
                robust,
                error: (!errors.is_empty()).then(|| errors.join("; ")),
            }
        })
        .collect()
}

/// Nominal versus robust comparison of one center for every ρ over `bench`.
pub fn rho_sweep(
    center: &Workload<f64>,
    rhos: &[f64],
    bench: &[Workload<f64>],
    cfg: &ExperimentConfig,
) -> Result<Vec<ComparisonRecord>> {
    center.validate()?;
    if bench.is_empty() {
        return Err(Error::EmptyBenchmark);
    }
    let cells = solve_sweep(&[(0, *center)], rhos, cfg);
    Ok(cells.iter().flat_map(|c| c.records(bench, &cfg.sys)).collect())
}

pub const RECORD_HEADER: [&str; 10] =
    ["center_id", "rho", "z0", "z1", "q", "w", "kl", "cost_nominal", "cost_robust", "delta"];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Streams every record of `cells` as CSV rows; failed cells leave the cost
/// and delta fields empty.
pub fn write_records_csv<W: Write>(
    cells: &[SweepCell],
    bench: &[Workload<f64>],
    sys: &SystemParams<f64>,
    out: W,
) -> Result<u64> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(RECORD_HEADER)?;
    let mut rows = 0;
    for cell in cells {
        for r in cell.records(bench, sys) {
            let [z0, z1, q, w] = r.observed.to_array();
            wtr.write_record([
                r.center_id.to_string(),
                r.rho.to_string(),
                z0.to_string(),
                z1.to_string(),
                q.to_string(),
                w.to_string(),
                r.kl_observed.to_string(),
                opt(r.cost_nominal),
                opt(r.cost_robust),
                opt(r.delta_throughput),
            ])?;
            rows += 1;
        }
    }
    wtr.flush()?;
    Ok(rows)
}

/// Per-cell aggregates as CSV.
pub fn write_summary_csv<W: Write>(summaries: &[CellSummary], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["center_id", "rho", "mean_delta", "median_delta", "theta_nominal", "theta_robust", "count"])?;
    for s in summaries {
        wtr.write_record([
            s.center_id.to_string(),
            s.rho.to_string(),
            opt(s.mean_delta),
            opt(s.median_delta),
            opt(s.theta_nominal),
            opt(s.theta_robust),
            s.count.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx)?, mean(&ry)?);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub const DRIFT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBin {
    pub kl_lo: f64,
    pub kl_hi: f64,
    pub kl_mean: f64,
    pub mean_cost: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCurve {
    /// Family name, or `robust` for the robust tuning.
    pub label: String,
    pub design: LsmDesign<f64>,
    pub bins: Vec<DriftBin>,
}

impl DriftCurve {
    /// Mean cost in the highest-divergence bin minus that of the lowest.
    pub fn rise(&self) -> f64 {
        match (self.bins.first(), self.bins.last()) {
            (Some(a), Some(b)) => b.mean_cost - a.mean_cost,
            _ => 0.0,
        }
    }
}

/// Equal-count bins over `kl`: returns, per bin, the indices it holds.
pub fn quantile_bins(kl: &[f64], bins: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..kl.len()).collect();
    order.sort_by(|&a, &b| kl[a].total_cmp(&kl[b]).then(a.cmp(&b)));
    let n = order.len();
    let bins = bins.min(n).max(1);
    (0..bins)
        .map(|b| order[b * n / bins..(b + 1) * n / bins].to_vec())
        .filter(|v| !v.is_empty())
        .collect()
}

/// Mean cost per divergence bin for the nominal tuning of each family and for
/// the robust tuning at `rho`.
pub fn drift_experiment(
    center: &Workload<f64>,
    families: &[Family],
    rho: f64,
    bench: &[Workload<f64>],
    cfg: &ExperimentConfig,
) -> Result<Vec<DriftCurve>> {
    center.validate()?;
    if bench.is_empty() {
        return Err(Error::EmptyBenchmark);
    }
    let kl = bench
        .iter()
        .map(|w| kl_divergence(w, center))
        .collect::<Result<Vec<_>>>()?;
    let bins = quantile_bins(&kl, DRIFT_BINS);

    let region = UncertaintyRegion::new(*center, rho)?;
    let mut tuned: Vec<(String, LsmDesign<f64>)> = families
        .par_iter()
        .map(|&f| {
            let mut p = TuningProblem::new(*center, cfg.sys, f);
            p.bounds = cfg.bounds;
            p.solver = cfg.solver;
            p.seed = cfg.seed;
            solve_nominal(&p).map(|r| (f.to_string(), r.deployed_design))
        })
        .collect::<Result<Vec<_>>>()?;
    let robust = solve_robust(&region, &cfg.sys, cfg.family, &cfg.bounds, &cfg.solver, cfg.seed)?;
    tuned.push(("robust".to_string(), robust.deployed_design));

    tuned
        .into_iter()
        .map(|(label, design)| {
            let c = cost_vector(&design, &cfg.sys)?;
            let bins = bins
                .iter()
                .map(|idx| {
                    let n = idx.len() as f64;
                    DriftBin {
                        kl_lo: kl[idx[0]],
                        kl_hi: kl[*idx.last().expect("non-empty bin")],
                        kl_mean: idx.iter().map(|&i| kl[i]).sum::<f64>() / n,
                        mean_cost: idx.iter().map(|&i| bench[i].dot(&c)).sum::<f64>() / n,
                        count: idx.len(),
                    }
                })
                .collect();
            Ok(DriftCurve { label, design, bins })
        })
        .collect()
}

/// Drift curves as CSV: one row per (curve, bin).
pub fn write_drift_csv<W: Write>(curves: &[DriftCurve], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["tuning", "bin", "kl_lo", "kl_hi", "kl_mean", "mean_cost", "count"])?;
    for c in curves {
        for (i, b) in c.bins.iter().enumerate() {
            wtr.write_record([
                c.label.clone(),
                i.to_string(),
                b.kl_lo.to_string(),
                b.kl_hi.to_string(),
                b.kl_mean.to_string(),
                b.mean_cost.to_string(),
                b.count.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
