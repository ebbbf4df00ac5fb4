//! Subcommand implementations. Every output file carries the config hash
//! and seed; wall-clock time only goes to `run.log`.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use lsmtune::bench::{expected_workload, generate_session_with, sample_benchmark, BenchmarkSet, RNG_ALGORITHM};
use lsmtune::eval::{
    delta_from_costs, drift_experiment, solve_sweep, write_drift_csv, write_records_csv, write_summary_csv,
    ExperimentConfig, RECORD_HEADER,
};
use lsmtune::nominal::solve_nominal;
use lsmtune::robust::{kl_divergence, rho_from_history, solve_robust};
use lsmtune::sim::{Driver, SessionReport, SimTree};
use lsmtune::{SystemParams, TuningProblem, UncertaintyRegion, Workload};
use serde::Serialize;
use serde_json::json;

use crate::config::{RhoSource, RunConfig, WorkloadSource};
use crate::{CliError, Command};

type Res<T> = Result<T, CliError>;

struct Outputs<'a> {
    dir: &'a Path,
    hash: String,
    seed: u64,
    written: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path, cfg: &RunConfig) -> Self {
        Outputs { dir, hash: cfg.hash(), seed: cfg.seed, written: Vec::new() }
    }

    fn create(&mut self, name: &str) -> Res<File> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(f)
    }

    /// CSV file whose first line is `# config_hash=... seed=...`.
    fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Res<()>) -> Res<()> {
        let mut buf = format!("# config_hash={} seed={} rng={}\n", self.hash, self.seed, RNG_ALGORITHM).into_bytes();
        body(&mut buf)?;
        self.create(name)?.write_all(&buf)?;
        Ok(())
    }

    fn json(&mut self, name: &str, command: &str, result: &impl Serialize) -> Res<serde_json::Value> {
        let doc = json!({
            "command": command,
            "config_hash": self.hash,
            "seed": self.seed,
            "result": result,
        });
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, &doc).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(f)?;
        Ok(doc)
    }

    fn finish(mut self, cfg: &RunConfig, command: &str) -> Res<()> {
        let mut f = self.create("config.json")?;
        serde_json::to_writer_pretty(&mut f, cfg).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(f)?;
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let path = self.dir.join("run.log");
        let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
        writeln!(
            log,
            "unix_time={secs} command={command} config_hash={} seed={} outputs={}",
            self.hash,
            self.seed,
            self.written.join(",")
        )?;
        Ok(())
    }
}

pub fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Path) -> Res<()> {
    log::info!("{} with config hash {}", cmd.name(), cfg.hash());
    let mut o = Outputs::new(out, cfg);
    match cmd {
        Command::TuneNominal => tune_nominal(cfg, &mut o)?,
        Command::TuneRobust => tune_robust(cfg, &mut o)?,
        Command::EstimateRho { history } => estimate_rho(cfg, history.as_deref(), &mut o)?,
        Command::BenchGen => bench_gen(cfg, &mut o)?,
        Command::EvaluateSweep => evaluate_sweep(cfg, &mut o)?,
        Command::DriftExperiment => drift(cfg, &mut o)?,
        Command::SimulateSession => simulate_session(cfg, &mut o)?,
    }
    o.finish(cfg, cmd.name())
}

fn expected(cfg: &RunConfig) -> Res<Workload> {
    match &cfg.workload {
        None => Err(CliError::Config("config has no expected workload".into())),
        Some(WorkloadSource::Index(i)) => Ok(expected_workload(*i)?.workload),
        Some(WorkloadSource::Inline(a)) => Ok(Workload::from_array(*a)?),
        Some(WorkloadSource::File(p)) => read_workloads(p)?
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Config(format!("{} holds no workload", p.display()))),
    }
}

fn center_id(cfg: &RunConfig) -> String {
    match cfg.workload {
        Some(WorkloadSource::Index(i)) => i.to_string(),
        _ => String::new(),
    }
}

#[derive(serde::Deserialize)]
struct Row {
    z0: f64,
    z1: f64,
    q: f64,
    w: f64,
}

/// Workloads from a CSV with `z0,z1,q,w` columns (others ignored, `#` lines
/// skipped). Rows are normalized to sum to one.
pub fn read_workloads(path: &Path) -> Res<Vec<Workload>> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("opening {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let r = row?;
        let a = [r.z0, r.z1, r.q, r.w];
        let s: f64 = a.iter().sum();
        if !(s > 0.0) {
            return Err(CliError::Config(format!("{}: workload row sums to {s}", path.display())));
        }
        out.push(Workload::from_array(a.map(|x| x / s))?);
    }
    Ok(out)
}

fn rho(cfg: &RunConfig) -> Res<f64> {
    match &cfg.rho {
        None => Err(CliError::Config("config has no rho".into())),
        Some(RhoSource::Value(r)) => Ok(*r),
        Some(RhoSource::History { history }) => Ok(rho_from_history(&read_workloads(history)?)?),
    }
}

fn bench(cfg: &RunConfig) -> Res<BenchmarkSet> {
    let seed = cfg.bench.seed.unwrap_or(cfg.seed);
    match &cfg.bench.file {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Io(format!("opening {}: {e}", p.display())))?;
            Ok(BenchmarkSet::read_csv(f, seed)?)
        }
        None => Ok(sample_benchmark(seed, cfg.bench.size)?),
    }
}

fn experiment(cfg: &RunConfig, sys: SystemParams) -> ExperimentConfig {
    ExperimentConfig { sys, family: cfg.family, bounds: cfg.bounds, solver: cfg.solver, seed: cfg.seed }
}

fn tune_nominal(cfg: &RunConfig, o: &mut Outputs) -> Res<()> {
    let sys = cfg.system.resolve()?;
    let problem = TuningProblem {
        expected_workload: expected(cfg)?,
        sys,
        family: cfg.family,
        bounds: cfg.bounds,
        solver: cfg.solver,
        seed: cfg.seed,
    };
    let r = solve_nominal(&problem)?;
    let doc = o.json("tune_nominal.json", "tune-nominal", &r)?;
    println!("{}", serde_json::to_string(&doc["result"]["deployed_design"]).unwrap_or_default());
    println!("objective {} deployed {}", r.objective, r.deployed_objective);
    Ok(())
}

fn tune_robust(cfg: &RunConfig, o: &mut Outputs) -> Res<()> {
    let sys = cfg.system.resolve()?;
    let rho = rho(cfg)?;
    let region = UncertaintyRegion::new(expected(cfg)?, rho)?;
    let r = solve_robust(&region, &sys, cfg.family, &cfg.bounds, &cfg.solver, cfg.seed)?;
    o.json("tune_robust.json", "tune-robust", &json!({ "rho": rho, "tuning": r }))?;
    println!("{}", serde_json::to_string(&r.deployed_design).unwrap_or_default());
    println!(
        "rho {rho} worst-case {} deployed worst-case {} cost at center {}",
        r.dual_objective, r.deployed_dual_objective, r.nominal_cost
    );
    Ok(())
}

fn estimate_rho(cfg: &RunConfig, history: Option<&Path>, o: &mut Outputs) -> Res<()> {
    let path: PathBuf = match (history, &cfg.rho) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(RhoSource::History { history })) => history.clone(),
        _ => return Err(CliError::Config("estimate-rho needs --history or a rho.history entry".into())),
    };
    let ws = read_workloads(&path)?;
    let rho = rho_from_history(&ws)?;
    o.json("rho.json", "estimate-rho", &json!({ "rho": rho, "workloads": ws.len() }))?;
    println!("{rho}");
    Ok(())
}

fn bench_gen(cfg: &RunConfig, o: &mut Outputs) -> Res<()> {
    let b = bench(cfg)?;
    o.csv("bench.csv", |buf| Ok(b.write_csv(buf)?))?;
    println!("{} workloads", b.len());
    Ok(())
}

fn evaluate_sweep(cfg: &RunConfig, o: &mut Outputs) -> Res<()> {
    let sys = cfg.system.resolve()?;
    let ids: Vec<usize> = cfg.sweep.centers.clone().unwrap_or_else(|| (0..15).collect());
    let centers = ids
        .iter()
        .map(|&i| Ok((i, expected_workload(i)?.workload)))
        .collect::<Res<Vec<_>>>()?;
    let bench = bench(cfg)?.workloads();
    let ecfg = experiment(cfg, sys);
    let cells = solve_sweep(&centers, &cfg.sweep.rhos, &ecfg);
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} sweep cells failed to solve");
    }
    let mut rows = 0;
    if cfg.sweep.write_records {
        o.csv("sweep_records.csv", |buf| {
            rows = write_records_csv(&cells, &bench, &sys, buf)?;
            Ok(())
        })?;
    }
    let summaries: Vec<_> = cells.iter().map(|c| c.summary(&bench, &sys)).collect();
    o.csv("sweep_summary.csv", |buf| Ok(write_summary_csv(&summaries, buf)?))?;
    o.json("sweep_designs.json", "evaluate-sweep", &cells)?;
    println!("{} cells, {rows} comparison rows, {failed} failed cells", cells.len());
    Ok(())
}

fn drift(cfg: &RunConfig, o: &mut Outputs) -> Res<()> {
    let sys = cfg.system.resolve()?;
    let center = expected(cfg)?;
    let bench = bench(cfg)?.workloads();
    let curves = drift_experiment(&center, &cfg.drift.families, cfg.drift.rho, &bench, &experiment(cfg, sys))?;
    o.csv("drift.csv", |buf| Ok(write_drift_csv(&curves, buf)?))?;
    o.json("drift_designs.json", "drift-experiment", &curves)?;
    for c in &curves {
        println!("{:<12} rise {:+.4}", c.label, c.rise());
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulatedSession {
    rho: f64,
    session: lsmtune::bench::Session,
    nominal: SessionReport,
    robust: SessionReport,
}

fn simulate_session(cfg: &RunConfig, o: &mut Outputs) -> Res<()> {
    let sys = cfg.system.resolve()?;
    let center = expected(cfg)?;
    let rho = rho(cfg)?;
    let s = &cfg.session;
    if !(0.0..=1.0).contains(&s.update_ratio) {
        return Err(CliError::Config(format!("update_ratio {} outside [0, 1]", s.update_ratio)));
    }
    let bench = bench(cfg)?;
    let session = generate_session_with(s.category, &center, &bench, s.workloads, s.queries_per_workload, cfg.seed)?;
    let problem = TuningProblem {
        expected_workload: center,
        sys,
        family: cfg.family,
        bounds: cfg.bounds,
        solver: cfg.solver,
        seed: cfg.seed,
    };
    let nominal = solve_nominal(&problem)?.deployed_design;
    let region = UncertaintyRegion::new(center, rho)?;
    let robust = solve_robust(&region, &sys, cfg.family, &cfg.bounds, &cfg.solver, cfg.seed)?.deployed_design;
    let preload = s.preload.unwrap_or(sys.entries as usize);
    let (rn, rr) = rayon::join(
        || run_design(&nominal, &sys, cfg, preload, &session),
        || run_design(&robust, &sys, cfg, preload, &session),
    );
    let (rn, rr) = (rn?, rr?);
    let id = center_id(cfg);
    o.csv("session.csv", |buf| {
        let mut wtr = csv::Writer::from_writer(buf);
        let mut header: Vec<&str> = RECORD_HEADER.to_vec();
        header.push("source");
        wtr.write_record(&header)?;
        for (a, b) in rn.workloads.iter().zip(&rr.workloads) {
            let kl = kl_divergence(&a.workload, &center).unwrap_or(f64::INFINITY);
            for (source, cn, cr) in [
                ("model", a.model_total, b.model_total),
                ("simulator", a.measured_total, b.measured_total),
            ] {
                let delta = delta_from_costs(cn, cr).map(|d| d.to_string()).unwrap_or_default();
                let [z0, z1, q, w] = a.workload.to_array();
                let row = [
                    id.clone(),
                    rho.to_string(),
                    z0.to_string(),
                    z1.to_string(),
                    q.to_string(),
                    w.to_string(),
                    kl.to_string(),
                    cn.to_string(),
                    cr.to_string(),
                    delta,
                    source.to_string(),
                ];
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    })?;
    o.csv("session_workloads.csv", |buf| Ok(session.write_csv(buf)?))?;
    o.json(
        "session.json",
        "simulate-session",
        &SimulatedSession { rho, session: session.clone(), nominal: rn, robust: rr },
    )?;
    println!("{} workloads simulated", session.workloads.len());
    Ok(())
}

fn run_design(
    design: &lsmtune::LsmDesign,
    sys: &SystemParams,
    cfg: &RunConfig,
    preload: usize,
    session: &lsmtune::bench::Session,
) -> Res<SessionReport> {
    let mut drv = Driver::new(SimTree::new(design, sys)?, cfg.seed);
    drv.load(preload);
    drv.update_ratio = cfg.session.update_ratio;
    Ok(drv.run_session(session)?)
}
