//! Workload sets: the fifteen expected workloads, random benchmark sets and
//! query sessions for simulator runs.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::{Workload, QUERY_TYPES};
use crate::error::{Error, Result};
use crate::robust::kl_divergence;

/// Identifier of the generator behind every random draw in this module.
pub const RNG_ALGORITHM: &str = "chacha8";
/// Largest per-type query count drawn for a benchmark sample.
pub const MAX_COUNT: u64 = 10_000;
pub const DEFAULT_BENCH_SIZE: usize = 10_000;
pub const DEFAULT_QUERIES_PER_WORKLOAD: u64 = 200_000;
pub const DEFAULT_SESSION_WORKLOADS: usize = 3;
/// Minimum share of the dominant query type(s) in a non-expected session.
pub const DOMINANT_SHARE: f64 = 0.80;
/// Divergence bound for workloads of an expected session.
pub const EXPECTED_KL_BOUND: f64 = 0.2;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Uniform,
    Unimodal,
    Bimodal,
    Trimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedWorkload {
    pub index: usize,
    pub workload: Workload<f64>,
    pub modality: Modality,
}

const EXPECTED: [([f64; 4], Modality); 15] = [
    ([0.25, 0.25, 0.25, 0.25], Modality::Uniform),
    ([0.97, 0.01, 0.01, 0.01], Modality::Unimodal),
    ([0.01, 0.97, 0.01, 0.01], Modality::Unimodal),
    ([0.01, 0.01, 0.97, 0.01], Modality::Unimodal),
    ([0.01, 0.01, 0.01, 0.97], Modality::Unimodal),
    ([0.49, 0.49, 0.01, 0.01], Modality::Bimodal),
    ([0.49, 0.01, 0.49, 0.01], Modality::Bimodal),
    ([0.49, 0.01, 0.01, 0.49], Modality::Bimodal),
    ([0.01, 0.49, 0.49, 0.01], Modality::Bimodal),
    ([0.01, 0.49, 0.01, 0.49], Modality::Bimodal),
    ([0.01, 0.01, 0.49, 0.49], Modality::Bimodal),
    ([0.33, 0.33, 0.33, 0.01], Modality::Trimodal),
    ([0.33, 0.33, 0.01, 0.33], Modality::Trimodal),
    ([0.33, 0.01, 0.33, 0.33], Modality::Trimodal),
    ([0.01, 0.33, 0.33, 0.33], Modality::Trimodal),
];

/// The fifteen reference workloads, indexed 0..=14.
pub fn expected_workloads() -> Vec<ExpectedWorkload> {
    EXPECTED
        .iter()
        .enumerate()
        .map(|(index, (w, modality))| ExpectedWorkload {
            index,
            workload: Workload::from_array(*w).expect("table entries are normalized"),
            modality: *modality,
        })
        .collect()
}

pub fn expected_workload(index: usize) -> Result<ExpectedWorkload> {
    expected_workloads()
        .get(index)
        .copied()
        .ok_or_else(|| Error::InvalidWorkload(format!("no expected workload with index {index}")))
}

/// A workload together with the integer query counts it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub workload: Workload<f64>,
    pub counts: [u64; QUERY_TYPES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSet {
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub rng: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    z0: f64,
    z1: f64,
    q: f64,
    w: f64,
    count_z0: u64,
    count_z1: u64,
    count_q: u64,
    count_w: u64,
}

impl From<&Sample> for CsvRow {
    fn from(s: &Sample) -> Self {
        let [z0, z1, q, w] = s.workload.to_array();
        let [count_z0, count_z1, count_q, count_w] = s.counts;
        CsvRow { z0, z1, q, w, count_z0, count_z1, count_q, count_w }
    }
}

impl TryFrom<CsvRow> for Sample {
    type Error = Error;

    fn try_from(r: CsvRow) -> Result<Self> {
        let workload = Workload::new(r.z0, r.z1, r.q, r.w)?;
        let counts = [r.count_z0, r.count_z1, r.count_q, r.count_w];
        Ok(Sample { workload, counts })
    }
}

impl BenchmarkSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn workloads(&self) -> Vec<Workload<f64>> {
        self.samples.iter().map(|s| s.workload).collect()
    }

    /// Writes one row per sample: `z0,z1,q,w,count_z0,count_z1,count_q,count_w`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for s in &self.samples {
            wtr.serialize(CsvRow::from(s))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads rows written by [`BenchmarkSet::write_csv`]. Lines starting with
    /// `#` are skipped.
    pub fn read_csv<R: Read>(input: R, seed: u64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let samples = rdr
            .deserialize::<CsvRow>()
            .map(|row| Sample::try_from(row?))
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchmarkSet { samples, seed, rng: RNG_ALGORITHM.to_string() })
    }
}

/// Draws `size` workloads: four independent counts uniform in
/// `[0, MAX_COUNT]`, all-zero tuples rejected, normalized by their sum.
pub fn sample_benchmark(seed: u64, size: usize) -> Result<BenchmarkSet> {
    if size == 0 {
        return Err(Error::EmptyBenchmark);
    }
    let mut rng = rng(seed);
    let mut samples = Vec::with_capacity(size);
    while samples.len() < size {
        let counts: [u64; QUERY_TYPES] = std::array::from_fn(|_| rng.random_range(0..=MAX_COUNT));
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        samples.push(Sample { workload: Workload::from_counts(counts)?, counts });
    }
    Ok(BenchmarkSet { samples, seed, rng: RNG_ALGORITHM.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionCategory {
    Expected,
    EmptyRead,
    NonemptyRead,
    Read,
    Range,
    Write,
}

impl SessionCategory {
    pub const ALL: [SessionCategory; 6] = [
        SessionCategory::Expected,
        SessionCategory::EmptyRead,
        SessionCategory::NonemptyRead,
        SessionCategory::Read,
        SessionCategory::Range,
        SessionCategory::Write,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SessionCategory::Expected => "expected",
            SessionCategory::EmptyRead => "empty_read",
            SessionCategory::NonemptyRead => "nonempty_read",
            SessionCategory::Read => "read",
            SessionCategory::Range => "range",
            SessionCategory::Write => "write",
        }
    }

    /// Query types whose combined share must dominate.
    fn dominant(&self) -> &'static [usize] {
        match self {
            SessionCategory::Expected => &[],
            SessionCategory::EmptyRead => &[0],
            SessionCategory::NonemptyRead => &[1],
            SessionCategory::Read => &[0, 1],
            SessionCategory::Range => &[2],
            SessionCategory::Write => &[3],
        }
    }

    /// Whether `w` belongs to a session of this category around `center`.
    pub fn accepts(&self, w: &Workload<f64>, center: &Workload<f64>) -> bool {
        match self {
            SessionCategory::Expected => {
                kl_divergence(w, center).is_ok_and(|d| d < EXPECTED_KL_BOUND)
            }
            _ => {
                let a = w.to_array();
                self.dominant().iter().map(|&i| a[i]).sum::<f64>() >= DOMINANT_SHARE
            }
        }
    }
}

impl fmt::Display for SessionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SessionCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SessionCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::CategoryUnsatisfiable(format!("unknown session category '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionWorkload {
    pub workload: Workload<f64>,
    /// Queries of each type to execute.
    pub counts: [u64; QUERY_TYPES],
    /// Constructed rather than drawn from the benchmark set.
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub category: SessionCategory,
    pub center: Workload<f64>,
    pub workloads: Vec<SessionWorkload>,
    pub queries_per_workload: u64,
    pub seed: u64,
    pub rng: String,
}

impl Session {
    /// Same row layout as benchmark sets plus a `synthetic` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "z0", "z1", "q", "w", "count_z0", "count_z1", "count_q", "count_w", "synthetic",
        ])?;
        for s in &self.workloads {
            let mut rec: Vec<String> = s.workload.to_array().iter().map(f64::to_string).collect();
            rec.extend(s.counts.iter().map(u64::to_string));
            rec.push(s.synthetic.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Splits `total` queries across query types in proportion to `w`
/// (largest-remainder rounding, ties to the lower index).
pub fn apportion(w: &Workload<f64>, total: u64) -> [u64; QUERY_TYPES] {
    let a = w.to_array();
    let exact: Vec<f64> = a.iter().map(|x| x * total as f64).collect();
    let mut counts: [u64; QUERY_TYPES] = std::array::from_fn(|i| exact[i].floor() as u64);
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..QUERY_TYPES).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Random split of `mass` into `parts` pieces (uniform on the simplex).
fn split(rng: &mut ChaCha8Rng, mass: f64, parts: usize) -> Vec<f64> {
    let mut cuts: Vec<f64> = (0..parts.saturating_sub(1)).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(parts);
    for c in cuts.into_iter().chain(std::iter::once(1.0)) {
        out.push(mass * (c - prev));
        prev = c;
    }
    out
}

fn synthesize(
    category: SessionCategory,
    center: &Workload<f64>,
    bench: &BenchmarkSet,
    rng: &mut ChaCha8Rng,
) -> Result<Workload<f64>> {
    if category == SessionCategory::Expected {
        // pull a random benchmark workload toward the center until it fits
        let other = bench.samples[rng.random_range(0..bench.len())].workload;
        let mut alpha = rng.random::<f64>();
        for _ in 0..60 {
            let w = other.mix(center, alpha);
            if category.accepts(&w, center) {
                return Ok(w);
            }
            alpha *= 0.5;
        }
        return if category.accepts(center, center) {
            Ok(*center)
        } else {
            Err(Error::CategoryUnsatisfiable(category.to_string()))
        };
    }
    let dom = category.dominant();
    let mass = rng.random_range(DOMINANT_SHARE..=0.98);
    let rest: Vec<usize> = (0..QUERY_TYPES).filter(|i| !dom.contains(i)).collect();
    let mut a = [0.0; QUERY_TYPES];
    for (&i, v) in dom.iter().zip(split(rng, mass, dom.len())) {
        a[i] = v;
    }
    for (&i, v) in rest.iter().zip(split(rng, 1.0 - mass, rest.len())) {
        a[i] = v;
    }
    let s: f64 = a.iter().sum();
    Workload::from_array(a.map(|x| x / s))
}

/// Session of `n_workloads` benchmark workloads matching `category`, with
/// [`DEFAULT_QUERIES_PER_WORKLOAD`] queries each.
pub fn generate_session(
    category: SessionCategory,
    center: &Workload<f64>,
    bench: &BenchmarkSet,
    n_workloads: usize,
    seed: u64,
) -> Result<Session> {
    generate_session_with(category, center, bench, n_workloads, DEFAULT_QUERIES_PER_WORKLOAD, seed)
}

/// Like [`generate_session`] with an explicit query budget per workload.
/// When the benchmark set holds too few matching workloads the remainder is
/// synthesized and flagged.
pub fn generate_session_with(
    category: SessionCategory,
    center: &Workload<f64>,
    bench: &BenchmarkSet,
    n_workloads: usize,
    queries_per_workload: u64,
    seed: u64,
) -> Result<Session> {
    center.validate()?;
    if bench.is_empty() {
        return Err(Error::EmptyBenchmark);
    }
    let mut rng = rng(seed);
    let matching: Vec<&Sample> = bench
        .samples
        .iter()
        .filter(|s| category.accepts(&s.workload, center))
        .collect();
    let take = n_workloads.min(matching.len());
    let mut picked: Vec<usize> = index::sample(&mut rng, matching.len(), take).into_vec();
    picked.sort_unstable();
    let mut workloads: Vec<SessionWorkload> = picked
        .into_iter()
        .map(|i| SessionWorkload {
            workload: matching[i].workload,
            counts: apportion(&matching[i].workload, queries_per_workload),
            synthetic: false,
        })
        .collect();
    while workloads.len() < n_workloads {
        let workload = synthesize(category, center, bench, &mut rng)?;
        workloads.push(SessionWorkload {
            workload,
            counts: apportion(&workload, queries_per_workload),
            synthetic: true,
        });
    }
    if workloads.iter().any(|w| w.synthetic) {
        log::info!("{category} session topped up with synthetic workloads");
    }
    Ok(Session {
        category,
        center: *center,
        workloads,
        queries_per_workload,
        seed,
        rng: RNG_ALGORITHM.to_string(),
    })
}
