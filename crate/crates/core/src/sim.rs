//! In-memory LSM tree that executes queries and counts page I/Os.
//!
//! Compaction follows the per-level run capacities of a design: level `i`
//! absorbs `T - 1` arrivals from above, grouped into `K_i` runs, and on the
//! `T`-th arrival merges everything into one run that moves down a level.
//! Nothing touches a disk; every page read or written is only counted.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{rng, Session};
use crate::cost_model::{cost_vector, level_fpr, CostVector, LsmDesign, SystemParams, Workload, QUERY_TYPES};
use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bit-array Bloom filter with double hashing.
#[derive(Debug, Clone)]
pub struct Bloom {
    bits: Vec<u64>,
    nbits: u64,
    hashes: u32,
}

impl Bloom {
    /// Filter for `entries` keys at `bits_per_entry`; `k = round(ln 2 · bpe)`.
    pub fn new(entries: usize, bits_per_entry: f64) -> Self {
        let nbits = ((bits_per_entry * entries as f64).ceil() as u64).max(64);
        let hashes = ((LN2 * bits_per_entry).round() as u32).max(1);
        Bloom { bits: vec![0; nbits.div_ceil(64) as usize], nbits, hashes }
    }

    fn probes(&self, key: u64) -> impl Iterator<Item = u64> + '_ {
        let h1 = mix64(key ^ 0x9e37_79b9_7f4a_7c15);
        let h2 = mix64(key.rotate_left(32) ^ 0xc2b2_ae3d_27d4_eb4f) | 1;
        (0..u64::from(self.hashes)).map(move |j| h1.wrapping_add(j.wrapping_mul(h2)) % self.nbits)
    }

    pub fn insert(&mut self, key: u64) {
        let idx: Vec<u64> = self.probes(key).collect();
        for b in idx {
            self.bits[(b / 64) as usize] |= 1 << (b % 64);
        }
    }

    pub fn may_contain(&self, key: u64) -> bool {
        self.probes(key).all(|b| self.bits[(b / 64) as usize] & (1 << (b % 64)) != 0)
    }
}

/// Immutable sorted run.
#[derive(Debug, Clone)]
struct Run {
    keys: Vec<u64>,
    vals: Vec<u64>,
    filter: Option<Bloom>,
}

impl Run {
    fn len(&self) -> usize {
        self.keys.len()
    }
}

#[derive(Debug, Clone, Default)]
struct Level {
    /// Oldest first.
    runs: Vec<Run>,
    arrivals: usize,
    group: usize,
    in_group: usize,
}

/// Monotone I/O and query counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IoCounters {
    pub random_reads: u64,
    /// Pages read sequentially by range queries (unweighted).
    pub sequential_reads: u64,
    pub compaction_reads: u64,
    pub compaction_writes: u64,
    pub flushes: u64,
    pub queries_executed: [u64; QUERY_TYPES],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GetResult {
    pub value: Option<u64>,
    pub io: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeResult {
    pub entries: Vec<(u64, u64)>,
    pub io: f64,
}

#[derive(Debug, Clone)]
pub struct SimTree {
    design: LsmDesign<f64>,
    sys: SystemParams<f64>,
    ratio: usize,
    caps: Vec<usize>,
    model_levels: usize,
    buffer: BTreeMap<u64, u64>,
    buffer_capacity: usize,
    levels: Vec<Level>,
    pub counters: IoCounters,
}

impl SimTree {
    /// Empty tree for a deployed (integer) design. The buffer holds
    /// `floor(m_buf / E)` entries.
    pub fn new(design: &LsmDesign<f64>, sys: &SystemParams<f64>) -> Result<Self> {
        sys.validate()?;
        design.validate(sys)?;
        let t = design.size_ratio;
        if t.fract() != 0.0 || design.capacities.iter().any(|k| k.fract() != 0.0) {
            return Err(Error::InvalidDesign(
                "the simulator needs an integer size ratio and run capacities".into(),
            ));
        }
        let buffer_capacity = (design.buffer_bits(sys) / sys.entry_bits).floor() as usize;
        if buffer_capacity == 0 {
            return Err(Error::InvalidDesign("buffer holds no entry".into()));
        }
        Ok(SimTree {
            ratio: t as usize,
            caps: design.capacities.iter().map(|&k| k as usize).collect(),
            model_levels: design.levels(),
            design: design.clone(),
            sys: *sys,
            buffer: BTreeMap::new(),
            buffer_capacity,
            levels: Vec::new(),
            counters: IoCounters::default(),
        })
    }

    pub fn design(&self) -> &LsmDesign<f64> {
        &self.design
    }

    pub fn buffer_capacity(&self) -> usize {
        self.buffer_capacity
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Run count per level, top down.
    pub fn runs_per_level(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.runs.len()).collect()
    }

    /// Entries per level, top down (duplicates across runs counted).
    pub fn entries_per_level(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.runs.iter().map(Run::len).sum()).collect()
    }

    pub fn capacity(&self, level: usize) -> usize {
        self.caps.get(level).or(self.caps.last()).copied().unwrap_or(1)
    }

    fn pages(&self, entries: usize) -> u64 {
        (entries as f64 / self.sys.entries_per_page).ceil() as u64
    }

    fn bits_per_entry(&self, level: usize) -> Option<f64> {
        let depth = self.model_levels as f64;
        let f = level_fpr(self.design.size_ratio, depth, level + 1, self.design.filter_bits / self.sys.entries);
        (f < 1.0).then(|| -f.ln() / (LN2 * LN2))
    }

    fn build_run(&self, level: usize, keys: Vec<u64>, vals: Vec<u64>) -> Run {
        let filter = self.bits_per_entry(level).map(|bpe| {
            let mut b = Bloom::new(keys.len(), bpe);
            for &k in &keys {
                b.insert(k);
            }
            b
        });
        Run { keys, vals, filter }
    }

    pub fn put(&mut self, key: u64, value: u64) {
        self.buffer.insert(key, value);
        if self.buffer.len() >= self.buffer_capacity {
            self.flush();
        }
    }

    /// Writes the buffer out as an arrival at level 1.
    pub fn flush(&mut self) {
        if self.buffer.is_empty() {
            return;
        }
        let buf = std::mem::take(&mut self.buffer);
        let (keys, vals): (Vec<u64>, Vec<u64>) = buf.into_iter().unzip();
        self.counters.flushes += 1;
        self.arrive(0, keys, vals);
    }

    fn group_size(&self, level: usize, group: usize) -> usize {
        let slots = self.ratio - 1;
        let k = self.capacity(level).clamp(1, slots.max(1));
        slots / k + usize::from(group < slots % k)
    }

    fn arrive(&mut self, level: usize, keys: Vec<u64>, vals: Vec<u64>) {
        if self.levels.len() <= level {
            self.levels.resize_with(level + 1, Level::default);
        }
        let incoming = keys.len();
        self.levels[level].arrivals += 1;
        if self.levels[level].arrivals >= self.ratio {
            // the incoming data lands as a transient extra run, then the
            // whole level is merged and handed down
            self.counters.compaction_writes += self.pages(incoming);
            let lvl = std::mem::take(&mut self.levels[level]);
            let mut read = self.pages(incoming);
            let mut parts: Vec<(Vec<u64>, Vec<u64>)> = Vec::with_capacity(lvl.runs.len() + 1);
            for r in lvl.runs {
                read += self.pages(r.len());
                parts.push((r.keys, r.vals));
            }
            parts.push((keys, vals));
            self.counters.compaction_reads += read;
            let (k, v) = merge_runs(parts);
            self.arrive(level + 1, k, v);
            return;
        }
        let (k, v) = if self.levels[level].in_group == 0 {
            (keys, vals)
        } else {
            let cur = self.levels[level].runs.pop().expect("open group has a run");
            self.counters.compaction_reads += self.pages(cur.len());
            merge_runs(vec![(cur.keys, cur.vals), (keys, vals)])
        };
        self.counters.compaction_writes += self.pages(k.len());
        let run = self.build_run(level, k, v);
        let group = self.levels[level].group;
        let size = self.group_size(level, group);
        let lvl = &mut self.levels[level];
        lvl.runs.push(run);
        lvl.in_group += 1;
        if lvl.in_group >= size {
            lvl.group += 1;
            lvl.in_group = 0;
        }
    }

    /// Point lookup: buffer first (free), then every run top down and newest
    /// first; a positive filter costs one random read.
    pub fn get(&mut self, key: u64) -> GetResult {
        if let Some(&v) = self.buffer.get(&key) {
            return GetResult { value: Some(v), io: 0.0 };
        }
        let mut io = 0.0;
        for lvl in &self.levels {
            for run in lvl.runs.iter().rev() {
                if run.filter.as_ref().is_some_and(|f| !f.may_contain(key)) {
                    continue;
                }
                io += 1.0;
                self.counters.random_reads += 1;
                if let Ok(i) = run.keys.binary_search(&key) {
                    return GetResult { value: Some(run.vals[i]), io };
                }
            }
        }
        GetResult { value: None, io }
    }

    /// Entries with keys in `[lo, hi]`. Each run holding at least one such
    /// key costs one random read plus `f_seq` per further page.
    pub fn range(&mut self, lo: u64, hi: u64) -> Result<RangeResult> {
        if lo > hi {
            return Err(Error::InvalidRange { lo, hi });
        }
        let b = self.sys.entries_per_page as usize;
        let mut io = 0.0;
        let mut seen: HashSet<u64> = HashSet::new();
        let mut entries: Vec<(u64, u64)> = Vec::new();
        for (&k, &v) in self.buffer.range(lo..=hi) {
            seen.insert(k);
            entries.push((k, v));
        }
        for lvl in &self.levels {
            for run in lvl.runs.iter().rev() {
                let a = run.keys.partition_point(|&k| k < lo);
                let z = run.keys.partition_point(|&k| k <= hi);
                if z <= a {
                    continue;
                }
                let pages = (z - 1) / b - a / b + 1;
                io += 1.0 + self.sys.seq_factor * (pages - 1) as f64;
                self.counters.random_reads += 1;
                self.counters.sequential_reads += (pages - 1) as u64;
                for i in a..z {
                    if seen.insert(run.keys[i]) {
                        entries.push((run.keys[i], run.vals[i]));
                    }
                }
            }
        }
        entries.sort_unstable();
        Ok(RangeResult { entries, io })
    }

    /// Latest value of every key, in key order. Charges nothing.
    pub fn scan(&self) -> Vec<(u64, u64)> {
        let mut out: BTreeMap<u64, u64> = BTreeMap::new();
        for lvl in self.levels.iter().rev() {
            for run in &lvl.runs {
                out.extend(run.keys.iter().copied().zip(run.vals.iter().copied()));
            }
        }
        out.extend(self.buffer.iter().map(|(&k, &v)| (k, v)));
        out.into_iter().collect()
    }

    /// Amortized write cost of the compaction counters `after - before`
    /// spread over `writes` writes: `f_seq · (reads + f_a · writes) / writes`.
    pub fn amortized_write_cost(&self, before: &IoCounters, after: &IoCounters, writes: u64) -> Option<f64> {
        (writes > 0).then(|| {
            let r = (after.compaction_reads - before.compaction_reads) as f64;
            let w = (after.compaction_writes - before.compaction_writes) as f64;
            self.sys.seq_factor * (r + self.sys.asymmetry * w) / writes as f64
        })
    }
}

/// Merges sorted runs given oldest first; on duplicate keys the newest wins.
fn merge_runs(mut parts: Vec<(Vec<u64>, Vec<u64>)>) -> (Vec<u64>, Vec<u64>) {
    if parts.len() == 1 {
        return parts.pop().expect("one part");
    }
    let total: usize = parts.iter().map(|p| p.0.len()).sum();
    let mut tagged: Vec<(u64, usize, u64)> = Vec::with_capacity(total);
    for (age, (k, v)) in parts.into_iter().enumerate() {
        tagged.extend(k.into_iter().zip(v).map(|(k, v)| (k, age, v)));
    }
    tagged.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    tagged.dedup_by_key(|e| e.0);
    tagged.into_iter().map(|(k, _, v)| (k, v)).unzip()
}

/// Key and query generation around a [`SimTree`].
#[derive(Debug, Clone)]
pub struct Driver {
    pub tree: SimTree,
    rng: ChaCha8Rng,
    keys: Vec<u64>,
    present: HashSet<u64>,
    /// Probability that a write updates an existing key.
    pub update_ratio: f64,
    next_value: u64,
}

/// Measured and predicted per-query costs of one workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub workload: Workload<f64>,
    pub counts: [u64; QUERY_TYPES],
    /// Mean I/Os per query of each type (`None` when none were run); the
    /// write entry is the amortized compaction cost.
    pub measured: [Option<f64>; QUERY_TYPES],
    pub model: CostVector<f64>,
    /// Mean I/Os per query over the whole workload.
    pub measured_total: f64,
    pub model_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub workloads: Vec<WorkloadReport>,
    /// Compaction I/O of the whole session spread over all its writes.
    pub session_write_cost: Option<f64>,
    pub counters: IoCounters,
}

impl Driver {
    pub fn new(tree: SimTree, seed: u64) -> Self {
        Driver {
            tree,
            rng: rng(seed),
            keys: Vec::new(),
            present: HashSet::new(),
            update_ratio: 0.0,
            next_value: 0,
        }
    }

    pub fn live_keys(&self) -> usize {
        self.keys.len()
    }

    fn fresh_key(&mut self) -> u64 {
        loop {
            let k: u64 = self.rng.random();
            if !self.present.contains(&k) {
                return k;
            }
        }
    }

    /// One write: an update of a live key with probability `update_ratio`,
    /// otherwise a new key.
    pub fn write(&mut self) {
        let update = !self.keys.is_empty() && self.rng.random::<f64>() < self.update_ratio;
        let key = if update {
            self.keys[self.rng.random_range(0..self.keys.len())]
        } else {
            let k = self.fresh_key();
            self.present.insert(k);
            self.keys.push(k);
            k
        };
        self.next_value += 1;
        self.tree.put(key, self.next_value);
        self.tree.counters.queries_executed[3] += 1;
    }

    /// Inserts `n` new keys.
    pub fn load(&mut self, n: usize) {
        let saved = self.update_ratio;
        self.update_ratio = 0.0;
        for _ in 0..n {
            self.write();
        }
        self.update_ratio = saved;
    }

    pub fn empty_get(&mut self) -> f64 {
        let k = self.fresh_key();
        self.tree.counters.queries_executed[0] += 1;
        self.tree.get(k).io
    }

    /// Lookup of a live key; falls back to an empty lookup on an empty tree.
    pub fn nonempty_get(&mut self) -> f64 {
        if self.keys.is_empty() {
            return self.empty_get();
        }
        let k = self.keys[self.rng.random_range(0..self.keys.len())];
        self.tree.counters.queries_executed[1] += 1;
        self.tree.get(k).io
    }

    /// Range over a `S_RQ` share of the key space starting at a random key.
    pub fn range(&mut self) -> f64 {
        let width = (self.tree.sys.range_selectivity * u64::MAX as f64) as u64;
        let lo: u64 = self.rng.random();
        let hi = lo.saturating_add(width);
        self.tree.counters.queries_executed[2] += 1;
        self.tree.range(lo, hi).map(|r| r.io).unwrap_or(0.0)
    }

    /// Executes `counts` queries per type in random order.
    pub fn run_counts(&mut self, workload: &Workload<f64>, counts: [u64; QUERY_TYPES]) -> Result<WorkloadReport> {
        let mut order: Vec<u8> = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
        for (t, &c) in counts.iter().enumerate() {
            order.extend(std::iter::repeat_n(t as u8, c as usize));
        }
        order.shuffle(&mut self.rng);
        let before = self.tree.counters;
        let mut io = [0.0; 3];
        for t in order {
            match t {
                0 => io[0] += self.empty_get(),
                1 => io[1] += self.nonempty_get(),
                2 => io[2] += self.range(),
                _ => self.write(),
            }
        }
        let after = self.tree.counters;
        let mean = |i: usize| (counts[i] > 0).then(|| io[i] / counts[i] as f64);
        let measured = [mean(0), mean(1), mean(2), self.tree.amortized_write_cost(&before, &after, counts[3])];
        let model = cost_vector(&self.tree.design, &self.tree.sys)?;
        let total: u64 = counts.iter().sum();
        let measured_total = if total == 0 {
            0.0
        } else {
            (0..QUERY_TYPES)
                .map(|i| measured[i].unwrap_or(0.0) * counts[i] as f64)
                .sum::<f64>()
                / total as f64
        };
        Ok(WorkloadReport {
            workload: *workload,
            counts,
            measured,
            model,
            measured_total,
            model_total: workload.dot(&model),
        })
    }

    /// Runs every workload of `session` in order.
    pub fn run_session(&mut self, session: &Session) -> Result<SessionReport> {
        let before = self.tree.counters;
        let workloads = session
            .workloads
            .iter()
            .map(|w| self.run_counts(&w.workload, w.counts))
            .collect::<Result<Vec<_>>>()?;
        let after = self.tree.counters;
        let writes: u64 = session.workloads.iter().map(|w| w.counts[3]).sum();
        Ok(SessionReport {
            workloads,
            session_write_cost: self.tree.amortized_write_cost(&before, &after, writes),
            counters: after,
        })
    }
}
