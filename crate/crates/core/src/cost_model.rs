//! Analytical I/O cost model for LSM trees with per-level run capacities.
//!
//! Every level `i` of the tree may hold up to `K_i` sorted runs before a
//! full-level compaction pushes its contents one level down. Classical
//! leveling (`K_i = 1`) and tiering (`K_i = T - 1`) as well as the hybrid
//! layouts (lazy leveling, 1-leveling, fluid) are special cases of the
//! capacity vector, see [`expand_policy`].
//!
//! All memory quantities are in bits. Costs are expected logical page I/Os
//! per query of each type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ceil_tol, Scalar};

/// Number of query types in a workload.
pub const QUERY_TYPES: usize = 4;

/// Proportions of empty point lookups, non-empty point lookups, range
/// lookups and writes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload<F> {
    pub z0: F,
    pub z1: F,
    pub q: F,
    pub w: F,
}

fn sum_tol<F: Scalar>() -> F {
    F::lit(1e-9).max(F::epsilon() * F::lit(64.0))
}

impl<F: Scalar> Workload<F> {
    pub fn new(z0: F, z1: F, q: F, w: F) -> Result<Self> {
        let wl = Workload { z0, z1, q, w };
        wl.validate()?;
        Ok(wl)
    }

    pub fn from_array(a: [F; QUERY_TYPES]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Normalizes integer query counts into proportions.
    pub fn from_counts(counts: [u64; QUERY_TYPES]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidWorkload("all query counts are zero".into()));
        }
        let t = F::from_u64(total).expect("count fits");
        let c = |i: usize| F::from_u64(counts[i]).expect("count fits") / t;
        Ok(Workload { z0: c(0), z1: c(1), q: c(2), w: c(3) })
    }

    pub fn uniform() -> Self {
        let quarter = F::lit(0.25);
        Workload { z0: quarter, z1: quarter, q: quarter, w: quarter }
    }

    pub fn to_array(&self) -> [F; QUERY_TYPES] {
        [self.z0, self.z1, self.q, self.w]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|x| !x.is_finite() || *x < F::zero()) {
            return Err(Error::InvalidWorkload(format!(
                "components must be finite and non-negative, got {:?}",
                a
            )));
        }
        let s = a.iter().fold(F::zero(), |acc, &x| acc + x);
        if (s - F::one()).abs() > sum_tol() {
            return Err(Error::InvalidWorkload(format!("components sum to {s}, not 1")));
        }
        Ok(())
    }

    /// Expected cost `z0·Z0 + z1·Z1 + q·Q + w·W`.
    pub fn dot(&self, c: &CostVector<F>) -> F {
        self.z0 * c.z0 + self.z1 * c.z1 + self.q * c.q + self.w * c.w
    }

    /// Mixture `alpha·self + (1 - alpha)·other`.
    pub fn mix(&self, other: &Self, alpha: F) -> Self {
        let b = F::one() - alpha;
        Workload {
            z0: alpha * self.z0 + b * other.z0,
            z1: alpha * self.z1 + b * other.z1,
            q: alpha * self.q + b * other.q,
            w: alpha * self.w + b * other.w,
        }
    }
}

/// Environment constants the tuner cannot change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar + Deserialize<'de>"))]
pub struct SystemParams<F> {
    /// Total number of entries `N`.
    pub entries: F,
    /// Entry size `E` in bits.
    pub entry_bits: F,
    /// Entries per page `B`.
    pub entries_per_page: F,
    /// Total memory budget `m` in bits (buffer + filters).
    pub memory_bits: F,
    /// Read/write asymmetry `f_a`.
    #[serde(default = "one")]
    pub asymmetry: F,
    /// Cost of a sequential I/O relative to a random one, `f_seq`.
    #[serde(default = "one")]
    pub seq_factor: F,
    /// Range query selectivity `S_RQ` as a fraction of all entries.
    #[serde(default)]
    pub range_selectivity: F,
}

fn one<F: Scalar>() -> F {
    F::one()
}

impl<F: Scalar> SystemParams<F> {
    /// 10^10 entries of 1 KiB, 4 KiB pages, 10 bits of memory per entry and
    /// range queries returning about one page.
    pub fn reference() -> Self {
        let n = F::lit(1e10);
        let b = F::lit(4.0);
        SystemParams {
            entries: n,
            entry_bits: F::lit(8192.0),
            entries_per_page: b,
            memory_bits: F::lit(10.0) * n,
            asymmetry: F::one(),
            seq_factor: F::one(),
            range_selectivity: b / n,
        }
    }

    /// Desk-scale system: 10^6 entries of 64 bytes, 64 entries per page,
    /// 10 bits of memory per entry.
    pub fn desk() -> Self {
        let n = F::lit(1e6);
        let b = F::lit(64.0);
        SystemParams {
            entries: n,
            entry_bits: F::lit(512.0),
            entries_per_page: b,
            memory_bits: F::lit(10.0) * n,
            asymmetry: F::one(),
            seq_factor: F::one(),
            range_selectivity: b / n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.entries,
            self.entry_bits,
            self.entries_per_page,
            self.memory_bits,
            self.asymmetry,
            self.seq_factor,
            self.range_selectivity,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSystem("all parameters must be finite".into()));
        }
        if self.entries < F::one() {
            return Err(Error::InvalidSystem("N must be at least 1".into()));
        }
        if self.entry_bits <= F::zero() {
            return Err(Error::InvalidSystem("E must be positive".into()));
        }
        if self.entries_per_page < F::one() {
            return Err(Error::InvalidSystem("B must be at least 1".into()));
        }
        if self.memory_bits <= self.entry_bits {
            return Err(Error::InvalidSystem(
                "memory must hold at least one entry in the buffer (m > E)".into(),
            ));
        }
        if self.asymmetry < F::zero() {
            return Err(Error::InvalidSystem("f_a must be non-negative".into()));
        }
        if self.seq_factor <= F::zero() || self.seq_factor > F::one() {
            return Err(Error::InvalidSystem("f_seq must lie in (0, 1]".into()));
        }
        if self.range_selectivity < F::zero() || self.range_selectivity > F::one() {
            return Err(Error::InvalidSystem("S_RQ must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Filter memory expressed as bits per entry.
    pub fn bits_per_entry(&self, bits: F) -> F {
        bits / self.entries
    }
}

/// Compaction layout family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy<F> {
    Leveling,
    Tiering,
    LazyLeveling,
    OneLeveling,
    /// Upper levels share one capacity, the last level has its own.
    Fluid { upper: F, last: F },
    /// Explicit per-level capacities.
    #[serde(rename = "klsm")]
    KLsm { capacities: Vec<F> },
}

impl<F: Scalar> Policy<F> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Leveling => "leveling",
            Policy::Tiering => "tiering",
            Policy::LazyLeveling => "lazy_leveling",
            Policy::OneLeveling => "one_leveling",
            Policy::Fluid { .. } => "fluid",
            Policy::KLsm { .. } => "klsm",
        }
    }
}

/// A tunable configuration: size ratio, filter memory and run capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmDesign<F> {
    /// Size ratio `T`.
    pub size_ratio: F,
    /// Bloom filter memory `m_filt` in bits.
    pub filter_bits: F,
    /// Capacity vector `K_1..K_L`.
    pub capacities: Vec<F>,
    pub policy: Policy<F>,
}

impl<F: Scalar> LsmDesign<F> {
    /// Builds a design whose capacity vector is expanded to the level count
    /// implied by `size_ratio` and the buffer left over after the filters.
    pub fn new(policy: Policy<F>, size_ratio: F, filter_bits: F, sys: &SystemParams<F>) -> Result<Self> {
        if !(filter_bits >= F::zero()) || filter_bits >= sys.memory_bits {
            return Err(Error::InvalidDesign(format!(
                "filter memory {filter_bits} must lie in [0, m)"
            )));
        }
        let levels = level_count(size_ratio, sys, sys.memory_bits - filter_bits)?;
        let capacities = expand_policy(&policy, size_ratio, levels)?;
        let design = LsmDesign { size_ratio, filter_bits, capacities, policy };
        design.validate(sys)?;
        Ok(design)
    }

    pub fn buffer_bits(&self, sys: &SystemParams<F>) -> F {
        sys.memory_bits - self.filter_bits
    }

    pub fn levels(&self) -> usize {
        self.capacities.len()
    }

    pub fn validate(&self, sys: &SystemParams<F>) -> Result<()> {
        let t = self.size_ratio;
        if !t.is_finite() || t < F::lit(2.0) {
            return Err(Error::InvalidDesign(format!("size ratio {t} must be >= 2")));
        }
        if !(self.filter_bits >= F::zero()) || self.filter_bits >= sys.memory_bits {
            return Err(Error::InvalidDesign("filter memory must lie in [0, m)".into()));
        }
        let levels = level_count(t, sys, self.buffer_bits(sys))?;
        if self.capacities.len() != levels {
            return Err(Error::InvalidDesign(format!(
                "capacity vector has {} entries but the tree has {} levels",
                self.capacities.len(),
                levels
            )));
        }
        check_capacities(&self.capacities, t)
    }

    /// Whether every level holds at most one run.
    pub fn is_leveling(&self) -> bool {
        self.capacities.iter().all(|&k| (k - F::one()).abs() <= F::snap_tol())
    }
}

fn check_capacities<F: Scalar>(caps: &[F], t: F) -> Result<()> {
    let tol = F::lit(1e-9);
    for (i, &k) in caps.iter().enumerate() {
        if !k.is_finite() || k < F::one() - tol || k > t - F::one() + tol {
            return Err(Error::InvalidDesign(format!(
                "K_{} = {k} outside [1, T-1] = [1, {}]",
                i + 1,
                t - F::one()
            )));
        }
    }
    Ok(())
}

/// Expected I/Os per query type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostVector<F> {
    pub z0: F,
    pub z1: F,
    pub q: F,
    pub w: F,
}

impl<F: Scalar> CostVector<F> {
    pub fn to_array(&self) -> [F; QUERY_TYPES] {
        [self.z0, self.z1, self.q, self.w]
    }
}

fn check_ratio_and_buffer<F: Scalar>(t: F, buffer_bits: F) -> Result<()> {
    if !t.is_finite() || t < F::lit(2.0) {
        return Err(Error::Domain(format!("size ratio {t} must be >= 2")));
    }
    if !(buffer_bits > F::zero()) {
        return Err(Error::Domain(format!("buffer memory {buffer_bits} must be positive")));
    }
    Ok(())
}

/// `log_T(N·E/m_buf + 1)` without the ceiling.
pub fn smooth_level_count<F: Scalar>(t: F, sys: &SystemParams<F>, buffer_bits: F) -> Result<F> {
    check_ratio_and_buffer(t, buffer_bits)?;
    Ok((sys.entries * sys.entry_bits / buffer_bits + F::one()).ln() / t.ln())
}

/// Number of levels needed to hold all entries, `ceil(log_T(N·E/m_buf + 1))`.
pub fn level_count<F: Scalar>(t: F, sys: &SystemParams<F>, buffer_bits: F) -> Result<usize> {
    let l = ceil_tol(smooth_level_count(t, sys, buffer_bits)?);
    Ok(l.to_usize().unwrap_or(1).max(1))
}

/// Per-level false positive rate for a tree of `depth` levels, clamped to [0, 1].
///
/// `depth` is real-valued so that the same formula serves the continuous
/// level count used while solving.
pub fn level_fpr<F: Scalar>(t: F, depth: F, level: usize, filter_bits_per_entry: F) -> F {
    let ln2 = F::lit(std::f64::consts::LN_2);
    let i = F::from_usize_lossy(level);
    let base = t.powf(t / (t - F::one())) / t.powf(depth + F::one() - i);
    let f = base * (-filter_bits_per_entry * ln2 * ln2).exp();
    f.max(F::zero()).min(F::one())
}

/// False positive rates `f_1..f_L` for the given level count.
pub fn bloom_fprs_for_levels<F: Scalar>(t: F, levels: usize, filter_bits: F, entries: F) -> Vec<F> {
    let depth = F::from_usize_lossy(levels);
    (1..=levels)
        .map(|i| level_fpr(t, depth, i, filter_bits / entries))
        .collect()
}

/// False positive rates `f_1..f_L` with `L` derived from the buffer memory
/// `m - m_filt`.
pub fn bloom_fprs<F: Scalar>(t: F, filter_bits: F, sys: &SystemParams<F>) -> Result<Vec<F>> {
    if !(filter_bits >= F::zero()) || filter_bits >= sys.memory_bits {
        return Err(Error::Domain("filter memory must lie in [0, m)".into()));
    }
    let levels = level_count(t, sys, sys.memory_bits - filter_bits)?;
    Ok(bloom_fprs_for_levels(t, levels, filter_bits, sys.entries))
}

/// Entries held by a full tree, `Σ (T-1)·T^(i-1)·m_buf/E`.
pub fn full_tree_entries<F: Scalar>(t: F, sys: &SystemParams<F>, buffer_bits: F) -> Result<F> {
    let levels = level_count(t, sys, buffer_bits)?;
    Ok(full_tree_entries_for_levels(t, levels, buffer_bits / sys.entry_bits))
}

pub fn full_tree_entries_for_levels<F: Scalar>(t: F, levels: usize, buffer_entries: F) -> F {
    (0..levels).fold(F::zero(), |acc, i| {
        acc + (t - F::one()) * t.powi(i as i32) * buffer_entries
    })
}

/// Expands a compaction policy into a capacity vector of `levels` entries.
///
/// Explicit K-LSM vectors are truncated or padded (repeating the last value)
/// to `levels` entries.
pub fn expand_policy<F: Scalar>(policy: &Policy<F>, t: F, levels: usize) -> Result<Vec<F>> {
    if !t.is_finite() || t < F::lit(2.0) {
        return Err(Error::InvalidDesign(format!("size ratio {t} must be >= 2")));
    }
    if levels == 0 {
        return Err(Error::InvalidDesign("level count must be at least 1".into()));
    }
    let top = t - F::one();
    let caps: Vec<F> = match policy {
        Policy::Leveling => vec![F::one(); levels],
        Policy::Tiering => vec![top; levels],
        Policy::LazyLeveling => (1..=levels)
            .map(|i| if i == levels { F::one() } else { top })
            .collect(),
        Policy::OneLeveling => (1..=levels)
            .map(|i| if i == 1 { top } else { F::one() })
            .collect(),
        Policy::Fluid { upper, last } => (1..=levels)
            .map(|i| if i == levels { *last } else { *upper })
            .collect(),
        Policy::KLsm { capacities } => fit_capacities(capacities, levels)?,
    };
    check_capacities(&caps, t)?;
    Ok(caps)
}

/// Truncates or extends a capacity vector; new levels inherit the nearest
/// existing value.
pub fn fit_capacities<F: Scalar>(caps: &[F], levels: usize) -> Result<Vec<F>> {
    let last = *caps
        .last()
        .ok_or_else(|| Error::InvalidDesign("empty capacity vector".into()))?;
    Ok((0..levels).map(|i| caps.get(i).copied().unwrap_or(last)).collect())
}

/// Level structure the cost formulas are evaluated on.
///
/// For deployed designs every weight is 1 and `depth` equals the number of
/// levels. The solver uses a fractional last level (`weights[n-1] < 1`) so
/// that the objective varies continuously with the size ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLayout<F> {
    pub size_ratio: F,
    pub depth: F,
    pub weights: Vec<F>,
    pub capacities: Vec<F>,
    pub filter_bits: F,
    pub buffer_bits: F,
}

impl<F: Scalar> LevelLayout<F> {
    pub fn of_design(design: &LsmDesign<F>, sys: &SystemParams<F>) -> Result<Self> {
        let buffer_bits = design.buffer_bits(sys);
        let levels = level_count(design.size_ratio, sys, buffer_bits)?;
        if design.capacities.len() != levels {
            return Err(Error::InvalidDesign(format!(
                "capacity vector has {} entries but the tree has {} levels",
                design.capacities.len(),
                levels
            )));
        }
        Ok(LevelLayout {
            size_ratio: design.size_ratio,
            depth: F::from_usize_lossy(levels),
            weights: vec![F::one(); levels],
            capacities: design.capacities.clone(),
            filter_bits: design.filter_bits,
            buffer_bits,
        })
    }

    /// Continuous layout: `ceil(L)` levels with the last one weighted by the
    /// fractional part of the smooth level count. `capacity_of(i, n, frac)`
    /// supplies `K_i` (1-based) for a layout of `n` levels.
    pub fn smooth(
        t: F,
        filter_bits: F,
        sys: &SystemParams<F>,
        mut capacity_of: impl FnMut(usize, usize, F) -> F,
    ) -> Result<Self> {
        let buffer_bits = sys.memory_bits - filter_bits;
        let depth = smooth_level_count(t, sys, buffer_bits)?;
        let n = ceil_tol(depth).to_usize().unwrap_or(1).max(1);
        let frac = (depth - F::from_usize_lossy(n - 1)).max(F::zero()).min(F::one());
        let weights = (1..=n).map(|i| if i == n { frac } else { F::one() }).collect();
        let capacities = (1..=n).map(|i| capacity_of(i, n, frac)).collect();
        Ok(LevelLayout { size_ratio: t, depth, weights, capacities, filter_bits, buffer_bits })
    }

    pub fn levels(&self) -> usize {
        self.weights.len()
    }

    pub fn fprs(&self, sys: &SystemParams<F>) -> Vec<F> {
        let bpe = self.filter_bits / sys.entries;
        (1..=self.levels())
            .map(|i| level_fpr(self.size_ratio, self.depth, i, bpe))
            .collect()
    }

    pub fn costs(&self, sys: &SystemParams<F>) -> CostVector<F> {
        let fprs = self.fprs(sys);
        CostVector {
            z0: self.empty_point(&fprs),
            z1: self.nonempty_point(&fprs, sys),
            q: self.range(sys),
            w: self.write(sys),
        }
    }

    fn empty_point(&self, fprs: &[F]) -> F {
        self.weights
            .iter()
            .zip(&self.capacities)
            .zip(fprs)
            .fold(F::zero(), |acc, ((&wt, &k), &f)| acc + wt * k * f)
    }

    fn nonempty_point(&self, fprs: &[F], sys: &SystemParams<F>) -> F {
        let t = self.size_ratio;
        let buffer_entries = self.buffer_bits / sys.entry_bits;
        let level_sizes: Vec<F> = (0..self.levels())
            .map(|i| self.weights[i] * (t - F::one()) * t.powi(i as i32) * buffer_entries)
            .collect();
        let full = level_sizes.iter().fold(F::zero(), |a, &x| a + x);
        let half = F::lit(0.5);
        let mut preceding = F::zero();
        let mut total = F::zero();
        for i in 0..self.levels() {
            let k = self.capacities[i];
            let here = F::one() + preceding + (k - F::one()) * half * fprs[i];
            total = total + level_sizes[i] / full * here;
            preceding = preceding + k * fprs[i];
        }
        total
    }

    fn range(&self, sys: &SystemParams<F>) -> F {
        let seeks = self
            .weights
            .iter()
            .zip(&self.capacities)
            .fold(F::zero(), |acc, (&wt, &k)| acc + wt * k);
        sys.seq_factor * sys.range_selectivity * sys.entries / sys.entries_per_page + seeks
    }

    fn write(&self, sys: &SystemParams<F>) -> F {
        let t = self.size_ratio;
        let two = F::lit(2.0);
        let merges = self
            .weights
            .iter()
            .zip(&self.capacities)
            .fold(F::zero(), |acc, (&wt, &k)| acc + wt * (t - F::one() + k) / (two * k));
        sys.seq_factor * (F::one() + sys.asymmetry) / sys.entries_per_page * merges
    }
}

/// `Z0 = Σ K_i·f_i`.
pub fn empty_point_cost<F: Scalar>(design: &LsmDesign<F>, sys: &SystemParams<F>) -> Result<F> {
    let layout = LevelLayout::of_design(design, sys)?;
    Ok(layout.empty_point(&layout.fprs(sys)))
}

/// Expected I/Os of a lookup that finds its key.
pub fn nonempty_point_cost<F: Scalar>(design: &LsmDesign<F>, sys: &SystemParams<F>) -> Result<F> {
    let layout = LevelLayout::of_design(design, sys)?;
    Ok(layout.nonempty_point(&layout.fprs(sys), sys))
}

/// `Q = f_seq·S_RQ·N/B + Σ K_i`.
pub fn range_cost<F: Scalar>(design: &LsmDesign<F>, sys: &SystemParams<F>) -> Result<F> {
    Ok(LevelLayout::of_design(design, sys)?.range(sys))
}

/// `W = f_seq·(1 + f_a)/B · Σ (T - 1 + K_i)/(2·K_i)`.
pub fn write_cost<F: Scalar>(design: &LsmDesign<F>, sys: &SystemParams<F>) -> Result<F> {
    Ok(LevelLayout::of_design(design, sys)?.write(sys))
}

pub fn cost_vector<F: Scalar>(design: &LsmDesign<F>, sys: &SystemParams<F>) -> Result<CostVector<F>> {
    Ok(LevelLayout::of_design(design, sys)?.costs(sys))
}

/// Expected I/Os per query of `workload` on `design`.
pub fn total_cost<F: Scalar>(
    workload: &Workload<F>,
    design: &LsmDesign<F>,
    sys: &SystemParams<F>,
) -> Result<F> {
    workload.validate()?;
    Ok(workload.dot(&cost_vector(design, sys)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sys_with(n: f64, e: f64, b: f64, m: f64) -> SystemParams<f64> {
        SystemParams {
            entries: n,
            entry_bits: e,
            entries_per_page: b,
            memory_bits: m,
            asymmetry: 1.0,
            seq_factor: 1.0,
            range_selectivity: 0.0,
        }
    }

    #[test]
    fn level_count_examples() {
        let sys = sys_with(1024.0, 8.0, 4.0, 1e6);
        assert_eq!(level_count(2.0, &sys, 8192.0).unwrap(), 1);
        // N·E/m_buf = 99
        let sys = sys_with(99.0, 1.0, 4.0, 1e6);
        assert_eq!(level_count(10.0, &sys, 1.0).unwrap(), 2);
        let sys = sys_with(3.0, 1.0, 4.0, 1e6);
        assert_eq!(level_count(2.0, &sys, 1.0).unwrap(), 2);
    }

    #[test]
    fn smooth_level_count_examples() {
        let sys = sys_with(3.0, 1.0, 4.0, 1e6);
        assert_relative_eq!(smooth_level_count(2.0, &sys, 1.0).unwrap(), 2.0, epsilon = 1e-12);
        let sys = sys_with(9.0, 1.0, 4.0, 1e6);
        assert_relative_eq!(smooth_level_count(10.0, &sys, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        let sys = sys_with(99.0, 1.0, 4.0, 1e6);
        assert_relative_eq!(smooth_level_count(10.0, &sys, 1.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn level_count_rejects_empty_buffer() {
        let sys = sys_with(100.0, 8.0, 4.0, 1e6);
        assert!(matches!(level_count(4.0, &sys, 0.0), Err(Error::Domain(_))));
        assert!(matches!(level_count(4.0, &sys, -1.0), Err(Error::Domain(_))));
        assert!(matches!(smooth_level_count(1.5, &sys, 10.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fpr_examples() {
        // unclamped value is 2^2 / 2^1 = 2
        assert_eq!(bloom_fprs_for_levels(2.0, 1, 0.0, 100.0), vec![1.0]);
        let f = bloom_fprs_for_levels(2.0, 1, 1000.0, 100.0)[0];
        let expected = 2.0 * (-10.0 * std::f64::consts::LN_2.powi(2)).exp();
        assert_relative_eq!(f, expected, max_relative = 1e-12);
        assert_relative_eq!(f, 0.0164, epsilon = 1e-4);
        let tiny = bloom_fprs_for_levels(5.0, 4, 1e9, 100.0);
        assert!(tiny.iter().all(|&x| x < 1e-100));
    }

    #[test]
    fn fprs_increase_with_depth() {
        let f = bloom_fprs_for_levels(7.0, 6, 300.0, 100.0);
        assert!(f.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn full_tree_examples() {
        assert_relative_eq!(full_tree_entries_for_levels(2.0, 1, 100.0), 100.0);
        assert_relative_eq!(full_tree_entries_for_levels(2.0, 2, 100.0), 300.0);
        assert_relative_eq!(full_tree_entries_for_levels(3.0, 3, 10.0), 260.0);
    }

    fn layout(t: f64, caps: Vec<f64>, fprs_bits: f64, buffer_entries: f64, sys: &SystemParams<f64>) -> LevelLayout<f64> {
        let n = caps.len();
        LevelLayout {
            size_ratio: t,
            depth: n as f64,
            weights: vec![1.0; n],
            capacities: caps,
            filter_bits: fprs_bits,
            buffer_bits: buffer_entries * sys.entry_bits,
        }
    }

    #[test]
    fn point_costs_with_given_fprs() {
        let sys = sys_with(300.0, 1.0, 4.0, 1e6);
        let l = layout(2.0, vec![1.0, 1.0], 0.0, 100.0, &sys);
        assert_relative_eq!(l.empty_point(&[0.01, 0.02]), 0.03, epsilon = 1e-15);
        assert_relative_eq!(l.nonempty_point(&[0.1, 0.2], &sys), 1.0 + 0.2 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(l.nonempty_point(&[0.0, 0.0], &sys), 1.0, epsilon = 1e-15);
        let single = layout(2.0, vec![1.0], 0.0, 100.0, &sys);
        assert_relative_eq!(single.nonempty_point(&[0.5], &sys), 1.0, epsilon = 1e-15);
        let tiered = layout(5.0, vec![4.0, 4.0, 4.0], 0.0, 10.0, &sys);
        assert_relative_eq!(tiered.nonempty_point(&[0.0; 3], &sys), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn range_and_write_examples() {
        let mut sys = sys_with(1e10, 1.0, 256.0, 1e12);
        sys.seq_factor = 0.5;
        sys.range_selectivity = 1e-6;
        let l = layout(10.0, vec![1.0; 5], 0.0, 1.0, &sys);
        assert_relative_eq!(l.range(&sys), 0.5 * 39.0625 + 5.0, epsilon = 1e-9);

        let sys = sys_with(100.0, 1.0, 4.0, 1e6);
        let l = layout(6.0, vec![2.0], 0.0, 1.0, &sys);
        assert_relative_eq!(l.write(&sys), 0.875, epsilon = 1e-12);

        let tiered = layout(8.0, vec![7.0; 3], 0.0, 1.0, &sys);
        assert_relative_eq!(tiered.write(&sys), 2.0 * 3.0 / 4.0, epsilon = 1e-12);
        let leveled = layout(8.0, vec![1.0; 3], 0.0, 1.0, &sys);
        assert_relative_eq!(leveled.write(&sys), 2.0 * 8.0 * 3.0 / 8.0, epsilon = 1e-12);
        assert_relative_eq!(tiered.range(&sys), 21.0);
        assert_relative_eq!(leveled.range(&sys), 3.0);
    }

    #[test]
    fn degenerate_single_level_cost_vector() {
        // N·E/m_buf = 1 with T = 2 gives exactly one level; huge filters make f_1 ≈ 0.
        let mut sys = sys_with(1000.0, 1.0, 8.0, 1e6 + 1000.0);
        sys.asymmetry = 2.0;
        let d = LsmDesign::new(Policy::Leveling, 2.0, 1e6, &sys).unwrap();
        assert_eq!(d.levels(), 1);
        let c = cost_vector(&d, &sys).unwrap();
        assert!(c.z0 < 1e-100);
        assert_relative_eq!(c.z1, 1.0);
        assert_relative_eq!(c.q, 1.0);
        assert_relative_eq!(c.w, 3.0 / 8.0);
    }

    #[test]
    fn total_cost_examples() {
        let w = Workload::new(0.25, 0.25, 0.25, 0.25).unwrap();
        let c = CostVector { z0: 0.0, z1: 1.0, q: 4.0, w: 0.5 };
        assert_relative_eq!(w.dot(&c), 1.375);
        let ones = CostVector { z0: 1.0, z1: 1.0, q: 1.0, w: 1.0 };
        assert_relative_eq!(w.dot(&ones), 1.0);
        let e = Workload::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(e.dot(&c), c.z0);
        let only_z1 = Workload::new(0.0, 1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(only_z1.dot(&c), c.z1);
    }

    #[test]
    fn expand_policy_examples() {
        assert_eq!(expand_policy(&Policy::Tiering, 5.0, 3).unwrap(), vec![4.0, 4.0, 4.0]);
        assert_eq!(expand_policy(&Policy::LazyLeveling, 5.0, 3).unwrap(), vec![4.0, 4.0, 1.0]);
        assert_eq!(expand_policy(&Policy::Leveling, 2.0, 1).unwrap(), vec![1.0]);
        assert_eq!(expand_policy(&Policy::OneLeveling, 5.0, 3).unwrap(), vec![4.0, 1.0, 1.0]);
        assert_eq!(
            expand_policy(&Policy::Fluid { upper: 3.0, last: 2.0 }, 5.0, 3).unwrap(),
            vec![3.0, 3.0, 2.0]
        );
        assert_eq!(
            expand_policy(&Policy::KLsm { capacities: vec![2.0, 3.0] }, 5.0, 4).unwrap(),
            vec![2.0, 3.0, 3.0, 3.0]
        );
        assert!(expand_policy(&Policy::Fluid { upper: 6.0, last: 1.0 }, 5.0, 3).is_err());
        assert!(expand_policy(&Policy::KLsm { capacities: vec![0.5] }, 5.0, 2).is_err());
        assert!(expand_policy::<f64>(&Policy::KLsm { capacities: vec![] }, 5.0, 2).is_err());
    }

    #[test]
    fn workload_validation() {
        assert!(Workload::new(0.5, 0.5, 0.0, 0.0).is_ok());
        assert!(Workload::new(0.5, 0.5, 0.1, 0.0).is_err());
        assert!(Workload::new(-0.1, 0.6, 0.5, 0.0).is_err());
        assert!(Workload::new(f64::NAN, 0.5, 0.5, 0.0).is_err());
        let w = Workload::<f64>::from_counts([1, 1, 2, 0]).unwrap();
        assert_eq!(w.to_array(), [0.25, 0.25, 0.5, 0.0]);
        assert!(Workload::<f64>::from_counts([0; 4]).is_err());
    }

    #[test]
    fn system_validation() {
        assert!(SystemParams::<f64>::reference().validate().is_ok());
        assert!(SystemParams::<f64>::desk().validate().is_ok());
        let mut s = SystemParams::<f64>::desk();
        s.memory_bits = s.entry_bits;
        assert!(s.validate().is_err());
        let mut s = SystemParams::<f64>::desk();
        s.seq_factor = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn design_validation() {
        let sys = SystemParams::<f64>::desk();
        let d = LsmDesign::new(Policy::Tiering, 6.0, 5e6, &sys).unwrap();
        assert!(d.validate(&sys).is_ok());
        let mut bad = d.clone();
        bad.capacities[0] = 6.0;
        assert!(bad.validate(&sys).is_err());
        let mut short = d.clone();
        short.capacities.pop();
        assert!(short.validate(&sys).is_err());
        assert!(LsmDesign::new(Policy::Leveling, 4.0, sys.memory_bits, &sys).is_err());
        assert!(LsmDesign::new(Policy::Leveling, 1.5, 0.0, &sys).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let sys = SystemParams::<f32>::desk();
        let d = LsmDesign::new(Policy::Leveling, 8.0_f32, 5e6, &sys).unwrap();
        let c32 = cost_vector(&d, &sys).unwrap();
        let sys64 = SystemParams::<f64>::desk();
        let d64 = LsmDesign::new(Policy::Leveling, 8.0_f64, 5e6, &sys64).unwrap();
        let c64 = cost_vector(&d64, &sys64).unwrap();
        for (a, b) in c32.to_array().iter().zip(c64.to_array()) {
            assert_relative_eq!(*a as f64, b, max_relative = 1e-4);
        }
    }

    #[test]
    fn smooth_layout_matches_ceiled_at_integer_depth() {
        // N·E/m_buf + 1 = 8^3 so the smooth depth is exactly 3.
        let sys = SystemParams {
            entries: 511.0,
            entry_bits: 1.0,
            entries_per_page: 4.0,
            memory_bits: 2.0,
            asymmetry: 1.0,
            seq_factor: 1.0,
            range_selectivity: 0.01,
        };
        let d = LsmDesign::new(Policy::Tiering, 8.0, 1.0, &sys).unwrap();
        let smooth = LevelLayout::smooth(8.0, 1.0, &sys, |_, _, _| 7.0).unwrap();
        assert_eq!(smooth.levels(), 3);
        let a = smooth.costs(&sys);
        let b = cost_vector(&d, &sys).unwrap();
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert_relative_eq!(*x, y, max_relative = 1e-9);
        }
    }
}
