//! Straightforward re-implementation of the cost formulas used as a test
//! oracle, plus random input generators. Shares no code with the library.
#![allow(dead_code)]

use lsmtune::cost_model::{LsmDesign, Policy, SystemParams};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy)]
pub struct Sys {
    pub n: f64,
    pub e: f64,
    pub b: f64,
    pub m: f64,
    pub fa: f64,
    pub fseq: f64,
    pub srq: f64,
}

impl Sys {
    pub fn to_params(self) -> SystemParams<f64> {
        SystemParams {
            entries: self.n,
            entry_bits: self.e,
            entries_per_page: self.b,
            memory_bits: self.m,
            asymmetry: self.fa,
            seq_factor: self.fseq,
            range_selectivity: self.srq,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    Leveling,
    Tiering,
    Lazy,
    OneLeveling,
    Fluid(f64, f64),
    Explicit(Vec<f64>),
}

impl Shape {
    pub fn to_policy(&self) -> Policy<f64> {
        match self {
            Shape::Leveling => Policy::Leveling,
            Shape::Tiering => Policy::Tiering,
            Shape::Lazy => Policy::LazyLeveling,
            Shape::OneLeveling => Policy::OneLeveling,
            Shape::Fluid(u, l) => Policy::Fluid { upper: *u, last: *l },
            Shape::Explicit(k) => Policy::KLsm { capacities: k.clone() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Case {
    pub sys: Sys,
    pub t: f64,
    pub filt: f64,
    pub shape: Shape,
}

impl Case {
    pub fn design(&self) -> LsmDesign<f64> {
        LsmDesign::new(self.shape.to_policy(), self.t, self.filt, &self.sys.to_params()).expect("valid case")
    }
}

/// Smallest `L >= 1` with `T^L >= N·E/m_buf + 1`.
pub fn levels(t: f64, sys: &Sys, mbuf: f64) -> usize {
    let target = sys.n * sys.e / mbuf + 1.0;
    let mut l = 1;
    let mut reach = t;
    while reach < target {
        reach *= t;
        l += 1;
    }
    l
}

pub fn capacities(shape: &Shape, t: f64, l: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..=l {
        let k = match shape {
            Shape::Leveling => 1.0,
            Shape::Tiering => t - 1.0,
            Shape::Lazy => {
                if i < l {
                    t - 1.0
                } else {
                    1.0
                }
            }
            Shape::OneLeveling => {
                if i == 1 {
                    t - 1.0
                } else {
                    1.0
                }
            }
            Shape::Fluid(u, last) => {
                if i < l {
                    *u
                } else {
                    *last
                }
            }
            Shape::Explicit(k) => {
                if i <= k.len() {
                    k[i - 1]
                } else {
                    k[k.len() - 1]
                }
            }
        };
        out.push(k);
    }
    out
}

pub fn fprs(t: f64, l: usize, filt: f64, n: f64) -> Vec<f64> {
    let ln2 = 2f64.ln();
    let mut out = Vec::new();
    for i in 1..=l {
        let mut f = t.powf(t / (t - 1.0)) / t.powf((l + 1 - i) as f64) * (-(filt / n) * ln2 * ln2).exp();
        if f > 1.0 {
            f = 1.0;
        }
        if f < 0.0 {
            f = 0.0;
        }
        out.push(f);
    }
    out
}

/// `[Z0, Z1, Q, W]`.
pub fn costs(case: &Case) -> [f64; 4] {
    let s = &case.sys;
    let t = case.t;
    let mbuf = s.m - case.filt;
    let l = levels(t, s, mbuf);
    let k = capacities(&case.shape, t, l);
    let f = fprs(t, l, case.filt, s.n);

    let mut z0 = 0.0;
    for i in 0..l {
        z0 += k[i] * f[i];
    }

    let mut sizes = Vec::new();
    let mut full = 0.0;
    for i in 0..l {
        let size = (t - 1.0) * t.powi(i as i32) * mbuf / s.e;
        sizes.push(size);
        full += size;
    }
    let mut z1 = 0.0;
    for i in 0..l {
        let mut above = 0.0;
        for j in 0..i {
            above += k[j] * f[j];
        }
        z1 += sizes[i] / full * (1.0 + above + (k[i] - 1.0) / 2.0 * f[i]);
    }

    let mut runs = 0.0;
    for &ki in &k {
        runs += ki;
    }
    let q = s.fseq * s.srq * s.n / s.b + runs;

    let mut merges = 0.0;
    for &ki in &k {
        merges += (t - 1.0 + ki) / (2.0 * ki);
    }
    let w = s.fseq * (1.0 + s.fa) / s.b * merges;
    [z0, z1, q, w]
}

pub fn random_sys(rng: &mut impl Rng) -> Sys {
    let n = 10f64.powf(rng.random_range(3.0..10.0));
    let e = [64.0, 128.0, 512.0, 1024.0, 8192.0][rng.random_range(0..5)];
    Sys {
        n,
        e,
        b: rng.random_range(1..=256) as f64,
        m: rng.random_range(1.0..20.0) * n,
        fa: rng.random_range(0.5..4.0),
        fseq: rng.random_range(0.05..1.0),
        srq: rng.random_range(0.0..1e-3),
    }
}

pub fn random_shape(rng: &mut impl Rng, t: f64) -> Shape {
    let k = |rng: &mut dyn rand::RngCore| 1.0 + rng.random::<f64>() * (t - 2.0);
    match rng.random_range(0..6) {
        0 => Shape::Leveling,
        1 => Shape::Tiering,
        2 => Shape::Lazy,
        3 => Shape::OneLeveling,
        4 => Shape::Fluid(k(rng), k(rng)),
        _ => {
            let len = rng.random_range(1..8);
            Shape::Explicit((0..len).map(|_| k(rng)).collect())
        }
    }
}

/// Random valid case whose level count is not within `1e-6` of a boundary.
pub fn random_case(rng: &mut impl Rng) -> Case {
    loop {
        let sys = random_sys(rng);
        let t: f64 = rng.random_range(2.0..60.0);
        let filt = rng.random_range(0.0..0.99) * sys.m;
        let raw = (sys.n * sys.e / (sys.m - filt) + 1.0).ln() / t.ln();
        if (raw - raw.round()).abs() < 1e-6 {
            continue;
        }
        let shape = random_shape(rng, t);
        return Case { sys, t, filt, shape };
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn kl(p: &[f64; 4], q: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        if p[i] > 0.0 {
            s += p[i] * (p[i] / q[i]).ln();
        }
    }
    s
}

/// Brute-force `max{ŵ·c : KL(ŵ, w) <= rho}` over a simplex grid of `step`,
/// then refined by shrinking grids around the best feasible point.
pub fn inner_max(c: &[f64; 4], w: &[f64; 4], rho: f64, step: f64) -> f64 {
    let n = (1.0 / step).round() as i64;
    let mut best = f64::NEG_INFINITY;
    let mut arg = *w;
    for a in 0..=n {
        for b in 0..=(n - a) {
            for d in 0..=(n - a - b) {
                let e = n - a - b - d;
                let p = [a as f64 / n as f64, b as f64 / n as f64, d as f64 / n as f64, e as f64 / n as f64];
                if kl(&p, w) <= rho {
                    let v = p[0] * c[0] + p[1] * c[1] + p[2] * c[2] + p[3] * c[3];
                    if v > best {
                        best = v;
                        arg = p;
                    }
                }
            }
        }
    }
    let mut radius = step;
    for _ in 0..30 {
        let h = radius / 10.0;
        for a in -10..=10 {
            for b in -10..=10 {
                for d in -10..=10 {
                    let p0 = arg[0] + a as f64 * h;
                    let p1 = arg[1] + b as f64 * h;
                    let p2 = arg[2] + d as f64 * h;
                    let p3 = 1.0 - p0 - p1 - p2;
                    let p = [p0, p1, p2, p3];
                    if p.iter().any(|&x| x < 0.0) || kl(&p, w) > rho {
                        continue;
                    }
                    let v = p[0] * c[0] + p[1] * c[1] + p[2] * c[2] + p[3] * c[3];
                    if v > best {
                        best = v;
                        arg = p;
                    }
                }
            }
        }
        radius = h * 2.0;
    }
    best
}
