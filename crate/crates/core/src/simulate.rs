//! Monte Carlo engine for backward and forward iterations, excursions,
//! perpetuities and the walk S_n = -log|Π_n|.
//!
//! Products are carried as [`Scaled`] values so that regimes where Π_n
//! leaves the floating-point range keep running in log form.

use crate::classify::{self, EmbeddedTag, Homology};
use crate::law::DiscreteLaw;
use crate::model::Model;
use crate::rng::{pick, stream, uniform, StreamRng};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::LN_2;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("excursion {excursion} did not return within {cap} steps")]
    ExcursionTimeout { cap: u64, excursion: u64 },
    #[error("not in the convergent regime: {0}")]
    NotConvergentRegime(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

fn frexp(x: f64) -> (f64, i64) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    if exp == 0 {
        let (m, e) = frexp(x * f64::from_bits((1023u64 + 64) << 52));
        return (m, e - 64);
    }
    let m = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (m, exp - 1022)
}

fn ldexp(mut x: f64, mut e: i64) -> f64 {
    let big = f64::from_bits((1023u64 + 1023) << 52);
    let small = f64::from_bits(1u64 << 52);
    while e > 1023 && x.is_finite() && x != 0.0 {
        x *= big;
        e -= 1023;
    }
    while e < -1022 && x != 0.0 && x.is_finite() {
        x *= small;
        e += 1022;
    }
    if !(-1022..=1023).contains(&e) {
        return x;
    }
    x * f64::from_bits(((e + 1023) as u64) << 52)
}

/// Real number sign · mant · 2^exp2 · e^ln with mant in [1/2, 1).
///
/// For finite-model coefficients `ln` stays 0 and products agree bit for bit
/// with plain floating-point products while those are in range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scaled {
    pub sign: f64,
    pub mant: f64,
    pub exp2: i64,
    pub ln: f64,
}

impl Scaled {
    pub const ONE: Scaled = Scaled { sign: 1.0, mant: 0.5, exp2: 1, ln: 0.0 };
    pub const ZERO: Scaled = Scaled { sign: 0.0, mant: 0.5, exp2: 0, ln: 0.0 };

    pub fn from_f64(x: f64) -> Scaled {
        if x == 0.0 {
            return Scaled::ZERO;
        }
        if !x.is_finite() {
            return Scaled { sign: x.signum(), mant: 0.5, exp2: 1, ln: f64::INFINITY };
        }
        let (m, e) = frexp(x.abs());
        Scaled { sign: x.signum(), mant: m, exp2: e, ln: 0.0 }
    }

    /// e^ln without ever materializing it.
    pub fn exp(ln: f64) -> Scaled {
        Scaled { ln, ..Scaled::ONE }
    }

    pub fn mul(self, o: Scaled) -> Scaled {
        if self.sign == 0.0 || o.sign == 0.0 {
            return Scaled::ZERO;
        }
        let mut m = self.mant * o.mant;
        let mut e = self.exp2 + o.exp2;
        if m < 0.5 {
            m *= 2.0;
            e -= 1;
        }
        Scaled { sign: self.sign * o.sign, mant: m, exp2: e, ln: self.ln + o.ln }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0.0
    }

    /// log|x|, -∞ for zero.
    pub fn ln_abs(&self) -> f64 {
        if self.sign == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.ln + self.mant.ln() + self.exp2 as f64 * LN_2
    }

    pub fn to_f64(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else if self.ln == 0.0 {
            ldexp(self.sign * self.mant, self.exp2)
        } else {
            self.sign * self.ln_abs().exp()
        }
    }

    /// The product self · b as a float.
    pub fn times(&self, b: f64) -> f64 {
        if self.sign == 0.0 || b == 0.0 {
            0.0
        } else if self.ln == 0.0 {
            ldexp(self.sign * self.mant * b, self.exp2)
        } else {
            self.sign * b.signum() * (self.ln_abs() + b.abs().ln()).exp()
        }
    }

    /// True when the value is exactly 2^k.
    pub fn is_exact_pow2(&self, k: i64) -> bool {
        self.sign == 1.0 && self.mant == 0.5 && self.exp2 == k + 1 && self.ln == 0.0
    }
}

/// Running product held as a plain float while it stays in the normal
/// range, switching to [`Scaled`] for good once it leaves.
#[derive(Debug, Clone, Copy)]
struct Running {
    fast: f64,
    slow: Option<Scaled>,
}

impl Running {
    const ONE: Running = Running { fast: 1.0, slow: None };

    #[inline]
    fn times(&self, b: f64) -> f64 {
        match &self.slow {
            None => self.fast * b,
            Some(s) => s.times(b),
        }
    }

    #[inline]
    fn mul(&mut self, s: &Step) {
        match &mut self.slow {
            None => {
                let p = self.fast * s.a_f64;
                let m = p.abs();
                if s.a.ln == 0.0 && (m == 0.0 || (1e-290..=1e290).contains(&m)) {
                    self.fast = p;
                } else {
                    self.slow = Some(Scaled::from_f64(self.fast).mul(s.a));
                }
            }
            Some(x) => *x = x.mul(s.a),
        }
    }

    fn is_zero(&self) -> bool {
        match &self.slow {
            None => self.fast == 0.0,
            Some(s) => s.is_zero(),
        }
    }

    fn to_f64(self) -> f64 {
        match &self.slow {
            None => self.fast,
            Some(s) => s.to_f64(),
        }
    }
}

/// One transition of a driving chain with its coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: usize,
    pub a: Scaled,
    pub a_f64: f64,
    pub ln_abs_a: f64,
    pub b: f64,
}

impl Step {
    pub fn from_coefficients(next: usize, a: f64, b: f64) -> Step {
        Step { next, a: Scaled::from_f64(a), a_f64: a, ln_abs_a: a.abs().ln(), b }
    }
}

/// Anything that can draw the next state and coefficient pair.
pub trait Generator: Sync {
    fn step(&self, state: usize, rng: &mut StreamRng) -> Step;
}

/// Sampling tables for a finite model.
#[derive(Debug, Clone)]
pub struct FiniteSampler {
    rows: Vec<(Vec<f64>, Vec<Step>)>,
}

impl FiniteSampler {
    pub fn new(model: &Model) -> Self {
        let rows = (0..model.n_states())
            .map(|i| {
                let mut cum = Vec::new();
                let mut steps = Vec::new();
                let mut acc = 0.0;
                for j in model.successors(i) {
                    for atom in &model.edge(i, j).unwrap().atoms {
                        acc += model.p(i, j) * atom.w;
                        cum.push(acc);
                        steps.push(Step::from_coefficients(j, atom.a, atom.b));
                    }
                }
                (cum, steps)
            })
            .collect();
        FiniteSampler { rows }
    }
}

impl Generator for FiniteSampler {
    #[inline]
    fn step(&self, state: usize, rng: &mut StreamRng) -> Step {
        let (cum, steps) = &self.rows[state];
        steps[pick(cum, uniform(rng))]
    }
}

/// Largest petal index the flower sampler will emit.
pub const MAX_PETAL: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PetalWeights {
    /// Weight proportional to r^(k-1) on petal k ≥ 1.
    Geometric { ratio: f64 },
    /// Finitely many petals with the listed weights.
    List { weights: Vec<f64> },
}

impl PetalWeights {
    /// Parses `geometric:<r>` or `list:<w1>,<w2>,...`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("bad petal spec {s:?}"))?;
        match kind {
            "geometric" => {
                let ratio: f64 = rest.parse().map_err(|_| format!("bad ratio {rest:?}"))?;
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err("geometric ratio must lie in (0, 1)".into());
                }
                Ok(PetalWeights::Geometric { ratio })
            }
            "list" => {
                let weights = rest
                    .split(',')
                    .map(|w| w.trim().parse::<f64>().map_err(|_| format!("bad weight {w:?}")))
                    .collect::<Result<Vec<_>, _>>()?;
                if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0)) {
                    return Err("petal weights must be positive".into());
                }
                Ok(PetalWeights::List { weights })
            }
            _ => Err(format!("unknown petal weight family {kind:?}")),
        }
    }
}

/// The flower chain: a centre 0 that either loops or jumps to a petal k,
/// each petal returning to the centre in one step. The coefficients make
/// every petal excursion multiply Π by exactly 1/2 while Π jumps to
/// e^{1/p_{0k}} inside the excursion.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FlowerChain {
    pub p_stay: f64,
    pub petals: PetalWeights,
}

impl FlowerChain {
    pub fn new(p_stay: f64, petals: PetalWeights) -> Self {
        FlowerChain { p_stay, petals }
    }

    /// Probability p_{0k} of jumping from the centre to petal k.
    pub fn petal_prob(&self, k: usize) -> f64 {
        let rest = 1.0 - self.p_stay;
        match &self.petals {
            PetalWeights::Geometric { ratio } => rest * (1.0 - ratio) * ratio.powi(k as i32 - 1),
            PetalWeights::List { weights } => rest * weights[k - 1] / weights.iter().sum::<f64>(),
        }
    }

    fn choose_petal(&self, v: f64) -> usize {
        match &self.petals {
            PetalWeights::Geometric { ratio } => {
                let k = 1.0 + ((1.0 - v).ln() / ratio.ln()).floor();
                (k as usize).clamp(1, MAX_PETAL)
            }
            PetalWeights::List { weights } => {
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    acc += w / total;
                    if v < acc {
                        return k + 1;
                    }
                }
                weights.len()
            }
        }
    }
}

impl Generator for FlowerChain {
    fn step(&self, state: usize, rng: &mut StreamRng) -> Step {
        if state == 0 {
            let u = uniform(rng);
            if u < self.p_stay {
                return Step::from_coefficients(0, 1.0, 1.0);
            }
            let k = self.choose_petal((u - self.p_stay) / (1.0 - self.p_stay));
            let x = 1.0 / self.petal_prob(k);
            let a = Scaled::exp(x);
            Step { next: k, a, a_f64: a.to_f64(), ln_abs_a: x, b: 1.0 }
        } else {
            let x = 1.0 / self.petal_prob(state);
            let a = Scaled { sign: 1.0, mant: 0.5, exp2: 0, ln: -x };
            Step { next: 0, a, a_f64: a.to_f64(), ln_abs_a: -x - LN_2, b: (-x).exp() }
        }
    }
}

/// How the driving chain is started.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    State(usize),
    /// Initial state drawn from the given probability vector.
    Law(&'a [f64]),
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

struct InitSampler {
    start: Option<Vec<f64>>,
    fixed: usize,
    z0: Vec<(Vec<f64>, Vec<f64>)>,
}

impl InitSampler {
    /// `z0` holds one law per state, or a single law shared by all states.
    fn new(start: Start<'_>, z0: &[DiscreteLaw]) -> Self {
        let (start, fixed) = match start {
            Start::State(i) => (None, i),
            Start::Law(p) => (Some(cumulative(p.iter().copied())), 0),
        };
        let z0 = z0
            .iter()
            .map(|law| (cumulative(law.atoms().iter().map(|a| a.m)), law.atoms().iter().map(|a| a.v).collect()))
            .collect();
        InitSampler { start, fixed, z0 }
    }

    fn draw(&self, rng: &mut StreamRng) -> (usize, f64) {
        let state = match &self.start {
            Some(cum) => pick(cum, uniform(rng)),
            None => self.fixed,
        };
        let (cum, vals) = if self.z0.len() == 1 { &self.z0[0] } else { &self.z0[state] };
        let z = if vals.len() == 1 { vals[0] } else { vals[pick(cum, uniform(rng))] };
        (state, z)
    }
}

/// Independent samples of one iterate, with the replicas whose value left
/// the floating-point range flagged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub n: usize,
    pub seed: u64,
    pub values: Vec<f64>,
    pub flagged: Vec<u64>,
}

impl SampleSet {
    fn collect(n: usize, seed: u64, values: Vec<f64>) -> Self {
        let flagged = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(k, _)| k as u64)
            .collect();
        SampleSet { n, seed, values, flagged }
    }

    pub fn law(&self) -> DiscreteLaw {
        DiscreteLaw::from_samples(&self.values)
    }

    pub fn fraction(&self, pred: impl Fn(f64) -> bool) -> f64 {
        self.values.iter().filter(|&&v| pred(v)).count() as f64 / self.values.len() as f64
    }
}

/// Samples of Ψ_1∘…∘Ψ_n(Z_0) = Π_n Z_0 + Σ_{k≤n} Π_{k-1} B_k.
pub fn run_backward<G: Generator + ?Sized>(
    gen: &G,
    start: Start<'_>,
    n: usize,
    z0: &[DiscreteLaw],
    replicas: usize,
    seed: u64,
) -> SampleSet {
    let init = InitSampler::new(start, z0);
    let values = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let (mut state, z) = init.draw(&mut rng);
            let mut pi = Running::ONE;
            let mut sum = 0.0;
            for _ in 0..n {
                let s = gen.step(state, &mut rng);
                sum += pi.times(s.b);
                pi.mul(&s);
                state = s.next;
            }
            pi.times(z) + sum
        })
        .collect();
    SampleSet::collect(n, seed, values)
}

/// Samples of Ψ_n∘…∘Ψ_1(Z_0), computed by the recursion R_k = A_k R_{k-1} + B_k.
pub fn run_forward<G: Generator + ?Sized>(
    gen: &G,
    start: Start<'_>,
    n: usize,
    z0: &[DiscreteLaw],
    replicas: usize,
    seed: u64,
) -> SampleSet {
    let init = InitSampler::new(start, z0);
    let values = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let (mut state, mut z) = init.draw(&mut rng);
            for _ in 0..n {
                let s = gen.step(state, &mut rng);
                z = s.a_f64 * z + s.b;
                state = s.next;
            }
            z
        })
        .collect();
    SampleSet::collect(n, seed, values)
}

/// Backward iterates at several horizons along the same replicas.
pub fn run_backward_checkpoints<G: Generator + ?Sized>(
    gen: &G,
    start: Start<'_>,
    checkpoints: &[usize],
    z0: &[DiscreteLaw],
    replicas: usize,
    seed: u64,
) -> Vec<SampleSet> {
    let init = InitSampler::new(start, z0);
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let rows: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let (mut state, z) = init.draw(&mut rng);
            let mut pi = Running::ONE;
            let mut sum = 0.0;
            let mut out = vec![0.0; checkpoints.len()];
            for n in 0..=last {
                for (k, &c) in checkpoints.iter().enumerate() {
                    if c == n {
                        out[k] = pi.times(z) + sum;
                    }
                }
                if n == last {
                    break;
                }
                let s = gen.step(state, &mut rng);
                sum += pi.times(s.b);
                pi.mul(&s);
                state = s.next;
            }
            out
        })
        .collect();
    checkpoints
        .iter()
        .enumerate()
        .map(|(k, &n)| SampleSet::collect(n, seed, rows.iter().map(|row| row[k]).collect()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub state: usize,
    pub a: f64,
    pub b: f64,
    pub pi_n: f64,
    pub s_n: f64,
    pub z_backward: f64,
    pub z_forward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub rng_stream_id: u64,
    pub records: Vec<StepRecord>,
}

/// One full trajectory with both iterations evaluated at every step.
pub fn trajectory<G: Generator + ?Sized>(gen: &G, start: usize, n: usize, z0: f64, seed: u64, replica: u64) -> Trajectory {
    let mut rng = stream(seed, replica);
    let mut state = start;
    let mut pi = Scaled::ONE;
    let mut sum = 0.0;
    let mut fwd = z0;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let s = gen.step(state, &mut rng);
        sum += pi.times(s.b);
        pi = pi.mul(s.a);
        let back = pi.times(z0) + sum;
        fwd = s.a_f64 * fwd + s.b;
        state = s.next;
        records.push(StepRecord {
            state,
            a: s.a_f64,
            b: s.b,
            pi_n: pi.to_f64(),
            s_n: -pi.ln_abs(),
            z_backward: back,
            z_forward: fwd,
        });
    }
    Trajectory { rng_stream_id: replica, records }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcursionSample {
    pub tau: u64,
    pub a_i: f64,
    pub b_i: f64,
    pub w_i: f64,
    pub s_tau: f64,
    pub pi_is_one: bool,
    #[serde(skip)]
    pub product: Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcursionBatch {
    pub state: usize,
    pub seed: u64,
    pub samples: Vec<ExcursionSample>,
    /// Total length of the excursions up to and including the first one
    /// after which the running product equals 1.
    pub hat_tau: Option<u64>,
}

pub const DEFAULT_STEP_CAP: u64 = 1_000_000;

fn is_one(x: &Scaled) -> bool {
    x.sign == 1.0 && x.ln_abs().abs() <= 1e-12
}

/// `count` independent excursions from `i` back to `i`.
pub fn sample_excursions<G: Generator + ?Sized>(
    gen: &G,
    i: usize,
    count: usize,
    seed: u64,
    step_cap: u64,
) -> Result<ExcursionBatch, SimError> {
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k);
            let mut state = i;
            let mut pi = Scaled::ONE;
            let mut b = 0.0f64;
            let mut w = 0.0f64;
            let mut tau = 0u64;
            loop {
                if tau == step_cap {
                    return Err(SimError::ExcursionTimeout { cap: step_cap, excursion: k });
                }
                let s = gen.step(state, &mut rng);
                let term = pi.times(s.b);
                b += term;
                w = w.max(term.abs());
                pi = pi.mul(s.a);
                state = s.next;
                tau += 1;
                if state == i {
                    break;
                }
            }
            Ok(ExcursionSample {
                tau,
                a_i: pi.to_f64(),
                b_i: b,
                w_i: w,
                s_tau: -pi.ln_abs(),
                pi_is_one: is_one(&pi),
                product: pi,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = Scaled::ONE;
    let mut elapsed = 0;
    let mut hat_tau = None;
    for s in &samples {
        acc = acc.mul(s.product);
        elapsed += s.tau;
        if is_one(&acc) {
            hat_tau = Some(elapsed);
            break;
        }
    }
    Ok(ExcursionBatch { state: i, seed, samples, hat_tau })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnRecord {
    pub time: u64,
    pub tau: u64,
    pub product: Scaled,
}

/// Products at the successive returns to a state along one long run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnTrack {
    pub steps: u64,
    pub returns: Vec<ReturnRecord>,
    pub max_ln_abs_pi: f64,
}

pub fn track_returns<G: Generator + ?Sized>(gen: &G, i: usize, steps: u64, seed: u64) -> ReturnTrack {
    let mut rng = stream(seed, 0);
    let mut state = i;
    let mut pi = Scaled::ONE;
    let mut max_ln: f64 = 0.0;
    let mut returns = Vec::new();
    let mut last = 0;
    for t in 1..=steps {
        let s = gen.step(state, &mut rng);
        pi = pi.mul(s.a);
        state = s.next;
        max_ln = max_ln.max(pi.ln_abs());
        if state == i {
            returns.push(ReturnRecord { time: t, tau: t - last, product: pi });
            last = t;
        }
    }
    ReturnTrack { steps, returns, max_ln_abs_pi: max_ln }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerpetuitySamples {
    pub horizon: usize,
    pub seed: u64,
    pub values: Vec<f64>,
    /// Largest |Π_horizon| seen, a proxy for the truncation error.
    pub max_abs_pi_horizon: f64,
}

impl PerpetuitySamples {
    pub fn law(&self) -> DiscreteLaw {
        DiscreteLaw::from_samples(&self.values)
    }
}

/// Truncated perpetuity Σ_{k≤horizon} Π_{k-1} B_k, which requires Π_{τ_n} → 0.
pub fn perpetuity_samples(
    model: &Model,
    start: Start<'_>,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<PerpetuitySamples, SimError> {
    let tag = classify::embedded_trichotomy(model).tag;
    if tag != EmbeddedTag::T1p {
        return Err(SimError::NotConvergentRegime(format!("embedded walk is {tag:?}")));
    }
    Ok(stopped_sums(&FiniteSampler::new(model), start, count, horizon, seed, false))
}

/// Σ_{k≤horizon} Π_{k-1} B_k, optionally stopping once a zero multiplier
/// has been applied.
pub(crate) fn stopped_sums<G: Generator + ?Sized>(
    gen: &G,
    start: Start<'_>,
    count: usize,
    horizon: usize,
    seed: u64,
    stop_at_zero: bool,
) -> PerpetuitySamples {
    let init = InitSampler::new(start, &[DiscreteLaw::point(0.0)]);
    let rows: Vec<(f64, f64)> = (0..count as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let (mut state, _) = init.draw(&mut rng);
            let mut pi = Running::ONE;
            let mut sum = 0.0;
            for _ in 0..horizon {
                let s = gen.step(state, &mut rng);
                sum += pi.times(s.b);
                pi.mul(&s);
                state = s.next;
                if stop_at_zero && pi.is_zero() {
                    break;
                }
            }
            (sum, pi.to_f64().abs())
        })
        .collect();
    PerpetuitySamples {
        horizon,
        seed,
        max_abs_pi_horizon: rows.iter().fold(0.0, |m, r| m.max(r.1)),
        values: rows.into_iter().map(|r| r.0).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub x: f64,
    /// (n, empirical P_π(|S_n| ≤ x)).
    pub checkpoints: Vec<(usize, f64)>,
    pub strictly_decreasing: bool,
}

/// Empirical P_π(|S_n| ≤ x) at the given horizons.
pub fn divergence_diagnostic(
    model: &Model,
    checkpoints: &[usize],
    x: f64,
    replicas: usize,
    seed: u64,
) -> Result<DivergenceReport, SimError> {
    if let Homology::NullHomologous(_) = classify::null_homology(model) {
        return Err(SimError::Precondition("the walk is null-homologous".into()));
    }
    let gen = FiniteSampler::new(model);
    let init = InitSampler::new(Start::Law(model.pi()), &[DiscreteLaw::point(0.0)]);
    let mut sorted: Vec<usize> = checkpoints.to_vec();
    sorted.sort_unstable();
    let last = sorted.last().copied().unwrap_or(0);
    let hits: Vec<Vec<bool>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let (mut state, _) = init.draw(&mut rng);
            let mut s_n = 0.0;
            let mut out = Vec::with_capacity(sorted.len());
            let mut next = 0;
            for n in 1..=last {
                let s = gen.step(state, &mut rng);
                s_n -= s.ln_abs_a;
                state = s.next;
                while next < sorted.len() && sorted[next] == n {
                    out.push(s_n.abs() <= x);
                    next += 1;
                }
            }
            while out.len() < sorted.len() {
                out.push(true);
            }
            out
        })
        .collect();
    let probs: Vec<(usize, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(k, &n)| (n, hits.iter().filter(|h| h[k]).count() as f64 / replicas as f64))
        .collect();
    let strictly_decreasing = probs.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(DivergenceReport { x, checkpoints: probs, strictly_decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_matches_float_products() {
        let xs = [0.5, -1.5, 3.0, 1e-3, -7.25];
        let mut s = Scaled::ONE;
        let mut f = 1.0;
        for &x in &xs {
            s = s.mul(Scaled::from_f64(x));
            f *= x;
            assert_eq!(s.to_f64(), f);
            assert_eq!(s.times(0.3), f * 0.3);
        }
    }

    #[test]
    fn scaled_survives_overflow() {
        let mut s = Scaled::ONE;
        for _ in 0..2000 {
            s = s.mul(Scaled::from_f64(2.0));
        }
        assert!((s.ln_abs() - 2000.0 * LN_2).abs() < 1e-9);
        assert!(s.to_f64().is_infinite());
    }

    #[test]
    fn deterministic_perpetuity_is_exact() {
        let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
        let set = run_backward(&FiniteSampler::new(&m), Start::State(0), 30, &[DiscreteLaw::point(0.0)], 100, 0);
        assert!(set.values.iter().all(|&v| v == 2.0 - 2f64.powi(-29)));
    }

    #[test]
    fn flower_petal_excursion_halves_product() {
        let f = FlowerChain::new(0.5, PetalWeights::Geometric { ratio: 0.5 });
        let batch = sample_excursions(&f, 0, 2000, 3, DEFAULT_STEP_CAP).unwrap();
        for s in &batch.samples {
            if s.tau == 1 {
                assert!(s.product.is_exact_pow2(0));
            } else {
                assert_eq!(s.tau, 2);
                assert!(s.product.is_exact_pow2(-1));
            }
        }
    }
}
