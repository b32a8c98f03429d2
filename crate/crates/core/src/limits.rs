//! Limit laws of backward and forward iterations, kernel fixed points of
//! the one-step map, and the regimes where A may vanish or B ≡ 0.

use crate::classify::{
    augmented_sign_chain, embedded_trichotomy, null_homology, ClassifyError, EmbeddedTag, HomologyWitness, SignChain,
    ZERO_MEAN_TOL,
};
use crate::degeneracy::{detect, detect_dual, Affine, CFamily, DegeneracyError, DegeneracyReport, DEGENERACY_TOL};
use crate::law::DiscreteLaw;
use crate::model::{InitialLaw, Model};
use crate::simulate::{perpetuity_samples, run_backward, run_forward, stopped_sums, FiniteSampler, SimError, Start};
use serde::Serialize;
use thiserror::Error;

/// Values closer than this count as the same point when matching atoms.
pub const VALUE_TOL: f64 = 1e-9;
/// Even and odd subsequence laws closer than this in total variation are equal.
pub const GATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimitError {
    #[error("model could not be classified: {0}")]
    UnclassifiedModel(String),
    #[error("the standing assumption holds; use the regular limit theorems")]
    StandingAssumptionHolds,
    #[error("kernel exceeded the atom cap of {cap}")]
    AtomCap { cap: usize },
    #[error("no convergence after {} iterations (last residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { residuals: Vec<f64> },
    #[error("regime precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Degeneracy(#[from] DegeneracyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Backward,
    Forward,
}

/// One term weight · Law(map(X)) with X drawn from `base`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub state: usize,
    pub sign: i8,
    pub map: Affine,
    pub base: DiscreteLaw,
}

/// Mean, spread and a few quantiles of a large empirical law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub quantiles: Vec<(f64, f64)>,
    pub distinct_values: usize,
}

impl LawSummary {
    pub fn of(law: &DiscreteLaw) -> Self {
        let probs = [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99];
        let mut quantiles = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        let mut k = 0;
        for a in law.atoms() {
            acc += a.m;
            while k < probs.len() && acc >= probs[k] - 1e-12 {
                quantiles.push((probs[k], a.v));
                k += 1;
            }
        }
        LawSummary {
            mean: law.mean(),
            min: law.min().unwrap_or(f64::NAN),
            max: law.max().unwrap_or(f64::NAN),
            quantiles,
            distinct_values: law.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitLaw {
    /// Point masses c_i; `law` is the limit for the requested start.
    PointMassVector { c: Vec<f64>, law: DiscreteLaw },
    Empirical {
        summary: LawSummary,
        #[serde(skip)]
        law: DiscreteLaw,
        samples: usize,
        horizon: usize,
        seed: u64,
        max_abs_pi_horizon: f64,
    },
    ErgodicMixture {
        components: Vec<MixtureComponent>,
        law: DiscreteLaw,
        #[serde(skip_serializing_if = "Option::is_none")]
        family: Option<CFamily>,
    },
    DivergesToInfinity,
    NoLimit { reason: String },
}

impl LimitLaw {
    /// The limit law itself, when there is one.
    pub fn law(&self) -> Option<&DiscreteLaw> {
        match self {
            LimitLaw::PointMassVector { law, .. }
            | LimitLaw::Empirical { law, .. }
            | LimitLaw::ErgodicMixture { law, .. } => Some(law),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LimitLaw::PointMassVector { .. } => "point_mass_vector",
            LimitLaw::Empirical { .. } => "empirical",
            LimitLaw::ErgodicMixture { .. } => "ergodic_mixture",
            LimitLaw::DivergesToInfinity => "diverges_to_infinity",
            LimitLaw::NoLimit { .. } => "no_limit",
        }
    }
}

/// Which branch of the limit theorems produced the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitCase {
    /// Contracting walk: convergent perpetuity.
    Contracting,
    /// Null-homologous, degenerate, aperiodic sign chain.
    NullHomologousAperiodic,
    /// Null-homologous, degenerate, sign chain of period 2.
    NullHomologousTwoPeriodic,
    /// Expanding or oscillating walk with degeneracy.
    ExpandingDegenerate,
    /// Not contracting and not degenerate.
    NotDegenerate,
    /// Some multiplier vanishes with positive probability.
    StoppedAtZero,
    /// B ≡ 0, so iterates are Π_n Z_0.
    ZeroIntercept,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub direction: Direction,
    pub state: usize,
    pub case: LimitCase,
    pub embedded_tag: EmbeddedTag,
    pub limit: LimitLaw,
}

/// Monte Carlo settings for limits that have no closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitOptions {
    pub samples: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions { samples: 100_000, horizon: 1000, seed: 0 }
    }
}

fn empirical(s: crate::simulate::PerpetuitySamples) -> LimitLaw {
    let law = s.law();
    LimitLaw::Empirical {
        summary: LawSummary::of(&law),
        law,
        samples: s.values.len(),
        horizon: s.horizon,
        seed: s.seed,
        max_abs_pi_horizon: s.max_abs_pi_horizon,
    }
}

fn has_atom_near(law: &DiscreteLaw, targets: &[f64]) -> bool {
    law.atoms().iter().any(|a| targets.iter().any(|&t| (a.v - t).abs() <= VALUE_TOL * (1.0 + t.abs())))
}

fn is_point_at(law: &DiscreteLaw, c: f64) -> bool {
    law.as_point().is_some_and(|v| (v - c).abs() <= VALUE_TOL * (1.0 + c.abs()))
}

fn check_inputs(model: &Model, i: usize, z0: &InitialLaw) -> Result<(), LimitError> {
    if i >= model.n_states() {
        return Err(LimitError::UnclassifiedModel(format!("state {i} out of range")));
    }
    if z0.per_state.len() != model.n_states() {
        return Err(LimitError::UnclassifiedModel(format!(
            "initial law has {} entries for {} states",
            z0.per_state.len(),
            model.n_states()
        )));
    }
    Ok(())
}

fn mixture_of(components: &[MixtureComponent]) -> DiscreteLaw {
    let parts: Vec<(f64, DiscreteLaw)> = components
        .iter()
        .map(|c| (c.weight, c.base.affine(c.map.slope, c.map.intercept)))
        .collect();
    DiscreteLaw::mixture(parts.iter().map(|(w, l)| (*w, l)))
}

/// Builds the limit over the sign chain started at (i, +1). `term(j, δ)`
/// gives the affine map and base law for the pair (j, δ).
fn sign_chain_limit(
    chain: &SignChain,
    term: impl Fn(usize, i8) -> (Affine, DiscreteLaw),
) -> Result<(LimitCase, Vec<MixtureComponent>), f64> {
    let component = |(j, s): (usize, i8), weight: f64| {
        let (map, base) = term(j, s);
        MixtureComponent { weight, state: j, sign: s, map, base }
    };
    if chain.period != 2 {
        let comps = chain.class.iter().map(|&p| component(p, chain.stationary_mass(p.0, p.1))).collect();
        return Ok((LimitCase::NullHomologousAperiodic, comps));
    }
    let half = |class: &[(usize, i8)]| -> Vec<MixtureComponent> {
        class.iter().map(|&p| component(p, 2.0 * chain.stationary_mass(p.0, p.1))).collect()
    };
    let even = mixture_of(&half(&chain.cyclic_classes[0]));
    let odd = mixture_of(&half(&chain.cyclic_classes[1]));
    let tv = even.total_variation(&odd, VALUE_TOL);
    if tv > GATE_TOL {
        return Err(tv);
    }
    let comps = chain.class.iter().map(|&p| component(p, chain.stationary_mass(p.0, p.1))).collect();
    Ok((LimitCase::NullHomologousTwoPeriodic, comps))
}

fn gated(
    chain: &SignChain,
    family: Option<CFamily>,
    term: impl Fn(usize, i8) -> (Affine, DiscreteLaw),
) -> (LimitCase, LimitLaw) {
    match sign_chain_limit(chain, term) {
        Ok((case, components)) => {
            let law = mixture_of(&components);
            (case, LimitLaw::ErgodicMixture { components, law, family })
        }
        Err(tv) => (
            LimitCase::NullHomologousTwoPeriodic,
            LimitLaw::NoLimit { reason: format!("even and odd subsequences have different limits (TV {tv:.6})") },
        ),
    }
}

/// Affine map x ↦ c_i + r(x - c_j), the form every null-homologous limit takes.
fn recentre(c_out: f64, r: f64, c_in: f64) -> Affine {
    Affine { slope: r, intercept: c_out - r * c_in }
}

fn witness(model: &Model) -> Result<HomologyWitness, LimitError> {
    null_homology(model)
        .witness()
        .cloned()
        .ok_or_else(|| LimitError::UnclassifiedModel("expected a null-homologous walk".into()))
}

/// Null-homologous limit with c the degeneracy constants. Backward iterates
/// equal c_i + Π_n(Z_0 - c_{M_n}); forward iterates c_{M_n} + Π_n(Z_0 - c_i).
fn null_homologous_limit(
    model: &Model,
    i: usize,
    z0: &DiscreteLaw,
    deg: &DegeneracyReport,
    direction: Direction,
) -> Result<(LimitCase, LimitLaw), LimitError> {
    let c = deg.representative().expect("degenerate report has constants");
    let w = witness(model)?;
    let chain = augmented_sign_chain(model, i)?;
    let a = &w.a;
    let shifted = |j: usize| match direction {
        Direction::Backward => z0.affine(1.0, -c[j]),
        Direction::Forward => z0.affine(1.0, -c[i]),
    };
    let out = |j: usize| match direction {
        Direction::Backward => c[i],
        Direction::Forward => c[j],
    };
    let family = deg.family.clone();
    if chain.period == 2 {
        return Ok(gated(&chain, family, |j, s| {
            (recentre(out(j), f64::from(s) * a[i] / a[j], 0.0), shifted(j))
        }));
    }
    let components: Vec<MixtureComponent> = match &w.sigma {
        Some(sigma) if chain.class.len() == model.n_states() => (0..model.n_states())
            .map(|j| {
                let s = sigma[i] * sigma[j];
                MixtureComponent {
                    weight: model.pi()[j],
                    state: j,
                    sign: if s < 0.0 { -1 } else { 1 },
                    map: recentre(out(j), s * a[i] / a[j], 0.0),
                    base: shifted(j),
                }
            })
            .collect(),
        _ => (0..model.n_states())
            .map(|j| MixtureComponent {
                weight: model.pi()[j],
                state: j,
                sign: 0,
                map: Affine { slope: a[i] / a[j], intercept: out(j) },
                base: shifted(j).symmetrize(),
            })
            .collect(),
    };
    let law = mixture_of(&components);
    Ok((LimitCase::NullHomologousAperiodic, LimitLaw::ErgodicMixture { components, law, family }))
}

/// Weak limit of Ψ_1∘…∘Ψ_n(Z_0) under P_i, with Z_0 drawn from z0.at(i).
pub fn backward_limit(model: &Model, i: usize, z0: &InitialLaw, opts: &LimitOptions) -> Result<LimitReport, LimitError> {
    check_inputs(model, i, z0)?;
    if !model.standing_assumption().holds() {
        return trivial_regime(model, i, z0, Direction::Backward, opts);
    }
    let tag = embedded_trichotomy(model);
    let deg = detect(model)?;
    let (case, limit) = match tag.tag {
        EmbeddedTag::T1p => {
            let limit = match deg.representative() {
                Some(c) => LimitLaw::PointMassVector { law: DiscreteLaw::point(c[i]), c },
                None => empirical(perpetuity_samples(model, Start::State(i), opts.samples, opts.horizon, opts.seed)?),
            };
            (LimitCase::Contracting, limit)
        }
        _ if !deg.is_degenerate() => (LimitCase::NotDegenerate, LimitLaw::DivergesToInfinity),
        EmbeddedTag::T2p => null_homologous_limit(model, i, z0.at(i), &deg, Direction::Backward)?,
        EmbeddedTag::T3p => {
            let c = deg.representative().expect("degenerate");
            let constant = c.iter().all(|&x| (x - c[0]).abs() <= DEGENERACY_TOL * (1.0 + x.abs()));
            let limit = if constant && is_point_at(z0.at(i), c[0]) {
                LimitLaw::PointMassVector { law: DiscreteLaw::point(c[i]), c }
            } else if tag.mean_log_abs_a > ZERO_MEAN_TOL && !has_atom_near(z0.at(i), &c) {
                LimitLaw::DivergesToInfinity
            } else {
                LimitLaw::NoLimit { reason: "iterates stay bounded on some paths and escape on others".into() }
            };
            (LimitCase::ExpandingDegenerate, limit)
        }
    };
    Ok(LimitReport { direction: Direction::Backward, state: i, case, embedded_tag: tag.tag, limit })
}

/// Weak limit of Ψ_n∘…∘Ψ_1(Z_0) under P_i, with Z_0 drawn from z0.at(i).
pub fn forward_limit(model: &Model, i: usize, z0: &InitialLaw, opts: &LimitOptions) -> Result<LimitReport, LimitError> {
    check_inputs(model, i, z0)?;
    if !model.standing_assumption().holds() {
        return trivial_regime(model, i, z0, Direction::Forward, opts);
    }
    let tag = embedded_trichotomy(model);
    let deg = detect_dual(model)?;
    let (case, limit) = match tag.tag {
        EmbeddedTag::T1p => {
            let limit = match deg.representative() {
                Some(c) => {
                    let law = DiscreteLaw::from_pairs(c.iter().copied().zip(model.pi().iter().copied()));
                    LimitLaw::PointMassVector { c, law }
                }
                None => {
                    let dual = model.dual();
                    empirical(perpetuity_samples(&dual, Start::Law(model.pi()), opts.samples, opts.horizon, opts.seed)?)
                }
            };
            (LimitCase::Contracting, limit)
        }
        EmbeddedTag::T2p if deg.is_degenerate() => null_homologous_limit(model, i, z0.at(i), &deg, Direction::Forward)?,
        EmbeddedTag::T3p if deg.is_degenerate() => {
            let c = deg.representative().expect("degenerate");
            let limit = if is_point_at(z0.at(i), c[i]) {
                let law = DiscreteLaw::from_pairs(c.iter().copied().zip(model.pi().iter().copied()));
                LimitLaw::PointMassVector { c, law }
            } else if tag.mean_log_abs_a > ZERO_MEAN_TOL && !has_atom_near(z0.at(i), &[c[i]]) {
                LimitLaw::DivergesToInfinity
            } else {
                LimitLaw::NoLimit { reason: "iterates stay at c_{M_n} on some paths and escape on others".into() }
            };
            (LimitCase::ExpandingDegenerate, limit)
        }
        _ => {
            let limit = if z0.is_state_independent() {
                LimitLaw::DivergesToInfinity
            } else {
                LimitLaw::NoLimit { reason: "dual degeneracy fails".into() }
            };
            (LimitCase::NotDegenerate, limit)
        }
    };
    Ok(LimitReport { direction: Direction::Forward, state: i, case, embedded_tag: tag.tag, limit })
}

/// Limits when some multiplier can vanish or every intercept is zero.
pub fn trivial_regime(
    model: &Model,
    i: usize,
    z0: &InitialLaw,
    direction: Direction,
    opts: &LimitOptions,
) -> Result<LimitReport, LimitError> {
    check_inputs(model, i, z0)?;
    let sa = model.standing_assumption();
    if sa.holds() {
        return Err(LimitError::StandingAssumptionHolds);
    }
    let tag = embedded_trichotomy(model);
    let report = |case, limit| LimitReport { direction, state: i, case, embedded_tag: tag.tag, limit };
    if !sa.a_never_zero {
        let samples = match direction {
            Direction::Backward => {
                stopped_sums(&FiniteSampler::new(model), Start::State(i), opts.samples, opts.horizon, opts.seed, true)
            }
            Direction::Forward => {
                let dual = model.dual();
                stopped_sums(&FiniteSampler::new(&dual), Start::Law(model.pi()), opts.samples, opts.horizon, opts.seed, true)
            }
        };
        return Ok(report(LimitCase::StoppedAtZero, empirical(samples)));
    }
    let zero = vec![0.0; model.n_states()];
    let z = z0.at(i);
    let limit = match tag.tag {
        EmbeddedTag::T1p => LimitLaw::PointMassVector { c: zero, law: DiscreteLaw::point(0.0) },
        EmbeddedTag::T2p => {
            let a = witness(model)?.a;
            let chain = augmented_sign_chain(model, i)?;
            gated(&chain, None, |j, s| (Affine { slope: f64::from(s) * a[i] / a[j], intercept: 0.0 }, z.clone())).1
        }
        EmbeddedTag::T3p => {
            let at_zero = is_point_at(z, 0.0);
            let any_zero_atom = has_atom_near(z, &[0.0]);
            if at_zero {
                LimitLaw::PointMassVector { c: zero, law: DiscreteLaw::point(0.0) }
            } else if tag.mean_log_abs_a > ZERO_MEAN_TOL && !any_zero_atom {
                LimitLaw::DivergesToInfinity
            } else {
                LimitLaw::NoLimit { reason: "Π_n Z_0 neither settles nor escapes".into() }
            }
        }
    };
    Ok(report(LimitCase::ZeroIntercept, limit))
}

/// Per-state laws; the object the one-step map acts on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kernel {
    pub per_state: Vec<DiscreteLaw>,
}

impl Kernel {
    pub fn constant(law: DiscreteLaw, states: usize) -> Self {
        Kernel { per_state: vec![law; states] }
    }

    pub fn points(c: &[f64]) -> Self {
        Kernel { per_state: c.iter().map(|&v| DiscreteLaw::point(v)).collect() }
    }

    /// max_i W1(self(i), other(i)).
    pub fn distance(&self, other: &Kernel) -> f64 {
        self.per_state
            .iter()
            .zip(&other.per_state)
            .map(|(x, y)| x.wasserstein1(y))
            .fold(0.0, f64::max)
    }

    pub fn atom_count(&self) -> usize {
        self.per_state.iter().map(DiscreteLaw::len).sum()
    }
}

/// Hard cap on the number of atoms a single application may produce.
pub const PSI_ATOM_CAP: usize = 10_000_000;

/// (ΨP)(i) = Σ_j p_ij Σ_atoms w · Law(a R + b), R ~ P(j).
pub fn psi_apply(model: &Model, kernel: &Kernel, cap: usize) -> Result<Kernel, LimitError> {
    let per_state = (0..model.n_states())
        .map(|i| {
            let size: usize = model
                .successors(i)
                .map(|j| model.edge(i, j).map_or(0, |l| l.atoms.len()) * kernel.per_state[j].len())
                .sum();
            if size > cap {
                return Err(LimitError::AtomCap { cap });
            }
            let mut pairs = Vec::with_capacity(size);
            for j in model.successors(i) {
                let pij = model.p(i, j);
                for x in &model.edge(i, j).expect("edge law").atoms {
                    pairs.extend(kernel.per_state[j].atoms().iter().map(|r| (x.a * r.v + x.b, pij * x.w * r.m)));
                }
            }
            Ok(DiscreteLaw::from_pairs(pairs))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Kernel { per_state })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Laws with more atoms are projected onto a dyadic grid.
    pub atom_cap: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { max_iters: 200, tol: 1e-6, atom_cap: 1 << 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointSolution {
    pub kernel: Kernel,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Grid spacing of the last projection, if any was needed.
    pub grid: Option<f64>,
}

/// Finest dyadic spacing that keeps the law within `cap` grid points.
fn dyadic_spacing(law: &DiscreteLaw, cap: usize) -> f64 {
    let range = law.max().unwrap_or(0.0) - law.min().unwrap_or(0.0);
    let target = range / (cap.saturating_sub(2).max(1)) as f64;
    2f64.powi(target.log2().ceil() as i32)
}

/// Iterates the one-step map from `init` until successive kernels are within
/// `tol` in W1.
pub fn fixed_point_solve(model: &Model, init: &Kernel, opts: &FixedPointOptions) -> Result<FixedPointSolution, LimitError> {
    let tag = embedded_trichotomy(model).tag;
    if tag != EmbeddedTag::T1p || !model.standing_assumption().a_never_zero {
        return Err(LimitError::Precondition(format!("fixed-point iteration needs a contracting walk, got {tag:?}")));
    }
    let mut current = init.clone();
    let mut residuals = Vec::new();
    let mut grid = None;
    for k in 1..=opts.max_iters {
        let mut next = psi_apply(model, &current, PSI_ATOM_CAP)?;
        for law in &mut next.per_state {
            if law.len() > opts.atom_cap {
                let h = dyadic_spacing(law, opts.atom_cap);
                *law = law.snap_to_grid(h);
                grid = Some(h);
            }
        }
        let r = current.distance(&next);
        residuals.push(r);
        current = next;
        if r <= opts.tol {
            return Ok(FixedPointSolution { kernel: current, residuals, iterations: k, grid });
        }
    }
    Err(LimitError::NoConvergence { residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FixedPointCase {
    C1,
    C2,
    C3,
    C4,
    None,
}

/// Which family of kernels solves ΨP = P, with the data needed to build members.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub case: FixedPointCase,
    pub description: String,
    pub unique: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<CFamily>,
}

impl FixedPointReport {
    /// One fixed point: the unique one for C1 and C4, the member built from
    /// `x` for C2 and C3 (x is symmetrized in C2).
    pub fn representative(&self, model: &Model, x: &DiscreteLaw, opts: &FixedPointOptions) -> Result<Kernel, LimitError> {
        let n = model.n_states();
        match self.case {
            FixedPointCase::C1 => match &self.c {
                Some(c) => Ok(Kernel::points(c)),
                None => Ok(fixed_point_solve(model, &Kernel::constant(DiscreteLaw::point(0.0), n), opts)?.kernel),
            },
            FixedPointCase::C2 => {
                let (a, c) = (self.a.as_ref().unwrap(), self.c.as_ref().unwrap());
                let sym = x.symmetrize();
                Ok(Kernel { per_state: (0..n).map(|i| sym.affine(a[i], c[i])).collect() })
            }
            FixedPointCase::C3 => {
                let (a, s, c) = (self.a.as_ref().unwrap(), self.sigma.as_ref().unwrap(), self.c.as_ref().unwrap());
                Ok(Kernel { per_state: (0..n).map(|i| x.affine(a[i] * s[i], c[i])).collect() })
            }
            FixedPointCase::C4 => Ok(Kernel::points(self.c.as_ref().unwrap())),
            FixedPointCase::None => Err(LimitError::Precondition("the model has no fixed point".into())),
        }
    }
}

pub fn fixed_point_classify(model: &Model) -> Result<FixedPointReport, LimitError> {
    if !model.standing_assumption().a_never_zero {
        return Err(LimitError::UnclassifiedModel("a multiplier vanishes with positive probability".into()));
    }
    let tag = embedded_trichotomy(model).tag;
    let deg = detect(model)?;
    let none = |description: &str| FixedPointReport {
        case: FixedPointCase::None,
        description: description.into(),
        unique: false,
        c: None,
        a: None,
        sigma: None,
        family: None,
    };
    let report = match tag {
        EmbeddedTag::T1p => FixedPointReport {
            case: FixedPointCase::C1,
            description: "unique fixed point: the law of the perpetuity started at each state".into(),
            unique: true,
            c: deg.c.clone(),
            a: None,
            sigma: None,
            family: None,
        },
        EmbeddedTag::T2p if deg.is_degenerate() => {
            let w = witness(model)?;
            match (&w.sigma, &deg.family) {
                (Some(sigma), Some(family)) => FixedPointReport {
                    case: FixedPointCase::C3,
                    description: "P(i) = Law(a_i σ_i X + c_i) for any X and any c in the family".into(),
                    unique: false,
                    c: Some(family.member(0.0)),
                    a: Some(w.a.clone()),
                    sigma: Some(sigma.clone()),
                    family: Some(family.clone()),
                },
                (None, _) => FixedPointReport {
                    case: FixedPointCase::C2,
                    description: "P(i) = Law(a_i X + c_i) for any symmetric X".into(),
                    unique: false,
                    c: deg.representative(),
                    a: Some(w.a.clone()),
                    sigma: None,
                    family: None,
                },
                (Some(_), None) => none("sign-homologous with a unique c: no fixed point"),
            }
        }
        EmbeddedTag::T3p if deg.is_degenerate() => FixedPointReport {
            case: FixedPointCase::C4,
            description: "unique fixed point δ_{c_i}".into(),
            unique: true,
            c: deg.representative(),
            a: None,
            sigma: None,
            family: None,
        },
        _ => none("not degenerate: no fixed point"),
    };
    Ok(report)
}

/// Monte Carlo check of a claimed limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    pub metric: String,
    /// (n, metric value) at each checkpoint.
    pub checkpoints: Vec<(usize, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub checkpoints: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub ks_tol: f64,
    /// Bound x in P(|Ψ| ≤ x) for divergence checks.
    pub x: f64,
    pub escape_tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { checkpoints: vec![200, 400], replicas: 1_000_000, seed: 1, ks_tol: 0.02, x: 10.0, escape_tol: 0.05 }
    }
}

/// Simulates the iterates named by `report` and compares them with its claim.
pub fn validate(model: &Model, z0: &InitialLaw, report: &LimitReport, opts: &ValidationOptions) -> Validation {
    let gen = FiniteSampler::new(model);
    let sample = |n: usize| match report.direction {
        Direction::Backward => run_backward(&gen, Start::State(report.state), n, &z0.per_state, opts.replicas, opts.seed),
        Direction::Forward => run_forward(&gen, Start::State(report.state), n, &z0.per_state, opts.replicas, opts.seed),
    };
    match &report.limit {
        LimitLaw::DivergesToInfinity => {
            let checkpoints: Vec<(usize, f64)> =
                opts.checkpoints.iter().map(|&n| (n, sample(n).fraction(|v| v.abs() <= opts.x))).collect();
            let passed = checkpoints.windows(2).all(|w| w[1].1 <= w[0].1)
                && checkpoints.last().is_some_and(|c| c.1 < opts.escape_tol);
            Validation { metric: format!("P(|Ψ| <= {})", opts.x), checkpoints, tolerance: opts.escape_tol, passed }
        }
        LimitLaw::NoLimit { .. } => {
            let checkpoints: Vec<(usize, f64)> = opts
                .checkpoints
                .iter()
                .map(|&n| (n, sample(n).law().total_variation(&sample(n + 1).law(), VALUE_TOL)))
                .collect();
            let passed = checkpoints.iter().any(|c| c.1 > opts.ks_tol);
            Validation { metric: "TV(law at n, law at n+1)".into(), checkpoints, tolerance: opts.ks_tol, passed }
        }
        other => {
            let claim = other.law().expect("law-valued limit");
            let checkpoints: Vec<(usize, f64)> =
                opts.checkpoints.iter().map(|&n| (n, sample(n).law().ks_distance(claim, VALUE_TOL))).collect();
            let passed = checkpoints.iter().all(|c| c.1 <= opts.ks_tol);
            Validation { metric: "KS".into(), checkpoints, tolerance: opts.ks_tol, passed }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_contraction_is_a_point_mass_at_two() {
        let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
        let r = backward_limit(&m, 0, &InitialLaw::point(0.0, 1), &LimitOptions::default()).unwrap();
        assert_eq!(r.limit.law().unwrap().as_point(), Some(2.0));
    }

    #[test]
    fn sign_flip_with_unit_slope_mixes_two_points() {
        let m = Model::single_state(&[(0.5, 1.0, 0.0), (0.5, -1.0, 2.0)]).unwrap();
        let r = backward_limit(&m, 0, &InitialLaw::point(0.0, 1), &LimitOptions::default()).unwrap();
        let expect = DiscreteLaw::from_pairs([(0.0, 0.5), (2.0, 0.5)]);
        assert!(r.limit.law().unwrap().total_variation(&expect, 1e-12) < 1e-12);
    }

    #[test]
    fn psi_apply_fixes_its_fixed_point() {
        let m = Model::single_state(&[(1.0, 2.0, -1.0)]).unwrap();
        let k = Kernel::points(&[1.0]);
        assert_eq!(psi_apply(&m, &k, PSI_ATOM_CAP).unwrap(), k);
    }

    #[test]
    fn dyadic_spacing_respects_cap() {
        let law = DiscreteLaw::from_pairs((0..1000).map(|k| (k as f64 * 0.0123, 1e-3)));
        let h = dyadic_spacing(&law, 100);
        assert!(law.snap_to_grid(h).len() <= 100);
        assert!((law.snap_to_grid(h).mean() - law.mean()).abs() < 1e-12);
    }
}
