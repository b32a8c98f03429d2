//! Regime classification of the walk S_n = -log|Π_n|: trichotomies,
//! null-homology, the J gauge, periodicity of the first return with
//! Π = 1, and the chain of (state, sign of Π_n) pairs.

use crate::law::DiscreteLaw;
use crate::model::{chain_period, stationary_distribution, Model};
use crate::oracle::{excursion_law, OracleConfig, OracleError};
use crate::simulate::{track_returns, ExcursionBatch, Generator};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

/// Tolerance for deciding that a log-multiplier relation holds exactly.
pub const HOMOLOGY_TOL: f64 = 1e-10;
/// |E_π log|A|| below this counts as zero drift.
pub const ZERO_MEAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("regime precondition failed: {0}")]
    PreconditionRegime(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EmbeddedTag {
    T1p,
    T2p,
    T3p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MrwTag {
    T1,
    T2,
    T3,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomologyWitness {
    /// Potential with g(0) = 0 and -log|a| = g(j) - g(i) on every edge.
    pub g: Vec<f64>,
    /// a_i = e^{g(i)}, so that |Π_n| = a_{M_0} / a_{M_n}.
    pub a: Vec<f64>,
    /// Signs with sign(a) = σ_i σ_j on every edge, when they exist.
    pub sigma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum HomologyFailure {
    EdgeNotPointMass { from: usize, to: usize },
    ZeroMultiplier { from: usize, to: usize },
    /// A directed cycle along which |Π| ≠ 1.
    Cycle { states: Vec<usize>, abs_product: f64 },
    EdgeInconsistency { from: usize, to: usize, discrepancy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Homology {
    NullHomologous(HomologyWitness),
    NotNullHomologous(HomologyFailure),
}

impl Homology {
    pub fn witness(&self) -> Option<&HomologyWitness> {
        match self {
            Homology::NullHomologous(w) => Some(w),
            Homology::NotNullHomologous(_) => None,
        }
    }
}

/// BFS spanning tree from state 0: parent edge of every other state, in
/// discovery order.
fn spanning_tree(model: &Model) -> Vec<(usize, usize)> {
    let n = model.n_states();
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut order = Vec::new();
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for v in model.successors(u) {
            if !seen[v] {
                seen[v] = true;
                order.push((u, v));
                queue.push_back(v);
            }
        }
    }
    order
}

fn shortest_path(model: &Model, from: usize, to: usize) -> Vec<usize> {
    let n = model.n_states();
    let mut prev = vec![usize::MAX; n];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for v in model.successors(u) {
            if prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Point value of |a| on an edge, if its law of |a| is degenerate.
fn edge_abs_a(model: &Model, i: usize, j: usize) -> Option<f64> {
    let atoms = &model.edge(i, j)?.atoms;
    let first = atoms[0].a.abs();
    atoms
        .iter()
        .all(|x| (x.a.abs() - first).abs() <= HOMOLOGY_TOL * first.max(1.0))
        .then_some(first)
}

/// Point value of sign(a) on an edge, if constant.
fn edge_sign(model: &Model, i: usize, j: usize) -> Option<f64> {
    let atoms = &model.edge(i, j)?.atoms;
    let s = atoms[0].a.signum();
    atoms.iter().all(|x| x.a.signum() == s).then_some(s)
}

/// Signs σ with σ_0 = 1 and sign(a) = σ_i σ_j on every edge atom.
pub fn sign_homology(model: &Model) -> Option<Vec<f64>> {
    let mut sigma = vec![0.0; model.n_states()];
    sigma[0] = 1.0;
    for (u, v) in spanning_tree(model) {
        sigma[v] = sigma[u] * edge_sign(model, u, v)?;
    }
    model
        .edges()
        .all(|(i, j, _)| edge_sign(model, i, j) == Some(sigma[i] * sigma[j]))
        .then_some(sigma)
}

/// Decides whether -log|A_n| = g(M_n) - g(M_{n-1}) for some potential g.
pub fn null_homology(model: &Model) -> Homology {
    let mut x = vec![vec![f64::NAN; model.n_states()]; model.n_states()];
    for (i, j, law) in model.edges() {
        if law.atoms.iter().any(|a| a.a == 0.0) {
            return Homology::NotNullHomologous(HomologyFailure::ZeroMultiplier { from: i, to: j });
        }
        match edge_abs_a(model, i, j) {
            Some(v) => x[i][j] = -v.ln(),
            None => return Homology::NotNullHomologous(HomologyFailure::EdgeNotPointMass { from: i, to: j }),
        }
    }
    let mut g = vec![0.0; model.n_states()];
    for (u, v) in spanning_tree(model) {
        g[v] = g[u] + x[u][v];
    }
    let violated: Vec<(usize, usize)> = model
        .edges()
        .filter(|&(i, j, _)| (x[i][j] - (g[j] - g[i])).abs() > HOMOLOGY_TOL * (1.0 + g[i].abs().max(g[j].abs())))
        .map(|(i, j, _)| (i, j))
        .collect();
    if let Some(&(fi, fj)) = violated.first() {
        for (i, j, _) in model.edges() {
            let mut cycle = vec![i];
            cycle.extend(shortest_path(model, j, i));
            let total: f64 = cycle.windows(2).map(|w| x[w[0]][w[1]]).sum();
            if total.abs() > HOMOLOGY_TOL * cycle.len() as f64 {
                return Homology::NotNullHomologous(HomologyFailure::Cycle { states: cycle, abs_product: (-total).exp() });
            }
        }
        return Homology::NotNullHomologous(HomologyFailure::EdgeInconsistency {
            from: fi,
            to: fj,
            discrepancy: x[fi][fj] - (g[fj] - g[fi]),
        });
    }
    let a = g.iter().map(|v| v.exp()).collect();
    Homology::NullHomologous(HomologyWitness { g, a, sigma: sign_homology(model) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddedReport {
    pub tag: EmbeddedTag,
    pub mean_log_abs_a: f64,
    pub null_homologous: bool,
}

/// Type of the walk embedded at the returns to any fixed state; the same
/// for every state of a finite irreducible chain.
pub fn embedded_trichotomy(model: &Model) -> EmbeddedReport {
    let mean = model.mean_log_abs_a();
    let nh = matches!(null_homology(model), Homology::NullHomologous(_));
    let tag = if nh {
        EmbeddedTag::T2p
    } else if mean < -ZERO_MEAN_TOL {
        EmbeddedTag::T1p
    } else {
        EmbeddedTag::T3p
    };
    EmbeddedReport { tag, mean_log_abs_a: mean, null_homologous: nh }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MrwReport {
    pub tag: MrwTag,
    pub embedded: EmbeddedReport,
    pub evidence: String,
}

/// Type of the full walk. With finitely many bounded atoms the fluctuations
/// within an excursion are tight, so it matches the embedded type.
pub fn mrw_trichotomy(model: &Model) -> MrwReport {
    let embedded = embedded_trichotomy(model);
    let tag = match embedded.tag {
        EmbeddedTag::T1p => MrwTag::T1,
        EmbeddedTag::T2p => MrwTag::T2,
        EmbeddedTag::T3p => MrwTag::T3,
    };
    MrwReport {
        tag,
        embedded,
        evidence: "finite state space: full and embedded walks have the same type".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloTrichotomy {
    pub embedded_tag: EmbeddedTag,
    pub mrw_tag: MrwTag,
    pub steps: u64,
    pub returns: usize,
    pub mean_s_tau: f64,
    pub std_err_s_tau: f64,
    pub max_ln_abs_pi: f64,
    pub ln_threshold: f64,
}

/// Monte Carlo classification along one long run from `i`. The full walk is
/// tagged T3 when log|Π_n| ever exceeds `ln_threshold`, even if the walk
/// at returns drifts to +∞.
pub fn mrw_trichotomy_mc<G: Generator + ?Sized>(
    gen: &G,
    i: usize,
    steps: u64,
    seed: u64,
    ln_threshold: f64,
) -> Result<MonteCarloTrichotomy, ClassifyError> {
    let track = track_returns(gen, i, steps, seed);
    if track.returns.len() < 2 {
        return Err(ClassifyError::InsufficientSamples { needed: 2, got: track.returns.len() });
    }
    let mut prev = 0.0;
    let mut s = Vec::with_capacity(track.returns.len());
    for r in &track.returns {
        let ln = r.product.ln_abs();
        s.push(prev - ln);
        prev = ln;
    }
    let k = s.len() as f64;
    let mean = s.iter().sum::<f64>() / k;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let se = (var / k).sqrt();
    let abs_all_one = s.iter().all(|v| v.abs() <= 1e-12);
    let embedded_tag = if abs_all_one {
        EmbeddedTag::T2p
    } else if mean > 3.0 * se {
        EmbeddedTag::T1p
    } else {
        EmbeddedTag::T3p
    };
    let mrw_tag = match embedded_tag {
        EmbeddedTag::T2p => MrwTag::T2,
        EmbeddedTag::T3p => MrwTag::T3,
        EmbeddedTag::T1p if track.max_ln_abs_pi > ln_threshold => MrwTag::T3,
        EmbeddedTag::T1p => MrwTag::T1,
    };
    Ok(MonteCarloTrichotomy {
        embedded_tag,
        mrw_tag,
        steps,
        returns: track.returns.len(),
        mean_s_tau: mean,
        std_err_s_tau: se,
        max_ln_abs_pi: track.max_ln_abs_pi,
        ln_threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JMode {
    IdentityOnPositives,
    Ratio,
}

/// J(x) = x / E(S⁺ ∧ x) built from the law of S_τ, or J(x) = x when S_τ ≤ 0
/// almost surely; J(0) = 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JFunction {
    pub mode: JMode,
    pub s_tau: DiscreteLaw,
}

impl JFunction {
    pub fn from_law(s_tau: DiscreteLaw) -> Self {
        let positive = s_tau.atoms().iter().any(|a| a.v > 0.0);
        let mode = if positive { JMode::Ratio } else { JMode::IdentityOnPositives };
        JFunction { mode, s_tau }
    }

    pub fn from_samples(s_tau: &[f64]) -> Result<Self, ClassifyError> {
        if s_tau.len() < 2 {
            return Err(ClassifyError::InsufficientSamples { needed: 2, got: s_tau.len() });
        }
        Ok(Self::from_law(DiscreteLaw::from_samples(s_tau)))
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 1.0;
        }
        match self.mode {
            JMode::IdentityOnPositives => x,
            JMode::Ratio => {
                let denom: f64 = self.s_tau.atoms().iter().map(|a| a.m * a.v.max(0.0).min(x)).sum();
                x * self.s_tau.total_mass() / denom
            }
        }
    }
}

/// J for the returns to state `i`, from the excursion law up to `horizon`.
pub fn j_function(model: &Model, i: usize, horizon: usize) -> Result<JFunction, ClassifyError> {
    let law = excursion_law(model, i, horizon, &OracleConfig::default())?;
    Ok(JFunction::from_law(law.s_tau_law()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentTarget {
    W,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JMomentReport {
    pub target: MomentTarget,
    pub verdict: String,
    pub estimate: f64,
    pub std_err: Option<f64>,
    pub tail_mass: f64,
}

fn log_plus(x: f64) -> f64 {
    x.abs().ln().max(0.0)
}

/// E_i J(log⁺ W) or E_i J(log⁺|B|) over one excursion. Finite models have
/// geometric excursion tails and bounded atoms, so the moment is finite.
pub fn j_moment_test(model: &Model, i: usize, target: MomentTarget, horizon: usize) -> Result<JMomentReport, ClassifyError> {
    let law = excursion_law(model, i, horizon, &OracleConfig::default())?;
    let j = JFunction::from_law(law.s_tau_law());
    let estimate = law
        .atoms
        .iter()
        .map(|x| x.prob * j.eval(log_plus(if target == MomentTarget::W { x.w } else { x.b })))
        .sum();
    Ok(JMomentReport {
        target,
        verdict: "finite (structural)".into(),
        estimate,
        std_err: None,
        tail_mass: law.tail_mass,
    })
}

/// Monte Carlo estimate of the same moment from sampled excursions.
pub fn j_moment_from_samples(batch: &ExcursionBatch, target: MomentTarget) -> Result<JMomentReport, ClassifyError> {
    let s: Vec<f64> = batch.samples.iter().map(|x| x.s_tau).collect();
    let j = JFunction::from_samples(&s)?;
    let vals: Vec<f64> = batch
        .samples
        .iter()
        .map(|x| j.eval(log_plus(if target == MomentTarget::W { x.w_i } else { x.b_i })))
        .collect();
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(JMomentReport {
        target,
        verdict: "estimated".into(),
        estimate: mean,
        std_err: Some((var / k).sqrt()),
        tail_mass: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Periodicity {
    Aperiodic,
    TwoPeriodic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HatTau {
    pub state: usize,
    pub periodicity: Periodicity,
    pub p_plus_one: f64,
    pub p_minus_one: f64,
}

fn require_t2p(model: &Model) -> Result<(), ClassifyError> {
    let tag = embedded_trichotomy(model).tag;
    if tag != EmbeddedTag::T2p {
        return Err(ClassifyError::PreconditionRegime(format!("embedded walk is {tag:?}, not T2p")));
    }
    Ok(())
}

fn negative_mass(model: &Model, i: usize, j: usize) -> f64 {
    model.edge(i, j).map_or(0.0, |l| l.atoms.iter().filter(|x| x.a < 0.0).map(|x| x.w).sum())
}

/// Probability that the product over one excursion from `i` is negative.
pub fn prob_negative_excursion(model: &Model, i: usize) -> f64 {
    let n = model.n_states();
    let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
    let pos = |k: usize| others.iter().position(|&o| o == k);
    let f = if others.is_empty() {
        DVector::<f64>::zeros(0)
    } else {
        let m = others.len();
        let mut mat = DMatrix::<f64>::identity(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for (r, &j) in others.iter().enumerate() {
            for k in model.successors(j) {
                let q = negative_mass(model, j, k);
                rhs[r] += model.p(j, k) * q;
                if let Some(c) = pos(k) {
                    mat[(r, c)] -= model.p(j, k) * (1.0 - 2.0 * q);
                }
            }
        }
        mat.lu().solve(&rhs).expect("absorption system is regular for an irreducible chain")
    };
    model
        .successors(i)
        .map(|k| {
            let q = negative_mass(model, i, k);
            let fk = pos(k).map_or(0.0, |c| f[c]);
            model.p(i, k) * (q * (1.0 - fk) + (1.0 - q) * fk)
        })
        .sum()
}

/// Whether the first return to `i` with Π = 1 is aperiodic or 2-periodic.
pub fn hat_tau_periodicity(model: &Model, i: usize) -> Result<HatTau, ClassifyError> {
    require_t2p(model)?;
    let p_minus = prob_negative_excursion(model, i);
    let periodicity = if (1.0 - p_minus).abs() <= 1e-12 { Periodicity::TwoPeriodic } else { Periodicity::Aperiodic };
    Ok(HatTau { state: i, periodicity, p_plus_one: 1.0 - p_minus, p_minus_one: p_minus })
}

/// Chain of (M_n, sign Π_n) on pairs indexed 2j (sign +1) and 2j + 1 (sign -1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignChain {
    pub start: usize,
    pub pairs: Vec<(usize, i8)>,
    pub transition: Vec<Vec<f64>>,
    /// Closed class reached from (start, +1).
    pub class: Vec<(usize, i8)>,
    /// Stationary law over all pairs, zero outside the class.
    pub stationary: Vec<f64>,
    pub period: usize,
    /// Cyclic classes of the closed class; the first contains (start, +1).
    pub cyclic_classes: Vec<Vec<(usize, i8)>>,
}

impl SignChain {
    pub fn pair_index(j: usize, sign: i8) -> usize {
        2 * j + usize::from(sign < 0)
    }

    pub fn stationary_mass(&self, j: usize, sign: i8) -> f64 {
        self.stationary[Self::pair_index(j, sign)]
    }
}

pub fn augmented_sign_chain(model: &Model, start: usize) -> Result<SignChain, ClassifyError> {
    require_t2p(model)?;
    let n = model.n_states();
    let pairs: Vec<(usize, i8)> = (0..n).flat_map(|j| [(j, 1i8), (j, -1i8)]).collect();
    let mut q = vec![vec![0.0; 2 * n]; 2 * n];
    for (j, k, law) in model.edges() {
        for x in &law.atoms {
            for s in [1i8, -1] {
                let t = if x.a < 0.0 { -s } else { s };
                q[SignChain::pair_index(j, s)][SignChain::pair_index(k, t)] += model.p(j, k) * x.w;
            }
        }
    }
    let root = SignChain::pair_index(start, 1);
    let mut seen = vec![false; 2 * n];
    let mut order = vec![root];
    seen[root] = true;
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for v in 0..2 * n {
            if q[u][v] > 0.0 && !seen[v] {
                seen[v] = true;
                order.push(v);
            }
        }
    }
    let sub: Vec<Vec<f64>> = order.iter().map(|&u| order.iter().map(|&v| q[u][v]).collect()).collect();
    let adj: Vec<Vec<usize>> = sub
        .iter()
        .map(|row| (0..row.len()).filter(|&c| row[c] > 0.0).collect())
        .collect();
    let period = chain_period(&adj);
    let pi_sub = stationary_distribution(&sub)
        .map_err(|e| ClassifyError::PreconditionRegime(format!("sign chain: {e}")))?;
    let mut stationary = vec![0.0; 2 * n];
    for (k, &u) in order.iter().enumerate() {
        stationary[u] = pi_sub[k];
    }
    let mut level = vec![usize::MAX; order.len()];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut cyclic_classes = vec![Vec::new(); period.max(1)];
    for (k, &u) in order.iter().enumerate() {
        cyclic_classes[level[k] % period.max(1)].push(pairs[u]);
    }
    for c in &mut cyclic_classes {
        c.sort();
    }
    let mut class: Vec<(usize, i8)> = order.iter().map(|&u| pairs[u]).collect();
    class.sort();
    Ok(SignChain { start, pairs, transition: q, class, stationary, period, cyclic_classes })
}

/// Everything the classifier knows about a model, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyReport {
    pub state: usize,
    pub mrw_tag: MrwTag,
    pub embedded_tag: EmbeddedTag,
    pub mean_log_abs_a: f64,
    pub homology: Homology,
    pub j_moment: Option<JMomentReport>,
    pub hat_tau: Option<HatTau>,
    pub sign_chain: Option<SignChain>,
}

pub fn classify_report(model: &Model, i: usize, horizon: usize) -> ClassifyReport {
    let mrw = mrw_trichotomy(model);
    let t2p = mrw.embedded.tag == EmbeddedTag::T2p;
    ClassifyReport {
        state: i,
        mrw_tag: mrw.tag,
        embedded_tag: mrw.embedded.tag,
        mean_log_abs_a: mrw.embedded.mean_log_abs_a,
        homology: null_homology(model),
        j_moment: j_moment_test(model, i, MomentTarget::W, horizon).ok(),
        hat_tau: if t2p { hat_tau_periodicity(model, i).ok() } else { None },
        sign_chain: if t2p { augmented_sign_chain(model, i).ok() } else { None },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j_at_zero_is_one() {
        let j = JFunction::from_law(DiscreteLaw::point(2.0_f64.ln()));
        assert_eq!(j.eval(0.0), 1.0);
    }

    #[test]
    fn j_is_identity_for_nonpositive_increments() {
        let j = JFunction::from_law(DiscreteLaw::from_pairs([(-1.0, 0.5), (0.0, 0.5)]));
        assert_eq!(j.mode, JMode::IdentityOnPositives);
        assert_eq!(j.eval(3.5), 3.5);
    }

    #[test]
    fn sign_flip_periodicity() {
        let m = Model::single_state(&[(1.0, -1.0, 6.0)]).unwrap();
        assert_eq!(hat_tau_periodicity(&m, 0).unwrap().periodicity, Periodicity::TwoPeriodic);
        let m = Model::single_state(&[(0.5, -1.0, 2.0), (0.5, 1.0, 0.0)]).unwrap();
        assert_eq!(hat_tau_periodicity(&m, 0).unwrap().periodicity, Periodicity::Aperiodic);
        let m = Model::single_state(&[(1.0, 1.0, 0.0)]).unwrap();
        assert_eq!(hat_tau_periodicity(&m, 0).unwrap().periodicity, Periodicity::Aperiodic);
    }
}
