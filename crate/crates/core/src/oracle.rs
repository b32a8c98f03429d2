//! Exact path-space enumeration for finite models.
//!
//! Laws are propagated step by step over (state, running quantities) with
//! near-equal entries merged, so the cost grows with the number of distinct
//! values rather than the number of paths.

pub use crate::law::{Atom, DiscreteLaw};
use crate::model::Model;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("enumeration exceeded the atom cap of {cap}")]
    ExplosionCap { cap: usize },
    #[error("n = {n} exceeds the enumeration horizon {horizon}")]
    HorizonExceeded { n: usize, horizon: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub horizon: usize,
    pub atom_cap: usize,
    pub merge_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { horizon: 20, atom_cap: 10_000_000, merge_tol: 1e-12 }
    }
}

/// One fully resolved path with its coefficient choices.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAtom {
    pub states: Vec<usize>,
    pub coeff_choices: Vec<usize>,
    pub prob: f64,
    pub pi_n: f64,
    pub s_n: f64,
    pub backward_value: f64,
    pub forward_value: f64,
}

/// A law together with the probability mass left out by truncation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enumeration {
    pub atoms: Vec<Atom>,
    pub tail_mass: f64,
}

impl Enumeration {
    pub fn exact(law: &DiscreteLaw) -> Self {
        Enumeration { atoms: law.atoms().to_vec(), tail_mass: 0.0 }
    }
}

#[derive(Debug, Clone)]
struct Entry<const K: usize> {
    state: usize,
    x: [f64; K],
    p: f64,
}

fn near(x: f64, y: f64, tol: f64) -> bool {
    x == y || (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
}

fn merge<const K: usize>(mut entries: Vec<Entry<K>>, tol: f64) -> Vec<Entry<K>> {
    entries.sort_by(|u, v| {
        u.state.cmp(&v.state).then_with(|| {
            u.x.iter()
                .zip(v.x.iter())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut out: Vec<Entry<K>> = Vec::with_capacity(entries.len());
    for e in entries {
        match out.last_mut() {
            Some(last) if last.state == e.state && last.x.iter().zip(e.x.iter()).all(|(a, b)| near(*a, *b, tol)) => {
                last.p += e.p;
            }
            _ => out.push(e),
        }
    }
    out
}

fn check(n: usize, cfg: &OracleConfig) -> Result<(), OracleError> {
    if n > cfg.horizon {
        Err(OracleError::HorizonExceeded { n, horizon: cfg.horizon })
    } else {
        Ok(())
    }
}

/// Advances every entry by one step, applying `update` to each branch.
fn step<const K: usize>(
    model: &Model,
    entries: &[Entry<K>],
    cfg: &OracleConfig,
    update: impl Fn(&[f64; K], f64, f64) -> [f64; K],
) -> Result<Vec<Entry<K>>, OracleError> {
    let mut next = Vec::new();
    for e in entries {
        for j in model.successors(e.state) {
            let pij = model.p(e.state, j);
            for atom in &model.edge(e.state, j).expect("edge law").atoms {
                next.push(Entry { state: j, x: update(&e.x, atom.a, atom.b), p: e.p * pij * atom.w });
            }
        }
        if next.len() > cfg.atom_cap {
            return Err(OracleError::ExplosionCap { cap: cfg.atom_cap });
        }
    }
    Ok(merge(next, cfg.merge_tol))
}

/// Exact law of the backward iterate Ψ_1∘…∘Ψ_n(Z_0) under P_start.
pub fn enumerate_backward(
    model: &Model,
    start: usize,
    n: usize,
    z0: &DiscreteLaw,
    cfg: &OracleConfig,
) -> Result<DiscreteLaw, OracleError> {
    check(n, cfg)?;
    let mut entries = vec![Entry { state: start, x: [1.0, 0.0], p: 1.0 }];
    for _ in 0..n {
        entries = step(model, &entries, cfg, |x, a, b| [x[0] * a, x[1] + x[0] * b])?;
    }
    Ok(DiscreteLaw::from_pairs_tol(
        entries
            .iter()
            .flat_map(|e| z0.atoms().iter().map(move |z| (e.x[0] * z.v + e.x[1], e.p * z.m))),
        cfg.merge_tol,
    ))
}

/// Exact law of the forward iterate Ψ_n∘…∘Ψ_1(Z_0) under P_start.
pub fn enumerate_forward(
    model: &Model,
    start: usize,
    n: usize,
    z0: &DiscreteLaw,
    cfg: &OracleConfig,
) -> Result<DiscreteLaw, OracleError> {
    check(n, cfg)?;
    let mut entries: Vec<Entry<1>> = z0.atoms().iter().map(|z| Entry { state: start, x: [z.v], p: z.m }).collect();
    entries = merge(entries, cfg.merge_tol);
    for _ in 0..n {
        entries = step(model, &entries, cfg, |x, a, b| [a * x[0] + b])?;
    }
    Ok(DiscreteLaw::from_pairs_tol(entries.iter().map(|e| (e.x[0], e.p)), cfg.merge_tol))
}

fn under_stationary(
    model: &Model,
    per_start: impl Fn(usize) -> Result<DiscreteLaw, OracleError>,
) -> Result<DiscreteLaw, OracleError> {
    let laws = (0..model.n_states()).map(&per_start).collect::<Result<Vec<_>, _>>()?;
    Ok(DiscreteLaw::mixture(model.pi().iter().copied().zip(laws.iter())))
}

/// Backward iterate law with the chain started from its stationary law.
pub fn enumerate_backward_stationary(
    model: &Model,
    n: usize,
    z0: &DiscreteLaw,
    cfg: &OracleConfig,
) -> Result<DiscreteLaw, OracleError> {
    under_stationary(model, |i| enumerate_backward(model, i, n, z0, cfg))
}

/// Forward iterate law with the chain started from its stationary law.
pub fn enumerate_forward_stationary(
    model: &Model,
    n: usize,
    z0: &DiscreteLaw,
    cfg: &OracleConfig,
) -> Result<DiscreteLaw, OracleError> {
    under_stationary(model, |i| enumerate_forward(model, i, n, z0, cfg))
}

/// Every path of length n from `start` with its coefficient choices, no merging.
pub fn paths(model: &Model, start: usize, n: usize, z: f64, cfg: &OracleConfig) -> Result<Vec<PathAtom>, OracleError> {
    check(n, cfg)?;
    let mut out = vec![PathAtom {
        states: vec![start],
        coeff_choices: vec![],
        prob: 1.0,
        pi_n: 1.0,
        s_n: 0.0,
        backward_value: z,
        forward_value: z,
    }];
    let mut partial = vec![0.0];
    for _ in 0..n {
        let mut next = Vec::new();
        let mut next_partial = Vec::new();
        for (path, sum) in out.iter().zip(partial.iter()) {
            let i = *path.states.last().unwrap();
            for j in model.successors(i) {
                for (k, atom) in model.edge(i, j).unwrap().atoms.iter().enumerate() {
                    let mut q = path.clone();
                    q.states.push(j);
                    q.coeff_choices.push(k);
                    q.prob *= model.p(i, j) * atom.w;
                    let s = sum + path.pi_n * atom.b;
                    q.pi_n = path.pi_n * atom.a;
                    q.s_n = -q.pi_n.abs().ln();
                    q.backward_value = q.pi_n * z + s;
                    q.forward_value = atom.a * path.forward_value + atom.b;
                    next.push(q);
                    next_partial.push(s);
                }
            }
            if next.len() > cfg.atom_cap {
                return Err(OracleError::ExplosionCap { cap: cfg.atom_cap });
            }
        }
        out = next;
        partial = next_partial;
    }
    Ok(out)
}

/// One atom of the joint law of (τ, A, B, W) over an excursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcursionAtom {
    pub tau: usize,
    pub a: f64,
    pub b: f64,
    pub w: f64,
    pub prob: f64,
}

impl ExcursionAtom {
    /// S_τ = -log|A|.
    pub fn s_tau(&self) -> f64 {
        -self.a.abs().ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcursionLaw {
    pub state: usize,
    pub horizon: usize,
    pub atoms: Vec<ExcursionAtom>,
    pub tail_mass: f64,
}

impl ExcursionLaw {
    /// Probability of the enumerated excursions satisfying `pred`.
    pub fn prob(&self, pred: impl Fn(&ExcursionAtom) -> bool) -> f64 {
        self.atoms.iter().filter(|x| pred(x)).map(|x| x.prob).sum()
    }

    /// Law of S_τ over the enumerated part, renormalized.
    pub fn s_tau_law(&self) -> DiscreteLaw {
        DiscreteLaw::from_pairs(self.atoms.iter().map(|x| (x.s_tau(), x.prob))).normalized()
    }
}

/// Joint law of one excursion from `i` back to `i`, truncated at `horizon` steps.
pub fn excursion_law(model: &Model, i: usize, horizon: usize, cfg: &OracleConfig) -> Result<ExcursionLaw, OracleError> {
    let mut live = vec![Entry { state: i, x: [1.0, 0.0, 0.0], p: 1.0 }];
    let mut done: Vec<ExcursionAtom> = Vec::new();
    for tau in 1..=horizon {
        let next = step(model, &live, cfg, |x, a, b| {
            let term = x[0] * b;
            [x[0] * a, x[1] + term, x[2].max(term.abs())]
        })?;
        live = Vec::new();
        for e in next {
            if e.state == i {
                done.push(ExcursionAtom { tau, a: e.x[0], b: e.x[1], w: e.x[2], prob: e.p });
            } else {
                live.push(e);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    let tail_mass = live.iter().map(|e| e.p).sum();
    Ok(ExcursionLaw { state: i, horizon, atoms: done, tail_mass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_partial_sum() {
        let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
        let law = enumerate_backward(&m, 0, 3, &DiscreteLaw::point(0.0), &OracleConfig::default()).unwrap();
        assert_eq!(law.as_point(), Some(1.75));
    }

    #[test]
    fn horizon_is_enforced() {
        let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
        let err = enumerate_forward(&m, 0, 21, &DiscreteLaw::point(0.0), &OracleConfig::default()).unwrap_err();
        assert_eq!(err, OracleError::HorizonExceeded { n: 21, horizon: 20 });
    }

    #[test]
    fn cap_is_enforced() {
        let m = Model::single_state(&[(0.5, 0.5, 1.0), (0.5, 0.3, 2.0)]).unwrap();
        let cfg = OracleConfig { atom_cap: 100, ..OracleConfig::default() };
        let err = enumerate_backward(&m, 0, 10, &DiscreteLaw::point(0.0), &cfg).unwrap_err();
        assert_eq!(err, OracleError::ExplosionCap { cap: 100 });
    }
}
