//! Markov-modulated affine systems: a finite ergodic driving chain and, for
//! every edge with positive transition probability, a finite law of the
//! coefficient pair (a, b).

use crate::law::{Atom, DiscreteLaw};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use thiserror::Error;

pub const ROW_SUM_TOL: f64 = 1e-12;
pub const ATOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("driving chain is not irreducible (state {0:?} not mutually reachable with state 0)")]
    NotIrreducible(String),
    #[error("driving chain has period {0}")]
    NotAperiodic(usize),
    #[error("row {row} sums to {sum}")]
    RowSumError { row: String, sum: f64 },
    #[error("edge {from}->{to} has positive probability but no coefficient law")]
    MissingEdgeLaw { from: String, to: String },
    #[error("edge {from}->{to} has a coefficient law but zero probability")]
    UnexpectedEdgeLaw { from: String, to: String },
    #[error("edge {from}->{to}: {reason}")]
    BadWeights { from: String, to: String, reason: String },
    #[error("stationary system is singular")]
    SingularSystem,
    #[error("malformed model: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationErrors(pub Vec<ModelError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeAtom {
    pub w: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLaw {
    pub atoms: Vec<EdgeAtom>,
}

impl EdgeLaw {
    pub fn point(a: f64, b: f64) -> Self {
        EdgeLaw { atoms: vec![EdgeAtom { w: 1.0, a, b }] }
    }

    /// The (a, b) pair if the law is a point mass.
    pub fn as_point(&self) -> Option<(f64, f64)> {
        match self.atoms.as_slice() {
            [x] => Some((x.a, x.b)),
            _ => None,
        }
    }

    pub fn mean_log_abs_a(&self) -> f64 {
        self.atoms.iter().map(|x| x.w * x.a.abs().ln()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateId<'a> {
    pub index: usize,
    pub label: &'a str,
}

/// Reference to a state in a model file, by label or by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: StateRef,
    pub to: StateRef,
    pub atoms: Vec<EdgeAtom>,
}

/// Raw, unvalidated model as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub states: Vec<String>,
    pub transition: Vec<Vec<f64>>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_law: Option<BTreeMap<String, Vec<Atom>>>,
}

/// Per-state law of the initial value Z_0.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub per_state: Vec<DiscreteLaw>,
}

impl InitialLaw {
    pub fn constant(law: DiscreteLaw, states: usize) -> Self {
        InitialLaw { per_state: vec![law; states] }
    }

    pub fn point(v: f64, states: usize) -> Self {
        Self::constant(DiscreteLaw::point(v), states)
    }

    pub fn at(&self, i: usize) -> &DiscreteLaw {
        &self.per_state[i]
    }

    /// True when every state carries the same law.
    pub fn is_state_independent(&self) -> bool {
        self.per_state.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StandingAssumptionReport {
    pub a_never_zero: bool,
    pub b_not_identically_zero: bool,
    pub prob_a_zero: f64,
    pub prob_b_zero: f64,
}

impl StandingAssumptionReport {
    pub fn holds(&self) -> bool {
        self.a_never_zero && self.b_not_identically_zero
    }
}

/// A validated model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    labels: Vec<String>,
    p: Vec<Vec<f64>>,
    laws: Vec<Vec<Option<EdgeLaw>>>,
    pi: Vec<f64>,
    initial: Option<InitialLaw>,
}

fn merge_atoms(atoms: &[EdgeAtom]) -> Vec<EdgeAtom> {
    let mut out: Vec<EdgeAtom> = Vec::new();
    for x in atoms {
        let same = |y: &EdgeAtom| {
            let tol = |u: f64, v: f64| (u - v).abs() <= ATOM_TOL * u.abs().max(v.abs()).max(1.0);
            tol(x.a, y.a) && tol(x.b, y.b)
        };
        match out.iter_mut().find(|y| same(y)) {
            Some(y) => y.w += x.w,
            None => out.push(*x),
        }
    }
    out
}

fn reachable(adj: &[Vec<usize>], from: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of an irreducible chain given its successor lists.
pub fn chain_period(adj: &[Vec<usize>]) -> usize {
    let n = adj.len();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0]);
    let mut g = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                let diff = (level[u] + 1).abs_diff(level[v]);
                g = gcd(g, diff);
            }
        }
    }
    g
}

/// Solves πP = π, Σπ = 1 by LU with partial pivoting.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    let n = p.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(j, i)] = p[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = m.lu().solve(&rhs).ok_or(ModelError::SingularSystem)?;
    let pi: Vec<f64> = sol.iter().copied().collect();
    if pi.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(ModelError::SingularSystem);
    }
    Ok(pi)
}

impl ModelSpec {
    pub fn validate(&self) -> Result<Model, ValidationErrors> {
        let n = self.states.len();
        let mut errs = Vec::new();
        if n == 0 {
            return Err(ValidationErrors(vec![ModelError::Malformed("no states".into())]));
        }
        let mut index = BTreeMap::new();
        for (k, s) in self.states.iter().enumerate() {
            if index.insert(s.clone(), k).is_some() {
                errs.push(ModelError::Malformed(format!("duplicate state label {s:?}")));
            }
        }
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != n) {
            errs.push(ModelError::Malformed(format!("transition matrix must be {n}x{n}")));
            return Err(ValidationErrors(errs));
        }
        let resolve = |r: &StateRef| -> Option<usize> {
            match r {
                StateRef::Index(k) if *k < n => Some(*k),
                StateRef::Index(_) => None,
                StateRef::Label(s) => index.get(s).copied(),
            }
        };
        let mut laws: Vec<Vec<Option<EdgeLaw>>> = vec![vec![None; n]; n];
        for e in &self.edges {
            let (Some(i), Some(j)) = (resolve(&e.from), resolve(&e.to)) else {
                errs.push(ModelError::Malformed(format!("edge {:?}->{:?} names an unknown state", e.from, e.to)));
                continue;
            };
            if laws[i][j].is_some() {
                errs.push(ModelError::Malformed(format!("edge {}->{} listed twice", self.states[i], self.states[j])));
                continue;
            }
            laws[i][j] = Some(EdgeLaw { atoms: e.atoms.clone() });
        }
        let initial = match &self.initial_law {
            None => None,
            Some(map) => {
                let mut per_state = vec![DiscreteLaw::point(0.0); n];
                for (label, atoms) in map {
                    match index.get(label) {
                        Some(&k) => {
                            let law = DiscreteLaw::from_pairs(atoms.iter().map(|a| (a.v, a.m)));
                            if (law.total_mass() - 1.0).abs() > ROW_SUM_TOL || atoms.iter().any(|a| a.m < 0.0) {
                                errs.push(ModelError::Malformed(format!("initial law of {label:?} is not a probability law")));
                            }
                            per_state[k] = law;
                        }
                        None => errs.push(ModelError::Malformed(format!("initial law names unknown state {label:?}"))),
                    }
                }
                Some(InitialLaw { per_state })
            }
        };
        if !errs.is_empty() {
            return Err(ValidationErrors(errs));
        }
        Model::build(self.states.clone(), self.transition.clone(), laws, initial)
    }
}

impl Model {
    /// Validates and assembles a model from dense parts.
    pub fn build(
        labels: Vec<String>,
        p: Vec<Vec<f64>>,
        mut laws: Vec<Vec<Option<EdgeLaw>>>,
        initial: Option<InitialLaw>,
    ) -> Result<Model, ValidationErrors> {
        let n = labels.len();
        let mut errs = Vec::new();
        for i in 0..n {
            let sum: f64 = p[i].iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL || p[i].iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                errs.push(ModelError::RowSumError { row: labels[i].clone(), sum });
            }
            for j in 0..n {
                let (from, to) = (labels[i].clone(), labels[j].clone());
                match (&mut laws[i][j], p[i][j] > 0.0) {
                    (None, true) => errs.push(ModelError::MissingEdgeLaw { from, to }),
                    (Some(_), false) => errs.push(ModelError::UnexpectedEdgeLaw { from, to }),
                    (Some(law), true) => {
                        let total: f64 = law.atoms.iter().map(|x| x.w).sum();
                        if law.atoms.is_empty() {
                            errs.push(ModelError::BadWeights { from, to, reason: "no atoms".into() });
                        } else if law.atoms.iter().any(|x| !(x.w > 0.0)) {
                            errs.push(ModelError::BadWeights { from, to, reason: "non-positive weight".into() });
                        } else if (total - 1.0).abs() > ROW_SUM_TOL {
                            errs.push(ModelError::BadWeights { from, to, reason: format!("weights sum to {total}") });
                        } else if law.atoms.iter().any(|x| !x.a.is_finite() || !x.b.is_finite()) {
                            errs.push(ModelError::BadWeights { from, to, reason: "non-finite coefficient".into() });
                        } else {
                            law.atoms = merge_atoms(&law.atoms);
                        }
                    }
                    (None, false) => {}
                }
            }
        }
        if !errs.is_empty() {
            return Err(ValidationErrors(errs));
        }
        let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| p[i][j] > 0.0).collect()).collect();
        let radj: Vec<Vec<usize>> = (0..n).map(|j| (0..n).filter(|&i| p[i][j] > 0.0).collect()).collect();
        let fwd = reachable(&adj, 0);
        let bwd = reachable(&radj, 0);
        if let Some(k) = (0..n).find(|&k| !fwd[k] || !bwd[k]) {
            return Err(ValidationErrors(vec![ModelError::NotIrreducible(labels[k].clone())]));
        }
        let period = chain_period(&adj);
        if period != 1 {
            return Err(ValidationErrors(vec![ModelError::NotAperiodic(period)]));
        }
        let pi = stationary_distribution(&p).map_err(|e| ValidationErrors(vec![e]))?;
        Ok(Model { labels, p, laws, pi, initial })
    }

    /// Convenience constructor from an edge list keyed by state index.
    pub fn from_edges(
        p: Vec<Vec<f64>>,
        edges: Vec<((usize, usize), EdgeLaw)>,
    ) -> Result<Model, ValidationErrors> {
        let n = p.len();
        let labels = (0..n).map(|k| k.to_string()).collect();
        let mut laws = vec![vec![None; n]; n];
        for ((i, j), law) in edges {
            laws[i][j] = Some(law);
        }
        Model::build(labels, p, laws, None)
    }

    /// A one-state model with the given (weight, a, b) atoms.
    pub fn single_state(atoms: &[(f64, f64, f64)]) -> Result<Model, ValidationErrors> {
        let law = EdgeLaw { atoms: atoms.iter().map(|&(w, a, b)| EdgeAtom { w, a, b }).collect() };
        Model::from_edges(vec![vec![1.0]], vec![((0, 0), law)])
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn state(&self, i: usize) -> StateId<'_> {
        StateId { index: i, label: &self.labels[i] }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i][j]
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<&EdgeLaw> {
        self.laws[i][j].as_ref()
    }

    /// All edges with positive probability, in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &EdgeLaw)> + '_ {
        self.laws
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter_map(move |(j, l)| l.as_ref().map(|l| (i, j, l))))
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states()).filter(move |&j| self.p[i][j] > 0.0)
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn initial_law(&self) -> Option<&InitialLaw> {
        self.initial.as_ref()
    }

    pub fn with_initial_law(mut self, initial: InitialLaw) -> Self {
        self.initial = Some(initial);
        self
    }

    /// E_π log|A_1|.
    pub fn mean_log_abs_a(&self) -> f64 {
        self.edges()
            .map(|(i, j, law)| self.pi[i] * self.p[i][j] * law.mean_log_abs_a())
            .sum()
    }

    /// Time reversal: transition π_j p_ji / π_i, edge laws transposed.
    pub fn dual(&self) -> Model {
        let n = self.n_states();
        let mut p = vec![vec![0.0; n]; n];
        let mut laws = vec![vec![None; n]; n];
        for i in 0..n {
            for j in 0..n {
                p[i][j] = (self.pi[j] * self.p[j][i] / self.pi[i]).min(1.0);
                laws[i][j] = self.laws[j][i].clone();
            }
        }
        Model { labels: self.labels.clone(), p, laws, pi: self.pi.clone(), initial: self.initial.clone() }
    }

    pub fn standing_assumption(&self) -> StandingAssumptionReport {
        let mut pa = 0.0;
        let mut pb = 0.0;
        for (i, j, law) in self.edges() {
            let mass = self.pi[i] * self.p[i][j];
            pa += mass * law.atoms.iter().filter(|x| x.a == 0.0).map(|x| x.w).sum::<f64>();
            pb += mass * law.atoms.iter().filter(|x| x.b == 0.0).map(|x| x.w).sum::<f64>();
        }
        let b_all_zero = self.edges().all(|(_, _, law)| law.atoms.iter().all(|x| x.b == 0.0));
        StandingAssumptionReport {
            a_never_zero: pa == 0.0,
            b_not_identically_zero: !b_all_zero,
            prob_a_zero: pa,
            prob_b_zero: pb,
        }
    }

    pub fn to_spec(&self) -> ModelSpec {
        let edges = self
            .edges()
            .map(|(i, j, law)| EdgeSpec {
                from: StateRef::Label(self.labels[i].clone()),
                to: StateRef::Label(self.labels[j].clone()),
                atoms: law.atoms.clone(),
            })
            .collect();
        let initial_law = self.initial.as_ref().map(|init| {
            init.per_state
                .iter()
                .enumerate()
                .map(|(k, law)| (self.labels[k].clone(), law.atoms().to_vec()))
                .collect()
        });
        ModelSpec { states: self.labels.clone(), transition: self.p.clone(), edges, initial_law }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state_is_valid() {
        let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
        assert_eq!(m.pi(), &[1.0]);
    }

    #[test]
    fn two_cycle_is_periodic() {
        let err = Model::from_edges(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![((0, 1), EdgeLaw::point(1.0, 1.0)), ((1, 0), EdgeLaw::point(1.0, 1.0))],
        )
        .unwrap_err();
        assert_eq!(err.0, vec![ModelError::NotAperiodic(2)]);
    }

    #[test]
    fn reports_every_bad_edge() {
        let err = Model::from_edges(
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![((0, 0), EdgeLaw { atoms: vec![EdgeAtom { w: 0.4, a: 1.0, b: 0.0 }] })],
        )
        .unwrap_err();
        assert_eq!(err.0.len(), 3);
    }

    #[test]
    fn duplicate_atoms_are_merged() {
        let m = Model::single_state(&[(0.5, 0.5, 1.0), (0.5, 0.5, 1.0)]).unwrap();
        assert_eq!(m.edge(0, 0).unwrap().atoms.len(), 1);
    }
}
