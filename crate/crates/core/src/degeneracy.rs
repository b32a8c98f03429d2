//! Degeneracy: constants c_i with a·c_j + b = c_i on every atom of every
//! edge (i, j), so that each backward iterate is pinned to c_{M_0}.
//! The forward form asks for a·c_i + b = c_j instead.

use crate::model::Model;
use crate::oracle::{excursion_law, OracleConfig, OracleError};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DegeneracyError {
    #[error("edge {from}->{to} has a zero multiplier")]
    ZeroMultiplier { from: usize, to: usize },
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// x ↦ slope·x + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { slope: 1.0, intercept: 0.0 };

    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// self ∘ inner.
    pub fn compose(&self, inner: &Affine) -> Affine {
        Affine { slope: self.slope * inner.slope, intercept: self.slope * inner.intercept + self.intercept }
    }

    pub fn inverse(&self) -> Affine {
        Affine { slope: 1.0 / self.slope, intercept: -self.intercept / self.slope }
    }

    pub fn approx_eq(&self, other: &Affine, tol: f64) -> bool {
        let close = |x: f64, y: f64| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs()));
        close(self.slope, other.slope) && close(self.intercept, other.intercept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneracyStatus {
    NonDegenerate,
    DegenerateUniqueC,
    DegenerateCFamily,
    DegenerateDual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// a·c_j + b = c_i on edge (i, j).
    Backward,
    /// a·c_i + b = c_j on edge (i, j).
    Forward,
}

/// One-parameter family c_i = maps[i](c) over the free value c = c_reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CFamily {
    pub reference: usize,
    pub maps: Vec<Affine>,
}

impl CFamily {
    pub fn member(&self, base: f64) -> Vec<f64> {
        self.maps.iter().map(|m| m.apply(base)).collect()
    }
}

/// An edge atom whose equation fails, with its residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub from: usize,
    pub to: usize,
    pub atom: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub status: DegeneracyStatus,
    pub orientation: Orientation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<CFamily>,
    /// Φ_ij for every ordered pair, in the family case.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<Affine>>>,
    pub witnesses: Vec<Witness>,
}

impl DegeneracyReport {
    pub fn is_degenerate(&self) -> bool {
        self.status != DegeneracyStatus::NonDegenerate
    }

    /// The unique c, or the family member with c_reference = 0.
    pub fn representative(&self) -> Option<Vec<f64>> {
        self.c.clone().or_else(|| self.family.as_ref().map(|f| f.member(0.0)))
    }

    fn non_degenerate(orientation: Orientation, witnesses: Vec<Witness>) -> Self {
        DegeneracyReport { status: DegeneracyStatus::NonDegenerate, orientation, c: None, family: None, phi: None, witnesses }
    }
}

fn tree(model: &Model) -> Vec<(usize, usize)> {
    let mut seen = vec![false; model.n_states()];
    seen[0] = true;
    let mut out = Vec::new();
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for v in model.successors(u) {
            if !seen[v] {
                seen[v] = true;
                out.push((u, v));
                queue.push_back(v);
            }
        }
    }
    out
}

/// Multiplicative potential φ with a_ij = φ_i / φ_j on every edge, which
/// holds exactly when every edge carries a point mass in a and every
/// excursion product equals 1.
fn unit_excursions(model: &Model) -> bool {
    let n = model.n_states();
    let mut phi = vec![0.0; n];
    phi[0] = 1.0;
    let point = |i: usize, j: usize| model.edge(i, j).and_then(|l| {
        let a0 = l.atoms[0].a;
        l.atoms.iter().all(|x| (x.a - a0).abs() <= DEGENERACY_TOL * a0.abs().max(1.0)).then_some(a0)
    });
    for (u, v) in tree(model) {
        match point(u, v) {
            Some(a) => phi[v] = phi[u] / a,
            None => return false,
        }
    }
    model.edges().all(|(i, j, _)| match point(i, j) {
        Some(a) => (a - phi[i] / phi[j]).abs() <= DEGENERACY_TOL * a.abs().max(1.0),
        None => false,
    })
}

fn residual(c: &[f64], i: usize, j: usize, a: f64, b: f64) -> f64 {
    let r = a * c[j] + b - c[i];
    r / (1.0 + c[i].abs() + (a * c[j]).abs() + b.abs())
}

fn family_case(model: &Model) -> DegeneracyReport {
    let n = model.n_states();
    let psi = |i: usize, j: usize| {
        let x = model.edge(i, j).unwrap().atoms[0];
        Affine { slope: x.a, intercept: x.b }
    };
    let mut witnesses = Vec::new();
    for (i, j, law) in model.edges() {
        if law.atoms.len() > 1 {
            let spread = law.atoms.iter().map(|x| (x.b - law.atoms[0].b).abs()).fold(0.0, f64::max);
            witnesses.push(Witness { from: i, to: j, atom: 1, residual: spread });
        }
    }
    if !witnesses.is_empty() {
        return DegeneracyReport::non_degenerate(Orientation::Backward, witnesses);
    }
    // Φ_{0j}: composition of the edge maps along a tree path from 0 to j.
    let mut from_root = vec![Affine::IDENTITY; n];
    for (u, v) in tree(model) {
        from_root[v] = from_root[u].compose(&psi(u, v));
    }
    for (i, j, _) in model.edges() {
        let via = from_root[i].compose(&psi(i, j));
        if !via.approx_eq(&from_root[j], DEGENERACY_TOL) {
            witnesses.push(Witness { from: i, to: j, atom: 0, residual: via.intercept - from_root[j].intercept });
        }
    }
    if !witnesses.is_empty() {
        return DegeneracyReport::non_degenerate(Orientation::Backward, witnesses);
    }
    let phi: Vec<Vec<Affine>> = (0..n)
        .map(|i| (0..n).map(|j| from_root[i].inverse().compose(&from_root[j])).collect())
        .collect();
    let maps = (0..n).map(|i| phi[i][0]).collect();
    DegeneracyReport {
        status: DegeneracyStatus::DegenerateCFamily,
        orientation: Orientation::Backward,
        c: None,
        family: Some(CFamily { reference: 0, maps }),
        phi: Some(phi),
        witnesses: vec![],
    }
}

fn unique_case(model: &Model) -> DegeneracyReport {
    let n = model.n_states();
    let rows: Vec<(usize, usize, usize, f64, f64)> = model
        .edges()
        .flat_map(|(i, j, law)| law.atoms.iter().enumerate().map(move |(k, x)| (i, j, k, x.a, x.b)))
        .collect();
    let mut mat = DMatrix::<f64>::zeros(rows.len(), n);
    let mut rhs = DVector::<f64>::zeros(rows.len());
    for (r, &(i, j, _, a, b)) in rows.iter().enumerate() {
        mat[(r, i)] += 1.0;
        mat[(r, j)] -= a;
        rhs[r] = b;
    }
    let c: Vec<f64> = match mat.svd(true, true).solve(&rhs, 1e-14) {
        Ok(sol) => sol.iter().copied().collect(),
        Err(_) => return DegeneracyReport::non_degenerate(Orientation::Backward, vec![]),
    };
    let mut witnesses: Vec<Witness> = rows
        .iter()
        .map(|&(i, j, k, a, b)| Witness { from: i, to: j, atom: k, residual: residual(&c, i, j, a, b) })
        .filter(|w| w.residual.abs() > DEGENERACY_TOL)
        .collect();
    if witnesses.is_empty() {
        DegeneracyReport {
            status: DegeneracyStatus::DegenerateUniqueC,
            orientation: Orientation::Backward,
            c: Some(c),
            family: None,
            phi: None,
            witnesses,
        }
    } else {
        witnesses.sort_by(|x, y| y.residual.abs().total_cmp(&x.residual.abs()));
        witnesses.truncate(3);
        DegeneracyReport::non_degenerate(Orientation::Backward, witnesses)
    }
}

/// Finds c with a·c_j + b = c_i on every edge atom, or reports why none exists.
pub fn detect(model: &Model) -> Result<DegeneracyReport, DegeneracyError> {
    if let Some((i, j, _)) = model.edges().find(|(_, _, l)| l.atoms.iter().any(|x| x.a == 0.0)) {
        return Err(DegeneracyError::ZeroMultiplier { from: i, to: j });
    }
    Ok(if unit_excursions(model) { family_case(model) } else { unique_case(model) })
}

/// Finds c with a·c_i + b = c_j on every edge atom (i, j). This is the
/// backward condition for the time-reversed model; in the family case the
/// reported Φ maps are those of the reversed model.
pub fn detect_dual(model: &Model) -> Result<DegeneracyReport, DegeneracyError> {
    let mut report = detect(&model.dual())?;
    report.orientation = Orientation::Forward;
    for w in &mut report.witnesses {
        std::mem::swap(&mut w.from, &mut w.to);
    }
    if report.is_degenerate() {
        report.status = DegeneracyStatus::DegenerateDual;
    }
    Ok(report)
}

/// Largest |A c_i + B - c_i| over the enumerated excursions from `i`.
pub fn excursion_residual(model: &Model, c: &[f64], i: usize, horizon: usize) -> Result<f64, DegeneracyError> {
    let law = excursion_law(model, i, horizon, &OracleConfig::default())?;
    Ok(law.atoms.iter().map(|x| (x.a * c[i] + x.b - c[i]).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BZeroReport {
    pub state: usize,
    pub value: bool,
    pub certificate: String,
    pub enumeration_horizon: usize,
    pub enumeration_tail_mass: f64,
}

/// Decides whether the excursion intercept B from `i` vanishes almost surely.
pub fn b_excursion_zero_test(model: &Model, i: usize, horizon: usize) -> Result<BZeroReport, DegeneracyError> {
    let report = detect(model)?;
    let (value, certificate) = match report.status {
        DegeneracyStatus::DegenerateCFamily => (true, "every excursion map is the identity".to_string()),
        DegeneracyStatus::DegenerateUniqueC | DegeneracyStatus::DegenerateDual => {
            let ci = report.c.as_ref().unwrap()[i];
            if ci.abs() <= DEGENERACY_TOL {
                (true, format!("degenerate with c_{i} = 0, so B = c_{i}(1 - A) = 0"))
            } else {
                (false, format!("degenerate with c_{i} = {ci} and A ≠ 1 with positive probability"))
            }
        }
        DegeneracyStatus::NonDegenerate => (false, "non-degenerate, so B cannot vanish almost surely".to_string()),
    };
    let law = excursion_law(model, i, horizon, &OracleConfig::default())?;
    let scale = |b: f64, w: f64| b.abs() <= 1e-9 * (1.0 + w);
    let all_zero = law.atoms.iter().all(|x| scale(x.b, x.w));
    if value && !all_zero {
        return Err(DegeneracyError::Inconclusive("structural zero contradicted by an enumerated excursion".into()));
    }
    if !value && all_zero && law.tail_mass == 0.0 {
        return Err(DegeneracyError::Inconclusive("no enumerated excursion has B ≠ 0".into()));
    }
    Ok(BZeroReport {
        state: i,
        value,
        certificate,
        enumeration_horizon: horizon,
        enumeration_tail_mass: law.tail_mass,
    })
}
