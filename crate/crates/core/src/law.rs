//! Finite discrete laws on the real line.
//!
//! A [`DiscreteLaw`] keeps its atoms sorted by value with near-equal values
//! merged, so two laws built along different arithmetic routes can be
//! compared directly.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Default relative tolerance for merging atom values.
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub v: f64,
    pub m: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    atoms: Vec<Atom>,
}

fn close(x: f64, y: f64, tol: f64) -> bool {
    x == y || (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
}

impl DiscreteLaw {
    pub fn point(v: f64) -> Self {
        DiscreteLaw { atoms: vec![Atom { v, m: 1.0 }] }
    }

    pub fn from_pairs<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Self {
        Self::from_pairs_tol(pairs, MERGE_TOL)
    }

    /// Builds a law from (value, mass) pairs, merging values within `tol`.
    /// Atoms with zero mass are dropped.
    pub fn from_pairs_tol<I: IntoIterator<Item = (f64, f64)>>(pairs: I, tol: f64) -> Self {
        let mut raw: Vec<Atom> = pairs
            .into_iter()
            .filter(|&(_, m)| m > 0.0)
            .map(|(v, m)| Atom { v, m })
            .collect();
        raw.sort_by(|x, y| x.v.total_cmp(&y.v));
        let mut atoms: Vec<Atom> = Vec::with_capacity(raw.len());
        let mut lead = f64::NAN;
        let mut weighted = 0.0;
        for a in raw {
            match atoms.last_mut() {
                Some(last) if close(lead, a.v, tol) => {
                    if a.v != lead {
                        weighted += a.m * (a.v - lead);
                    }
                    last.m += a.m;
                    last.v = if weighted == 0.0 { lead } else { lead + weighted / last.m };
                }
                _ => {
                    lead = a.v;
                    weighted = 0.0;
                    atoms.push(a);
                }
            }
        }
        DiscreteLaw { atoms }
    }

    /// Empirical law of a sample, each value carrying mass 1/len.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return DiscreteLaw::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let w = 1.0 / samples.len() as f64;
        let mut atoms: Vec<Atom> = Vec::new();
        let mut count = 0usize;
        for (k, &v) in sorted.iter().enumerate() {
            count += 1;
            let next_differs = sorted.get(k + 1).is_none_or(|&n| n.total_cmp(&v) != Ordering::Equal);
            if next_differs {
                atoms.push(Atom { v, m: count as f64 * w });
                count = 0;
            }
        }
        DiscreteLaw { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.m).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.v * a.m).sum::<f64>() / self.total_mass()
    }

    pub fn min(&self) -> Option<f64> {
        self.atoms.first().map(|a| a.v)
    }

    pub fn max(&self) -> Option<f64> {
        self.atoms.last().map(|a| a.v)
    }

    /// The single value if the law is a point mass.
    pub fn as_point(&self) -> Option<f64> {
        match self.atoms.as_slice() {
            [a] => Some(a.v),
            _ => None,
        }
    }

    /// Mass carried by values within `radius` of `center`.
    pub fn mass_near(&self, center: f64, radius: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| (a.v - center).abs() <= radius)
            .map(|a| a.m)
            .sum()
    }

    /// Law of `slope * X + intercept`.
    pub fn affine(&self, slope: f64, intercept: f64) -> Self {
        Self::from_pairs(self.atoms.iter().map(|a| (slope * a.v + intercept, a.m)))
    }

    pub fn scale_mass(&self, factor: f64) -> Self {
        DiscreteLaw {
            atoms: self.atoms.iter().map(|a| Atom { v: a.v, m: a.m * factor }).collect(),
        }
    }

    /// Weighted mixture of laws.
    pub fn mixture<'a, I: IntoIterator<Item = (f64, &'a DiscreteLaw)>>(parts: I) -> Self {
        Self::from_pairs(
            parts
                .into_iter()
                .flat_map(|(w, law)| law.atoms.iter().map(move |a| (a.v, w * a.m))),
        )
    }

    /// Half-half mixture of the law of X and of -X.
    pub fn symmetrize(&self) -> Self {
        Self::from_pairs(
            self.atoms
                .iter()
                .flat_map(|a| [(a.v, 0.5 * a.m), (-a.v, 0.5 * a.m)]),
        )
    }

    pub fn normalized(&self) -> Self {
        let t = self.total_mass();
        self.scale_mass(1.0 / t)
    }

    /// Kolmogorov distance allowing a horizontal slack of `shift`:
    /// sup_x max(F(x) - G(x + shift), G(x) - F(x + shift)).
    pub fn ks_distance(&self, other: &DiscreteLaw, shift: f64) -> f64 {
        one_sided_ks(&self.atoms, &other.atoms, shift).max(one_sided_ks(&other.atoms, &self.atoms, shift))
    }

    /// Total variation after identifying values that agree within `tol`.
    pub fn total_variation(&self, other: &DiscreteLaw, tol: f64) -> f64 {
        0.5 * cluster_mass_diffs(&self.atoms, &other.atoms, tol)
            .into_iter()
            .map(f64::abs)
            .sum::<f64>()
    }

    /// Largest mass discrepancy over values identified within `tol`.
    pub fn max_atom_discrepancy(&self, other: &DiscreteLaw, tol: f64) -> f64 {
        cluster_mass_diffs(&self.atoms, &other.atoms, tol)
            .into_iter()
            .fold(0.0, |acc, d| acc.max(d.abs()))
    }

    /// Wasserstein-1 distance, the integral of |F - G|.
    pub fn wasserstein1(&self, other: &DiscreteLaw) -> f64 {
        let (xs, ys) = (&self.atoms, &other.atoms);
        let (mut i, mut j) = (0, 0);
        let (mut fx, mut fy) = (0.0f64, 0.0f64);
        let mut prev: Option<f64> = None;
        let mut total = 0.0;
        while i < xs.len() || j < ys.len() {
            let next = match (xs.get(i), ys.get(j)) {
                (Some(a), Some(b)) => a.v.min(b.v),
                (Some(a), None) => a.v,
                (None, Some(b)) => b.v,
                (None, None) => unreachable!(),
            };
            if let Some(p) = prev {
                total += (fx - fy).abs() * (next - p);
            }
            while i < xs.len() && xs[i].v == next {
                fx += xs[i].m;
                i += 1;
            }
            while j < ys.len() && ys[j].v == next {
                fy += ys[j].m;
                j += 1;
            }
            prev = Some(next);
        }
        total
    }

    /// Mass- and mean-preserving projection onto the grid h·Z: each atom is
    /// split between its two neighbouring grid points.
    pub fn snap_to_grid(&self, h: f64) -> Self {
        Self::from_pairs_tol(
            self.atoms.iter().flat_map(|a| {
                let t = a.v / h;
                let lo = t.floor();
                let frac = t - lo;
                [(lo * h, a.m * (1.0 - frac)), ((lo + 1.0) * h, a.m * frac)]
            }),
            0.0,
        )
    }
}

fn one_sided_ks(f: &[Atom], g: &[Atom], shift: f64) -> f64 {
    let mut gcum = Vec::with_capacity(g.len());
    let mut acc = 0.0;
    for a in g {
        acc += a.m;
        gcum.push(acc);
    }
    let mut fx = 0.0;
    let mut best: f64 = 0.0;
    let mut j = 0usize;
    for a in f {
        fx += a.m;
        let x = a.v + shift;
        while j < g.len() && g[j].v <= x {
            j += 1;
        }
        let gx = if j == 0 { 0.0 } else { gcum[j - 1] };
        best = best.max(fx - gx);
    }
    best
}

fn cluster_mass_diffs(xs: &[Atom], ys: &[Atom], tol: f64) -> Vec<f64> {
    let mut merged: Vec<(f64, f64)> = xs
        .iter()
        .map(|a| (a.v, a.m))
        .chain(ys.iter().map(|a| (a.v, -a.m)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut lead = f64::NAN;
    for (v, m) in merged {
        if !out.is_empty() && close(lead, v, tol) {
            *out.last_mut().unwrap() += m;
        } else {
            lead = v;
            out.push(m);
        }
    }
    out
}
