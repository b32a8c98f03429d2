#![allow(dead_code)]

use perpetua::{EdgeAtom, EdgeLaw, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random fully connected model with 1..=3 atoms per edge and |a| bounded
/// away from 0.
pub fn random_model(rng: &mut impl Rng, n: usize, max_atoms: usize) -> Model {
    let p: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let t: f64 = w.iter().sum();
            let mut row: Vec<f64> = w.iter().map(|x| x / t).collect();
            let head: f64 = row[..n - 1].iter().sum();
            row[n - 1] = 1.0 - head;
            row
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let k = rng.gen_range(1..=max_atoms);
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
            let t: f64 = w.iter().sum();
            let mut atoms: Vec<EdgeAtom> = w
                .iter()
                .map(|x| {
                    let mag = rng.gen_range(0.2..1.5);
                    let a = if rng.gen_bool(0.3) { -mag } else { mag };
                    EdgeAtom { w: x / t, a, b: rng.gen_range(-2.0..2.0) }
                })
                .collect();
            let head: f64 = atoms[..k - 1].iter().map(|x| x.w).sum();
            atoms[k - 1].w = 1.0 - head;
            edges.push(((i, j), EdgeLaw { atoms }));
        }
    }
    Model::from_edges(p, edges).expect("random model is valid")
}

pub fn random_model_seeded(seed: u64, n: usize, max_atoms: usize) -> Model {
    random_model(&mut ChaCha8Rng::seed_from_u64(seed), n, max_atoms)
}

/// Replaces every intercept by b = c_i - a c_j (backward form) or
/// b = c_j - a c_i (forward form).
pub fn plant(model: &Model, c: &[f64], forward: bool) -> Model {
    let n = model.n_states();
    let edges = model
        .edges()
        .map(|(i, j, law)| {
            let atoms: Vec<EdgeAtom> = law
                .atoms
                .iter()
                .map(|x| {
                    let b = if forward { c[j] - x.a * c[i] } else { c[i] - x.a * c[j] };
                    EdgeAtom { w: x.w, a: x.a, b }
                })
                .collect();
            ((i, j), EdgeLaw { atoms })
        })
        .collect();
    let p = (0..n).map(|i| model.transition()[i].to_vec()).collect();
    Model::from_edges(p, edges).expect("planted model is valid")
}
