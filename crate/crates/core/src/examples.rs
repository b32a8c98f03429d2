//! Built-in example models.

use crate::model::{EdgeLaw, Model};
use crate::simulate::{FlowerChain, PetalWeights};

/// A built-in example: either a finite model or the flower-chain generator.
#[derive(Debug, Clone)]
pub enum Builtin {
    Finite(Model),
    Flower(FlowerChain),
}

pub const NAMES: &[&str] = &[
    "grincevicius4",
    "flower",
    "onestate_half",
    "onestate_two_rates",
    "onestate_sign",
    "onestate_expanding",
    "onestate_flip",
    "onestate_identity",
    "onestate_stopped",
    "onestate_sign_zero_b",
];

/// Four states where B over an excursion from state 0 vanishes while the
/// model is degenerate with c = (0, 1, 2/3, 1).
pub fn grincevicius4(p01: f64) -> Model {
    let p = vec![
        vec![0.0, p01, 1.0 - p01, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0, 0.0],
    ];
    Model::from_edges(
        p,
        vec![
            ((0, 1), EdgeLaw::point(-1.0, 1.0)),
            ((1, 0), EdgeLaw::point(1.0, 1.0)),
            ((0, 2), EdgeLaw::point(-1.5, 1.0)),
            ((2, 3), EdgeLaw::point(-1.0 / 3.0, 1.0)),
            ((3, 0), EdgeLaw::point(1.0, 1.0)),
        ],
    )
    .expect("valid example")
}

pub fn flower(petals: PetalWeights) -> FlowerChain {
    FlowerChain::new(0.5, petals)
}

fn one(atoms: &[(f64, f64, f64)]) -> Model {
    Model::single_state(atoms).expect("valid example")
}

pub fn builtin(name: &str, petals: Option<PetalWeights>) -> Option<Builtin> {
    let m = match name {
        "grincevicius4" => grincevicius4(0.5),
        "flower" => {
            return Some(Builtin::Flower(flower(petals.unwrap_or(PetalWeights::Geometric { ratio: 0.5 }))));
        }
        "onestate_half" => one(&[(1.0, 0.5, 1.0)]),
        "onestate_two_rates" => one(&[(0.5, 0.5, 1.0), (0.5, 0.25, 1.0)]),
        "onestate_sign" => one(&[(0.5, 1.0, 0.0), (0.5, -1.0, 2.0)]),
        "onestate_expanding" => one(&[(1.0, 2.0, -1.0)]),
        "onestate_flip" => one(&[(1.0, -1.0, 6.0)]),
        "onestate_identity" => one(&[(1.0, 1.0, 0.0)]),
        "onestate_stopped" => one(&[(0.5, 0.0, 1.0), (0.5, 1.0, 1.0)]),
        "onestate_sign_zero_b" => one(&[(0.5, 1.0, 0.0), (0.5, -1.0, 0.0)]),
        _ => return None,
    };
    Some(Builtin::Finite(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for name in NAMES {
            assert!(builtin(name, None).is_some(), "{name}");
        }
        assert!(builtin("nope", None).is_none());
    }
}
