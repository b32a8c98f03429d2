//! Reading models, initial laws and state references from the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use perpetua::simulate::FlowerChain;
use perpetua::{Atom, DiscreteLaw, InitialLaw, Model, ModelSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Failure;

/// A model file that names a built-in generator instead of listing edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorDoc {
    Flower(FlowerChain),
}

pub enum Loaded {
    Finite(Model),
    Generator(GeneratorDoc),
}

impl Loaded {
    pub fn finite(self) -> Result<Model, Failure> {
        match self {
            Loaded::Finite(m) => Ok(m),
            Loaded::Generator(_) => {
                Err(Failure::Regime("exact mode needs a finite model; generator files only support simulation".into()))
            }
        }
    }
}

pub fn load_model(path: &Path) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    if value.get("generator").is_some() {
        let doc = serde_json::from_value(value).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
        return Ok(Loaded::Generator(doc));
    }
    let spec: ModelSpec = serde_json::from_value(value).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    spec.validate().map(Loaded::Finite).map_err(|e| Failure::Model(e.to_string()))
}

/// Where the driving chain starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartRef {
    State(usize),
    Stationary,
}

/// Resolves a state label or index; `pi` selects the stationary start when allowed.
pub fn start(arg: Option<&str>, labels: Option<&[String]>, states: usize, allow_pi: bool) -> Result<StartRef, Failure> {
    let Some(s) = arg else { return Ok(StartRef::State(0)) };
    if s == "pi" {
        return if allow_pi { Ok(StartRef::Stationary) } else { Err(Failure::Usage("this command needs a single start state".into())) };
    }
    if let Some(k) = labels.and_then(|l| l.iter().position(|x| x == s)) {
        return Ok(StartRef::State(k));
    }
    match s.parse::<usize>() {
        Ok(k) if k < states => Ok(StartRef::State(k)),
        _ => Err(Failure::Usage(format!("unknown start state {s:?}"))),
    }
}

pub fn single_start(arg: Option<&str>, model: &Model) -> Result<usize, Failure> {
    match start(arg, Some(model.labels()), model.n_states(), false)? {
        StartRef::State(i) => Ok(i),
        StartRef::Stationary => unreachable!(),
    }
}

fn atoms_law(atoms: Vec<Atom>) -> Result<DiscreteLaw, Failure> {
    if atoms.is_empty() || atoms.iter().any(|a| !(a.m >= 0.0) || !a.v.is_finite()) {
        return Err(Failure::Usage("initial law atoms need finite values and nonnegative masses".into()));
    }
    let law = DiscreteLaw::from_pairs(atoms.iter().map(|a| (a.v, a.m)));
    if (law.total_mass() - 1.0).abs() > 1e-9 {
        return Err(Failure::Usage(format!("initial law has total mass {}", law.total_mass())));
    }
    Ok(law)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LawArg {
    Point(f64),
    Atoms(Vec<Atom>),
    Wrapped { atoms: Vec<Atom> },
    PerState(BTreeMap<String, Vec<Atom>>),
}

/// Parses `--z0`: a number, a list of `{v, m}` atoms, `{atoms: [...]}`, or a
/// map from state labels to atom lists. Without `--z0` the model's own
/// initial law is used, then δ_0.
pub fn initial_law(arg: Option<&str>, labels: &[String], model_default: Option<&InitialLaw>) -> Result<InitialLaw, Failure> {
    let n = labels.len();
    let Some(text) = arg else {
        return Ok(model_default.cloned().unwrap_or_else(|| InitialLaw::point(0.0, n)));
    };
    let parsed: LawArg = serde_json::from_str(text).map_err(|e| Failure::Usage(format!("bad --z0: {e}")))?;
    match parsed {
        LawArg::Point(v) if v.is_finite() => Ok(InitialLaw::point(v, n)),
        LawArg::Point(_) => Err(Failure::Usage("--z0 must be finite".into())),
        LawArg::Atoms(atoms) | LawArg::Wrapped { atoms } => Ok(InitialLaw::constant(atoms_law(atoms)?, n)),
        LawArg::PerState(map) => {
            let mut per_state = vec![DiscreteLaw::point(0.0); n];
            for (label, atoms) in map {
                let k = labels
                    .iter()
                    .position(|l| *l == label)
                    .ok_or_else(|| Failure::Usage(format!("--z0 names unknown state {label:?}")))?;
                per_state[k] = atoms_law(atoms)?;
            }
            Ok(InitialLaw { per_state })
        }
    }
}
