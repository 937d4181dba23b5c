//! Chemical-kinetics models.
//!
//! A [`Mechanism`] is either the two-variable Davis–Skodje model or a
//! mass-action network with Arrhenius rate coefficients and optional
//! third-body collision partners. The right-hand side is evaluated by one
//! generic routine over real and complex scalars, so complex-step
//! differentiation sees exactly the same arithmetic as ordinary evaluation.

mod builtin;
mod equilibrium;
mod json;
mod rational;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::NumAssign;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;

pub use builtin::BUILTIN_NAMES;
pub use equilibrium::equilibrium_state;
pub use json::{MechanismDoc, ReactionDoc};
pub use rational::integer_left_null_space;

/// Gas constant in kJ/(mol K).
pub const GAS_CONSTANT: f64 = 8.314462618e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub element_counts: BTreeMap<String, u32>,
}

impl Species {
    pub fn new(name: &str, elements: &[(&str, u32)]) -> Self {
        Self {
            name: name.to_string(),
            element_counts: elements
                .iter()
                .map(|(e, n)| (e.to_string(), *n))
                .collect(),
        }
    }
}

/// Modified Arrhenius parameters `k = A T^b exp(-Ea / (R T))`, `Ea` in kJ/mol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrheniusParams {
    pub a: f64,
    pub b: f64,
    pub ea: f64,
}

impl ArrheniusParams {
    pub fn new(a: f64, b: f64, ea: f64) -> Self {
        Self { a, b, ea }
    }

    pub fn constant(a: f64) -> Self {
        Self { a, b: 0.0, ea: 0.0 }
    }
}

pub fn rate_constant(p: &ArrheniusParams, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    Ok(p.a * temperature.powf(p.b) * (-p.ea / (GAS_CONSTANT * temperature)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    /// (species index, stoichiometric coefficient)
    pub reactants: Vec<(usize, u32)>,
    pub products: Vec<(usize, u32)>,
    pub kinetics: ArrheniusParams,
    /// Collision efficiencies; species absent from the map count with 1.0.
    pub third_body: Option<BTreeMap<usize, f64>>,
    pub reversible_pair: Option<usize>,
}

impl Reaction {
    pub fn new(reactants: &[(usize, u32)], products: &[(usize, u32)], kinetics: ArrheniusParams) -> Self {
        Self {
            reactants: reactants.to_vec(),
            products: products.to_vec(),
            kinetics,
            third_body: None,
            reversible_pair: None,
        }
    }

    pub fn with_third_body(mut self, efficiencies: BTreeMap<usize, f64>) -> Self {
        self.third_body = Some(efficiencies);
        self
    }

    /// Net stoichiometric change per species.
    pub fn net_stoichiometry(&self, n_species: usize) -> Vec<i64> {
        let mut net = vec![0i64; n_species];
        for &(i, nu) in &self.reactants {
            net[i] -= nu as i64;
        }
        for &(i, nu) in &self.products {
            net[i] += nu as i64;
        }
        net
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationRelation {
    pub coefficients: Vec<f64>,
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismKind {
    DavisSkodje { gamma: f64 },
    MassAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub c: Vec<f64>,
    pub t: f64,
}

/// An immutable kinetics model with its rate coefficients evaluated at the
/// mechanism temperature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mechanism {
    pub name: String,
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
    pub conservation: Vec<ConservationRelation>,
    pub temperature: f64,
    pub kind: MechanismKind,
    #[serde(skip)]
    rate_constants: Vec<f64>,
    // dense per-reaction efficiency vectors, None without third body
    #[serde(skip)]
    efficiencies: Vec<Option<Vec<f64>>>,
    #[serde(skip)]
    net: Vec<Vec<i64>>,
}

impl Mechanism {
    pub fn davis_skodje(gamma: f64) -> Result<Self> {
        if !(gamma > 1.0) {
            return Err(Error::InvalidMechanism(format!(
                "Davis-Skodje requires gamma > 1, got {gamma}"
            )));
        }
        Ok(Self {
            name: "davis-skodje".into(),
            species: vec![Species::new("y1", &[]), Species::new("y2", &[])],
            reactions: Vec::new(),
            conservation: Vec::new(),
            temperature: 298.15,
            kind: MechanismKind::DavisSkodje { gamma },
            rate_constants: Vec::new(),
            efficiencies: Vec::new(),
            net: Vec::new(),
        })
    }

    /// Build and validate a mass-action mechanism.
    pub fn mass_action(
        name: &str,
        species: Vec<Species>,
        reactions: Vec<Reaction>,
        conservation: Vec<ConservationRelation>,
        temperature: f64,
    ) -> Result<Self> {
        let n = species.len();
        let mut seen = std::collections::HashSet::new();
        for s in &species {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::InvalidMechanism(format!("duplicate species `{}`", s.name)));
            }
        }
        for (r_idx, r) in reactions.iter().enumerate() {
            if !(r.kinetics.a > 0.0) {
                return Err(Error::InvalidMechanism(format!(
                    "reaction {r_idx}: pre-exponential factor must be positive"
                )));
            }
            for &(i, nu) in r.reactants.iter().chain(r.products.iter()) {
                if i >= n {
                    return Err(Error::InvalidMechanism(format!(
                        "reaction {r_idx}: species index {i} out of range"
                    )));
                }
                if nu == 0 {
                    return Err(Error::InvalidMechanism(format!(
                        "reaction {r_idx}: zero stoichiometric coefficient"
                    )));
                }
            }
            check_element_balance(&species, r, r_idx)?;
        }
        for (k, rel) in conservation.iter().enumerate() {
            if rel.coefficients.len() != n {
                return Err(Error::InvalidMechanism(format!(
                    "conservation relation {k} has {} coefficients for {n} species",
                    rel.coefficients.len()
                )));
            }
            for (r_idx, r) in reactions.iter().enumerate() {
                let dot: f64 = r
                    .net_stoichiometry(n)
                    .iter()
                    .zip(&rel.coefficients)
                    .map(|(&s, &w)| s as f64 * w)
                    .sum();
                if dot.abs() > 1e-12 {
                    return Err(Error::InvalidMechanism(format!(
                        "conservation relation {k} is not conserved by reaction {r_idx}"
                    )));
                }
            }
        }
        let mut m = Self {
            name: name.to_string(),
            species,
            reactions,
            conservation,
            temperature,
            kind: MechanismKind::MassAction,
            rate_constants: Vec::new(),
            efficiencies: Vec::new(),
            net: Vec::new(),
        };
        m.refresh()?;
        Ok(m)
    }

    fn refresh(&mut self) -> Result<()> {
        let n = self.species.len();
        self.rate_constants = self
            .reactions
            .iter()
            .map(|r| rate_constant(&r.kinetics, self.temperature))
            .collect::<Result<_>>()?;
        self.efficiencies = self
            .reactions
            .iter()
            .map(|r| {
                r.third_body.as_ref().map(|map| {
                    (0..n).map(|j| map.get(&j).copied().unwrap_or(1.0)).collect()
                })
            })
            .collect();
        self.net = self.reactions.iter().map(|r| r.net_stoichiometry(n)).collect();
        Ok(())
    }

    /// Same mechanism at a different temperature.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        let mut m = self.clone();
        m.temperature = temperature;
        m.refresh()?;
        Ok(m)
    }

    /// Override the conservation constants (one per relation).
    pub fn with_conservation_constants(&self, constants: &[f64]) -> Result<Self> {
        if constants.len() != self.conservation.len() {
            return Err(Error::DimensionMismatch {
                expected: self.conservation.len(),
                got: constants.len(),
            });
        }
        let mut m = self.clone();
        for (rel, &c) in m.conservation.iter_mut().zip(constants) {
            rel.constant = c;
        }
        Ok(m)
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn species_index(&self, name: &str) -> Result<usize> {
        self.species
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownSpecies(name.to_string()))
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            MechanismKind::DavisSkodje { gamma } => Some(gamma),
            MechanismKind::MassAction => None,
        }
    }

    pub fn rate_constants(&self) -> &[f64] {
        &self.rate_constants
    }

    /// Conservation coefficient matrix (relations x species).
    pub fn conservation_matrix(&self) -> DMatrix<f64> {
        let n = self.n_species();
        DMatrix::from_fn(self.conservation.len(), n, |k, j| {
            self.conservation[k].coefficients[j]
        })
    }

    pub fn conservation_constants(&self) -> Vec<f64> {
        self.conservation.iter().map(|r| r.constant).collect()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n_species() {
            return Err(Error::DimensionMismatch {
                expected: self.n_species(),
                got: len,
            });
        }
        Ok(())
    }

    /// Checked right-hand side `f(c)`.
    pub fn rhs_checked(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(c.len())?;
        Ok(self.rhs(c))
    }

    pub fn rhs_state(&self, s: &State) -> Result<Vec<f64>> {
        self.rhs_checked(&s.c)
    }

    /// Checked Jacobian `J_f(c)`.
    pub fn jacobian_checked(&self, c: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(c.len())?;
        Ok(self.jacobian(c))
    }

    /// Residual `W c - C` of every conservation relation.
    pub fn conservation_residual(&self, c: &[f64]) -> Result<Vec<f64>> {
        if self.kind != MechanismKind::MassAction {
            return Err(Error::NotMassAction);
        }
        self.check_dim(c.len())?;
        Ok(self
            .conservation
            .iter()
            .map(|rel| {
                rel.coefficients
                    .iter()
                    .zip(c)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    - rel.constant
            })
            .collect())
    }

    fn eval_generic<T>(&self, c: &[T], out: &mut [T])
    where
        T: Copy + NumAssign + From<f64>,
    {
        match self.kind {
            MechanismKind::DavisSkodje { gamma } => {
                let (y1, y2) = (c[0], c[1]);
                let one = T::one();
                let g = T::from(gamma);
                let denom = (one + y1) * (one + y1);
                out[0] = T::zero() - y1;
                out[1] = T::zero() - g * y2 + ((g - one) * y1 + g * y1 * y1) / denom;
            }
            MechanismKind::MassAction => {
                for o in out.iter_mut() {
                    *o = T::zero();
                }
                for (r_idx, r) in self.reactions.iter().enumerate() {
                    let mut rate = T::from(self.rate_constants[r_idx]);
                    for &(i, nu) in &r.reactants {
                        for _ in 0..nu {
                            rate *= c[i];
                        }
                    }
                    if let Some(eff) = &self.efficiencies[r_idx] {
                        let mut m = T::zero();
                        for (j, &e) in eff.iter().enumerate() {
                            m += T::from(e) * c[j];
                        }
                        rate *= m;
                    }
                    for (s, &nu) in self.net[r_idx].iter().enumerate() {
                        if nu != 0 {
                            out[s] += T::from(nu as f64) * rate;
                        }
                    }
                }
            }
        }
    }

    fn mass_action_jacobian(&self, c: &[f64]) -> DMatrix<f64> {
        let n = self.n_species();
        let mut jac = DMatrix::zeros(n, n);
        let mut drate = vec![0.0; n];
        for (r_idx, r) in self.reactions.iter().enumerate() {
            let k = self.rate_constants[r_idx];
            let m = self.efficiencies[r_idx]
                .as_ref()
                .map(|eff| eff.iter().zip(c).map(|(e, x)| e * x).sum::<f64>());
            let mut mono = k;
            for &(i, nu) in &r.reactants {
                mono *= c[i].powi(nu as i32);
            }
            drate.iter_mut().for_each(|d| *d = 0.0);
            for (pos, &(j, nu)) in r.reactants.iter().enumerate() {
                // derivative of the monomial with respect to c_j
                let mut d = k * nu as f64 * c[j].powi(nu as i32 - 1);
                for (other, &(i, nu_i)) in r.reactants.iter().enumerate() {
                    if other != pos {
                        d *= c[i].powi(nu_i as i32);
                    }
                }
                drate[j] += d * m.unwrap_or(1.0);
            }
            if let Some(eff) = &self.efficiencies[r_idx] {
                for j in 0..n {
                    drate[j] += mono * eff[j];
                }
            }
            for (s, &nu) in self.net[r_idx].iter().enumerate() {
                if nu != 0 {
                    for j in 0..n {
                        jac[(s, j)] += nu as f64 * drate[j];
                    }
                }
            }
        }
        jac
    }

    /// One-line parameter summary.
    pub fn summary(&self) -> String {
        match self.kind {
            MechanismKind::DavisSkodje { gamma } => {
                format!("{}: 2 state variables, gamma = {gamma}", self.name)
            }
            MechanismKind::MassAction => format!(
                "{}: {} species, {} reactions, {} conservation relations, T = {} K, constants = {:?}",
                self.name,
                self.n_species(),
                self.reactions.len(),
                self.conservation.len(),
                self.temperature,
                self.conservation_constants()
            ),
        }
    }
}

fn check_element_balance(species: &[Species], r: &Reaction, r_idx: usize) -> Result<()> {
    let mut balance: BTreeMap<&str, i64> = BTreeMap::new();
    for &(i, nu) in &r.reactants {
        for (e, &cnt) in &species[i].element_counts {
            *balance.entry(e.as_str()).or_default() -= nu as i64 * cnt as i64;
        }
    }
    for &(i, nu) in &r.products {
        for (e, &cnt) in &species[i].element_counts {
            *balance.entry(e.as_str()).or_default() += nu as i64 * cnt as i64;
        }
    }
    if let Some((e, d)) = balance.iter().find(|(_, &d)| d != 0) {
        return Err(Error::InvalidMechanism(format!(
            "reaction {r_idx} violates element balance for {e} (net {d})"
        )));
    }
    Ok(())
}

impl VectorField for Mechanism {
    fn dim(&self) -> usize {
        self.n_species()
    }

    fn eval(&self, c: &[f64], out: &mut [f64]) {
        self.eval_generic(c, out)
    }

    fn eval_complex(&self, c: &[Complex64], out: &mut [Complex64]) -> bool {
        self.eval_generic(c, out);
        true
    }

    fn jacobian(&self, c: &[f64]) -> DMatrix<f64> {
        match self.kind {
            MechanismKind::DavisSkodje { gamma } => {
                let y1 = c[0];
                let d = 1.0 + y1;
                // d/dy1 of ((g-1) y1 + g y1^2) / (1+y1)^2 = (g - 1 + (g + 1) y1) / (1+y1)^3
                let j21 = (gamma - 1.0 + (gamma + 1.0) * y1) / (d * d * d);
                DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, j21, -gamma])
            }
            MechanismKind::MassAction => self.mass_action_jacobian(c),
        }
    }
}
