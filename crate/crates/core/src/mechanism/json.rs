//! JSON mechanism documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    integer_left_null_space, ArrheniusParams, ConservationRelation, Mechanism, Reaction, Species,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeciesDoc {
    pub name: String,
    #[serde(default, alias = "element_counts")]
    pub elements: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReactionDoc {
    pub reactants: BTreeMap<String, u32>,
    pub products: BTreeMap<String, u32>,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(rename = "Ea", default)]
    pub ea: f64,
    /// Collision efficiencies; an empty map means every species counts 1.0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub third_body: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConservationDoc {
    pub coefficients: Vec<f64>,
    pub constant: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MechanismDoc {
    #[serde(default = "default_name")]
    pub name: String,
    pub species: Vec<SpeciesDoc>,
    pub reactions: Vec<ReactionDoc>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conservation: Option<Vec<ConservationDoc>>,
    /// Constants for derived conservation relations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conservation_constants: Option<Vec<f64>>,
    /// Composition used to evaluate constants of derived relations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_composition: Option<BTreeMap<String, f64>>,
}

fn default_name() -> String {
    "custom".into()
}

impl MechanismDoc {
    pub fn into_mechanism(self) -> Result<Mechanism> {
        let species: Vec<Species> = self
            .species
            .iter()
            .map(|s| Species {
                name: s.name.clone(),
                element_counts: s.elements.clone(),
            })
            .collect();
        let index = |name: &str| -> Result<usize> {
            species
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| Error::UnknownSpecies(name.to_string()))
        };
        let side = |map: &BTreeMap<String, u32>| -> Result<Vec<(usize, u32)>> {
            let mut v: Vec<(usize, u32)> = map
                .iter()
                .map(|(name, &nu)| Ok((index(name)?, nu)))
                .collect::<Result<_>>()?;
            v.sort();
            Ok(v)
        };
        let mut reactions = Vec::with_capacity(self.reactions.len());
        for r in &self.reactions {
            let mut rx = Reaction::new(
                &side(&r.reactants)?,
                &side(&r.products)?,
                ArrheniusParams::new(r.a, r.b, r.ea),
            );
            if let Some(tb) = &r.third_body {
                let eff = tb
                    .iter()
                    .map(|(name, &e)| Ok((index(name)?, e)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                rx = rx.with_third_body(eff);
            }
            reactions.push(rx);
        }
        let n = species.len();
        let conservation = match self.conservation {
            Some(rels) => rels
                .into_iter()
                .map(|r| ConservationRelation {
                    coefficients: r.coefficients,
                    constant: r.constant,
                })
                .collect(),
            None => {
                let rows: Vec<Vec<i64>> = reactions.iter().map(|r| r.net_stoichiometry(n)).collect();
                let basis = integer_left_null_space(&rows, n);
                let constants: Vec<f64> = match (&self.conservation_constants, &self.reference_composition) {
                    (Some(c), _) => {
                        if c.len() != basis.len() {
                            return Err(Error::DimensionMismatch {
                                expected: basis.len(),
                                got: c.len(),
                            });
                        }
                        c.clone()
                    }
                    (None, Some(comp)) => {
                        let mut x = vec![0.0; n];
                        for (name, &v) in comp {
                            x[index(name)?] = v;
                        }
                        basis
                            .iter()
                            .map(|w| w.iter().zip(&x).map(|(&a, b)| a as f64 * b).sum())
                            .collect()
                    }
                    (None, None) => {
                        log::warn!("derived conservation relations have no constants; using 1.0");
                        vec![1.0; basis.len()]
                    }
                };
                basis
                    .into_iter()
                    .zip(constants)
                    .map(|(w, c)| ConservationRelation {
                        coefficients: w.into_iter().map(|x| x as f64).collect(),
                        constant: c,
                    })
                    .collect()
            }
        };
        Mechanism::mass_action(&self.name, species, reactions, conservation, self.temperature)
    }
}

impl Mechanism {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: MechanismDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.into_mechanism()
    }
}
