use std::collections::BTreeMap;

use super::{ArrheniusParams, ConservationRelation, Mechanism, Reaction, Species};
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 3] = ["davis-skodje", "h2-6species", "ozone"];

impl Mechanism {
    /// Six-species hydrogen model with temperature-independent rate constants,
    /// each reversible step stored as a forward/backward pair.
    /// Species order: H2, O2, H2O, H, O, OH.
    pub fn h2_six_species() -> Result<Self> {
        let species = vec![
            Species::new("H2", &[("H", 2)]),
            Species::new("O2", &[("O", 2)]),
            Species::new("H2O", &[("H", 2), ("O", 1)]),
            Species::new("H", &[("H", 1)]),
            Species::new("O", &[("O", 1)]),
            Species::new("OH", &[("O", 1), ("H", 1)]),
        ];
        const H2: usize = 0;
        const O2: usize = 1;
        const H2O: usize = 2;
        const H: usize = 3;
        const O: usize = 4;
        const OH: usize = 5;
        let table: [(&[(usize, u32)], &[(usize, u32)], f64, f64); 6] = [
            (&[(H2, 1)], &[(H, 2)], 2.0, 216.0),
            (&[(O2, 1)], &[(O, 2)], 1.0, 337.5),
            (&[(H2O, 1)], &[(H, 1), (OH, 1)], 1.0, 1400.0),
            (&[(H2, 1), (O, 1)], &[(H, 1), (OH, 1)], 1000.0, 10800.0),
            (&[(O2, 1), (H, 1)], &[(O, 1), (OH, 1)], 1000.0, 33750.0),
            (&[(H2, 1), (O, 1)], &[(H2O, 1)], 100.0, 0.7714),
        ];
        let mut reactions = Vec::with_capacity(12);
        for (lhs, rhs, kf, kb) in table {
            let idx = reactions.len();
            let mut fwd = Reaction::new(lhs, rhs, ArrheniusParams::constant(kf));
            fwd.reversible_pair = Some(idx + 1);
            let mut bwd = Reaction::new(rhs, lhs, ArrheniusParams::constant(kb));
            bwd.reversible_pair = Some(idx);
            reactions.push(fwd);
            reactions.push(bwd);
        }
        let conservation = vec![
            ConservationRelation {
                coefficients: vec![2.0, 0.0, 2.0, 1.0, 0.0, 1.0],
                constant: 2.0,
            },
            ConservationRelation {
                coefficients: vec![0.0, 2.0, 1.0, 0.0, 1.0, 1.0],
                constant: 1.0,
            },
        ];
        Mechanism::mass_action("h2-6species", species, reactions, conservation, 298.15)
    }

    /// Three-component ozone decomposition with Arrhenius kinetics
    /// (A in cm, mol, s; Ea in kJ/mol). Species order: O, O2, O3.
    pub fn ozone(temperature: f64) -> Result<Self> {
        let species = vec![
            Species::new("O", &[("O", 1)]),
            Species::new("O2", &[("O", 2)]),
            Species::new("O3", &[("O", 3)]),
        ];
        const O: usize = 0;
        const O2: usize = 1;
        const O3: usize = 2;
        let eff: BTreeMap<usize, f64> = [(O, 1.14), (O2, 0.40), (O3, 0.92)].into_iter().collect();
        let a = ArrheniusParams::new;
        let reactions = vec![
            Reaction::new(&[(O, 2)], &[(O2, 1)], a(2.90e17, -1.0, 0.0)).with_third_body(eff.clone()),
            Reaction::new(&[(O2, 1)], &[(O, 2)], a(6.81e18, -1.0, 496.0)).with_third_body(eff.clone()),
            Reaction::new(&[(O3, 1)], &[(O, 1), (O2, 1)], a(9.50e14, 0.0, 95.0))
                .with_third_body(eff.clone()),
            Reaction::new(&[(O, 1), (O2, 1)], &[(O3, 1)], a(3.32e13, 0.0, -4.9)).with_third_body(eff),
            Reaction::new(&[(O, 1), (O3, 1)], &[(O2, 2)], a(5.20e12, 0.0, 17.4)),
            Reaction::new(&[(O2, 2)], &[(O, 1), (O3, 1)], a(4.27e12, 0.0, 413.9)),
        ];
        let conservation = vec![ConservationRelation {
            coefficients: vec![1.0, 2.0, 3.0],
            constant: 1.0,
        }];
        Mechanism::mass_action("ozone", species, reactions, conservation, temperature)
    }

    /// Look up a built-in by name. `gamma` applies to Davis–Skodje (default 10),
    /// `temperature` to ozone (default 1000 K).
    pub fn builtin(name: &str, gamma: Option<f64>, temperature: Option<f64>) -> Result<Self> {
        match name {
            "davis-skodje" => Mechanism::davis_skodje(gamma.unwrap_or(10.0)),
            "h2-6species" => Mechanism::h2_six_species(),
            "ozone" => Mechanism::ozone(temperature.unwrap_or(1000.0)),
            other => Err(Error::InvalidMechanism(format!("unknown built-in mechanism `{other}`"))),
        }
    }
}
