//! Ideal-solution acid–base equilibrium and complexometric indicator model.
//!
//! pH is found by bisection on the charge balance
//! `[H+] + [Na+] - [OH-] - Σ charge·[A] = 0`, which is strictly increasing
//! in `[H+]`. The bisection runs on `log10 [H+]` over `[1e-14, 10]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KW_25C: f64 = 1.0e-14;
const LOG_H_LO: f64 = -14.0;
const LOG_H_HI: f64 = 1.0;
const MAX_ITER: usize = 200;
const H_REL_TOL: f64 = 1.0e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChemError {
    #[error("charge balance has no root in [1e-14, 10] mol/L")]
    NoBracket,
    #[error("invalid solution state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcidKind {
    Strong,
    Weak,
}

/// An analyte acid as loaded from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcidSpec {
    pub name: String,
    pub kind: AcidKind,
    /// Ascending dissociation constants in pKa units. Ignored for strong
    /// acids beyond counting protons.
    #[serde(default)]
    pub pka: Vec<f64>,
    /// mol/L
    pub concentration: f64,
    /// L
    pub volume: f64,
}

impl AcidSpec {
    pub fn protons(&self) -> usize {
        self.pka.len().max(1)
    }

    pub fn moles(&self) -> f64 {
        self.concentration * self.volume
    }

    pub fn validate(&self) -> Result<(), ChemError> {
        if self.pka.len() > 2 {
            return Err(ChemError::InvalidState(format!(
                "{}: at most two dissociation constants are supported",
                self.name
            )));
        }
        if self.kind == AcidKind::Weak && self.pka.is_empty() {
            return Err(ChemError::InvalidState(format!(
                "{}: weak acid needs a pKa",
                self.name
            )));
        }
        if self.pka.windows(2).any(|w| w[0] > w[1]) {
            return Err(ChemError::InvalidState(format!(
                "{}: pKa list must be ascending",
                self.name
            )));
        }
        if self.concentration < 0.0 || self.volume < 0.0 {
            return Err(ChemError::InvalidState(format!(
                "{}: negative concentration or volume",
                self.name
            )));
        }
        Ok(())
    }
}

/// One acid present in a solution, tracked by total analytical moles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcidComponent {
    pub name: String,
    pub kind: AcidKind,
    pub pka: Vec<f64>,
    pub moles: f64,
}

impl AcidComponent {
    fn protons(&self) -> usize {
        self.pka.len().max(1)
    }

    /// Mean negative charge per analytical acid molecule at `[H+] = h`.
    fn mean_charge(&self, h: f64) -> f64 {
        match self.kind {
            AcidKind::Strong => self.protons() as f64,
            AcidKind::Weak => {
                let ka: Vec<f64> = self.pka.iter().map(|p| 10f64.powf(-p)).collect();
                let n = ka.len();
                // Terms: h^(n-j) * Π_{i<j} Ka_i for j = 0..=n.
                let mut terms = Vec::with_capacity(n + 1);
                let mut prod = 1.0;
                for j in 0..=n {
                    if j > 0 {
                        prod *= ka[j - 1];
                    }
                    terms.push(prod * h.powi((n - j) as i32));
                }
                let denom: f64 = terms.iter().sum();
                terms
                    .iter()
                    .enumerate()
                    .map(|(j, t)| j as f64 * t)
                    .sum::<f64>()
                    / denom
            }
        }
    }
}

/// Ground-truth contents of the vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionState {
    pub acids: Vec<AcidComponent>,
    /// Moles of strong base cation (Na+).
    pub base_moles: f64,
    /// L
    pub volume: f64,
    pub kw: f64,
    /// °C, carried for reporting only.
    pub temperature: f64,
}

impl SolutionState {
    pub fn from_analyte(analyte: &AcidSpec) -> Self {
        Self {
            acids: vec![AcidComponent {
                name: analyte.name.clone(),
                kind: analyte.kind,
                pka: analyte.pka.clone(),
                moles: analyte.moles(),
            }],
            base_moles: 0.0,
            volume: analyte.volume,
            kw: KW_25C,
            temperature: 25.0,
        }
    }

    /// Neutral water of the given volume (L).
    pub fn water(volume: f64) -> Self {
        Self {
            acids: Vec::new(),
            base_moles: 0.0,
            volume,
            kw: KW_25C,
            temperature: 25.0,
        }
    }

    /// Mixes in `volume` L of strong base at `concentration` mol/L.
    pub fn add_base(&mut self, concentration: f64, volume: f64) {
        self.base_moles += concentration * volume;
        self.volume += volume;
    }

    pub fn validate(&self) -> Result<(), ChemError> {
        if !(self.volume > 0.0) {
            return Err(ChemError::InvalidState("volume must be positive".into()));
        }
        if self.base_moles < 0.0 || self.acids.iter().any(|a| a.moles < 0.0) {
            return Err(ChemError::InvalidState("negative amount".into()));
        }
        if !(self.kw > 0.0) {
            return Err(ChemError::InvalidState("Kw must be positive".into()));
        }
        Ok(())
    }

    /// Charge balance residual at `[H+] = h` (mol/L).
    pub fn charge_residual(&self, h: f64) -> f64 {
        let na = self.base_moles / self.volume;
        let anions: f64 = self
            .acids
            .iter()
            .map(|a| a.mean_charge(h) * a.moles / self.volume)
            .sum();
        h + na - self.kw / h - anions
    }

    /// Sum of the magnitudes of all ionic terms at `h`; the residual's scale.
    pub fn ionic_scale(&self, h: f64) -> f64 {
        let na = self.base_moles / self.volume;
        let anions: f64 = self
            .acids
            .iter()
            .map(|a| a.mean_charge(h) * a.moles / self.volume)
            .sum();
        h + na + self.kw / h + anions
    }
}

/// Equilibrium [H+] in mol/L.
pub fn hydrogen_of(state: &SolutionState) -> Result<f64, ChemError> {
    state.validate()?;
    let f = |log_h: f64| state.charge_residual(10f64.powf(log_h));
    let (mut lo, mut hi) = (LOG_H_LO, LOG_H_HI);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(ChemError::NoBracket);
    }
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        // Width in log10 units bounds the relative error of [H+].
        if (hi - lo) * std::f64::consts::LN_10 <= H_REL_TOL * 0.1 {
            break;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

/// Equilibrium pH of a solution state.
pub fn ph_of(state: &SolutionState) -> Result<f64, ChemError> {
    hydrogen_of(state).map(|h| -h.log10())
}

/// Noiseless titration curve of `analyte` with a strong base, evaluated at
/// each added titrant volume (mL).
pub fn titration_curve(
    analyte: &AcidSpec,
    titrant_conc: f64,
    volumes_ml: &[f64],
) -> Result<Vec<(f64, f64)>, ChemError> {
    analyte.validate()?;
    volumes_ml
        .iter()
        .map(|&v| {
            let mut s = SolutionState::from_analyte(analyte);
            s.add_base(titrant_conc, v * 1e-3);
            ph_of(&s).map(|ph| (v, ph))
        })
        .collect()
}

/// Stoichiometric equivalence volumes (mL) of a weak or strong analyte.
pub fn equivalence_volumes_ml(analyte: &AcidSpec, titrant_conc: f64) -> Vec<f64> {
    let v1 = analyte.moles() / titrant_conc * 1e3;
    match analyte.kind {
        AcidKind::Strong => vec![v1 * analyte.protons() as f64],
        AcidKind::Weak => (1..=analyte.protons()).map(|k| v1 * k as f64).collect(),
    }
}

/// Metal-indicator colors and the free-metal fraction at which the
/// solution switches from bound to free color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub bound_color: String,
    pub free_color: String,
    pub endpoint_fraction: f64,
}

impl Default for IndicatorSpec {
    fn default() -> Self {
        Self {
            bound_color: "magenta".into(),
            free_color: "sapphire".into(),
            endpoint_fraction: 1.0e-3,
        }
    }
}

/// Fraction of metal not yet chelated, under 1:1 stoichiometric binding.
pub fn free_metal_fraction(ca_total: f64, edta_added: f64) -> f64 {
    if ca_total <= 0.0 {
        return 0.0;
    }
    ((ca_total - edta_added) / ca_total).max(0.0)
}

/// Indicator color for the given amounts (any consistent mole unit).
pub fn indicator_color(ca_total: f64, edta_added: f64, spec: &IndicatorSpec) -> &str {
    if free_metal_fraction(ca_total, edta_added) > spec.endpoint_fraction {
        &spec.bound_color
    } else {
        &spec.free_color
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strong(conc: f64, vol_l: f64) -> AcidSpec {
        AcidSpec {
            name: "HCl".into(),
            kind: AcidKind::Strong,
            pka: vec![],
            concentration: conc,
            volume: vol_l,
        }
    }

    fn weak(pka: &[f64], conc: f64, vol_l: f64) -> AcidSpec {
        AcidSpec {
            name: "weak".into(),
            kind: AcidKind::Weak,
            pka: pka.to_vec(),
            concentration: conc,
            volume: vol_l,
        }
    }

    /// Independent oracle: plain bisection on [H+] in linear space with
    /// an explicit closed-form anion sum.
    fn oracle_ph(acid_conc: f64, pka: &[f64], na: f64) -> f64 {
        let kas: Vec<f64> = pka.iter().map(|p| 10f64.powf(-p)).collect();
        let f = |h: f64| {
            let anion = match kas.len() {
                1 => acid_conc * kas[0] / (h + kas[0]),
                2 => {
                    let d = h * h + kas[0] * h + kas[0] * kas[1];
                    acid_conc * (kas[0] * h + 2.0 * kas[0] * kas[1]) / d
                }
                _ => unreachable!(),
            };
            h + na - 1e-14 / h - anion
        };
        let (mut lo, mut hi) = (1e-14f64, 10.0f64);
        for _ in 0..400 {
            let mid = (lo * hi).sqrt();
            if f(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        -((lo * hi).sqrt()).log10()
    }

    #[test]
    fn strong_acid_ph() {
        let s = SolutionState::from_analyte(&strong(0.1, 0.025));
        assert!((ph_of(&s).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn neutral_point() {
        let mut s = SolutionState::from_analyte(&strong(0.1, 0.025));
        s.add_base(0.1, 0.025);
        assert!((ph_of(&s).unwrap() - 7.0).abs() < 1e-6);
    }

    #[test]
    fn maleic_initial_ph_matches_oracle() {
        let s = SolutionState::from_analyte(&weak(&[1.92, 6.23], 0.1, 0.025));
        let ph = ph_of(&s).unwrap();
        let oracle = oracle_ph(0.1, &[1.92, 6.23], 0.0);
        assert!((ph - oracle).abs() < 1e-9, "{ph} vs {oracle}");
        assert!((ph - 1.53).abs() < 0.01, "{ph}");
        assert!((ph - 1.51).abs() < 0.05);
    }

    #[test]
    fn residual_bound_at_root() {
        let mut s = SolutionState::from_analyte(&weak(&[4.76], 0.1, 0.025));
        s.add_base(0.1, 0.0125);
        let h = hydrogen_of(&s).unwrap();
        assert!(s.charge_residual(h).abs() / s.ionic_scale(h) < 1e-10);
    }

    #[test]
    fn half_equivalence_weak() {
        let a = weak(&[4.76], 0.1, 0.025);
        let c = titration_curve(&a, 0.1, &[12.5]).unwrap();
        assert!((c[0].1 - 4.76).abs() < 0.02, "{}", c[0].1);
    }

    #[test]
    fn strong_equivalence_on_curve() {
        let c = titration_curve(&strong(0.1, 0.025), 0.1, &[25.0]).unwrap();
        assert!((c[0].1 - 7.0).abs() < 0.01);
    }

    #[test]
    fn maleic_profile_shape() {
        let a = weak(&[1.92, 6.23], 0.1, 0.025);
        let c = titration_curve(&a, 0.1, &[20.0, 35.0, 55.0]).unwrap();
        // Ideal charge balance gives 2.64 here; the buffer plateau stays below 2.7.
        assert!(c[0].1 < 2.7, "{:?}", c);
        assert!(c[1].1 > 5.5 && c[1].1 < 6.5, "{:?}", c);
        assert!(c[2].1 > 11.0, "{:?}", c);
        for (v, ph) in c {
            let na = 0.1 * v * 1e-3 / (0.025 + v * 1e-3);
            let conc = 0.0025 / (0.025 + v * 1e-3);
            assert!((ph - oracle_ph(conc, &[1.92, 6.23], na)).abs() < 1e-8);
        }
    }

    #[test]
    fn indicator_switch() {
        let spec = IndicatorSpec::default();
        let ca = 5e-3 * 0.01;
        assert_eq!(indicator_color(ca, 2.4e-3 * 0.02, &spec), "magenta");
        assert_eq!(indicator_color(ca, 2.5e-3 * 0.02, &spec), "sapphire");
        assert_eq!(indicator_color(ca, 0.0, &spec), "magenta");
    }

    #[test]
    fn invalid_states_rejected() {
        let mut s = SolutionState::water(0.0);
        assert!(matches!(ph_of(&s), Err(ChemError::InvalidState(_))));
        s.volume = 0.05;
        assert!((ph_of(&s).unwrap() - 7.0).abs() < 1e-9);
        let bad = weak(&[6.0, 2.0], 0.1, 0.01);
        assert!(bad.validate().is_err());
    }
}
