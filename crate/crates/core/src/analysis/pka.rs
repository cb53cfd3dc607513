use serde::{Deserialize, Serialize};

use super::{AnalysisError, EquivalencePoint, TitrationCurve};

/// Titration setup used to correct the half-equivalence reading for the
/// free [H+] and [OH-] that Henderson–Hasselbalch ignores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkaContext {
    /// Titrant concentration, mol/L.
    pub titrant_conc: f64,
    /// Analyte volume before titration, mL.
    pub initial_volume_ml: f64,
    /// Strong analytes have no meaningful pKa.
    pub strong: bool,
    pub kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkaEntry {
    /// 1-based dissociation step.
    pub step: usize,
    pub v_half: f64,
    /// Interpolated pH at `v_half`.
    pub ph_half: f64,
    /// Recovered pKa, `None` when not applicable.
    pub pka: Option<f64>,
    pub applicable: bool,
}

/// pKa from the pH at the half-equivalence volume of each step.
///
/// `V_half = (V_eq,k-1 + V_eq,k) / 2` with `V_eq,0 = 0`. With a context,
/// the conjugate/acid ratio at `V_half` is computed from the charge
/// balance instead of being assumed to be 1.
pub fn compute_pka(
    curve: &TitrationCurve,
    eq: &[EquivalencePoint],
    ctx: Option<&PkaContext>,
) -> Result<Vec<PkaEntry>, AnalysisError> {
    if eq.is_empty() {
        return Err(AnalysisError::NoEquivalencePoint);
    }
    let mut out = Vec::with_capacity(eq.len());
    let mut prev = 0.0;
    for (k, p) in eq.iter().enumerate() {
        let v_half = 0.5 * (prev + p.volume);
        let ph_half = curve
            .interpolate(v_half)
            .ok_or(AnalysisError::HalfPointOutOfRange { v_half })?;
        let strong = ctx.is_some_and(|c| c.strong);
        let pka = if strong {
            None
        } else {
            Some(ctx.map_or(ph_half, |c| corrected(c, ph_half, v_half, prev, p.volume)))
        };
        out.push(PkaEntry {
            step: k + 1,
            v_half,
            ph_half,
            pka,
            applicable: !strong,
        });
        prev = p.volume;
    }
    Ok(out)
}

fn corrected(c: &PkaContext, ph: f64, v_half: f64, v_prev: f64, v_eq: f64) -> f64 {
    let vt = c.initial_volume_ml + v_half;
    let h = 10f64.powf(-ph);
    let oh = c.kw / h;
    // Amounts in mmol (mol/L × mL); concentrations in mol/L.
    let base_this_step = c.titrant_conc * (v_half - v_prev);
    let step_total = c.titrant_conc * (v_eq - v_prev);
    let conj = base_this_step / vt + h - oh;
    let acid = step_total / vt - conj;
    if conj > 0.0 && acid > 0.0 {
        ph - (conj / acid).log10()
    } else {
        ph
    }
}
