//! Settles competing closed forms by comparing each against the exact
//! finite-horizon optimum.

use serde::{Deserialize, Serialize};

use crate::detect::{horizon_value, FormulaVariant, OriginFormula, STOP_TOL};
use crate::double::{FiniteD00, FirstStopRecursion};
use crate::error::Result;
use crate::model::ModelSpec;
use crate::oracle::{double_policy_value, dp_detect, dp_double, guard};

/// Variants closer than this are reported as a tie.
pub const TIE_TOL: f64 = 1e-12;
/// A winner must be at least this close to the optimum.
pub const WIN_TOL: f64 = 1e-6;
/// A loser must be at least this far from the optimum.
pub const LOSE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub name: String,
    pub variant_a: String,
    pub variant_b: String,
    /// Largest gap to the optimum over horizons `0..=N`.
    pub variant_a_gap: f64,
    pub variant_b_gap: f64,
    pub winner: String,
    /// Variant used by default in the solvers.
    pub shipped: String,
}

impl VerdictEntry {
    fn new(name: &str, labels: (&str, &str), shipped: &str, a: &[f64], b: &[f64], optimum: &[f64]) -> Self {
        let gap = |v: &[f64]| v.iter().zip(optimum).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let spread = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let (ga, gb) = (gap(a), gap(b));
        let winner = if spread <= TIE_TOL {
            "tie".to_string()
        } else if ga <= WIN_TOL && gb >= LOSE_TOL {
            labels.0.to_string()
        } else if gb <= WIN_TOL && ga >= LOSE_TOL {
            labels.1.to_string()
        } else {
            "inconclusive".to_string()
        };
        Self {
            name: name.into(),
            variant_a: labels.0.into(),
            variant_b: labels.1.into(),
            variant_a_gap: ga,
            variant_b_gap: gb,
            winner,
            shipped: shipped.into(),
        }
    }

    /// The shipped default agrees with the computed winner.
    pub fn default_confirmed(&self) -> bool {
        self.winner == "tie" || self.winner == self.shipped
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub schema: u32,
    pub horizon: usize,
    pub detect_dp: Vec<f64>,
    pub d00_dp: Vec<f64>,
    pub entries: Vec<VerdictEntry>,
}

fn origin(constant: FormulaVariant, weight: FormulaVariant) -> OriginFormula {
    OriginFormula { constant, weight }
}

/// Runs every comparison for horizons `0..=horizon`.
pub fn verdict(model: &ModelSpec, horizon: usize) -> Result<VerdictReport> {
    guard(model, horizon)?;
    use FormulaVariant::{Printed, Proof};
    let hs = 0..=horizon;
    let detect_dp: Vec<f64> = hs.clone().map(|h| dp_detect(model, h).map(|d| d.value)).collect::<Result<_>>()?;
    let d00_dp: Vec<f64> = hs.clone().map(|h| dp_double(model, h).map(|d| d.value)).collect::<Result<_>>()?;

    let detect = |f: OriginFormula| -> Vec<f64> { hs.clone().map(|h| horizon_value(model, h, f)).collect() };
    let finite = |rec| -> Result<Vec<FiniteD00>> { hs.clone().map(|h| FiniteD00::new(model, h, rec)).collect() };
    let proof_tables = finite(FirstStopRecursion::Proof)?;
    let stmt_tables = finite(FirstStopRecursion::Statement)?;
    let d00 = |tables: &[FiniteD00], o| -> Vec<f64> { tables.iter().map(|t| t.value(model, o)).collect() };

    // Second-stage trigger: threshold R*(xₙ) against (1 − ρ)R*(xₙ).
    let rho = model.prior.rho;
    let trigger = |scale: f64| -> Result<Vec<f64>> {
        proof_tables
            .iter()
            .map(|t| {
                double_policy_value(
                    model,
                    t.horizon,
                    &|node| t.first_stops(model, &node.states, node.n()),
                    &|m, node| {
                        let n = node.n();
                        if n == m {
                            t.second_stops(model, &node.states, m, n)
                        } else {
                            let j = t.horizon - n;
                            let (a, b) = (node.states[n - 1], node.states[n]);
                            t.ratio21.get(a, b) >= scale * t.big_r[j][b] - STOP_TOL
                        }
                    },
                )
            })
            .collect()
    };

    let entries = vec![
        VerdictEntry::new(
            "detect: stop value at the origin",
            ("printed", "proof"),
            "proof",
            &detect(origin(Printed, Proof)),
            &detect(origin(Proof, Proof)),
            &detect_dp,
        ),
        VerdictEntry::new(
            "detect: weight of the in-between integral",
            ("printed", "proof"),
            "proof",
            &detect(origin(Proof, Printed)),
            &detect(origin(Proof, Proof)),
            &detect_dp,
        ),
        VerdictEntry::new(
            "d00: first-stop recursion",
            ("statement", "proof"),
            "proof",
            &d00(&stmt_tables, Proof),
            &d00(&proof_tables, Proof),
            &d00_dp,
        ),
        VerdictEntry::new(
            "d00: stop value at the origin",
            ("printed", "proof"),
            "proof",
            &d00(&proof_tables, Printed),
            &d00(&proof_tables, Proof),
            &d00_dp,
        ),
        VerdictEntry::new(
            "d00: second-stop threshold",
            ("printed", "rho_scaled"),
            "printed",
            &trigger(1.0)?,
            &trigger(1.0 - rho)?,
            &d00_dp,
        ),
    ];
    Ok(VerdictReport {
        schema: 1,
        horizon,
        detect_dp,
        d00_dp,
        entries,
    })
}
