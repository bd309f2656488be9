//! Second derivative of the volume along one-parameter isometry subgroups,
//! for structures along a positive path.

use super::structures::PerturbationPath;
use crate::error::{Error, Result};
use crate::fields::Field;
use crate::lagrangian::{volume, TorusImmersion};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct PositivityRow {
    pub s: f64,
    pub subgroup: usize,
    pub second_derivative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    pub step: f64,
    pub rows: Vec<PositivityRow>,
}

impl PositivityReport {
    pub fn at(&self, s: f64) -> impl Iterator<Item = &PositivityRow> {
        self.rows.iter().filter(move |r| (r.s - s).abs() < 1e-12)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,subgroup,second_derivative\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.12e}\n", r.s, r.subgroup, r.second_derivative));
        }
        out
    }
}

/// Fails unless the restriction of `generator` to `l` is non-constant, i.e.
/// the subgroup moves `l`.
pub fn check_transverse(l: &TorusImmersion, generator: &Field) -> Result<()> {
    let vals = l.restrict(generator.as_ref());
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let spread = vals.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let scale = vals.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if spread <= 1e-8 * scale {
        return Err(Error::NonTransverseSubgroup);
    }
    Ok(())
}

/// `d^2/dt^2 vol_{J_s}(u_t . l)` at `t = 0` by central differences with step
/// `step`, for every `s` in `s_values` and every subgroup generator.
pub fn positivity_experiment(
    l: &TorusImmersion,
    path: &PerturbationPath,
    s_values: &[f64],
    subgroups: &[Field],
    step: f64,
) -> Result<PositivityReport> {
    for g in subgroups {
        check_transverse(l, g)?;
    }
    let base = l.with_manifold(path.reference.clone());
    let moved: Vec<[TorusImmersion; 2]> = subgroups
        .iter()
        .map(|g| Ok([base.transported(g.as_ref(), step, 8)?, base.transported(g.as_ref(), -step, 8)?]))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &s in s_values {
        let m = path.manifold_at(s)?;
        let v0 = volume(&base.with_manifold(m.clone()))?;
        for (i, pair) in moved.iter().enumerate() {
            let up = volume(&pair[0].with_manifold(m.clone()))?;
            let down = volume(&pair[1].with_manifold(m.clone()))?;
            rows.push(PositivityRow { s, subgroup: i, second_derivative: (up - 2.0 * v0 + down) / (step * step) });
        }
    }
    Ok(PositivityReport { step, rows })
}
