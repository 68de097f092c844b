//! Central finite-difference checks of tape gradients.

use std::collections::BTreeMap;

use super::array::{Array, Real};
use super::layers::ParamStore;
use crate::error::Result;

/// Relative error with an absolute floor in the denominator so that
/// vanishing gradients compare on an absolute scale.
pub fn relative_error(analytic: Real, numeric: Real, floor: Real) -> Real {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: Real,
    pub numeric: Real,
    pub rel_error: Real,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> Real {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }
}

/// Compare `analytic` gradients against central differences of `loss`
/// for every scalar of every parameter in `params`.
pub fn check_params(
    params: &ParamStore,
    analytic: &BTreeMap<String, Array>,
    step: Real,
    floor: Real,
    mut loss: impl FnMut(&ParamStore) -> Result<Real>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for name in params.names().map(str::to_owned).collect::<Vec<_>>() {
        let base = params.get(&name).expect("name from store").clone();
        let grad = &analytic[&name];
        for i in 0..base.len() {
            let x0 = base.data()[i];
            probe.get_mut(&name).expect("probe")[i..i + 1].copy_from_slice(&[x0 + step]);
            let up = loss(&probe)?;
            probe.get_mut(&name).expect("probe")[i..i + 1].copy_from_slice(&[x0 - step]);
            let down = loss(&probe)?;
            probe.get_mut(&name).expect("probe")[i..i + 1].copy_from_slice(&[x0]);
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[i];
            let rel = relative_error(a, numeric, floor);
            report.checked += 1;
            if report.worst.as_ref().is_none_or(|w| rel > w.rel_error) {
                report.worst = Some(GradCheckEntry {
                    name: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}
