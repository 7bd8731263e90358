use rand::seq::index;

use super::tensor::ParamStore;
use crate::rng;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// `(name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub samples: usize,
    /// Differences below this are treated as exact.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, samples: 200, abs_floor: 1e-10, seed: 0 }
    }
}

/// Compares the analytic gradient returned by `loss` against central
/// differences on a seeded sample of coordinates (all of them when the model
/// has fewer than `samples`).
pub fn grad_check<F, E>(loss: F, params: &ParamStore, cfg: GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamStore), E>,
{
    let (_, analytic) = loss(params)?;
    let coords: Vec<(String, usize)> =
        params.iter().flat_map(|(name, t)| (0..t.len()).map(move |k| (name.clone(), k))).collect();
    let picked: Vec<usize> = if coords.len() <= cfg.samples {
        (0..coords.len()).collect()
    } else {
        let mut v = index::sample(&mut rng::seeded(cfg.seed), coords.len(), cfg.samples).into_vec();
        v.sort_unstable();
        v
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, worst: None };
    let mut probe = params.clone();
    for &ci in &picked {
        let (name, k) = &coords[ci];
        let orig = params.get(name).expect("coordinate from params").data()[*k];
        probe.get_mut(name).expect("same layout").data_mut()[*k] = orig + cfg.eps;
        let (lp, _) = loss(&probe)?;
        probe.get_mut(name).expect("same layout").data_mut()[*k] = orig - cfg.eps;
        let (lm, _) = loss(&probe)?;
        probe.get_mut(name).expect("same layout").data_mut()[*k] = orig;

        let numeric = (lp - lm) / (2.0 * cfg.eps);
        let a = analytic.get(name).map(|t| t.data()[*k]).unwrap_or(0.0);
        let diff = (a - numeric).abs();
        let rel = if diff <= cfg.abs_floor { 0.0 } else { diff / a.abs().max(numeric.abs()) };
        report.max_abs_error = report.max_abs_error.max(diff);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((name.clone(), *k, a, numeric));
        }
        report.checked += 1;
    }
    Ok(report)
}
