//! Two-way sparsity pruning: features whose posterior weight power collapses
//! are dropped, latent factors whose total power collapses are dropped, and a
//! view that loses every feature is removed from the model.

use nalgebra::{DMatrix, DVector};

use crate::engine::{PreparedData, PruneConfig, RemovedView};
use crate::error::{BaldurError, Result};
use crate::linalg;
use crate::state::{GammaQ, ModelState, WeightFactor};

/// Per-feature power of the posterior mean weights, Σ_k ⟨w_{k,d}⟩² (dual
/// views use the implied weights x̃_dᵀ⟨a_k⟩). Pruning decisions deliberately
/// exclude the posterior covariance: its diagonal has a 1/(τ XᵀX + δγ) floor
/// that a relative threshold of 1e-10 could never cross.
fn mean_power_profile(state: &ModelState, data: &PreparedData, m: usize) -> DVector<f64> {
    match &state.views[m].weight {
        WeightFactor::Primal(w) => DVector::from_fn(w.mean.ncols(), |d, _| {
            (0..state.k).map(|k| w.mean[(k, d)] * w.mean[(k, d)]).sum()
        }),
        WeightFactor::Dual(a) => {
            let rv_x = data.views[m].rv_x.as_ref().expect("dual view has rv_x");
            let implied = rv_x.transpose() * &a.mean; // D×K
            DVector::from_fn(implied.nrows(), |d, _| {
                (0..state.k).map(|k| implied[(d, k)] * implied[(d, k)]).sum()
            })
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct PruneReport {
    /// (view name, original feature indices removed)
    pub features_removed: Vec<(String, Vec<usize>)>,
    pub factors_removed: Vec<usize>,
    pub views_removed: Vec<String>,
}

impl PruneReport {
    pub fn is_empty(&self) -> bool {
        self.features_removed.is_empty()
            && self.factors_removed.is_empty()
            && self.views_removed.is_empty()
    }
}

fn select_vec(v: &DVector<f64>, keep: &[usize]) -> DVector<f64> {
    DVector::from_fn(keep.len(), |i, _| v[keep[i]])
}

fn select_gamma(g: &GammaQ, keep: &[usize]) -> GammaQ {
    GammaQ {
        alpha: select_vec(&g.alpha, keep),
        beta: select_vec(&g.beta, keep),
    }
}

fn select_square(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    linalg::note_square(keep.len());
    m.select_rows(keep.iter()).select_columns(keep.iter())
}

/// Apply the pruning rule. Feature powers are compared against the largest
/// feature power across all views (within the view when view pruning is
/// disabled, which keeps every view alive); factor powers are compared
/// against the largest factor power.
pub fn prune(
    state: &mut ModelState,
    data: &mut PreparedData,
    cfg: &PruneConfig,
) -> Result<PruneReport> {
    let thr = cfg.weight_power_rel_threshold;
    let mut report = PruneReport::default();
    if thr <= 0.0 || state.views.is_empty() {
        return Ok(report);
    }

    // posterior-mean power profiles per view, and per-factor totals
    let profiles: Vec<DVector<f64>> = (0..state.views.len())
        .map(|m| mean_power_profile(state, data, m))
        .collect();
    let view_totals: Vec<f64> = profiles.iter().map(|p| p.sum()).collect();
    let total_max = view_totals.iter().copied().fold(0.0f64, f64::max);

    let mut factor_power = DVector::zeros(state.k);
    for k in 0..state.k {
        let mut p = state.v.mean.column(k).norm_squared();
        for (m, vf) in state.views.iter().enumerate() {
            p += match &vf.weight {
                WeightFactor::Primal(w) => w.mean.row(k).norm_squared(),
                WeightFactor::Dual(a) => {
                    let rv_x = data.views[m].rv_x.as_ref().expect("dual view has rv_x");
                    (rv_x.transpose() * a.mean.column(k)).norm_squared()
                }
            };
        }
        factor_power[k] = p;
    }
    let factor_max = factor_power.iter().copied().fold(0.0f64, f64::max);

    // decide features per view; a collapsed view loses all of them
    let mut keep_features: Vec<Vec<usize>> = Vec::with_capacity(state.views.len());
    for (m, profile) in profiles.iter().enumerate() {
        let view_dead = cfg.view_prune_enabled
            && view_totals[m] < cfg.view_power_rel_threshold * total_max;
        let view_max = profile.iter().copied().fold(0.0f64, f64::max);
        let keep: Vec<usize> = (0..profile.len())
            .filter(|&d| !view_dead && !(profile[d] < thr * view_max))
            .collect();
        let dropped: Vec<usize> = (0..profile.len())
            .filter(|&d| !keep.contains(&d))
            .map(|d| data.views[m].col_index[d])
            .collect();
        if !dropped.is_empty() {
            report
                .features_removed
                .push((data.views[m].name.clone(), dropped));
        }
        keep_features.push(keep);
    }

    // decide factors
    let keep_factors: Vec<usize> = (0..state.k)
        .filter(|&k| !(factor_power[k] < thr * factor_max))
        .collect();
    if keep_factors.is_empty() {
        return Err(BaldurError::AllFactorsPruned);
    }
    report.factors_removed = (0..state.k)
        .filter(|k| !keep_factors.contains(k))
        .collect();

    if report.is_empty() {
        return Ok(report);
    }

    // contract features
    for (m, keep) in keep_features.iter().enumerate() {
        if keep.len() == state.views[m].gamma.len() {
            continue;
        }
        let pv = &mut data.views[m];
        let vf = &mut state.views[m];
        vf.gamma = select_gamma(&vf.gamma, keep);
        if let WeightFactor::Primal(w) = &mut vf.weight {
            w.mean = w.mean.select_columns(keep.iter());
            w.covs = w.covs.iter().map(|c| select_square(c, keep)).collect();
        }
        pv.x = pv.x.select_columns(keep.iter());
        let old_index = std::mem::take(&mut pv.col_index);
        pv.col_index = keep.iter().map(|&d| old_index[d]).collect();
        for orig in old_index {
            if !pv.col_index.contains(&orig) {
                pv.descriptor.active_features[orig] = false;
            }
        }
        if !pv.col_index.is_empty() {
            pv.rebuild_products();
        }
    }

    // drop emptied views
    let emptied: Vec<usize> = (0..state.views.len())
        .filter(|&m| data.views[m].col_index.is_empty())
        .collect();
    for &m in emptied.iter().rev() {
        let pv = data.views.remove(m);
        report.views_removed.push(pv.name.clone());
        data.removed.push(RemovedView {
            name: pv.name.clone(),
            d_original: pv.d_original,
            feature_names: pv.feature_names,
            descriptor: pv.descriptor,
        });
        state.views.remove(m);
    }
    report.views_removed.reverse();

    // contract factors
    if keep_factors.len() < state.k {
        let keep = &keep_factors;
        state.z.mean = state.z.mean.select_columns(keep.iter());
        state.z.cov = select_square(&state.z.cov, keep);
        state.v.mean = state.v.mean.select_columns(keep.iter());
        state.v.cov = select_square(&state.v.cov, keep);
        state.omega = select_gamma(&state.omega, keep);
        for vf in &mut state.views {
            vf.delta = select_gamma(&vf.delta, keep);
            match &mut vf.weight {
                WeightFactor::Primal(w) => {
                    w.mean = w.mean.select_rows(keep.iter());
                    w.covs = keep.iter().map(|&k| w.covs[k].clone()).collect();
                }
                WeightFactor::Dual(a) => {
                    a.mean = a.mean.select_columns(keep.iter());
                    a.covs = keep.iter().map(|&k| a.covs[k].clone()).collect();
                }
            }
        }
        state.k = keep_factors.len();
    }

    // caches are stale after any contraction
    for m in 0..state.views.len() {
        state.views[m].h = crate::engine::compute_h(state, data, m);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fit, FitConfig};
    use crate::synth::{synth_generate, SynthConfig};

    fn recovery_config(seed: u64) -> (SynthConfig, FitConfig) {
        let synth = SynthConfig {
            n: 400,
            view_dims: vec![12],
            relevant: vec![3],
            k_true: 2,
            c: 1,
            tau_true: 20.0,
            psi_true: 20.0,
            seed,
        };
        let fit_cfg = FitConfig {
            k_init: 6,
            max_iters: 120,
            seed,
            ..Default::default()
        };
        (synth, fit_cfg)
    }

    #[test]
    fn zero_threshold_prunes_nothing() {
        let (synth, mut cfg) = recovery_config(5);
        cfg.prune.weight_power_rel_threshold = 0.0;
        cfg.max_iters = 15;
        let (ds, _) = synth_generate(&synth).unwrap();
        let (model, trace) = fit(&ds, &cfg).unwrap();
        assert_eq!(trace.prune_events, 0);
        assert_eq!(model.k, cfg.k_init);
        let active: usize = model
            .views
            .iter()
            .map(|v| v.descriptor.active_features.iter().filter(|&&a| a).count())
            .sum();
        assert_eq!(active, 12);
    }

    #[test]
    fn planted_zero_features_get_pruned() {
        let (synth, cfg) = recovery_config(7);
        let (ds, truth) = synth_generate(&synth).unwrap();
        let (model, trace) = fit(&ds, &cfg).unwrap();
        assert!(trace.prune_events > 0, "expected pruning to trigger");
        let mask = &model.views[0].descriptor.active_features;
        // every feature the generator left at exactly zero must be gone by now
        for (d, &relevant) in truth.relevant_masks[0].iter().enumerate() {
            if !relevant {
                assert!(
                    !mask[d],
                    "irrelevant feature {d} survived: mask {mask:?}"
                );
            }
        }
    }
}
