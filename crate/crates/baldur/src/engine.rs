//! Mean-field coordinate updates and the fit loop. Each update maximizes the
//! lower bound in `elbo` exactly for its factor, which is what makes the
//! coordinate-ascent monotonicity tests meaningful. Dual views only ever
//! build Ñ×Ñ and K×K square matrices.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{
    decide_width, select_relevance_vectors, standardize_fit_transform, MultiViewDataset,
    ViewDescriptor,
};
use crate::elbo::{
    compute_elbo, feature_power_profile, residual_y_sq, residual_z_sq, weighted_feature_power,
};
use crate::error::{BaldurError, Result};
use crate::linalg::{self, jaakkola_lambda};
use crate::predict::{freeze, FittedModel};
use crate::prune::{prune, PruneReport};
use crate::state::{
    init_state, GammaQ, ModelState, PerFactorGaussian, WeightFactor, WeightShape,
};

/// Pruning rule configuration. Feature and factor removal is relative to the
/// largest observed weight power; a threshold of zero disables pruning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Feature d is pruned when its mean weight power falls below this
    /// fraction of its view's largest feature power; a factor is pruned when
    /// its total power falls below this fraction of the largest factor power.
    pub weight_power_rel_threshold: f64,
    pub burn_in_iters: usize,
    pub view_prune_enabled: bool,
    /// A whole view is removed when its total weight power falls below this
    /// fraction of the strongest view's total. This is the observable face of
    /// the per-view δ^(m) precisions diverging on an irrelevant view; the
    /// per-feature threshold alone cannot catch it because a view's top
    /// feature always survives a within-view comparison.
    pub view_power_rel_threshold: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            weight_power_rel_threshold: 1e-10,
            burn_in_iters: 10,
            view_prune_enabled: true,
            view_power_rel_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub k_init: usize,
    pub max_iters: usize,
    pub elbo_rel_tol: f64,
    pub hyper: crate::state::HyperPriors,
    pub prune: PruneConfig,
    pub seed: u64,
    /// Dual treatment iff D_m > ratio × N_train, unless the manifest forces a mode.
    pub width_ratio_threshold: f64,
    /// Sweeps that update only the Gaussian factors, with the Gamma factors
    /// held at their initial values. Coordinate ascent over a subset of
    /// factors still never decreases the bound, and the warm phase keeps the
    /// ARD precisions from locking the model into the all-zero optimum
    /// before the class signal reaches the latent space.
    pub warmup_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k_init: 20,
            max_iters: 500,
            elbo_rel_tol: 1e-6,
            hyper: Default::default(),
            prune: Default::default(),
            seed: 0,
            width_ratio_threshold: 1.0,
            warmup_iters: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_init < 1 {
            return Err(BaldurError::InvalidConfig("k_init must be ≥ 1".into()));
        }
        if self.max_iters < 1 {
            return Err(BaldurError::InvalidConfig("max_iters must be ≥ 1".into()));
        }
        if !(self.elbo_rel_tol > 0.0) {
            return Err(BaldurError::InvalidConfig("elbo_rel_tol must be > 0".into()));
        }
        let thr = self.prune.weight_power_rel_threshold;
        if !(0.0..1.0).contains(&thr) {
            return Err(BaldurError::InvalidConfig(
                "prune threshold must lie in [0, 1)".into(),
            ));
        }
        if !(self.width_ratio_threshold > 0.0) {
            return Err(BaldurError::InvalidConfig(
                "width_ratio_threshold must be > 0".into(),
            ));
        }
        self.hyper.validate()
    }
}

/// One view's training-ready data: standardized active columns plus the
/// precomputed products each formulation needs.
#[derive(Debug, Clone)]
pub struct PreparedView {
    pub name: String,
    /// N × D_act, standardized, active columns only.
    pub x: DMatrix<f64>,
    /// Current column j → original feature index.
    pub col_index: Vec<usize>,
    pub descriptor: ViewDescriptor,
    /// All original feature names.
    pub feature_names: Vec<String>,
    pub d_original: usize,
    /// Dual only: relevance-vector rows of `x` (Ñ × D_act).
    pub rv_x: Option<DMatrix<f64>>,
    /// Dual only: X X̃ᵀ (N × Ñ).
    pub gram: Option<DMatrix<f64>>,
    /// Dual only: X̃ Xᵀ X X̃ᵀ (Ñ × Ñ).
    pub gram_sq: Option<DMatrix<f64>>,
    /// Primal only: Xᵀ X (D_act × D_act).
    pub xt_x: Option<DMatrix<f64>>,
}

impl PreparedView {
    pub fn n_active(&self) -> usize {
        self.col_index.len()
    }

    /// Rebuild the cached products after feature contraction.
    pub fn rebuild_products(&mut self) {
        if self.descriptor.s_flag {
            let rv_x = self
                .x
                .select_rows(self.descriptor.rv_indices.iter())
                .clone_owned();
            let gram = &self.x * rv_x.transpose();
            self.gram_sq = Some(linalg::gram_tt(&gram));
            self.gram = Some(gram);
            self.rv_x = Some(rv_x);
            self.xt_x = None;
        } else {
            self.xt_x = Some(linalg::gram_tt(&self.x));
            self.rv_x = None;
            self.gram = None;
            self.gram_sq = None;
        }
    }
}

/// A view dropped from the model (zero active features), kept for reporting.
#[derive(Debug, Clone)]
pub struct RemovedView {
    pub name: String,
    pub d_original: usize,
    pub feature_names: Vec<String>,
    pub descriptor: ViewDescriptor,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub views: Vec<PreparedView>,
    pub removed: Vec<RemovedView>,
    pub targets: DMatrix<f64>,
    /// Original view order, for stable trace columns and model output.
    pub view_order: Vec<String>,
}

impl PreparedData {
    /// Active feature count per original view (0 once removed).
    pub fn active_counts(&self) -> Vec<usize> {
        self.view_order
            .iter()
            .map(|name| {
                self.views
                    .iter()
                    .find(|v| &v.name == name)
                    .map(|v| v.n_active())
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Standardize, decide primal/dual per view, pick relevance vectors and
/// precompute products. The caller passes the training rows as the dataset.
pub fn prepare(dataset: &MultiViewDataset, config: &FitConfig) -> Result<PreparedData> {
    let n = dataset.n_samples();
    let targets = dataset.targets.values.clone();
    for c in 0..targets.ncols() {
        let pos = (0..n).filter(|&i| targets[(i, c)] == 1.0).count();
        if pos == 0 || pos == n {
            return Err(BaldurError::SingleClassInput(format!(
                "target column {c} has a single class in the training split"
            )));
        }
    }

    let all_rows: Vec<usize> = (0..n).collect();
    let mut views = Vec::new();
    let mut removed = Vec::new();
    let mut view_order = Vec::new();
    for (view, opts) in dataset.views.iter().zip(&dataset.options) {
        view_order.push(view.view_name.clone());
        let (transformed, standardizer, active) = standardize_fit_transform(view, &all_rows);
        let col_index: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(j, _)| j)
            .collect();
        if col_index.is_empty() {
            removed.push(RemovedView {
                name: view.view_name.clone(),
                d_original: view.n_features(),
                feature_names: view.feature_names.clone(),
                descriptor: ViewDescriptor {
                    s_flag: false,
                    rv_indices: vec![],
                    standardizer,
                    active_features: active,
                },
            });
            continue;
        }
        let x = transformed.values.select_columns(col_index.iter());
        let d_act = x.ncols();
        let s_flag = opts
            .force_dual
            .unwrap_or_else(|| decide_width(n, d_act, config.width_ratio_threshold));
        let rv_indices = if s_flag {
            select_relevance_vectors(n, opts.rv_strategy, config.seed)?
        } else {
            vec![]
        };
        let mut pv = PreparedView {
            name: view.view_name.clone(),
            x,
            col_index,
            descriptor: ViewDescriptor {
                s_flag,
                rv_indices,
                standardizer,
                active_features: active,
            },
            feature_names: view.feature_names.clone(),
            d_original: view.n_features(),
            rv_x: None,
            gram: None,
            gram_sq: None,
            xt_x: None,
        };
        pv.rebuild_products();
        views.push(pv);
    }
    if views.is_empty() {
        return Err(BaldurError::InvalidConfig(
            "no view has any active feature".into(),
        ));
    }
    Ok(PreparedData {
        views,
        removed,
        targets,
        view_order,
    })
}

/// H(m) = X⟨W⟩ᵀ (primal) or X X̃ᵀ⟨A⟩ (dual), N×K.
pub fn compute_h(state: &ModelState, data: &PreparedData, m: usize) -> DMatrix<f64> {
    match &state.views[m].weight {
        WeightFactor::Primal(w) => &data.views[m].x * w.mean.transpose(),
        WeightFactor::Dual(a) => data.views[m].gram.as_ref().expect("dual gram") * &a.mean,
    }
}

pub fn refresh_h(state: &mut ModelState, data: &PreparedData, m: usize) {
    state.views[m].h = compute_h(state, data, m);
}

/// Residual ⟨Z⟩ − Σ_{m'≠m} H(m'), the target the m-th view's weights fit.
fn residual_for_view(state: &ModelState, m: usize) -> DMatrix<f64> {
    let mut r = state.z.mean.clone();
    for (mi, vf) in state.views.iter().enumerate() {
        if mi != m {
            r -= &vf.h;
        }
    }
    r
}

/// Primal weight update: per factor k, Σ_{W_k}⁻¹ = ⟨τ⟩XᵀX + ⟨δ_k⟩Λ_⟨γ⟩ and
/// ⟨w_k⟩ = ⟨τ⟩ residualᵀ X Σ_{W_k}.
pub fn update_w(state: &mut ModelState, data: &PreparedData, m: usize) -> Result<()> {
    let xtx = data.views[m].xt_x.as_ref().expect("primal view has XᵀX");
    let d = xtx.nrows();
    let tau = state.tau_mean();
    let gamma_mean = state.views[m].gamma.mean();
    let delta_mean = state.views[m].delta.mean();
    let residual = residual_for_view(state, m);
    let xr = data.views[m].x.transpose() * &residual; // D×K

    let mut mean = DMatrix::zeros(state.k, d);
    let mut covs = Vec::with_capacity(state.k);
    for k in 0..state.k {
        linalg::note_square(d);
        let mut prec = xtx.scale(tau);
        for j in 0..d {
            prec[(j, j)] += delta_mean[k] * gamma_mean[j];
        }
        let inv = linalg::invert_spd(&prec, "W precision")?;
        let w_k = (&inv.inverse * xr.column(k)).scale(tau);
        mean.row_mut(k).copy_from(&w_k.transpose());
        covs.push(inv.inverse);
    }
    state.views[m].weight = WeightFactor::Primal(PerFactorGaussian { mean, covs });
    refresh_h(state, data, m);
    Ok(())
}

/// Dual weight update: per factor k, Σ_{a_k}⁻¹ = ⟨τ⟩X̃XᵀXX̃ᵀ + ⟨δ_k⟩X̃Λ_⟨γ⟩X̃ᵀ
/// and ⟨a_k⟩ = ⟨τ⟩Σ_{a_k}X̃Xᵀ·residual_k. Work is O(Ñ²D); nothing D×D.
pub fn update_a(state: &mut ModelState, data: &PreparedData, m: usize) -> Result<()> {
    let pv = &data.views[m];
    let gram_sq = pv.gram_sq.as_ref().expect("dual view has Gram square");
    let gram = pv.gram.as_ref().expect("dual view has Gram");
    let rv_x = pv.rv_x.as_ref().expect("dual view has rv_x");
    let n_rv = rv_x.nrows();
    let tau = state.tau_mean();
    let gamma_mean = state.views[m].gamma.mean();
    let delta_mean = state.views[m].delta.mean();
    let r_gamma = linalg::weighted_gram(rv_x, &gamma_mean);
    let residual = residual_for_view(state, m);
    let gr = gram.transpose() * &residual; // Ñ×K

    let mut mean = DMatrix::zeros(n_rv, state.k);
    let mut covs = Vec::with_capacity(state.k);
    for k in 0..state.k {
        linalg::note_square(n_rv);
        let prec = gram_sq.scale(tau) + r_gamma.scale(delta_mean[k]);
        let inv = linalg::invert_spd(&prec, "A precision")?;
        let a_k = (&inv.inverse * gr.column(k)).scale(tau);
        mean.column_mut(k).copy_from(&a_k);
        covs.push(inv.inverse);
    }
    state.views[m].weight = WeightFactor::Dual(PerFactorGaussian { mean, covs });
    refresh_h(state, data, m);
    Ok(())
}

/// Dispatch to the view's formulation.
pub fn update_weights(state: &mut ModelState, data: &PreparedData, m: usize) -> Result<()> {
    if state.views[m].weight.is_dual() {
        update_a(state, data, m)
    } else {
        update_w(state, data, m)
    }
}

/// δ update: α_k = D_m/2 + α₀, β_k = β₀ + ½ Σ_d ⟨γ_d⟩·s_{k,d}.
pub fn update_delta(state: &mut ModelState, data: &PreparedData, m: usize) {
    let (a0, b0) = state.hyper.delta;
    let d_m = state.views[m].gamma.len() as f64;
    let gamma_mean = state.views[m].gamma.mean();
    let r_gamma = if state.views[m].weight.is_dual() {
        let rv_x = data.views[m].rv_x.as_ref().expect("dual view has rv_x");
        Some(linalg::weighted_gram(rv_x, &gamma_mean))
    } else {
        None
    };
    let mut beta = DVector::zeros(state.k);
    for k in 0..state.k {
        let wfp = weighted_feature_power(state, data, m, k, &gamma_mean, r_gamma.as_ref());
        beta[k] = b0 + 0.5 * wfp;
    }
    state.views[m].delta = GammaQ {
        alpha: DVector::from_element(state.k, d_m / 2.0 + a0),
        beta,
    };
}

/// γ update: α_d = K/2 + α₀, β_d = β₀ + ½ Σ_k ⟨δ_k⟩·s_{k,d}.
pub fn update_gamma(state: &mut ModelState, data: &PreparedData, m: usize) {
    let (a0, b0) = state.hyper.gamma;
    let delta_mean = state.views[m].delta.mean();
    let profile = feature_power_profile(state, data, m, &delta_mean);
    let d_m = profile.len();
    state.views[m].gamma = GammaQ {
        alpha: DVector::from_element(d_m, state.k as f64 / 2.0 + a0),
        beta: DVector::from_fn(d_m, |d, _| b0 + 0.5 * profile[d]),
    };
}

/// Z update: Σ_Z⁻¹ = ⟨τ⟩I_K + ⟨ψ⟩⟨VᵀV⟩, ⟨Z⟩ = (⟨τ⟩ΣH + ⟨ψ⟩⟨Y⟩⟨V⟩)Σ_Z.
pub fn update_z(state: &mut ModelState, data: &PreparedData) -> Result<()> {
    let _ = data;
    let tau = state.tau_mean();
    let psi = state.psi_mean();
    let mut prec = state.v_second_moment().scale(psi);
    for i in 0..state.k {
        prec[(i, i)] += tau;
    }
    let inv = linalg::invert_spd(&prec, "Z precision")?;
    let rhs = state.h_sum().scale(tau) + (&state.y.mean * &state.v.mean).scale(psi);
    state.z.mean = rhs * &inv.inverse;
    state.z.cov = inv.inverse;
    Ok(())
}

/// τ update: α = NK/2 + α₀, β = β₀ + ½·E‖Z − ΣH‖².
pub fn update_tau(state: &mut ModelState, data: &PreparedData) -> Result<()> {
    let (a0, b0) = state.hyper.tau;
    let n = state.n_samples() as f64;
    let alpha = n * state.k as f64 / 2.0 + a0;
    let beta = b0 + 0.5 * residual_z_sq(state, data);
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(BaldurError::NegativeBeta("tau".into()));
    }
    state.tau = GammaQ::constant(1, alpha, beta);
    Ok(())
}

/// V update: Σ_V⁻¹ = Λ_⟨ω⟩ + ⟨ψ⟩⟨ZᵀZ⟩, ⟨V⟩ = ⟨ψ⟩⟨Y⟩ᵀ⟨Z⟩Σ_V.
pub fn update_v(state: &mut ModelState) -> Result<()> {
    let psi = state.psi_mean();
    let omega_mean = state.omega.mean();
    let mut prec = state.z_second_moment().scale(psi);
    for i in 0..state.k {
        prec[(i, i)] += omega_mean[i];
    }
    let inv = linalg::invert_spd(&prec, "V precision")?;
    state.v.mean = (state.y.mean.transpose() * &state.z.mean).scale(psi) * &inv.inverse;
    state.v.cov = inv.inverse;
    Ok(())
}

/// ω update: α_k = C/2 + α₀, β_k = β₀ + ½⟨v_{:,k}ᵀv_{:,k}⟩.
pub fn update_omega(state: &mut ModelState) {
    let (a0, b0) = state.hyper.omega;
    let c = state.n_outputs() as f64;
    let vsm = state.v_second_moment();
    state.omega = GammaQ {
        alpha: DVector::from_element(state.k, c / 2.0 + a0),
        beta: DVector::from_fn(state.k, |k, _| b0 + 0.5 * vsm[(k, k)]),
    };
}

/// ψ update: α = NC/2 + α₀, β = β₀ + ½·E‖Y − ZVᵀ‖².
pub fn update_psi(state: &mut ModelState) -> Result<()> {
    let (a0, b0) = state.hyper.psi;
    let n = state.n_samples() as f64;
    let c = state.n_outputs() as f64;
    let alpha = n * c / 2.0 + a0;
    let beta = b0 + 0.5 * residual_y_sq(state);
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(BaldurError::NegativeBeta("psi".into()));
    }
    state.psi = GammaQ::constant(1, alpha, beta);
    Ok(())
}

/// Y/ξ update: per sample, diagonal Σ_y with entries 1/(⟨ψ⟩ + 2λ(ξ)),
/// ⟨y⟩ = (t − ½ + ⟨ψ⟩⟨z⟩⟨Vᵀ⟩)Σ_y, then ξ = √(⟨y⟩² + Σ_y) (nonnegative root).
pub fn update_y_and_xi(state: &mut ModelState, targets: &DMatrix<f64>) {
    let psi = state.psi_mean();
    let zv = &state.z.mean * state.v.mean.transpose(); // N×C
    for i in 0..state.y.mean.nrows() {
        for c in 0..state.y.mean.ncols() {
            let var = 1.0 / (psi + 2.0 * jaakkola_lambda(state.xi[(i, c)]));
            let mean = (targets[(i, c)] - 0.5 + psi * zv[(i, c)]) * var;
            state.y.var[(i, c)] = var;
            state.y.mean[(i, c)] = mean;
        }
    }
    for i in 0..state.xi.nrows() {
        for c in 0..state.xi.ncols() {
            let m = state.y.mean[(i, c)];
            state.xi[(i, c)] = (m * m + state.y.var[(i, c)]).sqrt();
        }
    }
}

/// One full coordinate-ascent sweep in the fixed order:
/// per view [W|A, δ, γ] → Z → τ → V → ω → ψ → Y&ξ.
pub fn run_sweep(state: &mut ModelState, data: &PreparedData) -> Result<()> {
    for m in 0..state.views.len() {
        update_weights(state, data, m)?;
        update_delta(state, data, m);
        update_gamma(state, data, m);
    }
    update_z(state, data)?;
    update_tau(state, data)?;
    update_v(state)?;
    update_omega(state);
    update_psi(state)?;
    update_y_and_xi(state, &data.targets);
    Ok(())
}

/// A warmup sweep: Gaussian factors only, Gamma factors untouched.
pub fn run_warmup_sweep(state: &mut ModelState, data: &PreparedData) -> Result<()> {
    for m in 0..state.views.len() {
        update_weights(state, data, m)?;
    }
    update_z(state, data)?;
    update_v(state)?;
    update_y_and_xi(state, &data.targets);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub elbo: f64,
    pub k: usize,
    /// Active feature count per original view (0 once removed).
    pub active_features: Vec<usize>,
    /// True when this iteration's prune pass removed anything; the next
    /// ELBO value is then not comparable to this one.
    pub pruned: bool,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ElboTrace {
    pub view_names: Vec<String>,
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
    pub prune_events: usize,
}

impl ElboTrace {
    /// Delimited export: iteration, elbo, K, pruned flag, active features per
    /// view. Wall time is intentionally left out so exports are reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,elbo,k,pruned");
        for name in &self.view_names {
            out.push_str(&format!(",active_{name}"));
        }
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{},{:.17e},{},{}", e.iteration, e.elbo, e.k, e.pruned));
            for c in &e.active_features {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// ⟨τ⟩ held during warmup sweeps. An optimistic noise floor: it makes the
/// early sweeps behave like alternating least squares, so the latent space
/// locks onto the data before the precisions are released.
const WARMUP_TAU_MEAN: f64 = 100.0;

/// Initialize the state for a prepared dataset: draw the factors, refresh the
/// projection caches, center the Z mean on the generative projection
/// Σ_m H(m) of the initial weights, and set the warmup noise floor.
pub fn init_for_fit(data: &PreparedData, config: &FitConfig) -> ModelState {
    let shapes: Vec<WeightShape> = data
        .views
        .iter()
        .map(|pv| {
            if pv.descriptor.s_flag {
                WeightShape::Dual {
                    n_rv: pv.descriptor.rv_indices.len(),
                    d: pv.n_active(),
                }
            } else {
                WeightShape::Primal { d: pv.n_active() }
            }
        })
        .collect();
    let mut state = init_state(
        &data.targets,
        &shapes,
        config.k_init,
        config.hyper,
        config.seed,
    );
    for m in 0..state.views.len() {
        refresh_h(&mut state, data, m);
    }
    let h_sum = state.h_sum();
    state.z.mean += h_sum;
    state.tau = GammaQ::constant(1, WARMUP_TAU_MEAN, 1.0);
    state
}

/// Fit the model: sweeps until the relative ELBO change stays below
/// `elbo_rel_tol` for 3 consecutive iterations or `max_iters` is reached
/// (the latter returns the model with a non-convergence warning).
pub fn fit(dataset: &MultiViewDataset, config: &FitConfig) -> Result<(FittedModel, ElboTrace)> {
    config.validate()?;
    let mut data = prepare(dataset, config)?;
    let mut state = init_for_fit(&data, config);

    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut prune_events = 0usize;
    let mut prev_elbo: Option<f64> = None;
    let mut streak = 0usize;
    let mut converged = false;
    let original_features: usize = data
        .views
        .iter()
        .map(|v| v.d_original)
        .chain(data.removed.iter().map(|v| v.d_original))
        .sum();

    for iteration in 1..=config.max_iters {
        let t0 = Instant::now();
        let warm = iteration <= config.warmup_iters;
        if warm {
            run_warmup_sweep(&mut state, &data)?;
        } else {
            run_sweep(&mut state, &data)?;
        }
        let elbo = compute_elbo(&state, &data)?;

        let mut report = PruneReport::default();
        if !warm && iteration > config.prune.burn_in_iters {
            report = prune(&mut state, &mut data, &config.prune)?;
            if !report.is_empty() {
                prune_events += 1;
            }
        }
        let pruned = !report.is_empty();
        entries.push(TraceEntry {
            iteration,
            elbo,
            k: state.k,
            active_features: data.active_counts(),
            pruned,
            wall_time_ms: t0.elapsed().as_secs_f64() * 1e3,
        });

        // convergence is only meaningful once every factor is live
        if warm || pruned {
            streak = 0;
            prev_elbo = None;
        } else {
            if let Some(prev) = prev_elbo {
                let rel = (elbo - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
                if rel < config.elbo_rel_tol {
                    streak += 1;
                } else {
                    streak = 0;
                }
            }
            prev_elbo = Some(elbo);
        }
        if streak >= 3 {
            converged = true;
            break;
        }
    }

    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "non-convergence: ELBO did not stabilize within {} iterations",
            config.max_iters
        ));
    }
    let active_now: usize = data.views.iter().map(|v| v.n_active()).sum();
    if original_features > 0 && (active_now as f64) < 0.01 * original_features as f64 {
        warnings.push(format!(
            "heavy pruning: {active_now} of {original_features} features remain"
        ));
    }
    for rv in &data.removed {
        warnings.push(format!("view '{}' removed entirely", rv.name));
    }

    let model = freeze(&state, &data, converged, warnings);
    let trace = ElboTrace {
        view_names: data.view_order.clone(),
        entries,
        converged,
        prune_events,
    };
    Ok((model, trace))
}
