//! Evidence lower bound: the Jaakkola logistic bound, expected residuals
//! shared with the noise-precision updates, and the full L(q) assembly over
//! all factors. Every coordinate update in the engine maximizes exactly this
//! functional, which is what the monotonicity tests check.

use nalgebra::DVector;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::engine::PreparedData;
use crate::error::{BaldurError, Result};
use crate::linalg::{self, jaakkola_lambda, ln_sigmoid, LN_2PI, LN_2PI_E};
use crate::state::{GammaQ, ModelState, WeightFactor};

/// h(y, ξ) of the logistic lower bound: e^{yt}·σ(ξ)·e^{−(y+ξ)/2 − λ(ξ)(y²−ξ²)}.
/// Guaranteed ≤ e^{yt}σ(−y), with equality at ξ = |y|.
pub fn logistic_bound_h(y: f64, t: u8, xi: f64) -> f64 {
    debug_assert!(xi >= 0.0);
    let ln_h = y * t as f64 + ln_sigmoid(xi)
        - 0.5 * (y + xi)
        - jaakkola_lambda(xi) * (y * y - xi * xi);
    ln_h.exp()
}

/// Σ_d γ_d · s_{k,d} for view m and factor k, where s_{k,d} is the weight
/// second moment ⟨w_{k,d}²⟩ (primal) or x̃_dᵀ⟨a_k a_kᵀ⟩x̃_d (dual). For the
/// dual branch the caller passes R_γ = X̃ Λ_γ X̃ᵀ so the cost stays Ñ².
pub fn weighted_feature_power(
    state: &ModelState,
    data: &PreparedData,
    m: usize,
    k: usize,
    gamma_mean: &DVector<f64>,
    r_gamma: Option<&nalgebra::DMatrix<f64>>,
) -> f64 {
    let vf = &state.views[m];
    match &vf.weight {
        WeightFactor::Primal(w) => {
            let mut acc = 0.0;
            let cov = &w.covs[k];
            for d in 0..gamma_mean.len() {
                let s = w.mean[(k, d)] * w.mean[(k, d)] + cov[(d, d)];
                acc += gamma_mean[d] * s;
            }
            acc
        }
        WeightFactor::Dual(a) => {
            let rg = r_gamma.expect("dual branch needs R_gamma");
            let a_k = a.mean.column(k);
            let quad = (rg * a_k).dot(&a_k);
            let tr = rg.dot(&a.covs[k]); // Tr(Σ_{a_k} R_γ), both symmetric
            let _ = data;
            quad + tr
        }
    }
}

/// Per-feature power profile Σ_k coeff_k · s_{k,d} for view m (length D_m).
/// Used by the γ update (coeff = ⟨δ⟩) and pruning (coeff = 1).
pub fn feature_power_profile(
    state: &ModelState,
    data: &PreparedData,
    m: usize,
    coeff: &DVector<f64>,
) -> DVector<f64> {
    let vf = &state.views[m];
    match &vf.weight {
        WeightFactor::Primal(w) => {
            let d_m = w.mean.ncols();
            DVector::from_fn(d_m, |d, _| {
                (0..state.k)
                    .map(|k| {
                        coeff[k] * (w.mean[(k, d)] * w.mean[(k, d)] + w.covs[k][(d, d)])
                    })
                    .sum()
            })
        }
        WeightFactor::Dual(a) => {
            let rv_x = data.views[m].rv_x.as_ref().expect("dual view has rv_x");
            let n_rv = rv_x.nrows();
            // M = Σ_k coeff_k (⟨a_k⟩⟨a_k⟩ᵀ + Σ_{a_k}), then p_d = x̃_dᵀ M x̃_d
            let mut m_acc = nalgebra::DMatrix::zeros(n_rv, n_rv);
            linalg::note_square(n_rv);
            for k in 0..state.k {
                let a_k = a.mean.column(k);
                m_acc.ger(coeff[k], &a_k, &a_k, 1.0);
                m_acc += a.covs[k].scale(coeff[k]);
            }
            let t = &m_acc * rv_x; // Ñ×D, rectangular
            DVector::from_fn(rv_x.ncols(), |d, _| rv_x.column(d).dot(&t.column(d)))
        }
    }
}

/// E‖Z − Σ_m P(m)‖² under q: the Gaussian residual feeding β^τ and the
/// Z-likelihood ELBO term. Uses posterior means for cross-view products and
/// full second moments for the self terms.
pub fn residual_z_sq(state: &ModelState, data: &PreparedData) -> f64 {
    let n = state.n_samples() as f64;
    let tr_zz = state.z.mean.dot(&state.z.mean) + n * state.z.cov.trace();
    let h_sum = state.h_sum();
    let cross = state.z.mean.dot(&h_sum);
    let quad_means = h_sum.dot(&h_sum);
    let mut cov_corr = 0.0;
    for (m, vf) in state.views.iter().enumerate() {
        match &vf.weight {
            WeightFactor::Primal(w) => {
                let xtx = data.views[m].xt_x.as_ref().expect("primal view has XᵀX");
                for k in 0..state.k {
                    cov_corr += xtx.dot(&w.covs[k]);
                }
            }
            WeightFactor::Dual(a) => {
                let gs = data.views[m].gram_sq.as_ref().expect("dual view has Gram");
                for k in 0..state.k {
                    cov_corr += gs.dot(&a.covs[k]);
                }
            }
        }
    }
    tr_zz - 2.0 * cross + quad_means + cov_corr
}

/// E‖Y − Z Vᵀ‖² under q, feeding β^ψ and the output-likelihood ELBO term.
pub fn residual_y_sq(state: &ModelState) -> f64 {
    let sum_y2 = state.y.mean.dot(&state.y.mean) + state.y.var.sum();
    let zv = &state.z.mean * state.v.mean.transpose(); // N×C
    let cross = state.y.mean.dot(&zv);
    let quad = state.v_second_moment().dot(&state.z_second_moment());
    sum_y2 - 2.0 * cross + quad
}

/// Σ_{n,c} E[ln h(y, ξ)]: the bound-side output term of the ELBO. This is
/// the only ξ-dependent component.
pub fn elbo_h_term(state: &ModelState, targets: &nalgebra::DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..state.y.mean.nrows() {
        for c in 0..state.y.mean.ncols() {
            let xi = state.xi[(i, c)];
            let ym = state.y.mean[(i, c)];
            let y2 = ym * ym + state.y.var[(i, c)];
            acc += ln_sigmoid(xi) + ym * targets[(i, c)]
                - 0.5 * (ym + xi)
                - jaakkola_lambda(xi) * (y2 - xi * xi);
        }
    }
    acc
}

fn gamma_prior_cross(q: &GammaQ, a0: f64, b0: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..q.len() {
        let ln_mean = digamma(q.alpha[i]) - q.beta[i].ln();
        let mean = q.alpha[i] / q.beta[i];
        acc += a0 * b0.ln() - ln_gamma(a0) + (a0 - 1.0) * ln_mean - b0 * mean;
    }
    acc
}

fn gamma_entropy(q: &GammaQ) -> f64 {
    let mut acc = 0.0;
    for i in 0..q.len() {
        let (a, b) = (q.alpha[i], q.beta[i]);
        acc += a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a);
    }
    acc
}

/// The full lower bound L(q) = E_q[ln p(Θ, t, X)] − E_q[ln q(Θ)], assembled
/// term by term over every factor. Deterministic for a fixed state.
pub fn compute_elbo(state: &ModelState, data: &PreparedData) -> Result<f64> {
    let n = state.n_samples() as f64;
    let c = state.n_outputs() as f64;
    let k = state.k as f64;
    let hyper = &state.hyper;

    let tau_mean = state.tau_mean();
    let tau_ln = digamma(state.tau.alpha[0]) - state.tau.beta[0].ln();
    let psi_mean = state.psi_mean();
    let psi_ln = digamma(state.psi.alpha[0]) - state.psi.beta[0].ln();

    // E[ln p(Z | weights, τ)]
    let s_z = residual_z_sq(state, data);
    let mut elbo = -0.5 * n * k * LN_2PI + 0.5 * n * k * tau_ln - 0.5 * tau_mean * s_z;

    // E[ln p(Y | Z, V, ψ)]
    let s_y = residual_y_sq(state);
    elbo += -0.5 * n * c * LN_2PI + 0.5 * n * c * psi_ln - 0.5 * psi_mean * s_y;

    // E[ln h(Y, ξ)] — the bounded logistic output term
    elbo += elbo_h_term(state, &data.targets);

    // weight priors, per view
    for (m, vf) in state.views.iter().enumerate() {
        let d_m = vf.gamma.len() as f64;
        let delta_ln_sum = vf.delta.ln_mean().sum();
        let gamma_ln_sum = vf.gamma.ln_mean().sum();
        elbo += -0.5 * k * d_m * LN_2PI + 0.5 * d_m * delta_ln_sum + 0.5 * k * gamma_ln_sum;
        let gamma_mean = vf.gamma.mean();
        let r_gamma = if vf.weight.is_dual() {
            let rv_x = data.views[m].rv_x.as_ref().expect("dual view has rv_x");
            Some(linalg::weighted_gram(rv_x, &gamma_mean))
        } else {
            None
        };
        let delta_mean = vf.delta.mean();
        for kk in 0..state.k {
            let wfp =
                weighted_feature_power(state, data, m, kk, &gamma_mean, r_gamma.as_ref());
            elbo -= 0.5 * delta_mean[kk] * wfp;
        }
        // Gamma prior cross terms for δ^(m), γ^(m)
        elbo += gamma_prior_cross(&vf.delta, hyper.delta.0, hyper.delta.1);
        elbo += gamma_prior_cross(&vf.gamma, hyper.gamma.0, hyper.gamma.1);
    }

    // E[ln p(V | ω)]
    let omega_ln_sum = state.omega.ln_mean().sum();
    let omega_mean = state.omega.mean();
    let vsm = state.v_second_moment();
    let mut v_quad = 0.0;
    for kk in 0..state.k {
        v_quad += omega_mean[kk] * vsm[(kk, kk)];
    }
    elbo += -0.5 * c * k * LN_2PI + 0.5 * c * omega_ln_sum - 0.5 * v_quad;

    // remaining Gamma prior cross terms
    elbo += gamma_prior_cross(&state.tau, hyper.tau.0, hyper.tau.1);
    elbo += gamma_prior_cross(&state.psi, hyper.psi.0, hyper.psi.1);
    elbo += gamma_prior_cross(&state.omega, hyper.omega.0, hyper.omega.1);

    // entropies
    elbo += n * 0.5 * k * LN_2PI_E + 0.5 * n * linalg::ln_det_spd(&state.z.cov, "Σ_Z")?;
    elbo += c * 0.5 * k * LN_2PI_E + 0.5 * c * linalg::ln_det_spd(&state.v.cov, "Σ_V")?;
    elbo += 0.5 * n * c * LN_2PI_E + 0.5 * state.y.var.iter().map(|v| v.ln()).sum::<f64>();
    for vf in &state.views {
        let g = vf.weight.inner();
        let dim = g.covs[0].nrows() as f64;
        for cov in &g.covs {
            elbo += 0.5 * dim * LN_2PI_E + 0.5 * linalg::ln_det_spd(cov, "Σ_weight")?;
        }
        elbo += gamma_entropy(&vf.delta) + gamma_entropy(&vf.gamma);
    }
    elbo += gamma_entropy(&state.tau) + gamma_entropy(&state.psi) + gamma_entropy(&state.omega);

    if !elbo.is_finite() {
        return Err(BaldurError::NumericalBreakdown(
            "non-finite lower bound".into(),
        ));
    }
    Ok(elbo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sigmoid;

    #[test]
    fn bound_equality_points() {
        // ξ = 0, y = 0: h = σ(0) = 0.5, exact
        assert!((logistic_bound_h(0.0, 1, 0.0) - 0.5).abs() < 1e-15);
        // ξ = |y|: equality with the exact likelihood
        let exact = sigmoid(3.0);
        assert!((logistic_bound_h(3.0, 1, 3.0) - exact).abs() < 1e-12);
        // ξ away from |y|: strict lower bound
        assert!(logistic_bound_h(3.0, 1, 1.0) < exact);
    }

    #[test]
    fn bound_soundness_grid() {
        let mut y = -10.0;
        while y <= 10.0 {
            let mut xi = 0.0;
            while xi <= 10.0 {
                for t in [0u8, 1u8] {
                    let h = logistic_bound_h(y, t, xi);
                    let exact = (y * t as f64).exp() * sigmoid(-y);
                    assert!(
                        h <= exact + 1e-12,
                        "bound violated at y={y}, t={t}, xi={xi}: {h} > {exact}"
                    );
                }
                xi += 0.25;
            }
            let h_eq = logistic_bound_h(y, 1, y.abs());
            let exact = y.exp() * sigmoid(-y);
            assert!((h_eq - exact).abs() <= 1e-12 * exact.max(1.0));
            y += 0.25;
        }
    }
}
