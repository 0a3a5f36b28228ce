//! Approximate posterior predictive classification: latent projection of new
//! samples through the frozen weight means, the Gaussian regression head, and
//! the moderated-sigmoid class probability.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::data::{MultiViewDataset, ViewDescriptor};
use crate::engine::PreparedData;
use crate::error::{BaldurError, Result};
use crate::linalg::sigmoid;
use crate::state::{ModelState, WeightFactor};

/// Frozen weight means of one retained view.
#[derive(Debug, Clone, PartialEq)]
pub enum ViewWeights {
    /// ⟨W⟩, K × D_act.
    Primal { w_mean: DMatrix<f64> },
    /// ⟨A⟩ (Ñ × K) together with the standardized relevance vectors X̃ (Ñ × D_act).
    Dual {
        a_mean: DMatrix<f64>,
        rv_x: DMatrix<f64>,
    },
}

impl ViewWeights {
    /// Implied primal weights, D_act × K (dual views reconstruct X̃ᵀ⟨A⟩).
    pub fn implied_weights(&self) -> DMatrix<f64> {
        match self {
            ViewWeights::Primal { w_mean } => w_mean.transpose(),
            ViewWeights::Dual { a_mean, rv_x } => rv_x.transpose() * a_mean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedView {
    pub name: String,
    pub descriptor: ViewDescriptor,
    pub feature_names: Vec<String>,
    pub d_original: usize,
    /// None once a view has been pruned away entirely.
    pub weights: Option<ViewWeights>,
}

impl FittedView {
    pub fn n_active(&self) -> usize {
        self.descriptor.active_features.iter().filter(|&&a| a).count()
    }
}

/// Everything needed for prediction and reporting, immutable after fit.
#[derive(Debug, Clone)]
pub struct FittedModel {
    /// All original views in manifest order, pruned ones included.
    pub views: Vec<FittedView>,
    pub v_mean: DMatrix<f64>,
    pub v_cov: DMatrix<f64>,
    pub tau_mean: f64,
    pub psi_mean: f64,
    pub k: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Freeze the posterior into a prediction-ready model.
pub fn freeze(
    state: &ModelState,
    data: &PreparedData,
    converged: bool,
    warnings: Vec<String>,
) -> FittedModel {
    let mut views = Vec::with_capacity(data.view_order.len());
    for name in &data.view_order {
        if let Some(m) = data.views.iter().position(|v| &v.name == name) {
            let pv = &data.views[m];
            let weights = match &state.views[m].weight {
                WeightFactor::Primal(w) => ViewWeights::Primal {
                    w_mean: w.mean.clone(),
                },
                WeightFactor::Dual(a) => ViewWeights::Dual {
                    a_mean: a.mean.clone(),
                    rv_x: pv.rv_x.clone().expect("dual view has rv_x"),
                },
            };
            views.push(FittedView {
                name: pv.name.clone(),
                descriptor: pv.descriptor.clone(),
                feature_names: pv.feature_names.clone(),
                d_original: pv.d_original,
                weights: Some(weights),
            });
        } else {
            let rv = data
                .removed
                .iter()
                .find(|v| &v.name == name)
                .expect("view is active or removed");
            views.push(FittedView {
                name: rv.name.clone(),
                descriptor: rv.descriptor.clone(),
                feature_names: rv.feature_names.clone(),
                d_original: rv.d_original,
                weights: None,
            });
        }
    }
    FittedModel {
        views,
        v_mean: state.v.mean.clone(),
        v_cov: state.v.cov.clone(),
        tau_mean: state.tau_mean(),
        psi_mean: state.psi_mean(),
        k: state.k,
        converged,
        warnings,
    }
}

/// The moderated sigmoid σ(μ / √(1 + π σ²/8)) approximating the Gaussian
/// convolution of the logistic function.
pub fn moderated_sigmoid(mean: f64, var: f64) -> f64 {
    sigmoid(mean / (1.0 + PI / 8.0 * var).sqrt())
}

/// Elementwise thresholding; ties go positive.
pub fn predict_label(probabilities: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    probabilities.map(|p| if p >= threshold { 1.0 } else { 0.0 })
}

impl FittedModel {
    fn standardized_active(&self, view: &FittedView, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != view.d_original {
            return Err(BaldurError::FeatureCountMismatch {
                view: view.name.clone(),
                got: raw.ncols(),
                expected: view.d_original,
            });
        }
        let standardized = view.descriptor.standardizer.transform(raw);
        let active: Vec<usize> = view
            .descriptor
            .active_features
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(j, _)| j)
            .collect();
        Ok(standardized.select_columns(active.iter()))
    }

    /// Σ_m H(m)_{*,:} for new raw samples. Views are matched by name; views
    /// the model pruned are ignored, missing retained views are an error.
    pub fn project(&self, inputs: &[(&str, &DMatrix<f64>)]) -> Result<DMatrix<f64>> {
        let n_star = inputs
            .first()
            .map(|(_, m)| m.nrows())
            .ok_or_else(|| BaldurError::ViewMissing("(no input views given)".into()))?;
        let mut h_sum = DMatrix::zeros(n_star, self.k);
        for view in &self.views {
            let Some(weights) = &view.weights else {
                continue;
            };
            let raw = inputs
                .iter()
                .find(|(name, _)| *name == view.name)
                .map(|(_, m)| *m)
                .ok_or_else(|| BaldurError::ViewMissing(view.name.clone()))?;
            if raw.nrows() != n_star {
                return Err(BaldurError::ShapeMismatch(format!(
                    "view '{}' has {} rows, expected {n_star}",
                    view.name,
                    raw.nrows()
                )));
            }
            let x = self.standardized_active(view, raw)?;
            match weights {
                ViewWeights::Primal { w_mean } => h_sum += x * w_mean.transpose(),
                ViewWeights::Dual { a_mean, rv_x } => h_sum += (x * rv_x.transpose()) * a_mean,
            }
        }
        Ok(h_sum)
    }

    /// Predictive regression distribution: mean (Σ_m H_{*,:})⟨v_c⟩ᵀ and
    /// variance 1/⟨ψ⟩ + ⟨v_c⟩⟨v_c⟩ᵀ/⟨τ⟩ per output (constant across samples).
    pub fn predictive_regression(
        &self,
        inputs: &[(&str, &DMatrix<f64>)],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let h = self.project(inputs)?;
        let mean = &h * self.v_mean.transpose();
        let c = self.v_mean.nrows();
        let var = DMatrix::from_fn(h.nrows(), c, |_, cc| {
            let v_c = self.v_mean.row(cc);
            1.0 / self.psi_mean + v_c.dot(&v_c) / self.tau_mean
        });
        Ok((mean, var))
    }

    /// Class probabilities via the moderated sigmoid, strictly inside (0, 1).
    pub fn predict_proba(&self, inputs: &[(&str, &DMatrix<f64>)]) -> Result<DMatrix<f64>> {
        let (mean, var) = self.predictive_regression(inputs)?;
        Ok(DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, c| {
            moderated_sigmoid(mean[(i, c)], var[(i, c)])
        }))
    }

    /// Convenience wrapper matching views of a loaded dataset by name.
    pub fn predict_proba_dataset(&self, ds: &MultiViewDataset) -> Result<DMatrix<f64>> {
        let inputs: Vec<(&str, &DMatrix<f64>)> = ds
            .views
            .iter()
            .map(|v| (v.view_name.as_str(), &v.values))
            .collect();
        self.predict_proba(&inputs)
    }

    /// Total active features across views / total original features, in percent.
    pub fn percent_features_selected(&self) -> f64 {
        let total: usize = self.views.iter().map(|v| v.d_original).sum();
        if total == 0 {
            return 0.0;
        }
        let active: usize = self.views.iter().map(|v| v.n_active()).sum();
        100.0 * active as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Standardizer;
    use approx::assert_relative_eq;

    fn identity_descriptor(d: usize) -> ViewDescriptor {
        ViewDescriptor {
            s_flag: false,
            rv_indices: vec![],
            standardizer: Standardizer {
                mean: vec![0.0; d],
                std: vec![1.0; d],
            },
            active_features: vec![true; d],
        }
    }

    fn toy_model() -> FittedModel {
        // one primal view, D=2, K=2, C=1
        let w_mean = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, -0.5]);
        FittedModel {
            views: vec![FittedView {
                name: "v0".into(),
                descriptor: identity_descriptor(2),
                feature_names: vec!["a".into(), "b".into()],
                d_original: 2,
                weights: Some(ViewWeights::Primal { w_mean }),
            }],
            v_mean: DMatrix::from_row_slice(1, 2, &[2.0, 1.0]),
            v_cov: DMatrix::identity(2, 2),
            tau_mean: 4.0,
            psi_mean: 2.0,
            k: 2,
            converged: true,
            warnings: vec![],
        }
    }

    #[test]
    fn projection_matches_weight_product() {
        let model = toy_model();
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 2.0]);
        let h = model.project(&[("v0", &x)]).unwrap();
        // x·Wᵀ = [3·1+2·0, 3·0.5+2·(−0.5)] = [3, 0.5]
        assert_relative_eq!(h[(0, 0)], 3.0);
        assert_relative_eq!(h[(0, 1)], 0.5);
    }

    #[test]
    fn zero_input_zero_projection() {
        let model = toy_model();
        let x = DMatrix::zeros(2, 2);
        let h = model.project(&[("v0", &x)]).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pruned_view_in_input_ignored() {
        let mut model = toy_model();
        model.views.push(FittedView {
            name: "gone".into(),
            descriptor: ViewDescriptor {
                s_flag: false,
                rv_indices: vec![],
                standardizer: Standardizer {
                    mean: vec![0.0; 3],
                    std: vec![1.0; 3],
                },
                active_features: vec![false; 3],
            },
            feature_names: vec!["x".into(), "y".into(), "z".into()],
            d_original: 3,
            weights: None,
        });
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let junk = DMatrix::from_row_slice(1, 3, &[9.0, 9.0, 9.0]);
        let with_junk = model.project(&[("v0", &x), ("gone", &junk)]).unwrap();
        let without = model.project(&[("v0", &x)]).unwrap();
        assert_eq!(with_junk, without);
    }

    #[test]
    fn missing_view_and_bad_width_error() {
        let model = toy_model();
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        assert!(matches!(
            model.project(&[("other", &x)]),
            Err(BaldurError::ViewMissing(_))
        ));
        assert!(matches!(
            model.project(&[("v0", &x)]),
            Err(BaldurError::FeatureCountMismatch { .. })
        ));
    }

    #[test]
    fn regression_zero_head() {
        let mut model = toy_model();
        model.v_mean.fill(0.0);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let (mean, var) = model.predictive_regression(&[("v0", &x)]).unwrap();
        assert_eq!(mean[(0, 0)], 0.0);
        assert_relative_eq!(var[(0, 0)], 1.0 / model.psi_mean);
    }

    #[test]
    fn regression_variance_formula() {
        let model = toy_model();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let (_, var) = model.predictive_regression(&[("v0", &x)]).unwrap();
        let expect = 1.0 / 2.0 + (2.0f64 * 2.0 + 1.0) / 4.0;
        assert_relative_eq!(var[(0, 0)], expect);
        // constant across samples
        assert_relative_eq!(var[(1, 0)], expect);
    }

    #[test]
    fn moderated_sigmoid_examples() {
        assert_relative_eq!(moderated_sigmoid(0.0, 5.0), 0.5);
        assert_relative_eq!(moderated_sigmoid(2.0, 0.0), 0.8807970779778823, epsilon = 1e-15);
    }

    #[test]
    fn probability_monotonicity() {
        // strictly increasing in the mean at fixed variance
        let mut prev = 0.0;
        for i in 0..50 {
            let mean = -5.0 + 0.2 * i as f64;
            let p = moderated_sigmoid(mean, 3.0);
            assert!(p > prev);
            prev = p;
        }
        // |p − ½| strictly decreasing in the variance at fixed nonzero mean
        let mut prev_gap = f64::INFINITY;
        for i in 0..40 {
            let var = 0.1 + 0.25 * i as f64;
            let gap = (moderated_sigmoid(1.5, var) - 0.5).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn label_threshold_rules() {
        let probs = DMatrix::from_row_slice(3, 1, &[0.7, 0.5, 0.49]);
        let labels = predict_label(&probs, 0.5);
        assert_eq!(labels[(0, 0)], 1.0);
        assert_eq!(labels[(1, 0)], 1.0); // tie goes positive
        assert_eq!(labels[(2, 0)], 0.0);
    }

    #[test]
    fn percent_features_arithmetic() {
        let mut model = toy_model();
        assert_relative_eq!(model.percent_features_selected(), 100.0);
        model.views[0].descriptor.active_features[1] = false;
        assert_relative_eq!(model.percent_features_selected(), 50.0);
    }
}
