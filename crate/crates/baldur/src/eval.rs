//! Classification metrics, feature-selection reporting and the
//! cross-validation harness.

use serde::Serialize;

use crate::data::{split_folds, MultiViewDataset};
use crate::engine::{fit, FitConfig};
use crate::error::{BaldurError, Result};
use crate::predict::FittedModel;

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when only one class is present (mirrors blank AUC cells).
    pub auc: Option<f64>,
    pub percent_features_selected: Option<f64>,
}

/// AUC via the rank statistic with tied ranks averaged. None when a class is
/// missing.
pub fn auc_rank(y_true: &[u8], y_prob: &[f64]) -> Option<f64> {
    let n = y_true.len();
    let n_pos = y_true.iter().filter(|&&t| t == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y_prob[a].partial_cmp(&y_prob[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && y_prob[order[j + 1]] == y_prob[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = (0..n).filter(|&i| y_true[i] == 1).map(|i| ranks[i]).sum();
    Some((rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Standard classification metrics at the given threshold (ties positive).
pub fn compute_metrics(y_true: &[u8], y_prob: &[f64], threshold: f64) -> Result<MetricsReport> {
    if y_true.len() != y_prob.len() {
        return Err(BaldurError::ShapeMismatch(format!(
            "{} labels vs {} probabilities",
            y_true.len(),
            y_prob.len()
        )));
    }
    if y_true.is_empty() {
        return Err(BaldurError::ShapeMismatch("empty metric input".into()));
    }
    let (mut tp, mut tn, mut fp, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_prob) {
        let pred = p >= threshold;
        match (t == 1, pred) {
            (true, true) => tp += 1,
            (true, false) => fne += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let n = y_true.len() as f64;
    let accuracy = (tp + tn) as f64 / n;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fne > 0 {
        tp as f64 / (tp + fne) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    // balanced accuracy = mean per-class recall over classes present
    let mut class_recalls = Vec::new();
    if tp + fne > 0 {
        class_recalls.push(tp as f64 / (tp + fne) as f64);
    }
    if tn + fp > 0 {
        class_recalls.push(tn as f64 / (tn + fp) as f64);
    }
    let balanced_accuracy = class_recalls.iter().sum::<f64>() / class_recalls.len() as f64;
    Ok(MetricsReport {
        accuracy,
        balanced_accuracy,
        precision,
        recall,
        f1,
        auc: auc_rank(y_true, y_prob),
        percent_features_selected: None,
    })
}

/// One feature's weight magnitudes in a report.
#[derive(Debug, Clone, Serialize)]
pub struct FeatureReportRow {
    pub view: String,
    pub feature: String,
    pub total_abs_weight: f64,
    pub per_factor: Vec<f64>,
}

/// Per-view feature ranking by total absolute implied weight. Dual views
/// report |X̃ᵀ⟨A⟩|; features with exactly zero weight are omitted.
pub fn feature_report(model: &FittedModel) -> Vec<FeatureReportRow> {
    let mut rows = Vec::new();
    for view in &model.views {
        let Some(weights) = &view.weights else {
            continue;
        };
        let implied = weights.implied_weights(); // D_act × K
        let active: Vec<usize> = view
            .descriptor
            .active_features
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(j, _)| j)
            .collect();
        let mut view_rows: Vec<FeatureReportRow> = Vec::new();
        for (row_idx, &orig) in active.iter().enumerate() {
            let per_factor: Vec<f64> = (0..implied.ncols())
                .map(|k| implied[(row_idx, k)].abs())
                .collect();
            let total: f64 = per_factor.iter().sum();
            if total > 0.0 {
                view_rows.push(FeatureReportRow {
                    view: view.name.clone(),
                    feature: view.feature_names[orig].clone(),
                    total_abs_weight: total,
                    per_factor,
                });
            }
        }
        view_rows.sort_by(|a, b| b.total_abs_weight.partial_cmp(&a.total_abs_weight).unwrap());
        rows.extend(view_rows);
    }
    rows
}

/// Spec-level wrapper; the fitted model carries the original feature totals.
pub fn percent_features_selected(model: &FittedModel) -> f64 {
    model.percent_features_selected()
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldOutcome>,
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

fn aggregate(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Outer cross-validation: per fold, refit standardizers and the model on the
/// training rows only, evaluate on the held-out rows, then aggregate
/// mean ± sample std across folds.
pub fn cross_validate(
    dataset: &MultiViewDataset,
    config: &FitConfig,
    n_folds: usize,
    seed: u64,
    threshold: f64,
) -> Result<CvReport> {
    let folds = split_folds(&dataset.targets, n_folds, seed, true)?;
    let mut outcomes = Vec::with_capacity(folds.len());
    for (fold_idx, (train, test)) in folds.iter().enumerate() {
        let run = || -> Result<MetricsReport> {
            let train_ds = dataset.subset(train);
            let (model, _) = fit(&train_ds, config)?;
            let test_ds = dataset.subset(test);
            let probs = model.predict_proba_dataset(&test_ds)?;
            let mut y_true = Vec::new();
            let mut y_prob = Vec::new();
            for c in 0..test_ds.targets.n_outputs() {
                for i in 0..test_ds.n_samples() {
                    y_true.push(test_ds.targets.values[(i, c)] as u8);
                    y_prob.push(probs[(i, c)]);
                }
            }
            let mut metrics = compute_metrics(&y_true, &y_prob, threshold)?;
            metrics.percent_features_selected = Some(model.percent_features_selected());
            Ok(metrics)
        };
        let metrics = run().map_err(|e| BaldurError::Fold {
            fold: fold_idx,
            source: Box::new(e),
        })?;
        outcomes.push(FoldOutcome {
            fold: fold_idx,
            metrics,
        });
    }

    let collect = |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> {
        outcomes.iter().map(|o| f(&o.metrics)).collect()
    };
    let acc = aggregate(&collect(&|m| m.accuracy));
    let bal = aggregate(&collect(&|m| m.balanced_accuracy));
    let prec = aggregate(&collect(&|m| m.precision));
    let rec = aggregate(&collect(&|m| m.recall));
    let f1 = aggregate(&collect(&|m| m.f1));
    let aucs: Vec<f64> = outcomes.iter().filter_map(|o| o.metrics.auc).collect();
    let auc = if aucs.is_empty() {
        (None, None)
    } else {
        let (m, s) = aggregate(&aucs);
        (Some(m), Some(s))
    };
    let pct: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.metrics.percent_features_selected)
        .collect();
    let (pct_mean, pct_std) = aggregate(&pct);

    Ok(CvReport {
        mean: MetricsReport {
            accuracy: acc.0,
            balanced_accuracy: bal.0,
            precision: prec.0,
            recall: rec.0,
            f1: f1.0,
            auc: auc.0,
            percent_features_selected: Some(pct_mean),
        },
        std: MetricsReport {
            accuracy: acc.1,
            balanced_accuracy: bal.1,
            precision: prec.1,
            recall: rec.1,
            f1: f1.1,
            auc: auc.1,
            percent_features_selected: Some(pct_std),
        },
        folds: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_separation() {
        let m = compute_metrics(&[1, 1, 0, 0], &[0.9, 0.8, 0.2, 0.1], 0.5).unwrap();
        assert_relative_eq!(m.accuracy, 1.0);
        assert_relative_eq!(m.auc.unwrap(), 1.0);
        assert_relative_eq!(m.f1, 1.0);
    }

    #[test]
    fn constant_scores_give_half_auc() {
        let m = compute_metrics(&[1, 0, 1, 0, 1], &[0.57; 5], 0.5).unwrap();
        assert_relative_eq!(m.auc.unwrap(), 0.5);
    }

    #[test]
    fn all_positive_classifier_signature() {
        // 57% positive data, predict everything positive: the chance-level row
        let mut y_true = vec![1u8; 57];
        y_true.extend(vec![0u8; 43]);
        let y_prob = vec![0.99; 100];
        let m = compute_metrics(&y_true, &y_prob, 0.5).unwrap();
        assert_relative_eq!(m.recall, 1.0);
        assert_relative_eq!(m.accuracy, 0.57);
        assert_relative_eq!(m.balanced_accuracy, 0.5);
        assert_relative_eq!(m.precision, 0.57);
    }

    #[test]
    fn single_class_auc_absent() {
        let m = compute_metrics(&[1, 1, 1], &[0.2, 0.6, 0.9], 0.5).unwrap();
        assert!(m.auc.is_none());
    }

    #[test]
    fn matches_exhaustive_confusion_enumeration() {
        // all 2^4 × 2^4 truth/prediction patterns of length 4
        for t_bits in 0..16u32 {
            for p_bits in 0..16u32 {
                let y_true: Vec<u8> = (0..4).map(|i| ((t_bits >> i) & 1) as u8).collect();
                let y_prob: Vec<f64> = (0..4)
                    .map(|i| if (p_bits >> i) & 1 == 1 { 0.9 } else { 0.1 })
                    .collect();
                let m = compute_metrics(&y_true, &y_prob, 0.5).unwrap();
                let tp = (0..4).filter(|&i| y_true[i] == 1 && y_prob[i] >= 0.5).count() as f64;
                let tn = (0..4).filter(|&i| y_true[i] == 0 && y_prob[i] < 0.5).count() as f64;
                let fp = (0..4).filter(|&i| y_true[i] == 0 && y_prob[i] >= 0.5).count() as f64;
                let fne = (0..4).filter(|&i| y_true[i] == 1 && y_prob[i] < 0.5).count() as f64;
                assert_relative_eq!(m.accuracy, (tp + tn) / 4.0);
                let exp_prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let exp_rec = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
                assert_relative_eq!(m.precision, exp_prec);
                assert_relative_eq!(m.recall, exp_rec);
                let exp_f1 = if exp_prec + exp_rec > 0.0 {
                    2.0 * exp_prec * exp_rec / (exp_prec + exp_rec)
                } else {
                    0.0
                };
                assert_relative_eq!(m.f1, exp_f1);
            }
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let y_true = [1u8, 0, 1, 1, 0, 0, 1, 0];
        let y_prob = [0.9, 0.3, 0.7, 0.6, 0.2, 0.5, 0.55, 0.4];
        let base = auc_rank(&y_true, &y_prob).unwrap();
        let cubed: Vec<f64> = y_prob.iter().map(|p| p.powi(3)).collect();
        let transformed = auc_rank(&y_true, &cubed).unwrap();
        assert_relative_eq!(base, transformed, epsilon = 1e-14);
    }
}
