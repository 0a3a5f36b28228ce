//! Forward sampling from the generative model: sparse per-view weights, a
//! shared latent representation, a linear regression head and Bernoulli
//! labels through the logistic link.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{MultiViewDataset, TargetMatrix, ViewMatrix};
use crate::error::{BaldurError, Result};
use crate::linalg::sigmoid;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    /// Feature count per view.
    pub view_dims: Vec<usize>,
    /// Relevant (nonzero-weight) feature count per view.
    pub relevant: Vec<usize>,
    pub k_true: usize,
    pub c: usize,
    pub tau_true: f64,
    pub psi_true: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// K×D weight matrix per view; irrelevant columns are exactly zero.
    pub w_true: Vec<DMatrix<f64>>,
    pub relevant_masks: Vec<Vec<bool>>,
    pub v_true: DMatrix<f64>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<(MultiViewDataset, SynthTruth)> {
    if cfg.n < 1 || cfg.k_true < 1 || cfg.c < 1 || cfg.view_dims.is_empty() {
        return Err(BaldurError::InvalidConfig("all counts must be ≥ 1".into()));
    }
    if cfg.view_dims.len() != cfg.relevant.len() {
        return Err(BaldurError::InvalidConfig(
            "view_dims and relevant must have equal length".into(),
        ));
    }
    for (m, (&d, &r)) in cfg.view_dims.iter().zip(&cfg.relevant).enumerate() {
        if d < 1 {
            return Err(BaldurError::InvalidConfig(format!("view {m} has no features")));
        }
        if r > d {
            return Err(BaldurError::InvalidConfig(format!(
                "view {m}: relevant count {r} exceeds {d} features"
            )));
        }
    }
    if !(cfg.tau_true > 0.0) || !(cfg.psi_true > 0.0) {
        return Err(BaldurError::InvalidConfig(
            "noise precisions must be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| {
            let u: f64 = StandardNormal.sample(&mut rng);
            u
        })
    };
    // planted coefficients are kept away from zero so a feature marked
    // relevant is genuinely informative
    fn away_from_zero(u: f64) -> f64 {
        u + 0.75 * u.signum()
    }

    let mut views = Vec::new();
    let mut w_true = Vec::new();
    let mut relevant_masks = Vec::new();
    let mut z = normal(cfg.n, cfg.k_true).scale(cfg.tau_true.powf(-0.5));
    for (m, (&d, &r)) in cfg.view_dims.iter().zip(&cfg.relevant).enumerate() {
        let x = {
            let mut m2 = DMatrix::zeros(cfg.n, d);
            for i in 0..cfg.n {
                for j in 0..d {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    m2[(i, j)] = u;
                }
            }
            m2
        };
        let mut indices: Vec<usize> = (0..d).collect();
        indices.shuffle(&mut rng);
        let mut chosen: Vec<usize> = indices.into_iter().take(r).collect();
        chosen.sort_unstable();
        let mut mask = vec![false; d];
        let mut w = DMatrix::zeros(cfg.k_true, d);
        for &j in &chosen {
            mask[j] = true;
            for k in 0..cfg.k_true {
                let u: f64 = StandardNormal.sample(&mut rng);
                w[(k, j)] = away_from_zero(u);
            }
        }
        z += &x * w.transpose();
        views.push(ViewMatrix {
            values: x,
            feature_names: (0..d).map(|j| format!("v{m}_f{j}")).collect(),
            view_name: format!("view{m}"),
        });
        w_true.push(w);
        relevant_masks.push(mask);
    }

    let v_true = {
        let mut v = DMatrix::zeros(cfg.c, cfg.k_true);
        for i in 0..cfg.c {
            for j in 0..cfg.k_true {
                let u: f64 = StandardNormal.sample(&mut rng);
                v[(i, j)] = away_from_zero(u);
            }
        }
        v
    };
    let mut y = &z * v_true.transpose();
    for i in 0..cfg.n {
        for c in 0..cfg.c {
            let u: f64 = StandardNormal.sample(&mut rng);
            y[(i, c)] += u * cfg.psi_true.powf(-0.5);
        }
    }
    let targets = DMatrix::from_fn(cfg.n, cfg.c, |i, c| {
        let u: f64 = rand::Rng::gen(&mut rng);
        if u < sigmoid(y[(i, c)]) {
            1.0
        } else {
            0.0
        }
    });
    for c in 0..cfg.c {
        let pos = (0..cfg.n).filter(|&i| targets[(i, c)] == 1.0).count();
        if pos == 0 || pos == cfg.n {
            return Err(BaldurError::DegenerateLabels {
                col: c,
                seed: cfg.seed,
            });
        }
    }

    let dataset = MultiViewDataset::new(views, TargetMatrix { values: targets })?;
    Ok((
        dataset,
        SynthTruth {
            w_true,
            relevant_masks,
            v_true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> SynthConfig {
        SynthConfig {
            n: 60,
            view_dims: vec![6, 4],
            relevant: vec![3, 2],
            k_true: 2,
            c: 1,
            tau_true: 10.0,
            psi_true: 10.0,
            seed: 1,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = base_config();
        let (a, ta) = synth_generate(&cfg).unwrap();
        let (b, tb) = synth_generate(&cfg).unwrap();
        assert_eq!(a.views[0].values, b.views[0].values);
        assert_eq!(a.targets.values, b.targets.values);
        assert_eq!(ta.w_true[0], tb.w_true[0]);
    }

    #[test]
    fn irrelevant_weights_are_exactly_zero() {
        let cfg = base_config();
        let (_, truth) = synth_generate(&cfg).unwrap();
        for (m, (w, mask)) in truth.w_true.iter().zip(&truth.relevant_masks).enumerate() {
            assert_eq!(mask.iter().filter(|&&r| r).count(), cfg.relevant[m]);
            for (j, &rel) in mask.iter().enumerate() {
                let col_power: f64 = (0..w.nrows()).map(|k| w[(k, j)].abs()).sum();
                if rel {
                    assert!(col_power > 0.0);
                } else {
                    assert_eq!(col_power, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_relevant_labels_are_noise() {
        let mut cfg = base_config();
        cfg.relevant = vec![0, 0];
        cfg.n = 200;
        let (ds, truth) = synth_generate(&cfg).unwrap();
        assert!(truth.w_true.iter().all(|w| w.iter().all(|&x| x == 0.0)));
        let pos = (0..ds.n_samples())
            .filter(|&i| ds.targets.values[(i, 0)] == 1.0)
            .count();
        assert!(pos > 0 && pos < ds.n_samples());
    }

    #[test]
    fn noiseless_limit_is_linear_rule() {
        let mut cfg = base_config();
        cfg.tau_true = 1e12;
        cfg.psi_true = 1e12;
        cfg.n = 100;
        let (ds, truth) = synth_generate(&cfg).unwrap();
        // recompute the deterministic decision rule from the ground truth
        let mut z = DMatrix::zeros(cfg.n, cfg.k_true);
        for (view, w) in ds.views.iter().zip(&truth.w_true) {
            z += &view.values * w.transpose();
        }
        let y = z * truth.v_true.transpose();
        let mut agree = 0;
        for i in 0..cfg.n {
            let hard = if y[(i, 0)] > 0.0 { 1.0 } else { 0.0 };
            if (ds.targets.values[(i, 0)] - hard).abs() < 0.5 {
                agree += 1;
            }
        }
        // labels follow the deterministic linear rule except where σ(y) ≈ ½
        assert!(agree as f64 >= 0.9 * cfg.n as f64);
    }
}
