//! Variational factors and state initialization. Every posterior factor of
//! the mean-field approximation lives here with shape and positivity
//! guarantees; the update rules themselves are in the engine.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BaldurError, Result};
use crate::linalg;

/// Gamma posterior factor(s): q(x_i) = Γ(α_i, β_i), mean α_i/β_i.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaQ {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl GammaQ {
    pub fn constant(len: usize, alpha: f64, beta: f64) -> Self {
        GammaQ {
            alpha: DVector::from_element(len, alpha),
            beta: DVector::from_element(len, beta),
        }
    }

    /// ⟨x⟩ = α/β elementwise.
    pub fn mean(&self) -> DVector<f64> {
        self.alpha.component_div(&self.beta)
    }

    pub fn mean_at(&self, i: usize) -> f64 {
        self.alpha[i] / self.beta[i]
    }

    /// ⟨ln x⟩ = ψ₀(α) − ln β elementwise.
    pub fn ln_mean(&self) -> DVector<f64> {
        DVector::from_fn(self.alpha.len(), |i, _| {
            statrs::function::gamma::digamma(self.alpha[i]) - self.beta[i].ln()
        })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|&a| a <= 0.0) || self.beta.iter().any(|&b| b <= 0.0) {
            return Err(BaldurError::NumericalBreakdown(
                "Gamma factor with non-positive parameter".into(),
            ));
        }
        Ok(())
    }
}

/// Convenience wrapper for the spec-level `gamma_mean` operation.
pub fn gamma_mean(g: &GammaQ) -> DVector<f64> {
    g.mean()
}

/// Gaussian factor over matrix rows with one shared covariance: used for Z
/// (N×K mean, K×K cov) and V (C×K mean, K×K cov).
#[derive(Debug, Clone, PartialEq)]
pub struct SharedCovGaussian {
    pub mean: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

impl SharedCovGaussian {
    /// ⟨MᵀM⟩ = meanᵀ·mean + n_rows·Σ.
    pub fn second_moment(&self) -> DMatrix<f64> {
        linalg::gram_tt(&self.mean) + self.cov.scale(self.mean.nrows() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        check_symmetric_pd(&self.cov, "shared covariance")
    }
}

/// Per-row Gaussian factors with individual covariances: W^(m) stores rows
/// w_k (K×D mean, K covariances of D×D); the dual A^(m) stores columns a_k
/// (Ñ×K mean, K covariances of Ñ×Ñ).
#[derive(Debug, Clone, PartialEq)]
pub struct PerFactorGaussian {
    pub mean: DMatrix<f64>,
    pub covs: Vec<DMatrix<f64>>,
}

impl PerFactorGaussian {
    /// ⟨v vᵀ⟩ = m mᵀ + Σ for the k-th factor vector (row of W or column of A).
    pub fn factor_second_moment(&self, k: usize, row_major: bool) -> DMatrix<f64> {
        let v = if row_major {
            self.mean.row(k).transpose()
        } else {
            self.mean.column(k).into_owned()
        };
        linalg::note_square(v.len());
        &v * v.transpose() + &self.covs[k]
    }

    pub fn validate(&self) -> Result<()> {
        for cov in &self.covs {
            check_symmetric_pd(cov, "per-factor covariance")?;
        }
        Ok(())
    }
}

/// Per-view weight factor: exactly one of W (primal) or A (dual).
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFactor {
    /// mean K×D (rows w_k), covs\[k\] D×D
    Primal(PerFactorGaussian),
    /// mean Ñ×K (columns a_k), covs\[k\] Ñ×Ñ
    Dual(PerFactorGaussian),
}

impl WeightFactor {
    pub fn is_dual(&self) -> bool {
        matches!(self, WeightFactor::Dual(_))
    }

    pub fn inner(&self) -> &PerFactorGaussian {
        match self {
            WeightFactor::Primal(g) | WeightFactor::Dual(g) => g,
        }
    }

    pub fn inner_mut(&mut self) -> &mut PerFactorGaussian {
        match self {
            WeightFactor::Primal(g) | WeightFactor::Dual(g) => g,
        }
    }
}

/// Diagonal per-row Gaussian for the soft outputs Y: mean N×C, var N×C.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianRows {
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

impl DiagGaussianRows {
    /// ⟨y²⟩ elementwise.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mut out = self.mean.component_mul(&self.mean);
        out += &self.var;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.var.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(BaldurError::NumericalBreakdown(
                "non-positive output variance".into(),
            ));
        }
        Ok(())
    }
}

/// Hyperprior (α₀, β₀) pairs for every Gamma prior in the model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperPriors {
    pub tau: (f64, f64),
    pub psi: (f64, f64),
    pub omega: (f64, f64),
    pub delta: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for HyperPriors {
    fn default() -> Self {
        let broad = (1e-14, 1e-14);
        HyperPriors {
            tau: broad,
            psi: broad,
            omega: broad,
            delta: broad,
            gamma: broad,
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        for (a, b) in [self.tau, self.psi, self.omega, self.delta, self.gamma] {
            if a <= 0.0 || b <= 0.0 {
                return Err(BaldurError::InvalidConfig(
                    "hyperpriors must be strictly positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Factors owned by one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFactors {
    pub weight: WeightFactor,
    /// Per-factor ARD precisions, length K.
    pub delta: GammaQ,
    /// Per-feature ARD precisions, length D_m (active features).
    pub gamma: GammaQ,
    /// Cached latent projection H(m) = X⟨W⟩ᵀ or X X̃ᵀ⟨A⟩, N×K.
    pub h: DMatrix<f64>,
}

/// Shape of one view's weight factor at initialization time.
#[derive(Debug, Clone, Copy)]
pub enum WeightShape {
    Primal { d: usize },
    Dual { n_rv: usize, d: usize },
}

/// The full variational state of Eq.-style factorized posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub views: Vec<ViewFactors>,
    pub z: SharedCovGaussian,
    pub v: SharedCovGaussian,
    pub y: DiagGaussianRows,
    /// Variational centers ξ, N×C, all ≥ 0.
    pub xi: DMatrix<f64>,
    pub tau: GammaQ,
    pub psi: GammaQ,
    pub omega: GammaQ,
    pub k: usize,
    pub hyper: HyperPriors,
}

impl ModelState {
    pub fn n_samples(&self) -> usize {
        self.z.mean.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.mean.ncols()
    }

    pub fn tau_mean(&self) -> f64 {
        self.tau.mean_at(0)
    }

    pub fn psi_mean(&self) -> f64 {
        self.psi.mean_at(0)
    }

    /// ⟨VᵀV⟩ = ⟨V⟩ᵀ⟨V⟩ + C·Σ_V (K×K).
    pub fn v_second_moment(&self) -> DMatrix<f64> {
        self.v.second_moment()
    }

    /// ⟨ZᵀZ⟩ = ⟨Z⟩ᵀ⟨Z⟩ + N·Σ_Z (K×K).
    pub fn z_second_moment(&self) -> DMatrix<f64> {
        self.z.second_moment()
    }

    /// Sum of cached per-view projections, N×K.
    pub fn h_sum(&self) -> DMatrix<f64> {
        let mut sum = DMatrix::zeros(self.n_samples(), self.k);
        for vf in &self.views {
            sum += &vf.h;
        }
        sum
    }

    pub fn validate(&self) -> Result<()> {
        self.tau.validate()?;
        self.psi.validate()?;
        self.omega.validate()?;
        self.z.validate()?;
        self.v.validate()?;
        self.y.validate()?;
        if self.xi.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(BaldurError::NumericalBreakdown("negative ξ entry".into()));
        }
        for vf in &self.views {
            vf.delta.validate()?;
            vf.gamma.validate()?;
            vf.weight.inner().validate()?;
        }
        if self.omega.len() != self.k || self.z.mean.ncols() != self.k {
            return Err(BaldurError::ShapeMismatch(
                "K-indexed structures disagree on K".into(),
            ));
        }
        Ok(())
    }
}

fn check_symmetric_pd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let scale = m[(i, i)].abs().max(m[(j, j)].abs()).max(1.0);
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(BaldurError::NumericalBreakdown(format!(
                    "{what} not symmetric at ({i},{j})"
                )));
            }
        }
    }
    linalg::invert_spd(m, what).map(|_| ())
}

/// Initialize the variational state: W/A means ~ N(0, 1/D) resp. N(0, 1/Ñ),
/// V ~ N(0,1), all Gamma factors at their prior values, ξ = 1,
/// Y-mean = 2t − 1. Deterministic per seed.
///
/// The Z mean is drawn as unit noise around the generative projection of the
/// initial weights (the caller adds Σ_m H(m) before the first sweep). Both
/// choices keep the fit out of the all-zero optimum: a purely random Z is
/// X-unpredictable, so the first weight fit comes out tiny and the ARD
/// precisions lock everything to zero; a zero V cuts the only path the class
/// signal has into the latent space.
pub fn init_state(
    targets: &DMatrix<f64>,
    shapes: &[WeightShape],
    k_init: usize,
    hyper: HyperPriors,
    seed: u64,
) -> ModelState {
    assert!(k_init >= 1, "K_init must be ≥ 1");
    let n = targets.nrows();
    let c = targets.ncols();
    let k = k_init;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize, std: f64| {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let u: f64 = StandardNormal.sample(&mut rng);
                m[(i, j)] = u * std;
            }
        }
        m
    };

    let z_mean = draw(n, k, 1.0);
    let mut views = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let (weight, d_m) = match *shape {
            WeightShape::Primal { d } => {
                let mean = draw(k, d, (1.0 / d as f64).sqrt());
                let covs = (0..k).map(|_| linalg::identity(d)).collect();
                (WeightFactor::Primal(PerFactorGaussian { mean, covs }), d)
            }
            WeightShape::Dual { n_rv, d } => {
                let mean = draw(n_rv, k, (1.0 / n_rv as f64).sqrt());
                let covs = (0..k).map(|_| linalg::identity(n_rv)).collect();
                (WeightFactor::Dual(PerFactorGaussian { mean, covs }), d)
            }
        };
        views.push(ViewFactors {
            weight,
            delta: GammaQ::constant(k, hyper.delta.0, hyper.delta.1),
            gamma: GammaQ::constant(d_m, hyper.gamma.0, hyper.gamma.1),
            h: DMatrix::zeros(n, k),
        });
    }

    let v_mean = draw(c, k, (1.0 / k as f64).sqrt());
    let psi_mean = hyper.psi.0 / hyper.psi.1;
    let xi = DMatrix::from_element(n, c, 1.0);
    let y_var = DMatrix::from_element(n, c, 1.0 / (psi_mean + 2.0 * linalg::jaakkola_lambda(1.0)));
    let y_mean = DMatrix::from_fn(n, c, |i, j| 2.0 * targets[(i, j)] - 1.0);

    ModelState {
        views,
        z: SharedCovGaussian {
            mean: z_mean,
            cov: linalg::identity(k),
        },
        v: SharedCovGaussian {
            mean: v_mean,
            cov: linalg::identity(k),
        },
        y: DiagGaussianRows {
            mean: y_mean,
            var: y_var,
        },
        xi,
        tau: GammaQ::constant(1, hyper.tau.0, hyper.tau.1),
        psi: GammaQ::constant(1, hyper.psi.0, hyper.psi.1),
        omega: GammaQ::constant(k, hyper.omega.0, hyper.omega.1),
        k,
        hyper,
    }
}
