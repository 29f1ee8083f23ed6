//! Finite-sum objectives F(w) = (1/n) Σ f_i(w), their sparse per-sample
//! gradients and supports, and the problem constants (L, μ, N, w*).

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::vector::{DenseVector, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// log(1 + exp(-y<x,w>)) + regularizer
    LogisticL2,
    /// (<x,w> - y)^2 + regularizer
    LeastSquaresL2,
    /// f_1(w) = w^2 / 2, f_2(w) = w on a single coordinate.
    ToyQuadratic,
}

/// How the L2 term is split across samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationMode {
    /// Sample `i` carries (λ/2) Σ_{j ∈ supp(x_i)} (n / n_j) w_j², so gradients
    /// stay as sparse as the features and the average is still (λ/2)‖w‖².
    #[default]
    SupportWeighted,
    /// Every sample carries the full (λ/2)‖w‖²; supports are all of [0, d).
    Dense,
}

#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    dataset: Option<Dataset>,
    lambda: f64,
    mode: RegularizationMode,
    /// Per-coordinate weight λ·n/n_j (zero where n_j = 0).
    reg_weights: Vec<f64>,
    full_support: Vec<usize>,
}

const TOY_N: usize = 2;

impl Objective {
    pub fn logistic(dataset: Dataset, lambda: f64, mode: RegularizationMode) -> Result<Self> {
        Self::with_data(ObjectiveKind::LogisticL2, dataset, lambda, mode)
    }

    pub fn least_squares(dataset: Dataset, lambda: f64, mode: RegularizationMode) -> Result<Self> {
        Self::with_data(ObjectiveKind::LeastSquaresL2, dataset, lambda, mode)
    }

    pub fn toy_quadratic() -> Self {
        Objective {
            kind: ObjectiveKind::ToyQuadratic,
            dataset: None,
            lambda: 0.0,
            mode: RegularizationMode::SupportWeighted,
            reg_weights: vec![0.0],
            full_support: vec![0],
        }
    }

    fn with_data(
        kind: ObjectiveKind,
        dataset: Dataset,
        lambda: f64,
        mode: RegularizationMode,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let n = dataset.len() as f64;
        let reg_weights = dataset
            .coordinate_counts()
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { lambda * n / c as f64 })
            .collect();
        let full_support = (0..dataset.dimension()).collect();
        Ok(Objective { kind, dataset: Some(dataset), lambda, mode, reg_weights, full_support })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn regularization_mode(&self) -> RegularizationMode {
        self.mode
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        self.dataset.as_ref()
    }

    /// Number of component functions.
    pub fn n(&self) -> usize {
        self.dataset.as_ref().map_or(TOY_N, Dataset::len)
    }

    pub fn dimension(&self) -> usize {
        self.dataset.as_ref().map_or(1, Dataset::dimension)
    }

    /// All component functions are convex.
    pub fn convex_realizations(&self) -> bool {
        true
    }

    fn check_index(&self, i: usize) -> Result<()> {
        let n = self.n();
        if i >= n {
            return Err(Error::SampleOutOfRange { index: i, n });
        }
        Ok(())
    }

    /// The fixed support D_ξ of sample `i`'s gradient, ascending.
    pub fn sample_support(&self, i: usize) -> Result<&[usize]> {
        self.check_index(i)?;
        Ok(self.support_unchecked(i))
    }

    pub(crate) fn support_unchecked(&self, i: usize) -> &[usize] {
        match (&self.dataset, self.mode) {
            (Some(ds), RegularizationMode::SupportWeighted) => ds.samples()[i].features.indices(),
            _ => &self.full_support,
        }
    }

    /// Loss derivative with respect to the margin <x, w>.
    fn loss_derivative(&self, margin: f64, y: f64) -> f64 {
        match self.kind {
            ObjectiveKind::LogisticL2 => -y * sigmoid(-y * margin),
            ObjectiveKind::LeastSquaresL2 => 2.0 * (margin - y),
            ObjectiveKind::ToyQuadratic => unreachable!("toy objective has no dataset"),
        }
    }

    fn loss_value(&self, margin: f64, y: f64) -> f64 {
        match self.kind {
            ObjectiveKind::LogisticL2 => softplus(-y * margin),
            ObjectiveKind::LeastSquaresL2 => (margin - y) * (margin - y),
            ObjectiveKind::ToyQuadratic => unreachable!("toy objective has no dataset"),
        }
    }

    /// f_i(w).
    pub fn sample_value(&self, i: usize, w: &DenseVector) -> Result<f64> {
        self.check_index(i)?;
        w.check_len(self.dimension())?;
        let w = w.as_slice();
        let Some(ds) = &self.dataset else {
            return Ok(if i == 0 { 0.5 * w[0] * w[0] } else { w[0] });
        };
        let s = &ds.samples()[i];
        let loss = self.loss_value(s.features.dot_dense(w), s.label);
        Ok(loss + self.sample_regularizer_value(i, w))
    }

    /// Regularizer part of f_i(w).
    pub fn sample_regularizer_value(&self, i: usize, w: &[f64]) -> f64 {
        let Some(ds) = &self.dataset else { return 0.0 };
        match self.mode {
            RegularizationMode::SupportWeighted => {
                0.5 * ds.samples()[i]
                    .features
                    .indices()
                    .iter()
                    .map(|&j| self.reg_weights[j] * w[j] * w[j])
                    .sum::<f64>()
            }
            RegularizationMode::Dense => 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    /// ∇f_i(w), stored on exactly `sample_support(i)`.
    pub fn stochastic_gradient(&self, i: usize, w: &DenseVector) -> Result<SparseVector> {
        self.check_index(i)?;
        w.check_len(self.dimension())?;
        Ok(self.gradient_from_slice(i, w.as_slice()))
    }

    /// Gradient of sample `i` reading only the coordinates it depends on:
    /// the support under [`RegularizationMode::SupportWeighted`], all of `w`
    /// under [`RegularizationMode::Dense`].
    pub(crate) fn gradient_from_slice(&self, i: usize, w: &[f64]) -> SparseVector {
        let Some(ds) = &self.dataset else {
            let g = if i == 0 { w[0] } else { 1.0 };
            return SparseVector::from_parts_unchecked(vec![0], vec![g]);
        };
        let s = &ds.samples()[i];
        let dl = self.loss_derivative(s.features.dot_dense(w), s.label);
        match self.mode {
            RegularizationMode::SupportWeighted => {
                let values = s
                    .features
                    .iter()
                    .map(|(j, x)| dl * x + self.reg_weights[j] * w[j])
                    .collect();
                SparseVector::from_parts_unchecked(s.features.indices().to_vec(), values)
            }
            RegularizationMode::Dense => {
                let mut values: Vec<f64> = w.iter().map(|v| self.lambda * v).collect();
                for (j, x) in s.features.iter() {
                    values[j] += dl * x;
                }
                SparseVector::from_parts_unchecked(self.full_support.clone(), values)
            }
        }
    }

    /// F(w) = (1/n) Σ f_i(w).
    pub fn full_objective(&self, w: &DenseVector) -> Result<f64> {
        w.check_len(self.dimension())?;
        let ws = w.as_slice();
        let Some(ds) = &self.dataset else {
            return Ok(0.5 * (0.5 * ws[0] * ws[0] + ws[0]));
        };
        let n = ds.len() as f64;
        let loss: f64 = ds
            .samples()
            .iter()
            .map(|s| self.loss_value(s.features.dot_dense(ws), s.label))
            .sum::<f64>()
            / n;
        Ok(loss + self.mean_regularizer(ws))
    }

    /// (1/n) Σ_i regularizer_i(w) in closed form.
    fn mean_regularizer(&self, w: &[f64]) -> f64 {
        let Some(ds) = &self.dataset else { return 0.0 };
        match self.mode {
            RegularizationMode::SupportWeighted => {
                0.5 * self.lambda
                    * w.iter()
                        .zip(ds.coordinate_counts())
                        .filter(|(_, &c)| c > 0)
                        .map(|(v, _)| v * v)
                        .sum::<f64>()
            }
            RegularizationMode::Dense => 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    /// ∇F(w).
    pub fn full_gradient(&self, w: &DenseVector) -> Result<DenseVector> {
        w.check_len(self.dimension())?;
        let ws = w.as_slice();
        let Some(ds) = &self.dataset else {
            return Ok(DenseVector::from_vec(vec![0.5 * (ws[0] + 1.0)]));
        };
        let n = ds.len() as f64;
        let mut g = vec![0.0; ds.dimension()];
        for s in ds.samples() {
            let dl = self.loss_derivative(s.features.dot_dense(ws), s.label);
            for (j, x) in s.features.iter() {
                g[j] += dl * x;
            }
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            let active = match self.mode {
                RegularizationMode::SupportWeighted => ds.coordinate_counts()[j] > 0,
                RegularizationMode::Dense => true,
            };
            if active {
                *gj += self.lambda * ws[j];
            }
        }
        Ok(DenseVector::from_vec(g))
    }

    /// Smoothness bound L valid for every component, and strong convexity μ of F.
    pub fn estimate_constants(&self) -> Result<(f64, f64)> {
        let Some(ds) = &self.dataset else { return Ok((1.0, 0.5)) };
        if self.lambda <= 0.0 {
            return Err(Error::NotStronglyConvex(format!(
                "{:?} with lambda = {} has mu = 0",
                self.kind, self.lambda
            )));
        }
        let curvature = match self.kind {
            ObjectiveKind::LogisticL2 => 0.25,
            ObjectiveKind::LeastSquaresL2 => 2.0,
            ObjectiveKind::ToyQuadratic => unreachable!(),
        };
        let l = ds
            .samples()
            .iter()
            .map(|s| {
                let reg = match self.mode {
                    RegularizationMode::SupportWeighted => s
                        .features
                        .indices()
                        .iter()
                        .map(|&j| self.reg_weights[j])
                        .fold(0.0, f64::max),
                    RegularizationMode::Dense => self.lambda,
                };
                curvature * s.features.norm_sq() + reg
            })
            .fold(0.0, f64::max);
        // kappa >= 1 needs L >= mu.
        let l = l.max(self.lambda);
        Ok((l, self.lambda))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Constants the bounds and schedules are stated in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Smoothness of every component.
    pub l: f64,
    /// Strong convexity of F.
    pub mu: f64,
    pub kappa: f64,
    /// 2·E‖∇f(w*; ξ)‖²
    pub n_var: f64,
    pub w_star: DenseVector,
    pub f_star: f64,
    pub convex_realizations: bool,
}

impl ProblemConstants {
    /// Estimates L and μ, solves for w* to `tol` and evaluates N there.
    pub fn compute(obj: &Objective, tol: f64) -> Result<Self> {
        let (l, mu) = obj.estimate_constants()?;
        let (w_star, f_star) = solve_reference(obj, tol)?;
        let n_var = compute_variance_constant(obj, &w_star)?;
        Ok(ProblemConstants {
            l,
            mu,
            kappa: l / mu,
            n_var,
            w_star,
            f_star,
            convex_realizations: obj.convex_realizations(),
        })
    }

    pub fn from_parts(l: f64, mu: f64, n_var: f64, w_star: DenseVector, f_star: f64) -> Self {
        ProblemConstants { l, mu, kappa: l / mu, n_var, w_star, f_star, convex_realizations: true }
    }
}

pub const DEFAULT_SOLVER_MAX_ITERATIONS: usize = 20_000_000;

/// Full-batch gradient descent with step 1/L from w = 0 until ‖∇F(w)‖ ≤ tol.
pub fn solve_reference(obj: &Objective, tol: f64) -> Result<(DenseVector, f64)> {
    solve_reference_with(obj, tol, DEFAULT_SOLVER_MAX_ITERATIONS)
}

pub fn solve_reference_with(
    obj: &Objective,
    tol: f64,
    max_iterations: usize,
) -> Result<(DenseVector, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("solver tolerance must be > 0, got {tol}")));
    }
    let (l, _mu) = obj.estimate_constants()?;
    let step = 1.0 / l;
    let mut w = DenseVector::zeros(obj.dimension());
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iterations {
        let g = obj.full_gradient(&w)?;
        grad_norm = g.norm();
        if grad_norm <= tol {
            let f = obj.full_objective(&w)?;
            return Ok((w, f));
        }
        w.axpy(-step, &g);
    }
    let g = obj.full_gradient(&w)?;
    if g.norm() <= tol {
        let f = obj.full_objective(&w)?;
        return Ok((w, f));
    }
    Err(Error::SolverDidNotConverge { tol, iterations: max_iterations, grad_norm })
}

/// N = 2·(1/n)·Σ_i ‖∇f_i(w*)‖².
pub fn compute_variance_constant(obj: &Objective, w_star: &DenseVector) -> Result<f64> {
    w_star.check_len(obj.dimension())?;
    let n = obj.n();
    let total: f64 = (0..n)
        .map(|i| obj.gradient_from_slice(i, w_star.as_slice()).norm_sq())
        .sum();
    Ok(2.0 * total / n as f64)
}
