//! Certified step-size schedules, their sufficient-condition checks, and
//! the convergence envelopes and thresholds built from problem constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::ProblemConstants;
use crate::vector::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// α/(μ(t+E)), α = 2, E = 2αL/μ, so η₀ = 1/(2L).
    SgdConvex,
    /// As `SgdConvex` with L replaced by Lκ: η₀ = 1/(2Lκ).
    SgdNonconvex,
    /// α_t/(μ(t+E)), 4 ≤ α_t ≤ α, E = max{2τ, 4LαD/μ}.
    Hogwild,
    /// As `Hogwild` with E = max{2τ, 4LκαD/μ}.
    HogwildNonconvex,
    /// 4/(μ·2^h) while t+E ∈ [2^h, 2^{h+1}); α = 8.
    ExpPeriod,
    /// α/(μ(t+E)) with user-chosen α and E.
    CustomDiminishing,
    /// η_t = α for every t.
    Constant,
}

/// Smallest α_t allowed for the Hogwild kinds.
pub const HOGWILD_ALPHA_T_MIN: f64 = 4.0;
/// Smallest α_t allowed when τ grows with t.
pub const GROWING_TAU_ALPHA_T_MIN: f64 = 12.0;
pub const SGD_ALPHA: f64 = 2.0;
pub const EXP_PERIOD_ALPHA: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    /// Upper α entering E (for `Constant`, the step itself).
    pub alpha: f64,
    /// α_t used by the diminishing kinds.
    pub alpha_t: f64,
    /// Lower bound α_t must respect.
    pub alpha_t_low: f64,
    pub e: f64,
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub d: usize,
    pub tau: u64,
}

/// Optional knobs for [`make_schedule`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScheduleOptions {
    /// α; defaults to 2 (SGD), 4 (Hogwild) or 8 (exponential period).
    pub alpha: Option<f64>,
    /// Constant α_t for the Hogwild kinds; defaults to the lower bound.
    pub alpha_t: Option<f64>,
    /// τ grows with t: the Hogwild α_t lower bound becomes 12.
    pub growing_tau: bool,
}

impl ScheduleOptions {
    pub fn alpha(alpha: f64) -> Self {
        ScheduleOptions { alpha: Some(alpha), ..Default::default() }
    }
}

pub fn make_schedule(
    kind: ScheduleKind,
    constants: &ProblemConstants,
    tau: u64,
    d: usize,
    opts: ScheduleOptions,
) -> Result<StepSchedule> {
    let (l, mu) = (constants.l, constants.mu);
    if !(l > 0.0 && mu > 0.0) {
        return Err(Error::InvalidSchedule(format!("need L, mu > 0 (L = {l}, mu = {mu})")));
    }
    if d == 0 {
        return Err(Error::InvalidSchedule("D must be >= 1".into()));
    }
    let kappa = l / mu;
    let base = StepSchedule {
        kind,
        alpha: 0.0,
        alpha_t: 0.0,
        alpha_t_low: 0.0,
        e: 0.0,
        mu,
        l,
        kappa,
        d,
        tau,
    };
    let schedule = match kind {
        ScheduleKind::SgdConvex | ScheduleKind::SgdNonconvex => {
            let alpha = opts.alpha.unwrap_or(SGD_ALPHA);
            if alpha != SGD_ALPHA {
                return Err(Error::InvalidSchedule(format!("SGD schedules fix alpha = 2, got {alpha}")));
            }
            let lip = if kind == ScheduleKind::SgdConvex { l } else { l * kappa };
            StepSchedule { alpha, alpha_t: alpha, alpha_t_low: alpha, e: 2.0 * alpha * lip / mu, ..base }
        }
        ScheduleKind::Hogwild | ScheduleKind::HogwildNonconvex => {
            let low = if opts.growing_tau { GROWING_TAU_ALPHA_T_MIN } else { HOGWILD_ALPHA_T_MIN };
            let alpha = opts.alpha.unwrap_or(low);
            if !(alpha >= low) {
                return Err(Error::InvalidSchedule(format!("Hogwild! schedules need alpha >= {low}, got {alpha}")));
            }
            let alpha_t = opts.alpha_t.unwrap_or(low);
            if !(alpha_t >= low && alpha_t <= alpha) {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_t = {alpha_t} outside [{low}, {alpha}]"
                )));
            }
            let lip = if kind == ScheduleKind::Hogwild { l } else { l * kappa };
            let e = (2.0 * tau as f64).max(4.0 * lip * alpha * d as f64 / mu);
            StepSchedule { alpha, alpha_t, alpha_t_low: low, e, ..base }
        }
        ScheduleKind::ExpPeriod => {
            let alpha = opts.alpha.unwrap_or(EXP_PERIOD_ALPHA);
            if alpha != EXP_PERIOD_ALPHA {
                return Err(Error::InvalidSchedule(format!(
                    "exponential-period schedule fixes alpha = 8, got {alpha}"
                )));
            }
            let e = (2.0 * tau as f64).max(4.0 * l * alpha * d as f64 / mu);
            StepSchedule { alpha, alpha_t: HOGWILD_ALPHA_T_MIN, alpha_t_low: HOGWILD_ALPHA_T_MIN, e, ..base }
        }
        ScheduleKind::CustomDiminishing | ScheduleKind::Constant => {
            return Err(Error::InvalidSchedule(format!(
                "{kind:?} schedules are built with StepSchedule::custom / StepSchedule::constant"
            )));
        }
    };
    Ok(schedule)
}

impl StepSchedule {
    /// α/(μ(t+E)).
    pub fn custom(alpha: f64, mu: f64, e: f64) -> Result<Self> {
        if !(alpha > 0.0 && mu > 0.0 && e > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "custom schedule needs alpha, mu, E > 0 (got {alpha}, {mu}, {e})"
            )));
        }
        Ok(StepSchedule {
            kind: ScheduleKind::CustomDiminishing,
            alpha,
            alpha_t: alpha,
            alpha_t_low: alpha,
            e,
            mu,
            l: f64::NAN,
            kappa: f64::NAN,
            d: 1,
            tau: 0,
        })
    }

    pub fn constant(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidSchedule(format!("constant step must be > 0, got {eta}")));
        }
        Ok(StepSchedule {
            kind: ScheduleKind::Constant,
            alpha: eta,
            alpha_t: eta,
            alpha_t_low: eta,
            e: 0.0,
            mu: f64::NAN,
            l: f64::NAN,
            kappa: f64::NAN,
            d: 1,
            tau: 0,
        })
    }

    /// η_t.
    pub fn step(&self, t: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.alpha,
            ScheduleKind::ExpPeriod => {
                let h = period_exponent(t as f64 + self.e);
                4.0 / (self.mu * (h as f64).exp2())
            }
            _ => self.alpha_t / (self.mu * (t as f64 + self.e)),
        }
    }

    /// α_t implied by η_t = α_t/(μ(t+E)).
    pub fn implied_alpha(&self, t: u64) -> f64 {
        match self.kind {
            ScheduleKind::ExpPeriod => {
                let x = t as f64 + self.e;
                4.0 * x / (period_exponent(x) as f64).exp2()
            }
            _ => self.step(t) * self.mu * (t as f64 + self.e),
        }
    }

    /// η₀.
    pub fn initial_step(&self) -> f64 {
        self.step(0)
    }
}

/// h with 2^h ≤ x < 2^{h+1}, for x ≥ 1.
pub fn period_exponent(x: f64) -> i32 {
    debug_assert!(x >= 1.0);
    let mut h = x.log2().floor() as i32;
    while (h as f64).exp2() > x {
        h -= 1;
    }
    while ((h + 1) as f64).exp2() <= x {
        h += 1;
    }
    h
}

/// Which step-size ceiling applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convexity {
    /// Components are convex: η_t ≤ 1/(2L).
    ConvexRealizations,
    /// No component convexity: η_t ≤ 1/(2Lκ).
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesBehavior {
    Diverges,
    Converges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub step_ceiling: f64,
    pub horizon: u64,
    /// First t ≤ horizon with η_t above the ceiling.
    pub first_violation: Option<u64>,
    pub sum_eta: SeriesBehavior,
    pub sum_eta_sq: SeriesBehavior,
    pub pass: bool,
}

/// Checks 0 < η_t ≤ ceiling on [0, horizon] and classifies Ση_t and Ση_t²
/// analytically (every diminishing kind is Θ(1/t)).
pub fn validate_sufficient_conditions(
    schedule: &StepSchedule,
    constants: &ProblemConstants,
    horizon: u64,
    convexity: Convexity,
) -> ConditionReport {
    let step_ceiling = match convexity {
        Convexity::ConvexRealizations => 1.0 / (2.0 * constants.l),
        Convexity::General => 1.0 / (2.0 * constants.l * constants.kappa),
    };
    let slack = step_ceiling * 1e-12;
    let first_violation = (0..=horizon).find(|&t| {
        let eta = schedule.step(t);
        !(eta > 0.0 && eta <= step_ceiling + slack)
    });
    let (sum_eta, sum_eta_sq) = match schedule.kind {
        ScheduleKind::Constant => (SeriesBehavior::Diverges, SeriesBehavior::Diverges),
        _ => (SeriesBehavior::Diverges, SeriesBehavior::Converges),
    };
    let pass = first_violation.is_none()
        && sum_eta == SeriesBehavior::Diverges
        && sum_eta_sq == SeriesBehavior::Converges;
    ConditionReport { step_ceiling, horizon, first_violation, sum_eta, sum_eta_sq, pass }
}

/// Thresholds past which the stated envelopes apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// SGD threshold T, clamped at 0.
    pub t_sgd: f64,
    /// τ(t)-growth threshold T₀.
    pub t0: f64,
    /// ‖w₀ − w*‖² threshold T₁.
    pub t1: f64,
    /// N = 0, so T and T₁ are set to 0.
    pub n_is_zero: bool,
    pub dist0_sq: f64,
}

/// T, T₀ and T₁. `delta` is Δ from the sparsity statistics; `convexity`
/// picks L or Lκ inside T.
pub fn thresholds(
    constants: &ProblemConstants,
    alpha: f64,
    d: usize,
    w0: &DenseVector,
    delta: f64,
    convexity: Convexity,
) -> Result<BoundReport> {
    w0.check_len(constants.w_star.len())?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::BoundUndefined(format!("Delta must lie in (0, 1], got {delta}")));
    }
    let (l, mu, n) = (constants.l, constants.mu, constants.n_var);
    let lip = match convexity {
        Convexity::ConvexRealizations => l,
        Convexity::General => l * constants.kappa,
    };
    let dist0_sq = w0.distance_sq(&constants.w_star);
    let n_is_zero = n <= 0.0;
    let (t_sgd, t1) = if n_is_zero {
        (0.0, 0.0)
    } else {
        let scale = 4.0 * lip / mu;
        let t = (scale * (lip * mu / n * dist0_sq).max(1.0) - scale).max(0.0);
        let t1 = mu * mu / (alpha * alpha * n * d as f64) * dist0_sq;
        (t, t1)
    };
    let t0 = (2.0 * delta.sqrt() * (1.0 + (l + mu) * alpha / mu)).exp();
    Ok(BoundReport { t_sgd, t0, t1, n_is_zero, dist0_sq })
}

/// Certified SGD bound (4α²N/μ²)/(t − T + E) on E‖w_t − w*‖².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdEnvelope {
    pub leading_constant: f64,
    pub t_threshold: f64,
    pub e: f64,
}

impl SgdEnvelope {
    pub fn new(constants: &ProblemConstants, alpha: f64, w0: &DenseVector, convexity: Convexity) -> Result<Self> {
        let lip = match convexity {
            Convexity::ConvexRealizations => constants.l,
            Convexity::General => constants.l * constants.kappa,
        };
        let report = thresholds(constants, alpha, 1, w0, 1.0, convexity)?;
        Ok(SgdEnvelope {
            leading_constant: 4.0 * alpha * alpha * constants.n_var / (constants.mu * constants.mu),
            t_threshold: report.t_sgd,
            e: 2.0 * alpha * lip / constants.mu,
        })
    }

    pub fn eval(&self, t: u64) -> Result<f64> {
        let t = t as f64;
        if t < self.t_threshold {
            return Err(Error::BoundUndefined(format!(
                "SGD envelope holds for t >= T = {}, got t = {t}",
                self.t_threshold
            )));
        }
        Ok(self.leading_constant / (t - self.t_threshold + self.e))
    }
}

/// Convenience wrapper: the SGD envelope at `t` for the convex case.
pub fn sgd_envelope(constants: &ProblemConstants, alpha: f64, w0: &DenseVector, t: u64) -> Result<f64> {
    SgdEnvelope::new(constants, alpha, w0, Convexity::ConvexRealizations)?.eval(t)
}

/// Leading term (4α²DN/μ²)·t/(t+E−1)² of the Hogwild! bound, plus a
/// remainder estimate ln t/(t+E−1)² whose constant is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogwildEnvelopeValue {
    pub leading: f64,
    /// Shape of the lower-order term with unit constant; not certified.
    pub remainder_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HogwildEnvelope {
    /// 4α²DN/μ²
    pub leading_constant: f64,
    pub e: f64,
}

impl HogwildEnvelope {
    pub fn new(constants: &ProblemConstants, alpha: f64, d: usize, e: f64) -> Self {
        HogwildEnvelope {
            leading_constant: 4.0 * alpha * alpha * d as f64 * constants.n_var
                / (constants.mu * constants.mu),
            e,
        }
    }

    /// The constant in front of 1/t′ once t′ = t·Δ̄_D/D: 4α²Δ̄_D N/μ².
    pub fn leading_constant_in_t_prime(&self, d: usize, delta_bar_d: f64) -> f64 {
        self.leading_constant / d as f64 * delta_bar_d
    }

    pub fn eval(&self, t: u64) -> Result<HogwildEnvelopeValue> {
        if t < 1 {
            return Err(Error::BoundUndefined("Hogwild! envelope needs t >= 1".into()));
        }
        let tf = t as f64;
        let denom = (tf + self.e - 1.0).powi(2);
        Ok(HogwildEnvelopeValue {
            leading: self.leading_constant * tf / denom,
            remainder_estimate: tf.ln() / denom,
        })
    }
}

pub fn hogwild_envelope(
    constants: &ProblemConstants,
    alpha: f64,
    d: usize,
    e: f64,
    t: u64,
) -> Result<HogwildEnvelopeValue> {
    HogwildEnvelope::new(constants, alpha, d, e).eval(t)
}

/// √(t·(1/ln t − 1/(ln t)²)), the largest delay τ(t) that keeps the leading
/// term unchanged. Defined for t > e.
pub fn tau_growth_cap(t: f64) -> Result<f64> {
    let ln = t.ln();
    let lt = 1.0 / ln - 1.0 / (ln * ln);
    if !(t > 2.0 && lt > 0.0) {
        return Err(Error::BoundUndefined(format!("tau growth cap needs ln t > 1, got t = {t}")));
    }
    Ok((t * lt).sqrt())
}
