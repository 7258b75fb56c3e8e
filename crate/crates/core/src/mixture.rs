//! Displacement-power mixture model.
//!
//! Each mode is a product over timesteps of the 2-D density
//!
//! ```text
//! p(X) = exp(-[Xᵀ Λ X]^{r/2} / 2) / Z(r, Λ),   Z = 2π · 2^{2/r} / r · Γ(2/r) · det(Λ)^{-1/2}
//! ```
//!
//! where `X` is the displacement from the mode mean, `Λ` the inverse
//! covariance and `r ∈ (0, 2]` the displacement power (`r = 2` is Gaussian).
//! The agent-level distribution is a probability-weighted mixture of modes.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geom::Vec2;
use crate::metrics::SpeedScaling;
use crate::scene::{step_direction, AgentContext, step_time, AgentType, ModePrediction, PredictionSet, Trajectory, HORIZON_STEPS};
use crate::{Error, Result};

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn quad_form(&self, v: Vec2) -> f64 {
        self.xx * v.x * v.x + 2.0 * self.xy * v.x * v.y + self.yy * v.y * v.y
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let rad = libm::hypot(half_diff, self.xy);
        (mean - rad, mean + rad)
    }

    /// Unit eigenvector for the smaller eigenvalue.
    pub fn minor_eigenvector(&self) -> Vec2 {
        let (lo, _) = self.eigenvalues();
        // (M - lo I) v = 0 → v ⟂ first row unless the row is ~0.
        let r0 = Vec2::new(self.xx - lo, self.xy);
        let r1 = Vec2::new(self.xy, self.yy - lo);
        let row = if r0.norm() >= r1.norm() { r0 } else { r1 };
        if row.norm() == 0.0 {
            return Vec2::new(1.0, 0.0);
        }
        let v = Vec2::new(-row.y, row.x);
        v * (1.0 / v.norm())
    }
}

/// Inverse covariance in the `(a, b, c)` parametrization
/// `Λ = e^c [[e^a cosh b, sinh b], [sinh b, e^{-a} cosh b]]`.
///
/// `det Λ = e^{2c}` and `Λ` is positive-definite for every finite triple.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InverseCovariance {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl InverseCovariance {
    pub const IDENTITY: InverseCovariance = InverseCovariance { a: 0.0, b: 0.0, c: 0.0 };

    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let s = Self { a, b, c };
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NonFinite("inverse covariance parameters"))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    pub fn matrix(&self) -> SymMat2 {
        let scale = libm::exp(self.c);
        let cb = libm::cosh(self.b);
        SymMat2 {
            xx: scale * libm::exp(self.a) * cb,
            xy: scale * libm::sinh(self.b),
            yy: scale * libm::exp(-self.a) * cb,
        }
    }

    /// `log det Λ`, exact in this parametrization.
    pub fn log_det(&self) -> f64 {
        2.0 * self.c
    }

    /// Inverse of [`matrix`](Self::matrix) for any symmetric positive-definite input.
    pub fn from_matrix(m: SymMat2) -> Result<Self> {
        let det = m.det();
        if !(m.xx > 0.0 && m.yy > 0.0 && det > 0.0) || !det.is_finite() {
            return Err(Error::invalid("inverse covariance", "matrix is not positive-definite"));
        }
        let c = 0.5 * libm::log(det);
        let scale = libm::exp(-c);
        let b = libm::asinh(m.xy * scale);
        let a = 0.5 * libm::log(m.xx / m.yy);
        Self::new(a, b, c)
    }

    pub fn quad_form(&self, x: Vec2) -> f64 {
        self.matrix().quad_form(x).max(0.0)
    }
}

/// Realized `Λ` for a finite `(a, b, c)` triple.
pub fn inv_cov_matrix(a: f64, b: f64, c: f64) -> Result<SymMat2> {
    Ok(InverseCovariance::new(a, b, c)?.matrix())
}

/// Exponent `r` applied to the Mahalanobis norm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DisplacementPower(f64);

impl DisplacementPower {
    pub const GAUSSIAN: DisplacementPower = DisplacementPower(2.0);

    pub fn new(r: f64) -> Result<Self> {
        if r > 0.0 && r <= 2.0 {
            Ok(Self(r))
        } else {
            Err(Error::invalid("r", alloc::format!("displacement power {r} outside (0, 2]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `log Z(r, I)`, the normalizer for unit `Λ`.
    pub fn log_unit_normalizer(self) -> f64 {
        let r = self.0;
        libm::log(2.0 * PI) + (2.0 / r) * core::f64::consts::LN_2 - libm::log(r)
            + libm::lgamma(2.0 / r)
    }
}

impl Default for DisplacementPower {
    fn default() -> Self {
        Self(1.5)
    }
}

/// `log Z` such that the per-step density integrates to one over the plane.
pub fn log_normalizer(r: DisplacementPower, lambda: &InverseCovariance) -> f64 {
    r.log_unit_normalizer() - 0.5 * lambda.log_det()
}

/// `[q]^{r/2} / 2` with `q = Xᵀ Λ X`.
pub(crate) fn energy(q: f64, r: DisplacementPower) -> f64 {
    let r = r.get();
    if r == 2.0 {
        0.5 * q
    } else {
        0.5 * libm::pow(q, 0.5 * r)
    }
}

pub fn mode_log_density(point: Vec2, mean: Vec2, lambda: &InverseCovariance, r: DisplacementPower) -> f64 {
    let q = lambda.quad_form(point - mean);
    -energy(q, r) - log_normalizer(r, lambda)
}

/// Per-type covariance schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeSchedule {
    /// Overall proportionality coefficient σ.
    pub sigma: f64,
    /// `(intercept, slope)` of the perpendicular std profile `a + b·t` (m, m/s).
    pub time_slope: (f64, f64),
    /// Along-track std over perpendicular std.
    pub anisotropy_ratio: f64,
}

impl Default for TypeSchedule {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            time_slope: (1.0, 0.25),
            anisotropy_ratio: 2.0,
        }
    }
}

/// Fixed (non-predicted) covariances depending on agent type, time,
/// initial speed and ground-truth direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSchedule {
    pub per_type: [TypeSchedule; 3],
    pub velocity_gain: SpeedScaling,
    /// Lower bound applied to both realized stds.
    pub min_std: f64,
}

impl Default for CovarianceSchedule {
    fn default() -> Self {
        Self {
            per_type: [TypeSchedule::default(); 3],
            velocity_gain: SpeedScaling::default(),
            min_std: 0.03,
        }
    }
}

impl CovarianceSchedule {
    pub fn for_type(&self, t: AgentType) -> &TypeSchedule {
        &self.per_type[t.index()]
    }

    pub fn for_type_mut(&mut self, t: AgentType) -> &mut TypeSchedule {
        &mut self.per_type[t.index()]
    }

    pub fn with_sigma(mut self, t: AgentType, sigma: f64) -> Self {
        self.for_type_mut(t).sigma = sigma;
        self
    }

    /// `(perpendicular, along)` stds before rotation.
    pub fn stds(&self, agent_type: AgentType, t: f64, v0: f64) -> Result<(f64, f64)> {
        let ts = self.for_type(agent_type);
        let perp = ts.sigma * self.velocity_gain.scale(v0) * (ts.time_slope.0 + ts.time_slope.1 * t);
        let along = ts.anisotropy_ratio * perp;
        if !(perp > 0.0 && along > 0.0) || !along.is_finite() {
            return Err(Error::NonPositiveStd(perp.min(along)));
        }
        Ok((perp.max(self.min_std), along.max(self.min_std)))
    }
}

pub fn scheduled_inv_cov(
    schedule: &CovarianceSchedule,
    agent_type: AgentType,
    t: f64,
    v0: f64,
    gt_direction: f64,
) -> Result<InverseCovariance> {
    let (perp, along) = schedule.stds(agent_type, t, v0)?;
    let u = Vec2::from_angle(gt_direction);
    let (ia, ip) = (1.0 / (along * along), 1.0 / (perp * perp));
    // Λ = ia·u uᵀ + ip·n nᵀ with n ⟂ u.
    let m = SymMat2 {
        xx: ia * u.x * u.x + ip * u.y * u.y,
        xy: (ia - ip) * u.x * u.y,
        yy: ia * u.y * u.y + ip * u.x * u.x,
    };
    InverseCovariance::from_matrix(m)
}

/// Where per-step inverse covariances come from.
#[derive(Debug, Clone, Copy)]
pub enum CovSource<'a> {
    /// Use each mode's own `(a, b, c)` parameters.
    Predicted,
    /// Use the schedule, oriented along the ground truth.
    Schedule(&'a CovarianceSchedule, AgentContext),
}

impl CovSource<'_> {
    /// Per-step inverse covariances for `mode` evaluated against `gt`.
    pub fn resolve(&self, mode: &ModePrediction, gt: &Trajectory) -> Result<[InverseCovariance; HORIZON_STEPS]> {
        match self {
            CovSource::Predicted => mode.cov().copied().ok_or(Error::MissingCovariance),
            CovSource::Schedule(s, ctx) => {
                let mut out = [InverseCovariance::IDENTITY; HORIZON_STEPS];
                for (k, slot) in out.iter_mut().enumerate() {
                    let dir = step_direction(gt, ctx.start, k, ctx.heading);
                    *slot = scheduled_inv_cov(s, ctx.agent_type, step_time(k), ctx.speed, dir)?;
                }
                Ok(out)
            }
        }
    }
}

pub fn trajectory_log_likelihood(
    mode: &ModePrediction,
    gt: &Trajectory,
    r: DisplacementPower,
    source: CovSource<'_>,
) -> Result<f64> {
    let lambdas = source.resolve(mode, gt)?;
    Ok(per_step_log_density(mode.mean(), gt, &lambdas, r).iter().sum())
}

pub(crate) fn per_step_log_density(
    mean: &Trajectory,
    gt: &Trajectory,
    lambdas: &[InverseCovariance; HORIZON_STEPS],
    r: DisplacementPower,
) -> [f64; HORIZON_STEPS] {
    core::array::from_fn(|k| mode_log_density(gt.at(k), mean.at(k), &lambdas[k], r))
}

/// `log Σ exp(x_i)` with max subtraction; `-∞` for empty or all `-∞` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| libm::exp(x - max)).sum();
    max + libm::log(s)
}

/// `-log Σ_α p_α exp(ℓ_α)` for one agent.
pub fn mixture_nll(
    pred: &PredictionSet,
    gt: &Trajectory,
    r: DisplacementPower,
    source: CovSource<'_>,
) -> Result<f64> {
    let mut terms = Vec::with_capacity(pred.modes().len());
    for m in pred.modes() {
        if m.prob() > 0.0 {
            terms.push(libm::log(m.prob()) + trajectory_log_likelihood(m, gt, r, source)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::ZeroProbability);
    }
    Ok(-logsumexp(&terms))
}
