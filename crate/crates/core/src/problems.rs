//! Reference solutions of the wave equation and the observation data built
//! from them.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::Jet;
use crate::forms::{DualStab, PrimalStab, StabVariant};
use crate::mesh::Interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    /// In `H^1(M)` only (before truncation).
    H1Only,
}

/// A solution of `u_tt - u_xx = 0` with `u = 0` on `x in {0, 1}`.
pub trait ExactSolution: Send + Sync {
    fn value(&self, t: f64, x: f64) -> f64;
    /// Value, `(u_t, u_x)` and `[u_tt, u_tx, u_xx]`.
    fn jet(&self, t: f64, x: f64) -> Jet;
    fn smoothness(&self) -> Smoothness;
    fn name(&self) -> &str;
}

/// `u(t, x) = sin(3 pi x) cos(3 pi t)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Example1;

pub fn example1() -> Example1 {
    Example1
}

impl ExactSolution for Example1 {
    fn value(&self, t: f64, x: f64) -> f64 {
        (3.0 * PI * x).sin() * (3.0 * PI * t).cos()
    }

    fn jet(&self, t: f64, x: f64) -> Jet {
        let w = 3.0 * PI;
        let (sx, cx) = (w * x).sin_cos();
        let (st, ct) = (w * t).sin_cos();
        Jet {
            value: sx * ct,
            grad: [-w * sx * st, w * cx * ct],
            hess: [-w * w * sx * ct, -w * w * cx * st, -w * w * sx * ct],
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::Smooth
    }

    fn name(&self) -> &str {
        "example1"
    }
}

/// Normalization of the velocity coefficients of [`Example2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityCoefficients {
    /// `b_k = sqrt(2) (cos(k pi/3) - cos(2 k pi/3)) / (k pi)`: the sine
    /// coefficients of the indicator of `(1/3, 2/3)` in the orthonormal basis
    /// `sqrt(2) sin(k pi x)`, so that `u_t(0, .)` is that indicator.
    #[default]
    Orthonormal,
    /// `b_k = (cos(k pi/3) - cos(2 k pi/3)) / (k pi)`, which makes `u_t(0, .)`
    /// the indicator scaled by `1/sqrt(2)`.
    Unscaled,
}

/// Truncated Fourier series with initial position `1 - |2x - 1|` and initial
/// velocity the indicator of `(1/3, 2/3)`:
///
/// `u = sum_k (a_k cos(k pi t) + b_k / (k pi) sin(k pi t)) sqrt(2) sin(k pi x)`.
#[derive(Debug, Clone)]
pub struct Example2 {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn example2(k_max: usize) -> Example2 {
    Example2::new(k_max, VelocityCoefficients::default())
}

impl Example2 {
    pub fn new(k_max: usize, velocity: VelocityCoefficients) -> Self {
        assert!(k_max >= 1, "k_max must be positive");
        let scale = match velocity {
            VelocityCoefficients::Orthonormal => SQRT_2,
            VelocityCoefficients::Unscaled => 1.0,
        };
        let a = (1..=k_max)
            .map(|k| {
                let k = k as f64;
                4.0 * SQRT_2 / (PI * PI * k * k) * (PI * k / 2.0).sin()
            })
            .collect();
        let b = (1..=k_max)
            .map(|k| {
                let k = k as f64;
                scale / (PI * k) * ((PI * k / 3.0).cos() - (2.0 * PI * k / 3.0).cos())
            })
            .collect();
        Self { a, b }
    }

    pub fn k_max(&self) -> usize {
        self.a.len()
    }

    /// `u_t(0, x)`.
    pub fn initial_velocity(&self, x: f64) -> f64 {
        self.b.iter().enumerate().map(|(i, bk)| bk * SQRT_2 * ((i + 1) as f64 * PI * x).sin()).sum()
    }
}

impl ExactSolution for Example2 {
    fn value(&self, t: f64, x: f64) -> f64 {
        self.jet(t, x).value
    }

    fn jet(&self, t: f64, x: f64) -> Jet {
        let mut out = Jet::default();
        for (i, (ak, bk)) in self.a.iter().zip(&self.b).enumerate() {
            let w = (i + 1) as f64 * PI;
            let (st, ct) = (w * t).sin_cos();
            let (sx, cx) = (w * x).sin_cos();
            // time factor and its derivatives
            let f = ak * ct + bk / w * st;
            let ft = -ak * w * st + bk * ct;
            let ftt = -w * w * f;
            let g = SQRT_2 * sx;
            let gx = SQRT_2 * w * cx;
            let gxx = -w * w * g;
            out.value += f * g;
            out.grad[0] += ft * g;
            out.grad[1] += f * gx;
            out.hess[0] += ftt * g;
            out.hess[1] += ft * gx;
            out.hess[2] += f * gxx;
        }
        out
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::H1Only
    }

    fn name(&self) -> &str {
        "example2"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExampleId {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl ExampleId {
    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(Error::Config(format!("unknown example {n} (expected 1 or 2)"))),
        }
    }

    pub fn number(&self) -> u32 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }

    pub fn solution(&self, k_max: usize) -> Arc<dyn ExactSolution> {
        match self {
            Self::One => Arc::new(Example1),
            Self::Two => Arc::new(example2(k_max)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    ExactFunction,
    SampledSeries,
}

/// Measurements `u_O` of a solution on `O = (0,T) x omega`.
#[derive(Clone)]
pub struct ObservationData {
    pub omega: Interval,
    pub t_final: f64,
    pub source: DataSource,
    solution: Arc<dyn ExactSolution>,
}

impl std::fmt::Debug for ObservationData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationData")
            .field("omega", &self.omega)
            .field("t_final", &self.t_final)
            .field("source", &self.source)
            .field("solution", &self.solution.name())
            .finish()
    }
}

impl ObservationData {
    /// Evaluate `u_O`; points outside the closed observation set are an error.
    pub fn evaluate(&self, t: f64, x: f64) -> Result<f64> {
        let tol = 1e-10;
        if t < -tol || t > self.t_final + tol || !self.omega.contains_closed(x) {
            return Err(Error::OutsideObservationDomain { t, x });
        }
        Ok(self.solution.value(t, x))
    }

    pub fn solution(&self) -> &Arc<dyn ExactSolution> {
        &self.solution
    }

    /// Data that vanish identically.
    pub fn zero(omega: Interval, t_final: f64) -> Self {
        make_observation(Arc::new(ZeroSolution), omega, t_final)
    }
}

pub fn make_observation(solution: Arc<dyn ExactSolution>, omega: Interval, t_final: f64) -> ObservationData {
    let source = match solution.smoothness() {
        Smoothness::Smooth => DataSource::ExactFunction,
        Smoothness::H1Only => DataSource::SampledSeries,
    };
    ObservationData { omega, t_final, source, solution }
}

#[derive(Debug, Clone, Copy)]
struct ZeroSolution;

impl ExactSolution for ZeroSolution {
    fn value(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn jet(&self, _: f64, _: f64) -> Jet {
        Jet::default()
    }
    fn smoothness(&self) -> Smoothness {
        Smoothness::Smooth
    }
    fn name(&self) -> &str {
        "zero"
    }
}

/// Parameters of a single reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    pub t_final: f64,
    pub omega: (f64, f64),
    pub gamma: f64,
    pub gamma_star: f64,
    pub p: usize,
    pub q: usize,
    pub stab_primal: PrimalStab,
    pub stab_dual: DualStab,
    pub k_max: usize,
    pub velocity: VelocityCoefficients,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            example: ExampleId::One,
            t_final: 2.0,
            omega: (0.1, 0.3),
            gamma: 1e-3,
            gamma_star: 1.0,
            p: 2,
            q: 1,
            stab_primal: PrimalStab::ResidualJump,
            stab_dual: DualStab::GradientPenalty,
            k_max: 50,
            velocity: VelocityCoefficients::Orthonormal,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, allow_locking: bool) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(Error::Config(format!("T must be positive, got {}", self.t_final)));
        }
        Interval::new(self.omega.0, self.omega.1)?;
        if !(1..=3).contains(&self.p) || !(1..=3).contains(&self.q) {
            return Err(Error::Config(format!("degrees must lie in 1..=3, got p={}, q={}", self.p, self.q)));
        }
        if self.q > self.p && !allow_locking {
            return Err(Error::DegreeOrder { p: self.p, q: self.q });
        }
        if self.gamma < 0.0 || self.gamma_star < 0.0 {
            return Err(Error::Config("gamma and gamma_star must be nonnegative".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be positive".into()));
        }
        Ok(())
    }

    pub fn omega(&self) -> Result<Interval> {
        Interval::new(self.omega.0, self.omega.1)
    }

    pub fn variant(&self) -> StabVariant {
        StabVariant { primal: self.stab_primal, dual: self.stab_dual }
    }

    pub fn solution(&self) -> Arc<dyn ExactSolution> {
        match self.example {
            ExampleId::One => Arc::new(Example1),
            ExampleId::Two => Arc::new(Example2::new(self.k_max, self.velocity)),
        }
    }

    pub fn observation(&self) -> Result<ObservationData> {
        Ok(make_observation(self.solution(), self.omega()?, self.t_final))
    }
}
