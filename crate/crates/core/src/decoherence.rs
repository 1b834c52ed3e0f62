//! Coherence time from Zeeman sensitivities and a magnetic-noise amplitude:
//! (πT₂)⁻¹ = |S₁·ΔB| + |ΔB·S₂·ΔB|.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::frame::FieldVector;
use crate::hamiltonian::{SpinModel, TransitionId};
use crate::sensitivity::{spectral_radius, sphere_directions, TransitionSensitivity};

pub const MHZ_TO_HZ: f64 = 1e6;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// How the noise amplitude ΔB is projected onto the sensitivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    /// Noise along the most damaging direction of each term.
    WorstCase,
    /// Each term averaged over uniformly distributed noise directions.
    IsotropicAverage,
    FixedDirection(Vector3<f64>),
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseMode::WorstCase => write!(f, "worst-case"),
            NoiseMode::IsotropicAverage => write!(f, "isotropic-average"),
            NoiseMode::FixedDirection(n) => write!(f, "fixed-direction({},{},{})", n.x, n.y, n.z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseVector {
    /// tesla
    pub magnitude: f64,
    pub mode: NoiseMode,
}

impl NoiseVector {
    pub fn new(magnitude: f64, mode: NoiseMode) -> Result<Self> {
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::InvalidInput(format!("noise magnitude must be finite and ≥ 0, got {magnitude}")));
        }
        let mode = match mode {
            NoiseMode::FixedDirection(n) => {
                let norm = n.norm();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::InvalidInput("noise direction must be a nonzero vector".into()));
                }
                NoiseMode::FixedDirection(n / norm)
            }
            m => m,
        };
        Ok(NoiseVector { magnitude, mode })
    }

    pub fn worst_case(magnitude: f64) -> Self {
        NoiseVector {
            magnitude,
            mode: NoiseMode::WorstCase,
        }
    }
}

/// Coherence time; `Infinite` when the modelled dephasing rate is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum T2 {
    Finite(f64),
    Infinite,
}

impl T2 {
    pub fn from_rate(rate_hz: f64) -> T2 {
        if rate_hz > 0.0 {
            T2::Finite(1.0 / (std::f64::consts::PI * rate_hz))
        } else {
            T2::Infinite
        }
    }

    pub fn seconds(self) -> Option<f64> {
        match self {
            T2::Finite(t) => Some(t),
            T2::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, T2::Infinite)
    }

    /// Rate contribution 1/T (zero for an infinite time).
    pub fn inverse(self) -> f64 {
        self.seconds().map_or(0.0, |t| 1.0 / t)
    }

    /// Total coherence time when two independent dephasing channels act together.
    pub fn combine(self, other: T2) -> T2 {
        let r = self.inverse() + other.inverse();
        if r > 0.0 {
            T2::Finite(1.0 / r)
        } else {
            T2::Infinite
        }
    }
}

impl PartialOrd for T2 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match (self, other) {
            (T2::Finite(a), T2::Finite(b)) => a.partial_cmp(b),
            (T2::Finite(_), T2::Infinite) => Some(std::cmp::Ordering::Less),
            (T2::Infinite, T2::Finite(_)) => Some(std::cmp::Ordering::Greater),
            (T2::Infinite, T2::Infinite) => Some(std::cmp::Ordering::Equal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T2Prediction {
    pub t2: T2,
    /// Hz
    pub rate_linear: f64,
    /// Hz
    pub rate_quadratic: f64,
    pub noise: NoiseVector,
    pub inputs: TransitionSensitivity,
}

impl T2Prediction {
    pub fn total_rate(&self) -> f64 {
        self.rate_linear + self.rate_quadratic
    }
}

const QUADRATURE_POINTS: usize = 2000;

fn is_semidefinite(m: &Matrix3<f64>) -> bool {
    let e = ((m + m.transpose()) * 0.5).symmetric_eigenvalues();
    let scale = e.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    e.iter().all(|&x| x >= -tol) || e.iter().all(|&x| x <= tol)
}

/// Mean of |nᵀ M n| over the unit sphere.
fn mean_abs_quadratic_form(m: &Matrix3<f64>) -> f64 {
    if is_semidefinite(m) {
        return m.trace().abs() / 3.0;
    }
    let dirs = sphere_directions(QUADRATURE_POINTS);
    dirs.iter().map(|n| (n.transpose() * m * n)[0].abs()).sum::<f64>() / dirs.len() as f64
}

pub fn predict_t2(ts: &TransitionSensitivity, noise: NoiseVector) -> Result<T2Prediction> {
    if !(noise.magnitude >= 0.0 && noise.magnitude.is_finite()) {
        return Err(Error::InvalidInput(format!("noise magnitude must be finite and ≥ 0, got {}", noise.magnitude)));
    }
    let db = noise.magnitude;
    let (lin, quad) = match noise.mode {
        NoiseMode::WorstCase => (ts.s1.norm() * db, spectral_radius(&ts.s2) * db * db),
        NoiseMode::IsotropicAverage => (0.5 * ts.s1.norm() * db, mean_abs_quadratic_form(&ts.s2) * db * db),
        NoiseMode::FixedDirection(n) => {
            let d = n.normalize() * db;
            (ts.s1.dot(&d).abs(), (d.transpose() * ts.s2 * d)[0].abs())
        }
    };
    let rate_linear = lin * MHZ_TO_HZ;
    let rate_quadratic = quad * MHZ_TO_HZ;
    Ok(T2Prediction {
        t2: T2::from_rate(rate_linear + rate_quadratic),
        rate_linear,
        rate_quadratic,
        noise,
        inputs: *ts,
    })
}

/// Spread of a transition frequency over an inhomogeneous field distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Inhomogeneity {
    /// Standard deviation of ν, Hz.
    pub sigma_hz: f64,
    /// 1/(π σ)
    pub t2_star: T2,
    pub used: usize,
    pub discarded: usize,
    pub seed: u64,
}

/// Monte Carlo over B = B0 ∘ (1 + ε) with ε_p ~ N(0, spread) independently per
/// component. Sample k draws from stream k of a seeded ChaCha8 generator so
/// that results do not depend on the execution mode.
pub fn inhomogeneity_dephasing(
    model: &SpinModel,
    b0: FieldVector,
    fractional_spread: f64,
    t: TransitionId,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Inhomogeneity> {
    if !(fractional_spread >= 0.0 && fractional_spread.is_finite()) {
        return Err(Error::InvalidInput(format!("spread must be finite and ≥ 0, got {fractional_spread}")));
    }
    if samples < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 samples, got {samples}")));
    }
    t.check(model.dim())?;
    let nus: Vec<Option<f64>> = exec.map_indices(samples, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let eps: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let b = FieldVector(Vector3::from_fn(|p, _| b0.0[p] * (1.0 + fractional_spread * eps[p])));
        let sol = model.solve(b).ok()?;
        let lower = sol.cluster_of(t.lower);
        if lower.contains(&t.upper) {
            return None;
        }
        Some(sol.energies[t.upper] - sol.energies[t.lower])
    });
    let good: Vec<f64> = nus.iter().flatten().copied().collect();
    let used = good.len();
    if used < 2 {
        return Err(Error::Degenerate(format!("only {used} of {samples} samples were usable")));
    }
    // shifted by the first sample so identical values give exactly zero
    let shift = good[0];
    let mean = good.iter().map(|x| x - shift).sum::<f64>() / used as f64;
    let var = good.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / (used - 1) as f64;
    let sigma_hz = var.sqrt() * MHZ_TO_HZ;
    Ok(Inhomogeneity {
        sigma_hz,
        t2_star: T2::from_rate(sigma_hz),
        used,
        discarded: samples - used,
        seed,
    })
}

/// One echo-decay point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoPoint {
    /// s
    pub tau: f64,
    pub area: f64,
    pub area_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EchoDataset {
    pub points: Vec<EchoPoint>,
}

impl EchoDataset {
    pub fn new(points: Vec<EchoPoint>) -> Result<Self> {
        for w in points.windows(2) {
            if !(w[1].tau > w[0].tau) {
                return Err(Error::InvalidInput(format!(
                    "delays must be strictly increasing ({} then {})",
                    w[0].tau, w[1].tau
                )));
            }
        }
        for p in &points {
            if !p.tau.is_finite() || !p.area.is_finite() || !(p.area_error >= 0.0) {
                return Err(Error::InvalidInput(format!("invalid echo point {p:?}")));
            }
        }
        Ok(EchoDataset { points })
    }
}

/// area(τ) = i0 exp(−4τ/t2)(1 + η), η ~ N(0, relative_noise). The reported
/// error of each point is the noise standard deviation at that delay.
pub fn synthesize_echo(t2: f64, i0: f64, taus: &[f64], relative_noise: f64, seed: u64) -> Result<EchoDataset> {
    if !(t2 > 0.0) {
        return Err(Error::InvalidInput(format!("T2 must be positive, got {t2}")));
    }
    if !(relative_noise >= 0.0) {
        return Err(Error::InvalidInput(format!("noise must be ≥ 0, got {relative_noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = taus
        .iter()
        .map(|&tau| {
            let clean = i0 * (-4.0 * tau / t2).exp();
            let eta: f64 = StandardNormal.sample(&mut rng);
            EchoPoint {
                tau,
                area: clean * (1.0 + relative_noise * eta),
                area_error: (relative_noise * clean).abs(),
            }
        })
        .collect();
    EchoDataset::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T1Check {
    pub pass: bool,
    /// 2T₁ − T₂, s
    pub margin: f64,
}

/// T₂ can never exceed 2T₁.
pub fn t1_ceiling(t2: f64, t1: f64) -> Result<T1Check> {
    if !(t1 > 0.0) {
        return Err(Error::InvalidInput(format!("T1 must be positive, got {t1}")));
    }
    let margin = 2.0 * t1 - t2;
    Ok(T1Check {
        pass: t2 <= 2.0 * t1,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TensorSpec;
    use approx::assert_relative_eq;

    fn sens(s1: Vector3<f64>, s2: Matrix3<f64>) -> TransitionSensitivity {
        TransitionSensitivity {
            nu: 655.0,
            s1,
            s2,
            field: FieldVector::zero(),
            transition: TransitionId::new(0, 1).unwrap(),
        }
    }

    #[test]
    fn quadratic_limited_ten_ms() {
        let db = 3e-6;
        let target = 10e-3;
        let k = 1.0 / (std::f64::consts::PI * target) / MHZ_TO_HZ / (db * db);
        let ts = sens(Vector3::zeros(), Matrix3::from_diagonal(&Vector3::new(k, 0.5 * k, -0.2 * k)));
        let p = predict_t2(&ts, NoiseVector::worst_case(db)).unwrap();
        assert_relative_eq!(p.t2.seconds().unwrap(), target, max_relative = 1e-12);
        assert_eq!(p.rate_linear, 0.0);
    }

    #[test]
    fn linear_limited_electronic_gradient() {
        let ts = sens(Vector3::new(0.0, 1e4, 0.0), Matrix3::zeros());
        let p = predict_t2(&ts, NoiseVector::worst_case(3e-6)).unwrap();
        assert_relative_eq!(p.t2.seconds().unwrap(), 1.0 / (std::f64::consts::PI * 3e4), max_relative = 1e-12);
        assert_relative_eq!(p.t2.seconds().unwrap(), 10.6e-6, max_relative = 1e-2);
    }

    #[test]
    fn zero_noise_is_infinite() {
        let ts = sens(Vector3::new(1.0, 2.0, 3.0), Matrix3::identity());
        let p = predict_t2(&ts, NoiseVector::worst_case(0.0)).unwrap();
        assert!(p.t2.is_infinite());
        assert!(predict_t2(&ts, NoiseVector::worst_case(-1.0)).is_err());
    }

    #[test]
    fn isotropic_average_of_indefinite_curvature() {
        let ts = sens(Vector3::zeros(), Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 0.0)));
        let p = predict_t2(&ts, NoiseVector::new(1.0, NoiseMode::IsotropicAverage).unwrap()).unwrap();
        let n = 400_000;
        let brute: f64 = sphere_directions(n).iter().map(|v| (v.x * v.x - v.y * v.y).abs()).sum::<f64>() / n as f64;
        assert_relative_eq!(p.rate_quadratic / MHZ_TO_HZ, brute, max_relative = 2e-3);
        let definite = sens(Vector3::new(0.0, 0.0, 2.0), Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0)));
        let q = predict_t2(&definite, NoiseVector::new(1.0, NoiseMode::IsotropicAverage).unwrap()).unwrap();
        assert_relative_eq!(q.rate_quadratic / MHZ_TO_HZ, 2.0, max_relative = 1e-12);
        assert_relative_eq!(q.rate_linear / MHZ_TO_HZ, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fixed_direction_is_literal() {
        let ts = sens(Vector3::new(1.0, -2.0, 0.0), Matrix3::from_diagonal(&Vector3::new(-4.0, 1.0, 1.0)));
        let noise = NoiseVector::new(0.5, NoiseMode::FixedDirection(Vector3::new(2.0, 0.0, 0.0))).unwrap();
        let p = predict_t2(&ts, noise).unwrap();
        assert_relative_eq!(p.rate_linear, 0.5 * MHZ_TO_HZ);
        assert_relative_eq!(p.rate_quadratic, 1.0 * MHZ_TO_HZ);
    }

    #[test]
    fn echo_synthesis_and_ceiling() {
        let d = synthesize_echo(1e-3, 2.0, &[0.0, 250e-6], 0.0, 1).unwrap();
        assert_relative_eq!(d.points[1].area, 2.0 * (-1.0f64).exp(), max_relative = 1e-15);
        assert!(synthesize_echo(0.0, 1.0, &[0.0], 0.0, 1).is_err());
        assert!(t1_ceiling(100e-6, 1.0).unwrap().pass);
        assert!(!t1_ceiling(3.0, 1.0).unwrap().pass);
        assert!(t1_ceiling(2.0, 1.0).unwrap().pass);
        assert!(t1_ceiling(1.0, 0.0).is_err());
    }

    #[test]
    fn inhomogeneity_scales_with_spread() {
        let sys = crate::SpinSystem::spin_half(
            "lin",
            TensorSpec::isotropic(0.0),
            TensorSpec::diagonal([0.0, 0.0, 2.0]),
            0.0,
        );
        let model = sys.model();
        let t = TransitionId::new(0, 2).unwrap();
        let b0 = FieldVector::new(0.0, 0.0, 1e-3);
        let zero = inhomogeneity_dephasing(&model, b0, 0.0, t, 100, 1, Execution::Sequential).unwrap();
        assert!(zero.t2_star.is_infinite());
        let a = inhomogeneity_dephasing(&model, b0, 0.005, t, 2000, 1, Execution::Sequential).unwrap();
        let b = inhomogeneity_dephasing(&model, b0, 0.010, t, 2000, 1, Execution::Parallel).unwrap();
        assert_relative_eq!(b.sigma_hz / a.sigma_hz, 2.0, max_relative = 1e-9);
        let expect = 2.0 * crate::Constants::CODATA.mu_b_over_h * 1e-3 * 0.005 * MHZ_TO_HZ;
        assert_relative_eq!(a.sigma_hz, expect, max_relative = 0.05);
    }
}
