//! First- and second-order Zeeman sensitivity of transition frequencies.
//!
//! Three independent routes are provided:
//! - Hellmann–Feynman derivatives and the second-order perturbation sum,
//!   computed from one diagonalization;
//! - finite differences of tracked eigenvalues with Richardson extrapolation;
//! - the closed-form gradient magnitude for coaligned S = I = 1/2 tensors.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::eigen::jacobi_eigh;
use crate::error::{Error, Result};
use crate::frame::FieldVector;
use crate::hamiltonian::{EigenSolution, SpinModel, TransitionId};
use crate::spin::CMatrix;

/// Default finite-difference step, tesla.
pub const DEFAULT_STEP: f64 = 10e-6;
/// Step used for fields below [`NEAR_ZERO_FIELD`].
pub const NEAR_ZERO_STEP: f64 = 1e-6;
pub const NEAR_ZERO_FIELD: f64 = 1e-3;
/// Two candidate levels whose overlaps differ by less than this are ambiguous.
pub const TRACKING_MARGIN: f64 = 0.1;
/// Gaps below this (MHz) make the perturbation sum diverge.
pub const NEAR_DEGENERACY: f64 = 1e-4;

pub fn default_step(b: FieldVector) -> f64 {
    if b.norm() < NEAR_ZERO_FIELD {
        NEAR_ZERO_STEP
    } else {
        DEFAULT_STEP
    }
}

/// Frequency, gradient and curvature of one transition at one field.
///
/// `s2` is the second-order Taylor coefficient, so that
/// ν(B + δ) ≈ ν + s1·δ + δ·s2·δ; the Hessian of ν is `2 s2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSensitivity {
    pub nu: f64,
    /// MHz/T
    pub s1: Vector3<f64>,
    /// MHz/T²
    pub s2: Matrix3<f64>,
    pub field: FieldVector,
    pub transition: TransitionId,
}

impl TransitionSensitivity {
    pub fn gradient_norm(&self) -> f64 {
        self.s1.norm()
    }

    pub fn hessian(&self) -> Matrix3<f64> {
        self.s2 * 2.0
    }

    /// Largest |eigenvalue| of `s2`.
    pub fn curvature_norm(&self) -> f64 {
        spectral_radius(&self.s2)
    }
}

pub fn spectral_radius(m: &Matrix3<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// MHz/T expressed in units of μB/h.
pub fn in_bohr_units(mhz_per_tesla: f64, mu_b_over_h: f64) -> f64 {
    mhz_per_tesla / mu_b_over_h
}

/// Zeeman operators in the eigenbasis: M_p = V† Z_p V.
fn eigenbasis_zeeman(model: &SpinModel, sol: &EigenSolution) -> [CMatrix; 3] {
    let vh = sol.states.adjoint();
    std::array::from_fn(|p| &vh * &model.zeeman[p] * &sol.states)
}

fn check_cluster_unsplit(m: &[CMatrix; 3], cluster: &[usize]) -> Result<()> {
    if cluster.len() < 2 {
        return Ok(());
    }
    for (p, mp) in m.iter().enumerate() {
        let scale = mp.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let mean = cluster.iter().map(|&k| mp[(k, k)].re).sum::<f64>() / cluster.len() as f64;
        for &a in cluster {
            for &b in cluster {
                let target = if a == b { mean } else { 0.0 };
                let dev = (mp[(a, b)] - Complex64::new(target, 0.0)).norm();
                if dev > 1e-8 * scale {
                    return Err(Error::Degenerate(format!(
                        "levels {cluster:?} are split at first order along axis {p}; derivative undefined"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn cluster_gradient(m: &[CMatrix; 3], cluster: &[usize]) -> Vector3<f64> {
    let n = cluster.len() as f64;
    Vector3::from_fn(|p, _| cluster.iter().map(|&k| m[p][(k, k)].re).sum::<f64>() / n)
}

fn cluster_hessian(m: &[CMatrix; 3], sol: &EigenSolution, cluster: &[usize]) -> Result<Matrix3<f64>> {
    let mut h = Matrix3::zeros();
    for &n in cluster {
        for k in 0..sol.dim() {
            if cluster.contains(&k) {
                continue;
            }
            let gap = sol.energies[n] - sol.energies[k];
            let coupled = (0..3).any(|p| m[p][(n, k)].norm() > 1e-12);
            if !coupled {
                continue;
            }
            if gap.abs() < NEAR_DEGENERACY {
                return Err(Error::Degenerate(format!(
                    "levels {n} and {k} are {gap:.3e} MHz apart; perturbation sum diverges"
                )));
            }
            for p in 0..3 {
                for q in 0..3 {
                    h[(p, q)] += 2.0 * (m[p][(n, k)] * m[q][(k, n)]).re / gap;
                }
            }
        }
    }
    Ok(h / cluster.len() as f64)
}

fn transition_clusters(sol: &EigenSolution, t: TransitionId) -> Result<(Vec<usize>, Vec<usize>)> {
    t.check(sol.dim())?;
    let lower = sol.cluster_of(t.lower);
    let upper = sol.cluster_of(t.upper);
    if lower == upper {
        return Err(Error::Degenerate(format!(
            "levels {} and {} lie in the same degenerate cluster {lower:?}",
            t.lower, t.upper
        )));
    }
    Ok((lower, upper))
}

/// ∂E/∂B of one level (cluster mean when degenerate but unsplit), MHz/T.
pub fn level_gradient(model: &SpinModel, sol: &EigenSolution, level: usize) -> Result<Vector3<f64>> {
    let m = eigenbasis_zeeman(model, sol);
    let c = sol.cluster_of(level);
    check_cluster_unsplit(&m, &c)?;
    Ok(cluster_gradient(&m, &c))
}

/// Hessian of one level energy from the second-order perturbation sum, MHz/T².
pub fn level_hessian(model: &SpinModel, sol: &EigenSolution, level: usize) -> Result<Matrix3<f64>> {
    let m = eigenbasis_zeeman(model, sol);
    let c = sol.cluster_of(level);
    check_cluster_unsplit(&m, &c)?;
    cluster_hessian(&m, sol, &c)
}

/// ∂ν/∂B = ⟨u|∂H/∂B|u⟩ − ⟨l|∂H/∂B|l⟩.
pub fn gradient_hellmann_feynman(model: &SpinModel, b: FieldVector, t: TransitionId) -> Result<Vector3<f64>> {
    let sol = model.solve(b)?;
    gradient_from_solution(model, &sol, t)
}

pub fn gradient_from_solution(model: &SpinModel, sol: &EigenSolution, t: TransitionId) -> Result<Vector3<f64>> {
    let (lower, upper) = transition_clusters(sol, t)?;
    let m = eigenbasis_zeeman(model, sol);
    check_cluster_unsplit(&m, &lower)?;
    check_cluster_unsplit(&m, &upper)?;
    Ok(cluster_gradient(&m, &upper) - cluster_gradient(&m, &lower))
}

/// Hessian of ν from the perturbation sum Σ_k 2Re(⟨n|Z_p|k⟩⟨k|Z_q|n⟩)/(E_n − E_k).
pub fn curvature_perturbative(model: &SpinModel, b: FieldVector, t: TransitionId) -> Result<Matrix3<f64>> {
    let sol = model.solve(b)?;
    hessian_from_solution(model, &sol, t)
}

pub fn hessian_from_solution(model: &SpinModel, sol: &EigenSolution, t: TransitionId) -> Result<Matrix3<f64>> {
    let (lower, upper) = transition_clusters(sol, t)?;
    let m = eigenbasis_zeeman(model, sol);
    check_cluster_unsplit(&m, &lower)?;
    check_cluster_unsplit(&m, &upper)?;
    Ok(cluster_hessian(&m, sol, &upper)? - cluster_hessian(&m, sol, &lower)?)
}

/// ν, S1 (Hellmann–Feynman) and S2 (perturbation sum) from one diagonalization.
pub fn transition_sensitivity(model: &SpinModel, b: FieldVector, t: TransitionId) -> Result<TransitionSensitivity> {
    let sol = model.solve(b)?;
    sensitivity_from_solution(model, &sol, t)
}

pub fn sensitivity_from_solution(model: &SpinModel, sol: &EigenSolution, t: TransitionId) -> Result<TransitionSensitivity> {
    let (lower, upper) = transition_clusters(sol, t)?;
    let m = eigenbasis_zeeman(model, sol);
    check_cluster_unsplit(&m, &lower)?;
    check_cluster_unsplit(&m, &upper)?;
    let s1 = cluster_gradient(&m, &upper) - cluster_gradient(&m, &lower);
    let hess = cluster_hessian(&m, sol, &upper)? - cluster_hessian(&m, sol, &lower)?;
    Ok(TransitionSensitivity {
        nu: sol.cluster_energy(t.upper) - sol.cluster_energy(t.lower),
        s1,
        s2: hess * 0.5,
        field: sol.field,
        transition: t,
    })
}

/// Follows the clusters of `reference` to a solution at a nearby field.
struct Tracker<'a> {
    model: &'a SpinModel,
    reference: EigenSolution,
    lower: Vec<usize>,
    upper: Vec<usize>,
}

impl<'a> Tracker<'a> {
    fn new(model: &'a SpinModel, b: FieldVector, t: TransitionId) -> Result<Self> {
        let reference = model.solve(b)?;
        let (lower, upper) = transition_clusters(&reference, t)?;
        Ok(Tracker {
            model,
            reference,
            lower,
            upper,
        })
    }

    fn tracked_energy(&self, sol: &EigenSolution, cluster: &[usize]) -> Result<f64> {
        let clusters = sol.clusters();
        let mut weights: Vec<(f64, usize)> = clusters
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                let mut w = 0.0;
                for &k in cluster {
                    let v = self.reference.states.column(k);
                    for &l in c {
                        w += sol.states.column(l).dotc(&v).norm_sqr();
                    }
                }
                (w / cluster.len() as f64, ci)
            })
            .collect();
        weights.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (best, ci) = weights[0];
        if let Some(&(second, _)) = weights.get(1) {
            if best - second < TRACKING_MARGIN {
                return Err(Error::Tracking(format!(
                    "levels {cluster:?} overlap two levels at B = {:?} ({best:.3} vs {second:.3}); level crossing inside the stencil, use a smaller step",
                    sol.field.0.as_slice()
                )));
            }
        }
        let target = &clusters[ci];
        if target.len() != cluster.len() {
            return Err(Error::Tracking(format!(
                "degeneracy of levels {cluster:?} changes inside the stencil; use a smaller step"
            )));
        }
        Ok(target.iter().map(|&k| sol.energies[k]).sum::<f64>() / target.len() as f64)
    }

    fn nu_at(&self, b: FieldVector) -> Result<f64> {
        let sol = self.model.solve(b)?;
        Ok(self.tracked_energy(&sol, &self.upper)? - self.tracked_energy(&sol, &self.lower)?)
    }

    fn nu0(&self) -> f64 {
        self.reference.cluster_energy(self.upper[0]) - self.reference.cluster_energy(self.lower[0])
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {step}")));
    }
    Ok(())
}

fn central_gradient(tr: &Tracker, b: FieldVector, h: f64) -> Result<Vector3<f64>> {
    let mut g = Vector3::zeros();
    for p in 0..3 {
        g[p] = (tr.nu_at(b.offset(p, h))? - tr.nu_at(b.offset(p, -h))?) / (2.0 * h);
    }
    Ok(g)
}

/// Central differences at steps h and h/2, combined by Richardson extrapolation.
pub fn gradient_finite_difference(model: &SpinModel, b: FieldVector, t: TransitionId, step: f64) -> Result<Vector3<f64>> {
    check_step(step)?;
    let tr = Tracker::new(model, b, t)?;
    let coarse = central_gradient(&tr, b, step)?;
    let fine = central_gradient(&tr, b, step / 2.0)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

fn central_hessian(tr: &Tracker, b: FieldVector, h: f64) -> Result<Matrix3<f64>> {
    let nu0 = tr.nu0();
    let mut hess = Matrix3::zeros();
    for p in 0..3 {
        let plus = tr.nu_at(b.offset(p, h))?;
        let minus = tr.nu_at(b.offset(p, -h))?;
        hess[(p, p)] = (plus - 2.0 * nu0 + minus) / (h * h);
        for q in (p + 1)..3 {
            let pp = tr.nu_at(b.offset(p, h).offset(q, h))?;
            let pm = tr.nu_at(b.offset(p, h).offset(q, -h))?;
            let mp = tr.nu_at(b.offset(p, -h).offset(q, h))?;
            let mm = tr.nu_at(b.offset(p, -h).offset(q, -h))?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[(p, q)] = v;
            hess[(q, p)] = v;
        }
    }
    Ok(hess)
}

/// Hessian of ν(B) by central second differences on the 3×3 stencil of each
/// axis pair, Richardson-extrapolated over steps h and h/2.
pub fn curvature(model: &SpinModel, b: FieldVector, t: TransitionId, step: f64) -> Result<Matrix3<f64>> {
    check_step(step)?;
    let tr = Tracker::new(model, b, t)?;
    let coarse = central_hessian(&tr, b, step)?;
    let fine = central_hessian(&tr, b, step / 2.0)?;
    let h = (fine * 4.0 - coarse) / 3.0;
    Ok((h + h.transpose()) * 0.5)
}

/// Optical transition between a ground level and an excited level.
pub fn optical_sensitivity(
    ground: &SpinModel,
    excited: &SpinModel,
    b: FieldVector,
    ground_level: usize,
    excited_level: usize,
    offset_mhz: f64,
) -> Result<TransitionSensitivity> {
    let gs = ground.solve(b)?;
    let es = excited.solve(b)?;
    if ground_level >= gs.dim() || excited_level >= es.dim() {
        return Err(Error::InvalidTransition(format!(
            "optical levels ({ground_level}, {excited_level}) out of range"
        )));
    }
    let s1 = level_gradient(excited, &es, excited_level)? - level_gradient(ground, &gs, ground_level)?;
    let hess = level_hessian(excited, &es, excited_level)? - level_hessian(ground, &gs, ground_level)?;
    Ok(TransitionSensitivity {
        nu: offset_mhz + es.cluster_energy(excited_level) - gs.cluster_energy(ground_level),
        s1,
        s2: hess * 0.5,
        field: b,
        transition: TransitionId {
            lower: ground_level,
            upper: excited_level,
        },
    })
}

/// Quasi-uniform unit vectors on the sphere (Fibonacci lattice).
pub fn sphere_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * k as f64;
            Vector3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

fn cluster_slopes(m: &[CMatrix; 3], cluster: &[usize], n: &Vector3<f64>) -> Vec<f64> {
    let k = cluster.len();
    let w = CMatrix::from_fn(k, k, |a, b| {
        (0..3)
            .map(|p| m[p][(cluster[a], cluster[b])] * n[p])
            .sum::<Complex64>()
    });
    jacobi_eigh(&w).map(|e| e.values).unwrap_or_default()
}

/// Largest first-order frequency slope of a transition over field
/// directions, from degenerate perturbation theory within each cluster.
/// Equals |S1| for nondegenerate levels and stays defined when a
/// degeneracy is lifted linearly.
pub fn first_order_slope_bound(model: &SpinModel, sol: &EigenSolution, t: TransitionId) -> Result<f64> {
    t.check(sol.dim())?;
    let lower = sol.cluster_of(t.lower);
    let upper = sol.cluster_of(t.upper);
    if lower.len() == 1 && upper.len() == 1 {
        return gradient_from_solution(model, sol, t).map(|g| g.norm());
    }
    let m = eigenbasis_zeeman(model, sol);
    let mut dirs = sphere_directions(400);
    dirs.extend([Vector3::x(), Vector3::y(), Vector3::z()]);
    let mut worst = 0.0f64;
    for n in &dirs {
        let sl = cluster_slopes(&m, &lower, n);
        let su = cluster_slopes(&m, &upper, n);
        for a in &su {
            for b in &sl {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Closed-form gradient magnitudes for coaligned A and g (tensor frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormGradient {
    /// Full expression including the B_z term, MHz/T.
    pub full: f64,
    /// In-plane simplification with A_z dominant; only when B_z = 0.
    pub in_plane: Option<f64>,
}

/// |S1| of the φ± transition (splitting |Ax + Ay|/2) to leading order in B:
///
///   |S1| = 2μB² sqrt(Bz²gz⁴/(Ax+Ay)² + By²gy⁴Ax²/(Ax²−Az²)² + Bx²gx⁴Ay²/(Ay²−Az²)²)
///
/// and, for B in the x-y plane at angle φ from x,
///
///   |S1| = 2μB² (B/Az²) sqrt(gy⁴Ax² sin²φ + gx⁴Ay² cos²φ).
///
/// The nuclear Zeeman term is not part of this expansion.
pub fn closed_form_gradient(a: [f64; 3], g: [f64; 3], b: Vector3<f64>, mu_b_over_h: f64) -> Result<ClosedFormGradient> {
    let [ax, ay, az] = a;
    let [gx, gy, gz] = g;
    let tol = 1e-12 * az.abs().max(1.0);
    if (ax.abs() - az.abs()).abs() <= tol || (ay.abs() - az.abs()).abs() <= tol {
        return Err(Error::Singular(format!("|Ax| or |Ay| equals |Az| for A = {a:?}")));
    }
    if b.z != 0.0 && (ax + ay).abs() <= tol {
        return Err(Error::Singular(format!("Ax + Ay = 0 for A = {a:?} with Bz ≠ 0")));
    }
    let mu2 = mu_b_over_h * mu_b_over_h;
    let z_term = if b.z == 0.0 {
        0.0
    } else {
        (b.z * b.z * gz.powi(4)) / (ax + ay).powi(2)
    };
    let y_term = b.y * b.y * gy.powi(4) * ax * ax / (ax * ax - az * az).powi(2);
    let x_term = b.x * b.x * gx.powi(4) * ay * ay / (ay * ay - az * az).powi(2);
    let full = 2.0 * mu2 * (z_term + y_term + x_term).sqrt();
    let in_plane = (b.z == 0.0).then(|| {
        let bm = b.norm();
        let phi = b.y.atan2(b.x);
        2.0 * mu2 * bm / (az * az)
            * (gy.powi(4) * ax * ax * phi.sin().powi(2) + gx.powi(4) * ay * ay * phi.cos().powi(2)).sqrt()
    });
    Ok(ClosedFormGradient { full, in_plane })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::TensorSpec;
    use crate::hamiltonian::{pair_transition, BellLabel, SpinSystem};
    use crate::spin::Constants;
    use approx::assert_relative_eq;

    fn yb() -> SpinSystem {
        SpinSystem::spin_half(
            "yb",
            TensorSpec::diagonal([1183.0, -127.0, 5000.0]),
            TensorSpec::diagonal([0.13, 1.5, 6.06]),
            0.98734,
        )
    }

    #[test]
    fn linear_zeeman_is_exact() {
        let sys = SpinSystem::spin_half("e", TensorSpec::isotropic(0.0), TensorSpec::diagonal([0.0, 0.0, 2.0]), 0.0);
        let model = sys.model();
        let b = FieldVector::new(0.0, 0.0, 0.1);
        // levels 0,1 are |↓⟩ ⊗ nuclear, 2,3 are |↑⟩ ⊗ nuclear
        let t = TransitionId::new(0, 2).unwrap();
        let hf = gradient_hellmann_feynman(&model, b, t).unwrap();
        let expect = 2.0 * Constants::CODATA.mu_b_over_h;
        assert_relative_eq!(hf.z, expect, epsilon = 1e-8);
        assert!(hf.x.abs() < 1e-9 && hf.y.abs() < 1e-9);
        let fd = gradient_finite_difference(&model, b, t, DEFAULT_STEP).unwrap();
        assert_relative_eq!(fd.z, expect, max_relative = 1e-9);
        let c = curvature(&model, b, t, DEFAULT_STEP).unwrap();
        assert!(c.abs().max() < 1.0, "{c}");
        let p = curvature_perturbative(&model, b, t).unwrap();
        assert!(p.abs().max() < 1e-6);
    }

    #[test]
    fn zero_field_gradient_vanishes() {
        let model = yb().model();
        for t in TransitionId::all(4) {
            let g = gradient_hellmann_feynman(&model, FieldVector::zero(), t).unwrap();
            assert!(g.norm() <= 1e-6 * Constants::CODATA.mu_b_over_h);
            let fd = gradient_finite_difference(&model, FieldVector::zero(), t, NEAR_ZERO_STEP).unwrap();
            assert!(fd.norm() <= 1e-3, "{t}: {fd}");
        }
    }

    #[test]
    fn degenerate_split_levels_are_rejected() {
        let sys = SpinSystem::spin_half("iso", TensorSpec::isotropic(100.0), TensorSpec::isotropic(2.0), 0.0);
        let model = sys.model();
        // triplet (levels 1..=3) splits linearly in any field direction
        let r = gradient_hellmann_feynman(&model, FieldVector::zero(), TransitionId::new(0, 1).unwrap());
        assert!(matches!(r, Err(Error::Degenerate(_))));
        let sol = model.solve(FieldVector::zero()).unwrap();
        let bound = first_order_slope_bound(&model, &sol, TransitionId::new(0, 1).unwrap()).unwrap();
        assert!(bound > 1000.0);
    }

    #[test]
    fn isotropic_clock_transition_curvature() {
        // m_F = 0 pair of an isotropic hyperfine doublet: ν = sqrt(a² + (gμB B)²)
        let a = 1000.0;
        let g = 2.0;
        let sys = SpinSystem::spin_half("iso", TensorSpec::isotropic(a), TensorSpec::isotropic(g), 0.0);
        let model = sys.model();
        let bz = 2e-3;
        let b = FieldVector::new(0.0, 0.0, bz);
        let x = g * Constants::CODATA.mu_b_over_h;
        let expect = x * x * a * a / (a * a + (x * bz).powi(2)).powf(1.5);
        // the two m_F = 0 levels are the lowest and the third level
        let sol = model.solve(b).unwrap();
        let ops = &model.ops;
        let mf0: Vec<usize> = (0..4)
            .filter(|&k| {
                let (s, i) = crate::hamiltonian::spin_expectations(ops, &sol.state(k));
                (s.z + i.z).abs() < 1e-9
            })
            .collect();
        let t = TransitionId::new(mf0[0], mf0[1]).unwrap();
        let fd = curvature(&model, b, t, DEFAULT_STEP).unwrap();
        let pt = curvature_perturbative(&model, b, t).unwrap();
        assert_relative_eq!(fd[(2, 2)], expect, max_relative = 1e-4);
        assert_relative_eq!(pt[(2, 2)], expect, max_relative = 1e-9);
    }

    #[test]
    fn closed_form_examples() {
        let mu = Constants::CODATA.mu_b_over_h;
        let a = [1183.0, -127.0, 5000.0];
        let g = [0.13, 1.5, 6.06];
        let along_z = closed_form_gradient(a, g, Vector3::new(0.0, 0.0, 1e-3), mu).unwrap();
        assert_relative_eq!(along_z.full, 2.0 * mu * mu * 1e-3 * g[2] * g[2] / (a[0] + a[1]).abs(), max_relative = 1e-12);
        assert!(along_z.in_plane.is_none());

        let x = closed_form_gradient(a, g, Vector3::new(5e-3, 0.0, 0.0), mu).unwrap();
        assert_relative_eq!(x.full, 0.1683, max_relative = 1e-3);
        let y = closed_form_gradient(a, g, Vector3::new(0.0, 5e-3, 0.0), mu).unwrap();
        assert!((y.full - 221.0).abs() < 1.0, "{}", y.full);
        assert!(matches!(
            closed_form_gradient([5000.0, 1.0, 5000.0], g, Vector3::x(), mu),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn closed_form_matches_electronic_model_in_plane() {
        let mut sys = yb();
        sys.nuclear_g = crate::hamiltonian::NuclearG::Isotropic(0.0);
        let model = sys.model();
        let t = pair_transition(&sys, BellLabel::PhiPlus, BellLabel::PhiMinus).unwrap();
        for phi in [0.0f64, 90.0] {
            let b = FieldVector::from_polar_deg(5e-3, 0.0, phi);
            let fd = gradient_finite_difference(&model, b, t, DEFAULT_STEP).unwrap().norm();
            let cf = closed_form_gradient([1183.0, -127.0, 5000.0], [0.13, 1.5, 6.06], b.0, Constants::CODATA.mu_b_over_h)
                .unwrap();
            assert!((cf.full - fd).abs() / fd < 0.1, "phi {phi}: {} vs {fd}", cf.full);
        }
    }

    #[test]
    fn worst_direction_gradient_is_electronic_scale() {
        let model = yb().model();
        let t = pair_transition(&yb(), BellLabel::PsiPlus, BellLabel::PsiMinus).unwrap();
        let worst = sphere_directions(200)
            .into_iter()
            .map(|n| gradient_hellmann_feynman(&model, FieldVector(n * 5e-3), t).unwrap().norm())
            .fold(0.0, f64::max);
        assert!(worst >= 1e4, "{worst}");
        assert!(worst <= 6.06 * Constants::CODATA.mu_b_over_h * 1.01);
    }
}
