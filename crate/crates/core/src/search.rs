//! Angular maps of the gradient |S₁| at fixed field magnitude, minimization
//! over field direction, and zero-field ZEFOZ reports.

use std::io::{self, Write};

use crate::decoherence::{predict_t2, NoiseVector, T2};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::frame::{direction_unit_vector, polar_angles, FieldVector};
use crate::hamiltonian::{SpinModel, SpinSystem, TransitionId};
use crate::sensitivity::{
    first_order_slope_bound, hessian_from_solution, level_gradient, level_hessian, sensitivity_from_solution,
    spectral_radius,
};

/// Gradient threshold for a transition to count as ZEFOZ, MHz/T.
pub const ZEFOZ_THRESHOLD: f64 = 1e-3;

/// Inclusive range of angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidInput(format!("grid step must be positive, got {step}")));
        }
        if !(min.is_finite() && max.is_finite() && max >= min) {
            return Err(Error::InvalidInput(format!("grid range [{min}, {max}] is empty")));
        }
        Ok(AxisRange { min, max, step })
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.min + k as f64 * self.step).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub theta: AxisRange,
    pub phi: AxisRange,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            theta: AxisRange {
                min: -10.0,
                max: 10.0,
                step: 0.5,
            },
            phi: AxisRange {
                min: -90.0,
                max: 0.0,
                step: 0.5,
            },
        }
    }
}

/// |S₁| on a (θ, φ) grid, row-major with θ outer. `None` marks cells where
/// the gradient is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    pub spec: GridSpec,
    pub magnitude: f64,
    pub transition: TransitionId,
    pub theta_deg: Vec<f64>,
    pub phi_deg: Vec<f64>,
    pub grad: Vec<Option<f64>>,
    pub t2: Option<Vec<Option<T2>>>,
}

impl AngularGrid {
    pub fn value(&self, i_theta: usize, i_phi: usize) -> Option<f64> {
        self.grad[i_theta * self.phi_deg.len() + i_phi]
    }

    fn valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.grad.iter().enumerate().filter_map(|(k, g)| g.map(|v| (k, v)))
    }

    /// (θ, φ, |S₁|) of the smallest valid cell; the first one in row-major order on ties.
    pub fn argmin(&self) -> Option<(f64, f64, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, v) in self.valid() {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
        best.map(|(k, v)| {
            let n = self.phi_deg.len();
            (self.theta_deg[k / n], self.phi_deg[k % n], v)
        })
    }

    pub fn min(&self) -> Option<f64> {
        self.valid().map(|(_, v)| v).reduce(f64::min)
    }

    pub fn max(&self) -> Option<f64> {
        self.valid().map(|(_, v)| v).reduce(f64::max)
    }

    pub fn invalid_cells(&self) -> usize {
        self.grad.iter().filter(|g| g.is_none()).count()
    }

    /// log₁₀(max / min) over valid cells.
    pub fn decades(&self) -> Option<f64> {
        Some((self.max()? / self.min()?).log10())
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "theta_deg,phi_deg,grad_mhz_per_t,log10_grad,t2_pred_s")?;
        let n = self.phi_deg.len();
        for (k, g) in self.grad.iter().enumerate() {
            let theta = self.theta_deg[k / n];
            let phi = self.phi_deg[k % n];
            let t2 = match (g, &self.t2) {
                (None, _) => "nan".to_string(),
                (Some(_), Some(t)) => t[k].and_then(T2::seconds).map(crate::fmt_num).unwrap_or_default(),
                (Some(_), None) => String::new(),
            };
            match g {
                Some(v) => writeln!(out, "{theta},{phi},{},{},{t2}", crate::fmt_num(*v), crate::fmt_num(v.log10()))?,
                None => writeln!(out, "{theta},{phi},nan,nan,{t2}")?,
            }
        }
        Ok(())
    }
}

fn field_at(magnitude: f64, theta_deg: f64, phi_deg: f64) -> FieldVector {
    FieldVector::from_polar_deg(magnitude, theta_deg, phi_deg)
}

/// |S₁| over the grid. Cells whose gradient is undefined are recorded as
/// `None` rather than failing the map. With `noise`, each cell also carries
/// a T₂ prediction.
pub fn angular_gradient_map(
    model: &SpinModel,
    magnitude: f64,
    spec: GridSpec,
    t: TransitionId,
    noise: Option<NoiseVector>,
    exec: Execution,
) -> Result<AngularGrid> {
    AxisRange::new(spec.theta.min, spec.theta.max, spec.theta.step)?;
    AxisRange::new(spec.phi.min, spec.phi.max, spec.phi.step)?;
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(Error::InvalidInput(format!("field magnitude must be finite and ≥ 0, got {magnitude}")));
    }
    t.check(model.dim())?;
    let theta_deg = spec.theta.values();
    let phi_deg = spec.phi.values();
    let n_phi = phi_deg.len();
    let cells: Vec<Option<(f64, Option<T2>)>> = exec.map_indices(theta_deg.len() * n_phi, |k| {
        let b = field_at(magnitude, theta_deg[k / n_phi], phi_deg[k % n_phi]);
        let sol = model.solve(b).ok()?;
        let ts = sensitivity_from_solution(model, &sol, t).ok()?;
        let t2 = noise.and_then(|nv| predict_t2(&ts, nv).ok()).map(|p| p.t2);
        Some((ts.s1.norm(), t2))
    });
    let grad = cells.iter().map(|c| c.map(|(g, _)| g)).collect();
    let t2 = noise.map(|_| cells.iter().map(|c| c.and_then(|(_, t)| t)).collect());
    Ok(AngularGrid {
        spec,
        magnitude,
        transition: t,
        theta_deg,
        phi_deg,
        grad,
        t2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Edge of the initial simplex, degrees.
    pub initial_step: f64,
    pub max_iterations: usize,
    /// Simplex diameter for convergence, degrees.
    pub x_tol: f64,
    /// Relative spread of simplex values for convergence.
    pub f_tol: f64,
    /// Spacing of the refinement grid, degrees.
    pub refine_step: f64,
    /// Refinement grid points on each side of the candidate.
    pub refine_half_width: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            initial_step: 1.0,
            max_iterations: 500,
            x_tol: 0.01,
            f_tol: 1e-3,
            refine_step: 0.05,
            refine_half_width: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimumReport {
    pub theta_deg: f64,
    pub phi_deg: f64,
    /// MHz/T
    pub grad: f64,
    pub t2: Option<T2>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    /// Best vertex after each Nelder–Mead iteration, then each refinement.
    pub trace: Vec<TracePoint>,
}

struct Objective<'a> {
    model: &'a SpinModel,
    magnitude: f64,
    t: TransitionId,
    evaluations: usize,
    best: TracePoint,
}

impl Objective<'_> {
    fn eval(&mut self, theta: f64, phi: f64) -> f64 {
        self.evaluations += 1;
        let b = field_at(self.magnitude, theta, phi);
        let v = self
            .model
            .solve(b)
            .and_then(|sol| crate::sensitivity::gradient_from_solution(self.model, &sol, self.t))
            .map(|g| g.norm())
            .unwrap_or(f64::INFINITY);
        if v < self.best.grad {
            self.best = TracePoint {
                theta_deg: theta,
                phi_deg: phi,
                grad: v,
            };
        }
        v
    }
}

type Vertex = ([f64; 2], f64);

fn nelder_mead(obj: &mut Objective, start: [f64; 2], opts: &SearchOptions, trace: &mut Vec<TracePoint>) -> (usize, bool) {
    let mut simplex: Vec<Vertex> = vec![
        start,
        [start[0] + opts.initial_step, start[1]],
        [start[0], start[1] + opts.initial_step],
    ]
    .into_iter()
    .map(|x| (x, obj.eval(x[0], x[1])))
    .collect();
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for iter in 1..=opts.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let centroid = [
            (simplex[0].0[0] + simplex[1].0[0]) / 2.0,
            (simplex[0].0[1] + simplex[1].0[1]) / 2.0,
        ];
        let worst = simplex[2];
        let reflected = lerp(centroid, worst.0, -1.0);
        let fr = obj.eval(reflected[0], reflected[1]);
        if fr < simplex[0].1 {
            let expanded = lerp(centroid, worst.0, -2.0);
            let fe = obj.eval(expanded[0], expanded[1]);
            simplex[2] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (reflected, fr);
        } else {
            let (towards, fref) = if fr < worst.1 { (reflected, fr) } else { (worst.0, worst.1) };
            let contracted = lerp(centroid, towards, 0.5);
            let fc = obj.eval(contracted[0], contracted[1]);
            if fc < fref {
                simplex[2] = (contracted, fc);
            } else {
                let x0 = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let x = lerp(x0, v.0, 0.5);
                    *v = (x, obj.eval(x[0], x[1]));
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(TracePoint {
            theta_deg: simplex[0].0[0],
            phi_deg: simplex[0].0[1],
            grad: simplex[0].1,
        });
        let diameter = (0..3)
            .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
            .map(|(i, j)| (simplex[i].0[0] - simplex[j].0[0]).hypot(simplex[i].0[1] - simplex[j].0[1]))
            .fold(0.0, f64::max);
        let spread = simplex[2].1 - simplex[0].1;
        let f_ok = spread.is_finite() && spread <= opts.f_tol * simplex[0].1.abs() + 1e-12;
        if diameter < opts.x_tol && f_ok {
            return (iter, true);
        }
    }
    (opts.max_iterations, false)
}

/// Nelder–Mead on (θ, φ) in degrees minimizing |S₁| at fixed |B|, followed
/// by a check on a local grid; if a grid point beats the simplex the search
/// restarts from it. The returned point is the best of every evaluation.
pub fn minimize_gradient_direction(
    model: &SpinModel,
    magnitude: f64,
    initial: (f64, f64),
    t: TransitionId,
    opts: SearchOptions,
    noise: Option<NoiseVector>,
) -> Result<OptimumReport> {
    t.check(model.dim())?;
    if !(initial.0.is_finite() && initial.1.is_finite()) {
        return Err(Error::InvalidInput("initial direction must be finite".into()));
    }
    let mut obj = Objective {
        model,
        magnitude,
        t,
        evaluations: 0,
        best: TracePoint {
            theta_deg: initial.0,
            phi_deg: initial.1,
            grad: f64::INFINITY,
        },
    };
    let mut trace = Vec::new();
    let mut start = [initial.0, initial.1];
    let mut iterations = 0;
    let mut converged = false;
    const MAX_RESTARTS: usize = 5;
    for _ in 0..=MAX_RESTARTS {
        let (it, ok) = nelder_mead(&mut obj, start, &opts, &mut trace);
        iterations += it;
        converged = ok;
        let centre = obj.best;
        let h = opts.refine_half_width as i64;
        for i in -h..=h {
            for j in -h..=h {
                obj.eval(
                    centre.theta_deg + i as f64 * opts.refine_step,
                    centre.phi_deg + j as f64 * opts.refine_step,
                );
            }
        }
        trace.push(obj.best);
        if obj.best == centre {
            break;
        }
        start = [obj.best.theta_deg, obj.best.phi_deg];
    }
    let best = obj.best;
    if !best.grad.is_finite() {
        return Err(Error::Degenerate("gradient undefined at every evaluated direction".into()));
    }
    let (theta, phi) = {
        let (t_rad, p_rad) = polar_angles(&direction_unit_vector(best.theta_deg.to_radians(), best.phi_deg.to_radians()));
        (t_rad.to_degrees(), p_rad.to_degrees())
    };
    let t2 = match noise {
        Some(nv) => {
            let ts = crate::sensitivity::transition_sensitivity(model, field_at(magnitude, theta, phi), t)?;
            Some(predict_t2(&ts, nv)?.t2)
        }
        None => None,
    };
    let warning = (!converged).then(|| format!("no convergence after {} iterations; best point returned", opts.max_iterations));
    Ok(OptimumReport {
        theta_deg: theta,
        phi_deg: phi,
        grad: best.grad,
        t2,
        iterations,
        evaluations: obj.evaluations,
        converged,
        warning,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionKind {
    Spin,
    Optical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZefozRow {
    pub kind: TransitionKind,
    /// "ground", "excited" or "optical"
    pub system: String,
    pub lower: usize,
    pub upper: usize,
    pub nu: f64,
    /// Largest first-order slope over field directions, MHz/T.
    pub grad: f64,
    /// Spectral norm of S₂ when defined, MHz/T².
    pub curvature: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropyCheck {
    pub system: String,
    pub pass: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZefozReport {
    pub rows: Vec<ZefozRow>,
    pub anisotropy: Vec<AnisotropyCheck>,
}

impl ZefozReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Whether the hyperfine principal values are distinct and nonzero, and
/// whether the nuclear spin is half-integer.
pub fn anisotropy_check(sys: &SpinSystem) -> AnisotropyCheck {
    let a = sys.hyperfine.principal_values;
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let tol = 1e-9 * scale.max(1e-300);
    let names = ["A_x", "A_y", "A_z"];
    let mut notes = Vec::new();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if (a[i] - a[j]).abs() <= tol {
            notes.push(format!("{} = {} ({})", names[i], names[j], a[i]));
        }
    }
    for (k, v) in a.iter().enumerate() {
        if v.abs() <= tol {
            notes.push(format!("{} = 0", names[k]));
        }
    }
    let mut pass = notes.is_empty();
    if !sys.nuclear_spin.is_half_odd() {
        notes.push(format!("integer nuclear spin I = {}", sys.nuclear_spin));
        pass = false;
    }
    if sys.electron_spin != crate::HalfInteger::HALF {
        notes.push(format!("electron spin S = {}", sys.electron_spin));
        pass = false;
    }
    AnisotropyCheck {
        system: sys.label.clone(),
        pass,
        notes,
    }
}

fn spin_rows(model: &SpinModel, name: &str) -> Result<Vec<ZefozRow>> {
    let sol = model.solve(FieldVector::zero())?;
    let mut rows = Vec::new();
    for t in TransitionId::all(sol.dim()) {
        let grad = first_order_slope_bound(model, &sol, t)?;
        let curvature = hessian_from_solution(model, &sol, t)
            .ok()
            .map(|h| spectral_radius(&(h * 0.5)));
        rows.push(ZefozRow {
            kind: TransitionKind::Spin,
            system: name.to_string(),
            lower: t.lower,
            upper: t.upper,
            nu: sol.energies[t.upper] - sol.energies[t.lower],
            grad,
            curvature,
            pass: grad <= ZEFOZ_THRESHOLD,
        });
    }
    Ok(rows)
}

/// Every spin transition (and, with an excited state, every optical
/// transition) at B = 0.
pub fn zero_field_report(ground: &SpinSystem, excited: Option<(&SpinSystem, f64)>) -> Result<ZefozReport> {
    let gm = ground.model();
    let mut rows = spin_rows(&gm, "ground")?;
    let mut anisotropy = vec![anisotropy_check(ground)];
    if let Some((ex, offset)) = excited {
        let em = ex.model();
        rows.extend(spin_rows(&em, "excited")?);
        anisotropy.push(anisotropy_check(ex));
        let gs = gm.solve(FieldVector::zero())?;
        let es = em.solve(FieldVector::zero())?;
        for g in 0..gs.dim() {
            for e in 0..es.dim() {
                let grad = match (level_gradient(&em, &es, e), level_gradient(&gm, &gs, g)) {
                    (Ok(a), Ok(b)) => (a - b).norm(),
                    _ => optical_slope_bound(&gm, &gs, g, &em, &es, e),
                };
                let curvature = match (level_hessian(&em, &es, e), level_hessian(&gm, &gs, g)) {
                    (Ok(a), Ok(b)) => Some(spectral_radius(&((a - b) * 0.5))),
                    _ => None,
                };
                rows.push(ZefozRow {
                    kind: TransitionKind::Optical,
                    system: "optical".to_string(),
                    lower: g,
                    upper: e,
                    nu: offset + es.energies[e] - gs.energies[g],
                    grad,
                    curvature,
                    pass: grad <= ZEFOZ_THRESHOLD,
                });
            }
        }
    }
    Ok(ZefozReport { rows, anisotropy })
}

fn cluster_slope_set(model: &SpinModel, sol: &crate::hamiltonian::EigenSolution, level: usize, n: &nalgebra::Vector3<f64>) -> Vec<f64> {
    let c = sol.cluster_of(level);
    let z = model.zeeman_along(n);
    let w = crate::spin::CMatrix::from_fn(c.len(), c.len(), |a, b| {
        sol.states.column(c[a]).dotc(&(&z * sol.states.column(c[b])))
    });
    crate::eigen::jacobi_eigh(&w).map(|e| e.values).unwrap_or_default()
}

fn optical_slope_bound(
    gm: &SpinModel,
    gs: &crate::hamiltonian::EigenSolution,
    g: usize,
    em: &SpinModel,
    es: &crate::hamiltonian::EigenSolution,
    e: usize,
) -> f64 {
    let mut worst = 0.0f64;
    for n in crate::sensitivity::sphere_directions(400) {
        let lo = cluster_slope_set(gm, gs, g, &n);
        let hi = cluster_slope_set(em, es, e, &n);
        for a in &hi {
            for b in &lo {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}
