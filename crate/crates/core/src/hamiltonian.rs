//! Electron-nuclear spin Hamiltonian
//!
//!   H = S·A·I + μB B·g·S − μn B·gn·I (+ I·Q·I)
//!
//! with energies in MHz and fields in tesla. The Hamiltonian is affine in
//! the field, H(B) = H0 + Σ_p B_p Z_p, and [`SpinModel`] caches H0 and the
//! three Zeeman operators Z_p = ∂H/∂B_p.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::eigen;
use crate::error::{Error, Result};
use crate::frame::{EulerAngles, FieldVector, TensorSpec};
use crate::spin::{embed_operators, spin_rotation, CMatrix, Constants, HalfInteger, ProductOperators};

/// Levels closer than this (MHz) form a degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuclearG {
    Isotropic(f64),
    Tensor(TensorSpec),
}

impl NuclearG {
    pub fn to_lab(&self) -> Matrix3<f64> {
        match self {
            NuclearG::Isotropic(g) => Matrix3::identity() * *g,
            NuclearG::Tensor(t) => t.to_lab(),
        }
    }
}

/// One electronic level of a paramagnetic ion.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    pub label: String,
    pub electron_spin: HalfInteger,
    pub nuclear_spin: HalfInteger,
    /// Hyperfine tensor, MHz.
    pub hyperfine: TensorSpec,
    /// Electronic g tensor.
    pub g: TensorSpec,
    pub nuclear_g: NuclearG,
    /// Nuclear quadrupole tensor, MHz.
    pub quadrupole: Option<TensorSpec>,
    pub constants: Constants,
}

impl SpinSystem {
    /// S = I = 1/2 system with isotropic nuclear g factor.
    pub fn spin_half(label: &str, hyperfine: TensorSpec, g: TensorSpec, nuclear_g: f64) -> Self {
        SpinSystem {
            label: label.to_string(),
            electron_spin: HalfInteger::HALF,
            nuclear_spin: HalfInteger::HALF,
            hyperfine,
            g,
            nuclear_g: NuclearG::Isotropic(nuclear_g),
            quadrupole: None,
            constants: Constants::CODATA,
        }
    }

    pub fn dim(&self) -> usize {
        self.electron_spin.dim() * self.nuclear_spin.dim()
    }

    pub fn is_spin_half_pair(&self) -> bool {
        self.electron_spin.twice() == 1 && self.nuclear_spin.twice() == 1
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.quadrupole.is_some() && self.nuclear_spin.twice() == 1 {
            out.push(format!(
                "{}: quadrupole tensor with I = 1/2 only shifts all levels by a constant",
                self.label
            ));
        }
        out
    }

    pub fn model(&self) -> SpinModel {
        SpinModel::new(self)
    }
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Precomputed operators for repeated diagonalization of one system.
#[derive(Debug, Clone)]
pub struct SpinModel {
    pub ops: ProductOperators,
    /// Field-independent part (hyperfine and quadrupole).
    pub zero_field: CMatrix,
    /// Z_p = ∂H/∂B_p, MHz/T.
    pub zeeman: [CMatrix; 3],
}

impl SpinModel {
    pub fn new(sys: &SpinSystem) -> Self {
        let ops = embed_operators(sys.electron_spin, sys.nuclear_spin);
        let d = ops.dim();
        let a = sys.hyperfine.to_lab();
        let g = sys.g.to_lab();
        let gn = sys.nuclear_g.to_lab();
        let mu_b = sys.constants.mu_b_over_h;
        let mu_n = sys.constants.mu_n_over_h;

        let mut h0 = CMatrix::zeros(d, d);
        for p in 0..3 {
            for q in 0..3 {
                if a[(p, q)] != 0.0 {
                    h0 += (&ops.s[p] * &ops.i[q]) * real(a[(p, q)]);
                }
            }
        }
        if let Some(qt) = &sys.quadrupole {
            let qm = qt.to_lab();
            for p in 0..3 {
                for q in 0..3 {
                    if qm[(p, q)] != 0.0 {
                        h0 += (&ops.i[p] * &ops.i[q]) * real(qm[(p, q)]);
                    }
                }
            }
        }
        let zeeman = std::array::from_fn(|p| {
            let mut z = CMatrix::zeros(d, d);
            for q in 0..3 {
                z += &ops.s[q] * real(mu_b * g[(p, q)]);
                z -= &ops.i[q] * real(mu_n * gn[(p, q)]);
            }
            z
        });
        SpinModel {
            ops,
            zero_field: h0,
            zeeman,
        }
    }

    pub fn dim(&self) -> usize {
        self.zero_field.nrows()
    }

    pub fn hamiltonian(&self, b: FieldVector) -> CMatrix {
        let mut h = self.zero_field.clone();
        for p in 0..3 {
            if b.0[p] != 0.0 {
                h += &self.zeeman[p] * real(b.0[p]);
            }
        }
        h
    }

    /// Σ_p n_p Z_p for a direction (or field) n.
    pub fn zeeman_along(&self, n: &Vector3<f64>) -> CMatrix {
        let d = self.dim();
        let mut z = CMatrix::zeros(d, d);
        for p in 0..3 {
            z += &self.zeeman[p] * real(n[p]);
        }
        z
    }

    pub fn solve(&self, b: FieldVector) -> Result<EigenSolution> {
        eigensolve(&self.hamiltonian(b), b)
    }
}

pub fn build_hamiltonian(sys: &SpinSystem, b: FieldVector) -> CMatrix {
    SpinModel::new(sys).hamiltonian(b)
}

/// Sorted energies and eigenstates of H at a given field.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub energies: Vec<f64>,
    /// Eigenvectors as columns, same order as `energies`.
    pub states: CMatrix,
    pub field: FieldVector,
}

impl EigenSolution {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn state(&self, k: usize) -> nalgebra::DVector<Complex64> {
        self.states.column(k).into_owned()
    }

    /// Groups of consecutive levels whose spacing is below [`DEGENERACY_TOL`].
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (k, e) in self.energies.iter().enumerate() {
            match out.last_mut() {
                Some(last) if (e - self.energies[*last.last().unwrap()]).abs() < DEGENERACY_TOL => last.push(k),
                _ => out.push(vec![k]),
            }
        }
        out
    }

    pub fn cluster_of(&self, level: usize) -> Vec<usize> {
        self.clusters()
            .into_iter()
            .find(|c| c.contains(&level))
            .unwrap_or_else(|| vec![level])
    }

    /// Mean energy of the cluster containing `level`.
    pub fn cluster_energy(&self, level: usize) -> f64 {
        let c = self.cluster_of(level);
        c.iter().map(|&k| self.energies[k]).sum::<f64>() / c.len() as f64
    }
}

pub fn eigensolve(h: &CMatrix, field: FieldVector) -> Result<EigenSolution> {
    let e = eigen::jacobi_eigh(h)?;
    Ok(EigenSolution {
        energies: e.values,
        states: e.vectors,
        field,
    })
}

/// Pair of level indices into an [`EigenSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionId {
    pub lower: usize,
    pub upper: usize,
}

impl TransitionId {
    pub fn new(lower: usize, upper: usize) -> Result<Self> {
        if lower == upper {
            return Err(Error::InvalidTransition(format!("lower and upper level are both {lower}")));
        }
        Ok(TransitionId { lower, upper })
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.lower == self.upper || self.lower >= dim || self.upper >= dim {
            return Err(Error::InvalidTransition(format!(
                "levels ({}, {}) invalid for dimension {dim}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// All pairs i < j of a d-level system.
    pub fn all(dim: usize) -> Vec<TransitionId> {
        let mut out = Vec::new();
        for i in 0..dim {
            for j in (i + 1)..dim {
                out.push(TransitionId { lower: i, upper: j });
            }
        }
        out
    }
}

impl fmt::Display for TransitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lower, self.upper)
    }
}

/// Zero-field eigenstate labels of an S = I = 1/2 system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellLabel {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

impl BellLabel {
    pub const ALL: [BellLabel; 4] = [BellLabel::PsiPlus, BellLabel::PsiMinus, BellLabel::PhiPlus, BellLabel::PhiMinus];

    /// Components in the |↑⇑⟩, |↑⇓⟩, |↓⇑⟩, |↓⇓⟩ basis of the hyperfine
    /// principal frame. The labels follow the energies
    /// E_ψ± = ¼[Az ± (Ax − Ay)] and E_φ± = ¼[−Az ± (Ax + Ay)], which for
    /// H = S·A·I belong to the aligned (ψ) and anti-aligned (φ) combinations.
    pub fn vector(self) -> [f64; 4] {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            BellLabel::PsiPlus => [r, 0.0, 0.0, r],
            BellLabel::PsiMinus => [r, 0.0, 0.0, -r],
            BellLabel::PhiPlus => [0.0, r, r, 0.0],
            BellLabel::PhiMinus => [0.0, r, -r, 0.0],
        }
    }
}

impl fmt::Display for BellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BellLabel::PsiPlus => "psi+",
            BellLabel::PsiMinus => "psi-",
            BellLabel::PhiPlus => "phi+",
            BellLabel::PhiMinus => "phi-",
        };
        f.write_str(s)
    }
}

/// Closed-form zero-field energies for S = I = 1/2 (MHz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroFieldLevels {
    pub psi_plus: f64,
    pub psi_minus: f64,
    pub phi_plus: f64,
    pub phi_minus: f64,
}

impl ZeroFieldLevels {
    pub fn energy(&self, label: BellLabel) -> f64 {
        match label {
            BellLabel::PsiPlus => self.psi_plus,
            BellLabel::PsiMinus => self.psi_minus,
            BellLabel::PhiPlus => self.phi_plus,
            BellLabel::PhiMinus => self.phi_minus,
        }
    }

    pub fn psi_splitting(&self) -> f64 {
        (self.psi_plus - self.psi_minus).abs()
    }

    pub fn phi_splitting(&self) -> f64 {
        (self.phi_plus - self.phi_minus).abs()
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = vec![self.psi_plus, self.psi_minus, self.phi_plus, self.phi_minus];
        v.sort_by(f64::total_cmp);
        v
    }
}

/// E_ψ± = ¼[Az ± (Ax − Ay)], E_φ± = ¼[−Az ± (Ax + Ay)].
///
/// Fails when two of the four levels coincide, since the labels are then
/// not defined by the eigenstates.
pub fn zero_field_levels(a: [f64; 3]) -> Result<ZeroFieldLevels> {
    let [ax, ay, az] = a;
    let levels = ZeroFieldLevels {
        psi_plus: 0.25 * (az + (ax - ay)),
        psi_minus: 0.25 * (az - (ax - ay)),
        phi_plus: 0.25 * (-az + (ax + ay)),
        phi_minus: 0.25 * (-az - (ax + ay)),
    };
    let mut clashes = Vec::new();
    for (i, li) in BellLabel::ALL.iter().enumerate() {
        for lj in &BellLabel::ALL[i + 1..] {
            if (levels.energy(*li) - levels.energy(*lj)).abs() < DEGENERACY_TOL {
                clashes.push(format!("{li}={lj}"));
            }
        }
    }
    if clashes.is_empty() {
        Ok(levels)
    } else {
        Err(Error::Degenerate(format!(
            "zero-field levels coincide ({}) for A = {a:?}",
            clashes.join(", ")
        )))
    }
}

/// Assigns ψ±/φ± labels to the levels of an S = I = 1/2 solution by
/// maximal overlap with the Bell states expressed in the hyperfine
/// principal frame.
pub fn label_levels(sys: &SpinSystem, sol: &EigenSolution) -> Result<Vec<BellLabel>> {
    if !sys.is_spin_half_pair() {
        return Err(Error::UnsupportedSpin {
            s: sys.electron_spin.to_string(),
            i: sys.nuclear_spin.to_string(),
        });
    }
    let d = spin_rotation(HalfInteger::HALF, sys.hyperfine.orientation);
    let u = crate::spin::kron(&d, &d);
    let bells: Vec<_> = BellLabel::ALL
        .iter()
        .map(|l| {
            let v = nalgebra::DVector::from_iterator(4, l.vector().iter().map(|&x| real(x)));
            &u * v
        })
        .collect();
    let mut labels = Vec::with_capacity(4);
    for k in 0..4 {
        let state = sol.states.column(k);
        let overlaps: Vec<f64> = bells.iter().map(|b| b.dotc(&state).norm_sqr()).collect();
        let (best, &w) = overlaps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let second = overlaps
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, w)| *w)
            .fold(0.0, f64::max);
        if w - second < 0.1 {
            return Err(Error::Degenerate(format!(
                "level {k} overlaps two Bell states ({w:.3} vs {second:.3})"
            )));
        }
        labels.push(BellLabel::ALL[best]);
    }
    for l in BellLabel::ALL {
        if !labels.contains(&l) {
            return Err(Error::Degenerate(format!("no level maps onto {l}")));
        }
    }
    Ok(labels)
}

/// Level index carrying the given label at zero field.
pub fn level_of(sys: &SpinSystem, label: BellLabel) -> Result<usize> {
    let sol = sys.model().solve(FieldVector::zero())?;
    let labels = label_levels(sys, &sol)?;
    Ok(labels.iter().position(|&l| l == label).expect("labels form a permutation"))
}

/// Transition between the two members of a ψ or φ pair, as level indices
/// resolved at zero field.
pub fn pair_transition(sys: &SpinSystem, plus: BellLabel, minus: BellLabel) -> Result<TransitionId> {
    let a = level_of(sys, plus)?;
    let b = level_of(sys, minus)?;
    TransitionId::new(a.min(b), a.max(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Electron,
    Nuclear,
}

/// Partial trace of |v⟩⟨v| over the complementary factor.
pub fn reduced_density_matrix(
    state: &nalgebra::DVector<Complex64>,
    electron: HalfInteger,
    nuclear: HalfInteger,
    keep: Subsystem,
) -> CMatrix {
    let de = electron.dim();
    let dn = nuclear.dim();
    let amp = |a: usize, b: usize| state[a * dn + b];
    match keep {
        Subsystem::Electron => CMatrix::from_fn(de, de, |i, j| (0..dn).map(|k| amp(i, k) * amp(j, k).conj()).sum()),
        Subsystem::Nuclear => CMatrix::from_fn(dn, dn, |i, j| (0..de).map(|k| amp(k, i) * amp(k, j).conj()).sum()),
    }
}

fn expectation(op: &CMatrix, v: &nalgebra::DVector<Complex64>) -> f64 {
    v.dotc(&(op * v)).re
}

/// (⟨S⟩, ⟨I⟩) for a normalized state.
pub fn spin_expectations(ops: &ProductOperators, state: &nalgebra::DVector<Complex64>) -> (Vector3<f64>, Vector3<f64>) {
    let s = Vector3::from_fn(|p, _| expectation(&ops.s[p], state));
    let i = Vector3::from_fn(|p, _| expectation(&ops.i[p], state));
    (s, i)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMoment {
    /// ⟨upper| B_ac·(∂H/∂B) |lower⟩, MHz.
    pub element: Complex64,
    /// 2|M|, MHz.
    pub rabi_mhz: f64,
}

pub fn transition_moment(model: &SpinModel, sol: &EigenSolution, t: TransitionId, b_ac: FieldVector) -> Result<TransitionMoment> {
    t.check(sol.dim())?;
    let drive = model.zeeman_along(&b_ac.0);
    let lower = sol.state(t.lower);
    let upper = sol.state(t.upper);
    let element = upper.dotc(&(drive * lower));
    Ok(TransitionMoment {
        element,
        rabi_mhz: 2.0 * element.norm(),
    })
}

fn rotate_about_b(t: TensorSpec) -> TensorSpec {
    let o = t.orientation;
    TensorSpec::new(
        t.principal_values,
        EulerAngles::new(o.alpha + std::f64::consts::PI, o.beta, o.gamma),
    )
}

/// Magnetically inequivalent partner site: every tensor conjugated by a
/// π rotation about b.
pub fn subsite_counterpart(sys: &SpinSystem) -> SpinSystem {
    let mut out = sys.clone();
    out.hyperfine = rotate_about_b(sys.hyperfine);
    out.g = rotate_about_b(sys.g);
    out.quadrupole = sys.quadrupole.map(rotate_about_b);
    if let NuclearG::Tensor(t) = sys.nuclear_g {
        out.nuclear_g = NuclearG::Tensor(rotate_about_b(t));
    }
    out.label = format!("{} (C2 partner)", sys.label);
    out
}
