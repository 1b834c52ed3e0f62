//! Angular-momentum algebra on the |j, m⟩ basis and product-space embedding.
//!
//! Basis vectors are ordered with m descending. In a product space the
//! electron index is the outer one, so index = (S - m_S)(2I + 1) + (I - m_I).

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen;
use crate::frame::EulerAngles;

pub type CMatrix = DMatrix<Complex64>;

/// A non-negative half-integer quantum number j ≥ 1/2, stored as 2j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct HalfInteger(u32);

impl HalfInteger {
    pub const HALF: HalfInteger = HalfInteger(1);

    pub fn from_twice(twice: u32) -> Option<Self> {
        (twice >= 1).then_some(HalfInteger(twice))
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Multiplicity 2j + 1.
    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }

    pub fn is_half_odd(self) -> bool {
        self.0 % 2 == 1
    }

    /// Parses "1/2", "3/2", "1", "2", "0.5" and "1.5".
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Some((num, den)) = text.split_once('/') {
            let num: u32 = num.trim().parse().ok()?;
            let den: u32 = den.trim().parse().ok()?;
            return match den {
                2 => Self::from_twice(num),
                1 => Self::from_twice(2 * num),
                _ => None,
            };
        }
        let value: f64 = text.parse().ok()?;
        let twice = 2.0 * value;
        if !twice.is_finite() || (twice - twice.round()).abs() > 1e-12 || twice < 0.5 {
            return None;
        }
        Self::from_twice(twice.round() as u32)
    }
}

impl TryFrom<u32> for HalfInteger {
    type Error = String;
    fn try_from(twice: u32) -> Result<Self, String> {
        HalfInteger::from_twice(twice).ok_or_else(|| "2j must be at least 1".to_string())
    }
}

impl From<HalfInteger> for u32 {
    fn from(j: HalfInteger) -> u32 {
        j.0
    }
}

impl fmt::Display for HalfInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

/// Magneton-to-frequency conversion factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// Bohr magneton over Planck's constant, MHz/T.
    pub mu_b_over_h: f64,
    /// Nuclear magneton over Planck's constant, MHz/T.
    pub mu_n_over_h: f64,
}

impl Constants {
    pub const CODATA: Constants = Constants {
        mu_b_over_h: 13_996.244_9,
        mu_n_over_h: 7.622_593_2,
    };
}

impl Default for Constants {
    fn default() -> Self {
        Constants::CODATA
    }
}

/// Cartesian angular-momentum matrices (Jx, Jy, Jz).
pub fn angular_momentum_operators(j: HalfInteger) -> [CMatrix; 3] {
    let n = j.dim();
    let jv = j.value();
    let m = |k: usize| jv - k as f64;
    let mut jx = CMatrix::zeros(n, n);
    let mut jy = CMatrix::zeros(n, n);
    let mut jz = CMatrix::zeros(n, n);
    for k in 0..n {
        jz[(k, k)] = Complex64::new(m(k), 0.0);
    }
    // J+ |j, m⟩ = sqrt(j(j+1) - m(m+1)) |j, m+1⟩; row k-1 holds m+1.
    for k in 1..n {
        let mk = m(k);
        let c = (jv * (jv + 1.0) - mk * (mk + 1.0)).sqrt();
        // Jx = (J+ + J-)/2, Jy = (J+ - J-)/(2i)
        jx[(k - 1, k)] = Complex64::new(c / 2.0, 0.0);
        jx[(k, k - 1)] = Complex64::new(c / 2.0, 0.0);
        jy[(k - 1, k)] = Complex64::new(0.0, -c / 2.0);
        jy[(k, k - 1)] = Complex64::new(0.0, c / 2.0);
    }
    [jx, jy, jz]
}

/// Kronecker product a ⊗ b.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Electron and nuclear spin operators embedded in the product space.
#[derive(Debug, Clone)]
pub struct ProductOperators {
    pub electron: HalfInteger,
    pub nuclear: HalfInteger,
    /// S_p ⊗ 1
    pub s: [CMatrix; 3],
    /// 1 ⊗ I_p
    pub i: [CMatrix; 3],
}

impl ProductOperators {
    pub fn dim(&self) -> usize {
        self.electron.dim() * self.nuclear.dim()
    }
}

pub fn embed_operators(s: HalfInteger, i: HalfInteger) -> ProductOperators {
    let es = angular_momentum_operators(s);
    let ns = angular_momentum_operators(i);
    let id_e = CMatrix::identity(s.dim(), s.dim());
    let id_n = CMatrix::identity(i.dim(), i.dim());
    ProductOperators {
        electron: s,
        nuclear: i,
        s: [kron(&es[0], &id_n), kron(&es[1], &id_n), kron(&es[2], &id_n)],
        i: [kron(&id_e, &ns[0]), kron(&id_e, &ns[1]), kron(&id_e, &ns[2])],
    }
}

/// exp(-i φ J) for Hermitian J, via its eigen-decomposition.
fn exp_minus_i(op: &CMatrix, angle: f64) -> CMatrix {
    let sol = eigen::jacobi_eigh(op).expect("angular-momentum matrices are Hermitian");
    let n = op.nrows();
    let mut phases = CMatrix::zeros(n, n);
    for k in 0..n {
        let a = -angle * sol.values[k];
        phases[(k, k)] = Complex64::new(a.cos(), a.sin());
    }
    &sol.vectors * phases * sol.vectors.adjoint()
}

/// Unitary D(R) = exp(-iαJz) exp(-iβJy) exp(-iγJz) representing the Z-Y-Z
/// rotation on spin j. It satisfies D J_p D† = Σ_q J_q R_qp.
pub fn spin_rotation(j: HalfInteger, e: EulerAngles) -> CMatrix {
    let [_, jy, jz] = angular_momentum_operators(j);
    exp_minus_i(&jz, e.alpha) * exp_minus_i(&jy, e.beta) * exp_minus_i(&jz, e.gamma)
}
