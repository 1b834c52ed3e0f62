#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zefoz::config::{parse_config, Config};
use zefoz::hamiltonian::NuclearG;
use zefoz::{EulerAngles, HalfInteger, SpinSystem, TensorSpec};

pub fn example_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/yb171_yso_siteII.json")
}

pub fn example_config() -> Config {
    parse_config(&example_path()).expect("example config parses")
}

pub fn random_euler(rng: &mut ChaCha8Rng) -> EulerAngles {
    use std::f64::consts::PI;
    EulerAngles::new(rng.random_range(-PI..PI), rng.random_range(0.0..PI), rng.random_range(-PI..PI))
}

/// Three principal values in ±scale, pairwise separated by at least 5% of scale
/// and each at least 5% of scale away from zero.
pub fn anisotropic_values(rng: &mut ChaCha8Rng, scale: f64) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-scale..scale));
        let sep = 0.05 * scale;
        let distinct = (v[0] - v[1]).abs() > sep && (v[1] - v[2]).abs() > sep && (v[0] - v[2]).abs() > sep;
        let magnitudes = (v[0].abs() - v[1].abs()).abs() > sep
            && (v[1].abs() - v[2].abs()).abs() > sep
            && (v[0].abs() - v[2].abs()).abs() > sep;
        if distinct && magnitudes && v.iter().all(|x| x.abs() > sep) {
            return v;
        }
    }
}

/// Traceless symmetric principal values (q, -q(1+η)/2, -q(1-η)/2).
pub fn quadrupole_values(rng: &mut ChaCha8Rng, scale: f64) -> [f64; 3] {
    let q = rng.random_range(0.2 * scale..scale) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let eta = rng.random_range(0.1..0.9);
    [q, -q * (1.0 + eta) / 2.0, -q * (1.0 - eta) / 2.0]
}

pub fn random_system(rng: &mut ChaCha8Rng, twice_i: u32, with_q: bool) -> SpinSystem {
    let a = TensorSpec::new(anisotropic_values(rng, 3000.0), random_euler(rng));
    let g = TensorSpec::new(
        std::array::from_fn(|_| rng.random_range(0.1..6.5)),
        random_euler(rng),
    );
    let mut sys = SpinSystem::spin_half("random", a, g, rng.random_range(-1.5..1.5));
    sys.nuclear_spin = HalfInteger::from_twice(twice_i).expect("valid spin");
    if with_q {
        sys.quadrupole = Some(TensorSpec::new(quadrupole_values(rng, 300.0), random_euler(rng)));
    }
    sys
}

pub fn with_nuclear_g(mut sys: SpinSystem, gn: f64) -> SpinSystem {
    sys.nuclear_g = NuclearG::Isotropic(gn);
    sys
}

pub fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
