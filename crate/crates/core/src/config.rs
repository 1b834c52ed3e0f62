//! Strict JSON configuration with unit-tagged physical quantities.
//!
//! Unknown keys, duplicate keys, unit mismatches and non-finite values are
//! rejected with the JSON path of the offending entry. Angles are degrees.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use crate::decoherence::{NoiseMode, NoiseVector, DEFAULT_SAMPLES, DEFAULT_SEED};
use crate::error::{Error, Result};
use crate::frame::{EulerAngles, TensorSpec};
use crate::hamiltonian::{pair_transition, BellLabel, NuclearG, SpinSystem, TransitionId};
use crate::search::{AxisRange, GridSpec};
use crate::spin::{Constants, HalfInteger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum EnergyUnit {
    Hz,
    #[serde(rename = "kHz")]
    KHz,
    MHz,
    GHz,
}

impl EnergyUnit {
    pub fn to_mhz(self) -> f64 {
        match self {
            EnergyUnit::Hz => 1e-6,
            EnergyUnit::KHz => 1e-3,
            EnergyUnit::MHz => 1.0,
            EnergyUnit::GHz => 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum FieldUnit {
    T,
    #[serde(rename = "mT")]
    MilliTesla,
    #[serde(rename = "uT")]
    MicroTesla,
}

impl FieldUnit {
    pub fn to_tesla(self) -> f64 {
        match self {
            FieldUnit::T => 1.0,
            FieldUnit::MilliTesla => 1e-3,
            FieldUnit::MicroTesla => 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Dimensionless {
    #[serde(rename = "1")]
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum MagnetonUnit {
    #[serde(rename = "MHz/T")]
    MhzPerTesla,
}

fn finite<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(de::Error::custom("value must be finite"))
    }
}

fn finite3<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<[f64; 3], D::Error> {
    let v = <[f64; 3]>::deserialize(d)?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(de::Error::custom("values must be finite"))
    }
}

fn spin_value<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<HalfInteger, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Number(f64),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Text(s) => s,
        Raw::Number(x) => x.to_string(),
    };
    HalfInteger::parse(&text).ok_or_else(|| de::Error::custom(format!("`{text}` is not a positive half-integer")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnergyTensor {
    #[serde(deserialize_with = "finite3")]
    principal_values: [f64; 3],
    unit: EnergyUnit,
    #[serde(default, deserialize_with = "finite3")]
    euler_deg: [f64; 3],
    #[serde(default)]
    #[allow(dead_code)]
    note: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGTensor {
    #[serde(deserialize_with = "finite3")]
    principal_values: [f64; 3],
    #[serde(rename = "unit")]
    _unit: Dimensionless,
    #[serde(default, deserialize_with = "finite3")]
    euler_deg: [f64; 3],
    #[serde(default)]
    #[allow(dead_code)]
    note: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScalar<U> {
    #[serde(deserialize_with = "finite")]
    value: f64,
    unit: U,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawNuclearG {
    Scalar(RawScalar<Dimensionless>),
    Tensor(RawGTensor),
}

fn euler(deg: [f64; 3]) -> EulerAngles {
    EulerAngles::from_degrees(deg[0], deg[1], deg[2])
}

impl RawEnergyTensor {
    fn resolve(&self) -> TensorSpec {
        let k = self.unit.to_mhz();
        TensorSpec::new(self.principal_values.map(|v| v * k), euler(self.euler_deg))
    }
}

impl RawGTensor {
    fn resolve(&self) -> TensorSpec {
        TensorSpec::new(self.principal_values, euler(self.euler_deg))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(deserialize_with = "spin_value")]
    electron_spin: HalfInteger,
    #[serde(deserialize_with = "spin_value")]
    nuclear_spin: HalfInteger,
    hyperfine: RawEnergyTensor,
    g: RawGTensor,
    nuclear_g: RawNuclearG,
    #[serde(default)]
    quadrupole: Option<RawEnergyTensor>,
    #[serde(default)]
    #[allow(dead_code)]
    comment: Option<String>,
}

/// Map that rejects repeated keys instead of keeping the last one.
#[derive(Debug)]
struct UniqueMap<V>(BTreeMap<String, V>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for UniqueMap<V> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V2<V>(std::marker::PhantomData<V>);
        impl<'de, V: Deserialize<'de>> Visitor<'de> for V2<V> {
            type Value = UniqueMap<V>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of named systems")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = BTreeMap::new();
                while let Some(key) = map.next_key::<String>()? {
                    if out.contains_key(&key) {
                        return Err(de::Error::custom(format!("duplicate key `{key}`")));
                    }
                    let value = map.next_value()?;
                    out.insert(key, value);
                }
                Ok(UniqueMap(out))
            }
        }
        d.deserialize_map(V2(std::marker::PhantomData))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    #[serde(default)]
    mu_b_over_h: Option<RawScalar<MagnetonUnit>>,
    #[serde(default)]
    mu_n_over_h: Option<RawScalar<MagnetonUnit>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptical {
    ground: String,
    excited: String,
    offset: RawScalar<EnergyUnit>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
enum RawNoiseMode {
    WorstCase,
    IsotropicAverage,
    FixedDirection(#[serde(deserialize_with = "finite3")] [f64; 3]),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    magnitude: RawScalar<FieldUnit>,
    mode: RawNoiseMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    #[serde(default)]
    system: Option<String>,
    #[serde(default)]
    magnitude: Option<RawScalar<FieldUnit>>,
    #[serde(default, deserialize_with = "opt_finite3")]
    theta_deg: Option<[f64; 3]>,
    #[serde(default, deserialize_with = "opt_finite3")]
    phi_deg: Option<[f64; 3]>,
    #[serde(default)]
    transition: Option<String>,
}

fn opt_finite3<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<[f64; 3]>, D::Error> {
    finite3(d).map(Some)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInhomogeneity {
    #[serde(deserialize_with = "finite")]
    fractional_spread: f64,
    #[serde(default)]
    samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    #[serde(default)]
    monte_carlo: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    comment: Option<String>,
    #[serde(default)]
    constants: Option<RawConstants>,
    systems: UniqueMap<RawSystem>,
    #[serde(default)]
    optical: Option<RawOptical>,
    #[serde(default)]
    noise: Option<RawNoise>,
    #[serde(default)]
    map: Option<RawMap>,
    #[serde(default)]
    inhomogeneity: Option<RawInhomogeneity>,
    #[serde(default)]
    seeds: Option<RawSeeds>,
}

/// Which transition of a system an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionSelector {
    /// ψ+ ↔ ψ− pair of an S = I = 1/2 system.
    Psi,
    /// φ+ ↔ φ− pair.
    Phi,
    Levels(usize, usize),
}

impl TransitionSelector {
    pub fn resolve(self, sys: &SpinSystem) -> Result<TransitionId> {
        let t = match self {
            TransitionSelector::Psi => pair_transition(sys, BellLabel::PsiPlus, BellLabel::PsiMinus)?,
            TransitionSelector::Phi => pair_transition(sys, BellLabel::PhiPlus, BellLabel::PhiMinus)?,
            TransitionSelector::Levels(a, b) => TransitionId::new(a.min(b), a.max(b))?,
        };
        t.check(sys.dim())?;
        Ok(t)
    }
}

impl FromStr for TransitionSelector {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "psi" => Ok(TransitionSelector::Psi),
            "phi" => Ok(TransitionSelector::Phi),
            other => {
                let (a, b) = other
                    .split_once([',', '-'])
                    .ok_or_else(|| format!("`{other}` is not `psi`, `phi` or `i,j`"))?;
                let a = a.trim().parse().map_err(|e| format!("level `{a}`: {e}"))?;
                let b = b.trim().parse().map_err(|e| format!("level `{b}`: {e}"))?;
                if a == b {
                    return Err(format!("transition needs two different levels, got {a} twice"));
                }
                Ok(TransitionSelector::Levels(a, b))
            }
        }
    }
}

impl fmt::Display for TransitionSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionSelector::Psi => write!(f, "psi"),
            TransitionSelector::Phi => write!(f, "phi"),
            TransitionSelector::Levels(a, b) => write!(f, "{a},{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalConfig {
    pub ground: String,
    pub excited: String,
    pub offset_mhz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDefaults {
    pub system: String,
    /// tesla
    pub magnitude: f64,
    pub grid: GridSpec,
    pub transition: TransitionSelector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub comment: Option<String>,
    pub constants: Constants,
    pub systems: BTreeMap<String, SpinSystem>,
    pub optical: Option<OpticalConfig>,
    pub noise: NoiseVector,
    pub map: MapDefaults,
    pub fractional_spread: f64,
    pub samples: usize,
    pub seed: u64,
    /// sha256 of the file contents, hex.
    pub hash: String,
}

impl Config {
    pub fn system(&self, name: &str) -> Result<&SpinSystem> {
        self.systems.get(name).ok_or_else(|| Error::Config {
            path: "systems".into(),
            message: format!(
                "no system named `{name}` (defined: {})",
                self.systems.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
        })
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (k, l) in text.split_inclusive('\n').enumerate() {
        if k + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

pub fn parse_config(path: &Path) -> Result<Config> {
    let bytes = std::fs::read(path).map_err(|e| config_error(&path.display().to_string(), e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| config_error("$", format!("not UTF-8: {e}")))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Config> {
    let hash = crate::hex_digest(text.as_bytes());
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner();
        let offset = byte_offset(text, inner.line(), inner.column());
        let path = if path.is_empty() || path == "." { "$" } else { &path };
        config_error(path, format!("{inner} (byte offset {offset})"))
    })?;
    de.end().map_err(|e| config_error("$", format!("trailing characters: {e}")))?;
    resolve(raw, hash)
}

fn resolve(raw: RawConfig, hash: String) -> Result<Config> {
    let mut constants = Constants::CODATA;
    if let Some(c) = &raw.constants {
        if let Some(v) = &c.mu_b_over_h {
            constants.mu_b_over_h = v.value;
        }
        if let Some(v) = &c.mu_n_over_h {
            constants.mu_n_over_h = v.value;
        }
    }
    if raw.systems.0.is_empty() {
        return Err(config_error("systems", "at least one system is required"));
    }
    let mut systems = BTreeMap::new();
    for (name, s) in &raw.systems.0 {
        let nuclear_g = match &s.nuclear_g {
            RawNuclearG::Scalar(v) => NuclearG::Isotropic(v.value),
            RawNuclearG::Tensor(t) => NuclearG::Tensor(t.resolve()),
        };
        systems.insert(
            name.clone(),
            SpinSystem {
                label: name.clone(),
                electron_spin: s.electron_spin,
                nuclear_spin: s.nuclear_spin,
                hyperfine: s.hyperfine.resolve(),
                g: s.g.resolve(),
                nuclear_g,
                quadrupole: s.quadrupole.as_ref().map(RawEnergyTensor::resolve),
                constants,
            },
        );
    }
    let check_name = |path: &str, name: &str| {
        if systems.contains_key(name) {
            Ok(())
        } else {
            Err(config_error(path, format!("references undefined system `{name}`")))
        }
    };
    let optical = match raw.optical {
        Some(o) => {
            check_name("optical.ground", &o.ground)?;
            check_name("optical.excited", &o.excited)?;
            Some(OpticalConfig {
                ground: o.ground,
                excited: o.excited,
                offset_mhz: o.offset.value * o.offset.unit.to_mhz(),
            })
        }
        None => None,
    };
    let noise = match raw.noise {
        Some(n) => {
            let mode = match n.mode {
                RawNoiseMode::WorstCase => NoiseMode::WorstCase,
                RawNoiseMode::IsotropicAverage => NoiseMode::IsotropicAverage,
                RawNoiseMode::FixedDirection(v) => NoiseMode::FixedDirection(Vector3::from(v)),
            };
            NoiseVector::new(n.magnitude.value * n.magnitude.unit.to_tesla(), mode)
                .map_err(|e| config_error("noise", e.to_string()))?
        }
        None => NoiseVector::worst_case(3e-6),
    };
    let default_system = if systems.contains_key("ground") {
        "ground".to_string()
    } else {
        systems.keys().next().cloned().expect("systems is not empty")
    };
    let map = {
        let m = raw.map;
        let system = m.as_ref().and_then(|m| m.system.clone()).unwrap_or(default_system);
        check_name("map.system", &system)?;
        let mut grid = GridSpec::default();
        let axis = |path: &str, v: [f64; 3]| AxisRange::new(v[0], v[1], v[2]).map_err(|e| config_error(path, e.to_string()));
        if let Some(v) = m.as_ref().and_then(|m| m.theta_deg) {
            grid.theta = axis("map.theta_deg", v)?;
        }
        if let Some(v) = m.as_ref().and_then(|m| m.phi_deg) {
            grid.phi = axis("map.phi_deg", v)?;
        }
        let magnitude = m
            .as_ref()
            .and_then(|m| m.magnitude.as_ref())
            .map_or(5e-3, |v| v.value * v.unit.to_tesla());
        if magnitude < 0.0 {
            return Err(config_error("map.magnitude", "field magnitude must be ≥ 0"));
        }
        let transition = match m.as_ref().and_then(|m| m.transition.as_deref()) {
            Some(s) => s.parse().map_err(|e: String| config_error("map.transition", e))?,
            None => TransitionSelector::Psi,
        };
        MapDefaults {
            system,
            magnitude,
            grid,
            transition,
        }
    };
    let (fractional_spread, samples) = match raw.inhomogeneity {
        Some(i) => (i.fractional_spread, i.samples.unwrap_or(DEFAULT_SAMPLES)),
        None => (0.005, DEFAULT_SAMPLES),
    };
    if fractional_spread < 0.0 {
        return Err(config_error("inhomogeneity.fractional_spread", "must be ≥ 0"));
    }
    if samples < 10 {
        return Err(config_error("inhomogeneity.samples", "must be at least 10"));
    }
    Ok(Config {
        comment: raw.comment,
        constants,
        systems,
        optical,
        noise,
        map,
        fractional_spread,
        samples,
        seed: raw.seeds.and_then(|s| s.monte_carlo).unwrap_or(DEFAULT_SEED),
        hash,
    })
}
