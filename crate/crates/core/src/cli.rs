//! Command-line front end. Machine-readable results go to stdout (or
//! `--out`); summaries and errors go to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or convergence error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{parse_config, Config, TransitionSelector};
use crate::decoherence::{inhomogeneity_dephasing, predict_t2, NoiseMode, NoiseVector, T2};
use crate::echo::{fit_decay, fit_decay_nonlinear, parse_dataset, parse_trace, spectrum_peak_area, T2Estimate};
use crate::error::Error;
use crate::fmt_num;
use crate::exec::Execution;
use crate::frame::FieldVector;
use crate::hamiltonian::{label_levels, subsite_counterpart, transition_moment, SpinSystem, TransitionId};
use crate::search::{angular_gradient_map, minimize_gradient_direction, zero_field_report, AxisRange, SearchOptions};
use crate::sensitivity::{sensitivity_from_solution, TransitionSensitivity};
use crate::decoherence::{EchoDataset, EchoPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "zefoz", version, about = "Zero- and low-field clock transitions of anisotropic electron-nuclear spin systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Energies, level labels and transition table at one field
    Levels(LevelsArgs),
    /// Gradient magnitude over a (theta, phi) grid at fixed |B|
    Map(MapArgs),
    /// Zero-field ZEFOZ report, optionally with a low-field direction search
    Zefoz(ZefozArgs),
    /// Coherence-time predictions from the noise model
    Predict(PredictArgs),
    /// T2 from an echo-decay dataset or from beat traces
    Fit(FitArgs),
    /// Transition frequencies of both magnetic sub-sites along a field scan
    Subsites(SubsitesArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// System name in the configuration
    #[arg(long)]
    system: Option<String>,
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FieldArgs {
    /// Field as D1,D2,b components in tesla
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true, conflicts_with = "field_polar")]
    field: Option<[f64; 3]>,
    /// Field as magnitude (T), theta (deg), phi (deg)
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    field_polar: Option<[f64; 3]>,
}

impl FieldArgs {
    fn resolve(&self) -> FieldVector {
        match (self.field, self.field_polar) {
            (Some(v), _) => FieldVector::new(v[0], v[1], v[2]),
            (None, Some(p)) => FieldVector::from_polar_deg(p[0], p[1], p[2]),
            (None, None) => FieldVector::zero(),
        }
    }
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Noise amplitude in tesla (default from the configuration)
    #[arg(long)]
    noise: Option<f64>,
    /// worst-case, isotropic-average or fixed-direction
    #[arg(long)]
    mode: Option<String>,
    /// Noise direction for fixed-direction mode, D1,D2,b
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    direction: Option<[f64; 3]>,
}

impl NoiseArgs {
    fn resolve(&self, cfg: &Config) -> std::result::Result<NoiseVector, String> {
        let magnitude = self.noise.unwrap_or(cfg.noise.magnitude);
        let mode = match self.mode.as_deref() {
            None => cfg.noise.mode,
            Some("worst-case") => NoiseMode::WorstCase,
            Some("isotropic-average") => NoiseMode::IsotropicAverage,
            Some("fixed-direction") => {
                let d = self.direction.ok_or("--mode fixed-direction needs --direction")?;
                NoiseMode::FixedDirection(nalgebra::Vector3::from(d))
            }
            Some(other) => return Err(format!("--mode: unknown noise mode `{other}`")),
        };
        NoiseVector::new(magnitude, mode).map_err(|e| format!("--noise: {e}"))
    }
}

#[derive(Debug, Args)]
struct LevelsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    field: FieldArgs,
    /// Drive field B_ac (D1,D2,b tesla) for the Rabi column
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    bac: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
struct MapArgs {
    #[command(flatten)]
    common: Common,
    /// Field magnitude in tesla
    #[arg(long)]
    bmag: Option<f64>,
    /// min,max,step in degrees
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    theta: Option<[f64; 3]>,
    /// min,max,step in degrees
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    phi: Option<[f64; 3]>,
    /// psi, phi or i,j
    #[arg(long)]
    transition: Option<TransitionSelector>,
    /// Fill the T2 column using the noise model
    #[arg(long)]
    with_t2: bool,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Evaluate cells on one thread
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct ZefozArgs {
    #[command(flatten)]
    common: Common,
    /// Also run the direction search at the map field magnitude
    #[arg(long)]
    optimize: bool,
    /// Starting direction theta,phi in degrees (default: map argmin)
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    start: Option<(f64, f64)>,
    #[arg(long)]
    bmag: Option<f64>,
    #[arg(long)]
    transition: Option<TransitionSelector>,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    field: FieldArgs,
    /// Single transition (psi, phi or i,j); default every transition
    #[arg(long)]
    transition: Option<TransitionSelector>,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Fractional field spread; adds inhomogeneous and combined rows
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with columns tau_s,area[,area_err]
    #[arg(long, conflicts_with = "traces", required_unless_present = "traces")]
    data: Option<PathBuf>,
    /// Beat-trace files, one per delay
    #[arg(long, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Spectral window f_lo,f_hi in Hz for trace peak fitting
    #[arg(long, value_parser = parse_pair, requires = "traces")]
    window: Option<(f64, f64)>,
    /// Also fit the exponential directly as a cross-check
    #[arg(long)]
    nonlinear: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SubsitesArgs {
    #[command(flatten)]
    common: Common,
    /// Scan direction theta,phi in degrees
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    direction: (f64, f64),
    /// Largest field magnitude, tesla
    #[arg(long)]
    bmax: f64,
    #[arg(long, default_value_t = 51)]
    steps: usize,
}

fn parse_numbers(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(v)
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = parse_numbers(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let v = parse_numbers(s, 2)?;
    Ok((v[0], v[1]))
}

/// Failure of a subcommand: usage problems exit 1, everything else 2.
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

struct Meta(Vec<(String, String)>);

impl Meta {
    fn new(cfg: Option<&Config>) -> Self {
        let mut m = Meta(vec![("tool".into(), format!("zefoz {VERSION}"))]);
        if let Some(c) = cfg {
            m.push("config_sha256", &c.hash);
        }
        m
    }

    fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    fn csv_header(&self) -> String {
        self.0.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }

    fn json(&self) -> Value {
        Value::Object(self.0.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
    }
}

fn emit(out_path: &Option<PathBuf>, stdout: &mut dyn Write, text: &str) -> std::result::Result<(), Failure> {
    match out_path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Data(Error::Io(e))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::Data(Error::Io(e))),
    }
}

fn load(common: &Common) -> std::result::Result<(Config, String, SpinSystem), Failure> {
    let cfg = parse_config(&common.config)?;
    let name = common.system.clone().unwrap_or_else(|| cfg.map.system.clone());
    let sys = cfg.system(&name)?.clone();
    Ok((cfg, name, sys))
}

fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn levels(args: LevelsArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let (cfg, name, sys) = load(&args.common)?;
    for w in sys.warnings() {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let b = args.field.resolve();
    let model = sys.model();
    let sol = model.solve(b)?;
    let labels = if sys.is_spin_half_pair() {
        label_levels(&sys, &sol).ok()
    } else {
        None
    };
    let levels: Vec<Value> = (0..sol.dim())
        .map(|k| {
            json!({
                "index": k,
                "energy_mhz": sol.energies[k],
                "label": labels.as_ref().map(|l| l[k].to_string()),
            })
        })
        .collect();
    let bac = args.bac.map(|v| FieldVector::new(v[0], v[1], v[2]));
    let mut transitions = Vec::new();
    for t in TransitionId::all(sol.dim()) {
        let grad = sensitivity_from_solution(&model, &sol, t).ok().map(|s| s.s1.norm());
        let rabi = match bac {
            Some(b_ac) => Some(transition_moment(&model, &sol, t, b_ac)?.rabi_mhz),
            None => None,
        };
        transitions.push(json!({
            "lower": t.lower,
            "upper": t.upper,
            "nu_mhz": sol.energies[t.upper] - sol.energies[t.lower],
            "grad_mhz_per_t": opt_num(grad),
            "rabi_mhz": opt_num(rabi),
        }));
    }
    let mut meta = Meta::new(Some(&cfg));
    meta.push("system", &name);
    meta.push("field_t", format!("{},{},{}", fmt_num(b.0.x), fmt_num(b.0.y), fmt_num(b.0.z)));
    meta.push("gradient", "hellmann-feynman");
    let doc = json!({
        "metadata": meta.json(),
        "levels": levels,
        "transitions": transitions,
    });
    emit(&args.common.out, stdout, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

fn map(args: MapArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let (cfg, name, sys) = load(&args.common)?;
    let mut grid = cfg.map.grid;
    if let Some(v) = args.theta {
        grid.theta = AxisRange::new(v[0], v[1], v[2]).map_err(|e| Failure::Usage(format!("--theta: {e}")))?;
    }
    if let Some(v) = args.phi {
        grid.phi = AxisRange::new(v[0], v[1], v[2]).map_err(|e| Failure::Usage(format!("--phi: {e}")))?;
    }
    let magnitude = args.bmag.unwrap_or(cfg.map.magnitude);
    let selector = args.transition.unwrap_or(cfg.map.transition);
    let t = selector.resolve(&sys)?;
    let noise = args.noise.resolve(&cfg).map_err(Failure::Usage)?;
    let exec = if args.sequential { Execution::Sequential } else { Execution::default() };
    let model = sys.model();
    let result = angular_gradient_map(&model, magnitude, grid, t, args.with_t2.then_some(noise), exec)?;
    let mut meta = Meta::new(Some(&cfg));
    meta.push("system", &name);
    meta.push("transition", format!("{selector} ({t})"));
    meta.push("bmag_t", magnitude);
    meta.push("theta_deg", format!("{},{},{}", grid.theta.min, grid.theta.max, grid.theta.step));
    meta.push("phi_deg", format!("{},{},{}", grid.phi.min, grid.phi.max, grid.phi.step));
    meta.push("gradient", "hellmann-feynman");
    if args.with_t2 {
        meta.push("noise_mode", noise.mode);
        meta.push("noise_t", fmt_num(noise.magnitude));
    }
    let mut body = Vec::new();
    result.write_csv(&mut body).map_err(|e| Failure::Data(Error::Io(e)))?;
    let text = meta.csv_header() + &String::from_utf8(body).expect("utf8");
    emit(&args.common.out, stdout, &text)?;
    if let (Some(lo), Some(hi), Some((th, ph, _))) = (result.min(), result.max(), result.argmin()) {
        let _ = writeln!(
            stderr,
            "{} cells, |S1| from {lo:.4e} to {hi:.4e} MHz/T ({:.2} decades), minimum at theta={th}, phi={ph}; {} invalid",
            result.grad.len(),
            (hi / lo).log10(),
            result.invalid_cells()
        );
    }
    Ok(())
}

fn t2_json(t2: Option<T2>) -> Value {
    match t2 {
        Some(T2::Finite(s)) => json!(s),
        Some(T2::Infinite) => json!("infinite"),
        None => Value::Null,
    }
}

fn zefoz(args: ZefozArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let (cfg, name, sys) = load(&args.common)?;
    let excited = match &cfg.optical {
        Some(o) if o.ground == name => Some((cfg.system(&o.excited)?.clone(), o.offset_mhz)),
        _ => None,
    };
    let report = zero_field_report(&sys, excited.as_ref().map(|(s, off)| (s, *off)))?;
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "kind": format!("{:?}", r.kind).to_lowercase(),
                "system": r.system,
                "lower": r.lower,
                "upper": r.upper,
                "nu_mhz": r.nu,
                "grad_mhz_per_t": r.grad,
                "curv_max_mhz_per_t2": opt_num(r.curvature),
                "pass": r.pass,
            })
        })
        .collect();
    let anis: Vec<Value> = report
        .anisotropy
        .iter()
        .map(|a| json!({"system": a.system, "pass": a.pass, "notes": a.notes}))
        .collect();
    let mut meta = Meta::new(Some(&cfg));
    meta.push("system", &name);
    meta.push("threshold_mhz_per_t", crate::search::ZEFOZ_THRESHOLD);
    let mut doc = json!({
        "metadata": meta.json(),
        "transitions": rows,
        "anisotropy": anis,
        "all_pass": report.all_pass(),
    });
    let _ = writeln!(
        stderr,
        "{} of {} transitions pass at B = 0",
        report.rows.iter().filter(|r| r.pass).count(),
        report.rows.len()
    );
    if args.optimize {
        let selector = args.transition.unwrap_or(cfg.map.transition);
        let t = selector.resolve(&sys)?;
        let magnitude = args.bmag.unwrap_or(cfg.map.magnitude);
        let noise = args.noise.resolve(&cfg).map_err(Failure::Usage)?;
        let model = sys.model();
        let start = match args.start {
            Some(s) => s,
            None => {
                let grid = angular_gradient_map(&model, magnitude, cfg.map.grid, t, None, Execution::default())?;
                let (th, ph, _) = grid
                    .argmin()
                    .ok_or_else(|| Error::Degenerate("no valid cell in the map".into()))?;
                (th, ph)
            }
        };
        let opt = minimize_gradient_direction(&model, magnitude, start, t, SearchOptions::default(), Some(noise))?;
        if let Some(w) = &opt.warning {
            let _ = writeln!(stderr, "warning: {w}");
        }
        doc["optimum"] = json!({
            "transition": format!("{selector} ({t})"),
            "bmag_t": magnitude,
            "start_deg": [start.0, start.1],
            "theta_deg": opt.theta_deg,
            "phi_deg": opt.phi_deg,
            "grad_mhz_per_t": opt.grad,
            "t2_s": t2_json(opt.t2),
            "noise_mode": noise.mode.to_string(),
            "noise_t": noise.magnitude,
            "iterations": opt.iterations,
            "evaluations": opt.evaluations,
            "converged": opt.converged,
            "trace": opt.trace.iter().map(|p| json!([p.theta_deg, p.phi_deg, p.grad])).collect::<Vec<_>>(),
        });
    }
    emit(&args.common.out, stdout, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

const PREDICT_HEADER: &str = "transition,nu_mhz,grad_mhz_per_t,curv_max_mhz_per_t2,noise_ut,mode,t2_s,infinite_flag";

fn predict_row(ts: &TransitionSensitivity, noise_ut: &str, mode: &str, t2: T2) -> String {
    let (t2_s, flag) = match t2 {
        T2::Finite(s) => (fmt_num(s), 0),
        T2::Infinite => (String::new(), 1),
    };
    format!(
        "{},{},{},{},{noise_ut},{mode},{t2_s},{flag}\n",
        ts.transition,
        fmt_num(ts.nu),
        fmt_num(ts.s1.norm()),
        fmt_num(ts.curvature_norm())
    )
}

fn predict(args: PredictArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let (cfg, name, sys) = load(&args.common)?;
    let noise = args.noise.resolve(&cfg).map_err(Failure::Usage)?;
    let b = args.field.resolve();
    let model = sys.model();
    let sol = model.solve(b)?;
    let transitions = match args.transition {
        Some(sel) => vec![sel.resolve(&sys)?],
        None => TransitionId::all(sol.dim()),
    };
    let spread = args.spread;
    if let Some(s) = spread {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Failure::Usage(format!("--spread must be ≥ 0, got {s}")));
        }
    }
    let samples = args.samples.unwrap_or(cfg.samples);
    let seed = args.seed.unwrap_or(cfg.seed);
    let exec = if args.sequential { Execution::Sequential } else { Execution::default() };
    let mut meta = Meta::new(Some(&cfg));
    meta.push("system", &name);
    meta.push("field_t", format!("{},{},{}", fmt_num(b.0.x), fmt_num(b.0.y), fmt_num(b.0.z)));
    meta.push("noise_mode", noise.mode);
    meta.push("noise_t", fmt_num(noise.magnitude));
    meta.push("gradient", "hellmann-feynman");
    meta.push("curvature", "perturbation-sum taylor coefficient");
    if let Some(s) = spread {
        meta.push("spread", s);
        meta.push("samples", samples);
        meta.push("seed", seed);
        meta.push("inhomogeneity", "independent gaussian per component");
    }
    let mut text = meta.csv_header();
    text.push_str(PREDICT_HEADER);
    text.push('\n');
    let noise_ut = fmt_num(noise.magnitude * 1e6);
    let mut skipped = 0;
    for t in transitions {
        let ts = match sensitivity_from_solution(&model, &sol, t) {
            Ok(ts) => ts,
            Err(e) => {
                let _ = writeln!(stderr, "skipping {t}: {e}");
                skipped += 1;
                continue;
            }
        };
        let p = predict_t2(&ts, noise)?;
        text.push_str(&predict_row(&ts, &noise_ut, &noise.mode.to_string(), p.t2));
        if let Some(s) = spread {
            let inh = inhomogeneity_dephasing(&model, b, s, t, samples, seed, exec)?;
            if inh.discarded > 0 {
                let _ = writeln!(stderr, "{t}: {} of {samples} samples discarded", inh.discarded);
            }
            text.push_str(&predict_row(&ts, "", &format!("inhomogeneous({s})"), inh.t2_star));
            text.push_str(&predict_row(&ts, &noise_ut, "combined", p.t2.combine(inh.t2_star)));
        }
    }
    if skipped > 0 {
        let _ = writeln!(stderr, "{skipped} transitions skipped (degenerate levels)");
    }
    emit(&args.common.out, stdout, &text)
}

fn estimate_json(e: &T2Estimate) -> Value {
    json!({
        "t2_s": e.t2,
        "t2_ci95_s": [e.ci_low, opt_num(e.ci_high)],
        "i0": e.i0,
        "slope_per_s": e.slope,
        "slope_stderr_per_s": e.slope_stderr,
        "residual_rms": e.residual_rms,
        "points_used": e.points_used,
        "points_excluded": e.points_excluded,
        "weighted": e.weighted,
    })
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(Error::InvalidInput(format!("{}: {e}", path.display()))))
}

fn fit(args: FitArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let mut meta = Meta::new(None);
    let mut extra = Vec::new();
    let data = if let Some(p) = &args.data {
        let text = read_text(p)?;
        meta.push("input_sha256", crate::hex_digest(text.as_bytes()));
        meta.push("source", "dataset");
        parse_dataset(&text)?
    } else {
        let window = args
            .window
            .ok_or_else(|| Failure::Usage("--traces needs --window f_lo,f_hi".into()))?;
        meta.push("source", "traces");
        meta.push("window_hz", format!("{},{}", window.0, window.1));
        meta.push("peak_area", "fitted gaussian a*sigma*sqrt(2pi)");
        let mut points = Vec::new();
        for p in &args.traces {
            let text = read_text(p)?;
            let trace = parse_trace(&text).map_err(|e| Failure::Data(Error::InvalidInput(format!("{}: {e}", p.display()))))?;
            let peak = spectrum_peak_area(&trace, window)?;
            if !peak.detected {
                let _ = writeln!(stderr, "{}: no echo above the noise floor", p.display());
            }
            extra.push(json!({
                "file": p.display().to_string(),
                "tau_s": trace.tau,
                "area": peak.area,
                "area_err": peak.area_error,
                "detected": peak.detected,
            }));
            points.push(EchoPoint {
                tau: trace.tau,
                area: peak.area,
                area_error: peak.area_error,
            });
        }
        points.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        EchoDataset::new(points)?
    };
    let est = fit_decay(&data)?;
    if est.points_excluded > 0 {
        let _ = writeln!(stderr, "warning: {} points with area ≤ 0 excluded", est.points_excluded);
    }
    meta.push("method", "weighted log-linear, student-t 95%");
    let mut doc = json!({
        "metadata": meta.json(),
        "estimate": estimate_json(&est),
    });
    if !extra.is_empty() {
        doc["areas"] = json!(extra);
    }
    if args.nonlinear {
        let (t2, i0) = fit_decay_nonlinear(&data)?;
        doc["nonlinear"] = json!({"t2_s": t2, "i0": i0});
    }
    let _ = writeln!(stderr, "T2 = {:.6e} s", est.t2);
    emit(&args.out, stdout, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

fn subsites(args: SubsitesArgs, stdout: &mut dyn Write, _stderr: &mut dyn Write) -> CmdResult {
    let (cfg, name, sys) = load(&args.common)?;
    if args.steps < 2 {
        return Err(Failure::Usage("--steps must be at least 2".into()));
    }
    if !(args.bmax >= 0.0 && args.bmax.is_finite()) {
        return Err(Failure::Usage("--bmax must be finite and ≥ 0".into()));
    }
    let partner = subsite_counterpart(&sys);
    let (ma, mb) = (sys.model(), partner.model());
    let mut meta = Meta::new(Some(&cfg));
    meta.push("system", &name);
    meta.push("direction_deg", format!("{},{}", args.direction.0, args.direction.1));
    meta.push("partner", "pi rotation about b");
    let mut text = meta.csv_header();
    text.push_str("b_t,transition,nu_a_mhz,nu_b_mhz\n");
    for k in 0..args.steps {
        let bm = args.bmax * k as f64 / (args.steps - 1) as f64;
        let b = FieldVector::from_polar_deg(bm, args.direction.0, args.direction.1);
        let (sa, sb) = (ma.solve(b)?, mb.solve(b)?);
        for t in TransitionId::all(sa.dim()) {
            let na = sa.energies[t.upper] - sa.energies[t.lower];
            let nb = sb.energies[t.upper] - sb.energies[t.lower];
            text.push_str(&format!("{},{t},{},{}\n", fmt_num(bm), fmt_num(na), fmt_num(nb)));
        }
    }
    emit(&args.common.out, stdout, &text)
}

/// Runs the command line `args` (including the program name) and returns the exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(rendered.as_bytes());
            } else {
                let _ = stderr.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let (name, result) = match cli.command {
        Command::Levels(a) => ("levels", levels(a, stdout, stderr)),
        Command::Map(a) => ("map", map(a, stdout, stderr)),
        Command::Zefoz(a) => ("zefoz", zefoz(a, stdout, stderr)),
        Command::Predict(a) => ("predict", predict(a, stdout, stderr)),
        Command::Fit(a) => ("fit", fit(a, stdout, stderr)),
        Command::Subsites(a) => ("subsites", subsites(a, stdout, stderr)),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {name}: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(stderr, "error [{}] in {name}: {e}", e.module());
            2
        }
    }
}
