//! Echo areas from heterodyne beat traces, and T₂ from echo-area decays
//! I(τ) = I₀ exp(−4τ/T₂).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::decoherence::{EchoDataset, EchoPoint};
use crate::error::{Error, Result};
use crate::lm::{levenberg_marquardt, LmOptions};

pub const MIN_TRACE_SAMPLES: usize = 64;
/// Peak must exceed this multiple of the out-of-window RMS.
pub const DETECTION_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BeatTrace {
    pub samples: Vec<f64>,
    /// Hz
    pub sample_rate: f64,
    /// Echo delay, s.
    pub tau: f64,
}

impl BeatTrace {
    pub fn new(samples: Vec<f64>, sample_rate: f64, tau: f64) -> Result<Self> {
        if samples.len() < MIN_TRACE_SAMPLES {
            return Err(Error::InvalidInput(format!(
                "trace has {} samples, at least {MIN_TRACE_SAMPLES} required",
                samples.len()
            )));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("trace contains non-finite samples".into()));
        }
        Ok(BeatTrace {
            samples,
            sample_rate,
            tau,
        })
    }

    /// One-sided amplitude spectrum: (frequency Hz, 2|X_k|/n) for k = 0..n/2.
    pub fn amplitude_spectrum(&self) -> Vec<(f64, f64)> {
        let n = self.samples.len();
        let mut buf: Vec<Complex64> = self.samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        (0..=n / 2)
            .map(|k| (k as f64 * self.sample_rate / n as f64, 2.0 * buf[k].norm() / n as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPeak {
    pub amplitude: f64,
    /// Hz
    pub center: f64,
    /// Hz
    pub sigma: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakArea {
    /// a·σ·√(2π); zero when no echo is detected.
    pub area: f64,
    pub area_error: f64,
    pub detected: bool,
    pub peak: Option<GaussianPeak>,
}

fn gaussian(f: f64, p: &DVector<f64>) -> f64 {
    p[3] + p[0] * (-(f - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp()
}

/// Fits a·exp(−(f−f₀)²/2σ²) + c to the amplitude spectrum inside the window.
/// The DC bin is never used, so a constant offset of the trace has no effect.
pub fn spectrum_peak_area(trace: &BeatTrace, window: (f64, f64)) -> Result<PeakArea> {
    let nyquist = trace.sample_rate / 2.0;
    let (lo, hi) = window;
    if !(lo >= 0.0 && hi > lo && hi < nyquist) {
        return Err(Error::InvalidInput(format!(
            "window ({lo}, {hi}) Hz must lie inside [0, {nyquist}) Hz"
        )));
    }
    let spectrum = trace.amplitude_spectrum();
    let (inside, outside): (Vec<(f64, f64)>, Vec<_>) =
        spectrum[1..].iter().partition(|(f, _)| *f >= lo && *f <= hi);
    if inside.len() < 6 {
        return Err(Error::InvalidInput(format!(
            "window ({lo}, {hi}) Hz covers only {} spectral bins",
            inside.len()
        )));
    }
    let (imax, &(fmax, ymax)) = inside
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("window is not empty");
    let noise = if outside.is_empty() {
        let mut ys: Vec<f64> = inside.iter().map(|p| p.1).collect();
        ys.sort_by(f64::total_cmp);
        ys[ys.len() / 2]
    } else {
        (outside.iter().map(|p| p.1 * p.1).sum::<f64>() / outside.len() as f64).sqrt()
    };
    if !(ymax > DETECTION_FACTOR * noise) {
        return Ok(PeakArea {
            area: 0.0,
            area_error: 0.0,
            detected: false,
            peak: None,
        });
    }

    let baseline0 = inside.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let half = baseline0 + (ymax - baseline0) / 2.0;
    let mut left = imax;
    while left > 0 && inside[left].1 > half {
        left -= 1;
    }
    let mut right = imax;
    while right + 1 < inside.len() && inside[right].1 > half {
        right += 1;
    }
    let bin = trace.sample_rate / trace.samples.len() as f64;
    let fwhm = (inside[right].0 - inside[left].0).max(bin);
    let p0 = DVector::from_vec(vec![ymax - baseline0, fmax, fwhm / (8.0 * 2f64.ln()).sqrt(), baseline0]);

    let fs: Vec<f64> = inside.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = inside.iter().map(|p| p.1).collect();
    let m = fs.len();
    let residuals = |p: &DVector<f64>| DVector::from_iterator(m, fs.iter().zip(&ys).map(|(&f, &y)| gaussian(f, p) - y));
    let jacobian = |p: &DVector<f64>| {
        DMatrix::from_fn(m, 4, |i, j| {
            let d = fs[i] - p[1];
            let e = (-d * d / (2.0 * p[2] * p[2])).exp();
            match j {
                0 => e,
                1 => p[0] * e * d / (p[2] * p[2]),
                2 => p[0] * e * d * d / p[2].powi(3),
                _ => 1.0,
            }
        })
    };
    let fit = levenberg_marquardt(residuals, jacobian, p0, LmOptions::default())?;
    let p = &fit.params;
    let (a, sigma) = (p[0], p[2].abs());
    let root = (2.0 * PI).sqrt();
    let area = a * sigma * root;
    let c = &fit.covariance;
    let var = (sigma * root).powi(2) * c[(0, 0)] + (a * root).powi(2) * c[(2, 2)] + 2.0 * sigma * a * root * root * c[(0, 2)] * p[2].signum();
    Ok(PeakArea {
        area,
        area_error: var.max(0.0).sqrt(),
        detected: true,
        peak: Some(GaussianPeak {
            amplitude: a,
            center: p[1],
            sigma,
            baseline: p[3],
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct T2Estimate {
    /// s
    pub t2: f64,
    pub ci_low: f64,
    /// `None` when the interval reaches a non-negative slope.
    pub ci_high: Option<f64>,
    pub i0: f64,
    /// RMS of ln-area residuals.
    pub residual_rms: f64,
    /// s⁻¹
    pub slope: f64,
    pub slope_stderr: f64,
    pub points_used: usize,
    pub points_excluded: usize,
    pub weighted: bool,
}

impl T2Estimate {
    pub fn contains(&self, t2: f64) -> bool {
        t2 >= self.ci_low && self.ci_high.is_none_or(|h| t2 <= h)
    }
}

/// Weighted linear fit of ln(area) against τ; T₂ = −4/slope. Weights are
/// (area/area_error)² when every point carries a positive error, otherwise
/// uniform. The 95% interval uses Student's t with n − 2 degrees of freedom.
pub fn fit_decay(data: &EchoDataset) -> Result<T2Estimate> {
    let kept: Vec<&EchoPoint> = data.points.iter().filter(|p| p.area > 0.0).collect();
    let excluded = data.points.len() - kept.len();
    let n = kept.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 points with positive area, got {n}")));
    }
    let weighted = kept.iter().all(|p| p.area_error > 0.0);
    let w: Vec<f64> = kept
        .iter()
        .map(|p| if weighted { (p.area / p.area_error).powi(2) } else { 1.0 })
        .collect();
    let x: Vec<f64> = kept.iter().map(|p| p.tau).collect();
    let y: Vec<f64> = kept.iter().map(|p| p.area.ln()).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w[i] * (x[i] - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Singular("all delays are equal".into()));
    }
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    if !(slope < 0.0) {
        return Err(Error::NoDecay { slope });
    }
    let resid: Vec<f64> = (0..n).map(|i| y[i] - intercept - slope * x[i]).collect();
    let chi2: f64 = (0..n).map(|i| w[i] * resid[i] * resid[i]).sum();
    let dof = (n - 2) as f64;
    let slope_stderr = if n > 2 { (chi2 / dof / sxx).sqrt() } else { 0.0 };
    let tcrit = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::FitFailed(e.to_string()))?
        .inverse_cdf(0.975);
    let s_lo = slope - tcrit * slope_stderr;
    let s_hi = slope + tcrit * slope_stderr;
    Ok(T2Estimate {
        t2: -4.0 / slope,
        ci_low: -4.0 / s_lo,
        ci_high: (s_hi < 0.0).then(|| -4.0 / s_hi),
        i0: intercept.exp(),
        residual_rms: (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt(),
        slope,
        slope_stderr,
        points_used: n,
        points_excluded: excluded,
        weighted,
    })
}

/// Direct fit of I₀ exp(−4τ/T₂) to the areas, started from the log-linear
/// estimate. Returns (T₂, I₀).
pub fn fit_decay_nonlinear(data: &EchoDataset) -> Result<(f64, f64)> {
    let start = fit_decay(data)?;
    let pts: Vec<EchoPoint> = data.points.clone();
    let weighted = pts.iter().all(|p| p.area_error > 0.0);
    let sig: Vec<f64> = pts.iter().map(|p| if weighted { p.area_error } else { 1.0 }).collect();
    let m = pts.len();
    // parameters: I₀ and the rate 4/T₂
    let res = |p: &DVector<f64>| {
        DVector::from_iterator(m, (0..m).map(|i| (p[0] * (-p[1] * pts[i].tau).exp() - pts[i].area) / sig[i]))
    };
    let jac = |p: &DVector<f64>| {
        DMatrix::from_fn(m, 2, |i, j| {
            let e = (-p[1] * pts[i].tau).exp();
            if j == 0 {
                e / sig[i]
            } else {
                -p[0] * pts[i].tau * e / sig[i]
            }
        })
    };
    let p0 = DVector::from_vec(vec![start.i0, -start.slope]);
    let fit = levenberg_marquardt(res, jac, p0, LmOptions::default())?;
    if !(fit.params[1] > 0.0) {
        return Err(Error::NoDecay { slope: -fit.params[1] });
    }
    Ok((4.0 / fit.params[1], fit.params[0]))
}

fn header_value(line: &str, key: &str) -> Option<f64> {
    let rest = line.trim().strip_prefix('#')?.trim();
    let (k, v) = rest.split_once('=')?;
    (k.trim() == key).then(|| v.trim().parse().ok()).flatten()
}

/// Reads `# sample_rate_hz=` and `# tau_s=` header lines followed by
/// `sample_index,amplitude` rows.
pub fn parse_trace(text: &str) -> Result<BeatTrace> {
    let mut rate = None;
    let mut tau = None;
    for line in text.lines().filter(|l| l.trim_start().starts_with('#')) {
        rate = rate.or(header_value(line, "sample_rate_hz"));
        tau = tau.or(header_value(line, "tau_s"));
    }
    let rate = rate.ok_or_else(|| Error::InvalidInput("missing `# sample_rate_hz=` header".into()))?;
    let tau = tau.ok_or_else(|| Error::InvalidInput("missing `# tau_s=` header".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(u64, f64)> = Vec::new();
    for (line, rec) in reader.deserialize::<(u64, f64)>().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("trace row {}: {e}", line + 1)))?;
        rows.push(rec);
    }
    rows.sort_by_key(|r| r.0);
    BeatTrace::new(rows.into_iter().map(|r| r.1).collect(), rate, tau)
}

/// Reads `tau_s,area[,area_err]` rows; a missing error column means uniform weights.
pub fn parse_dataset(text: &str) -> Result<EchoDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("dataset header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let tau_c = col("tau_s").ok_or_else(|| Error::InvalidInput("dataset lacks a `tau_s` column".into()))?;
    let area_c = col("area").ok_or_else(|| Error::InvalidInput("dataset lacks an `area` column".into()))?;
    let err_c = col("area_err");
    let mut points = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("dataset row {}: {e}", row + 1)))?;
        let num = |c: usize, name: &str| -> Result<f64> {
            rec.get(c)
                .ok_or_else(|| Error::InvalidInput(format!("dataset row {}: missing {name}", row + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("dataset row {}: {name}: {e}", row + 1)))
        };
        let area_error = match err_c {
            Some(c) if rec.get(c).is_some_and(|s| !s.is_empty()) => num(c, "area_err")?,
            _ => 0.0,
        };
        points.push(EchoPoint {
            tau: num(tau_c, "tau_s")?,
            area: num(area_c, "area")?,
            area_error,
        });
    }
    EchoDataset::new(points)
}
