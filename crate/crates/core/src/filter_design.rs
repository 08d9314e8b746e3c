//! FIR design for the reconfigurable bank.
//!
//! Every frequency in this crate is Nyquist-normalized: `0.0` is DC and `1.0`
//! is half the sampling rate. A Nyquist-normalized frequency `f` corresponds
//! to the angular frequency `ω = π f` rad/sample.
//!
//! The modal prototype and the masking filters are Kaiser-windowed ideal
//! lowpass filters. Length and shape parameter come from the closed-form
//! Kaiser estimates; the design is then checked on a dense grid and grown by
//! two taps until the template is met.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::BankConfig;

/// Number of uniform grid points used when checking a design against its template.
pub const VERIFY_GRID_POINTS: usize = 4096;

/// Maximum allowed passband deviation for designed filters, in dB.
pub const PASSBAND_RIPPLE_DB: f64 = 0.5;

const MAX_DESIGN_RETRIES: usize = 256;

/// Lowpass template: passband edge, stopband edge, and stopband attenuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub f_pass: f64,
    pub f_stop: f64,
    pub atten_db: f64,
}

impl FilterSpec {
    pub fn new(f_pass: f64, f_stop: f64, atten_db: f64) -> Result<Self> {
        let spec = Self {
            f_pass,
            f_stop,
            atten_db,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.f_pass.is_finite() && self.f_stop.is_finite() && self.atten_db.is_finite();
        if !finite {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        if !(self.f_pass > 0.0 && self.f_pass < self.f_stop && self.f_stop < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "need 0 < f_pass < f_stop < 1, got f_pass = {}, f_stop = {}",
                self.f_pass, self.f_stop
            )));
        }
        if self.atten_db < 30.0 {
            return Err(Error::InvalidSpec(format!(
                "stopband attenuation must be at least 30 dB, got {}",
                self.atten_db
            )));
        }
        Ok(())
    }

    pub fn transition_width(&self) -> f64 {
        self.f_stop - self.f_pass
    }
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            f_pass: 0.1,
            f_stop: 0.115,
            atten_db: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Lowpass,
    Complementary,
    MultibandModal,
    MultibandComplementary,
    Masking,
    /// Multiband stage convolved with a masking filter.
    Cascade,
    /// Coefficients with no band-edge semantics (user supplied).
    Generic,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Lowpass => "lowpass",
            FilterKind::Complementary => "complementary",
            FilterKind::MultibandModal => "multiband-modal",
            FilterKind::MultibandComplementary => "multiband-complementary",
            FilterKind::Masking => "masking",
            FilterKind::Cascade => "cascade",
            FilterKind::Generic => "generic",
        }
    }
}

/// Provenance of a derived filter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterMeta {
    pub decimation: Option<usize>,
    pub interpolation: Option<usize>,
    pub band: Option<usize>,
    /// Declared (passband edge, stopband edge) of a lowpass-type response.
    pub edges: Option<(f64, f64)>,
}

/// Real FIR filter with its declared role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    coeffs: Vec<f64>,
    kind: FilterKind,
    meta: FilterMeta,
}

impl FirFilter {
    pub fn new(coeffs: Vec<f64>, kind: FilterKind, meta: FilterMeta) -> Self {
        debug_assert!(coeffs.iter().all(|c| c.is_finite()));
        Self { coeffs, kind, meta }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs, FilterKind::Generic, FilterMeta::default())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn meta(&self) -> &FilterMeta {
        &self.meta
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.coeffs.len();
        (0..n / 2).all(|i| self.coeffs[i] == self.coeffs[n - 1 - i])
    }

    /// Group delay of a linear-phase filter, in samples.
    pub fn group_delay(&self) -> f64 {
        (self.coeffs.len().saturating_sub(1)) as f64 / 2.0
    }

    /// Coefficients multiplied by `gain`; kind and metadata are kept.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * gain).collect(),
            kind: self.kind,
            meta: self.meta,
        }
    }

    /// Plain-text form: a `#` metadata line followed by one coefficient per line.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        let mut out = format!(
            "# kind={} len={} D={} M={} band={}\n",
            self.kind.name(),
            self.coeffs.len(),
            opt(self.meta.decimation),
            opt(self.meta.interpolation),
            opt(self.meta.band),
        );
        for c in &self.coeffs {
            out.push_str(&format!("{c:e}\n"));
        }
        out
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser shape parameter for a given stopband attenuation.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Kaiser's length estimate, rounded up to the next odd number.
pub fn kaiser_length(atten_db: f64, transition: f64) -> usize {
    let delta_omega = PI * transition;
    let n = ((atten_db - 7.95) / (2.285 * delta_omega)).ceil().max(0.0) as usize + 1;
    n | 1
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    let half = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|n| {
            let r = (n as f64 - half) / half;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Kaiser-windowed ideal lowpass with cutoff `cutoff` (Nyquist-normalized).
/// `cutoff = 0` yields all zeros and `cutoff = 1` a centered unit impulse.
pub fn windowed_sinc(len: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let window = kaiser_window(len, beta);
    let center = (len - 1) as f64 / 2.0;
    window
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let m = n as f64 - center;
            let ideal = if m == 0.0 {
                cutoff
            } else {
                (PI * cutoff * m).sin() / (PI * m)
            };
            w * ideal
        })
        .collect()
}

/// Forces exact symmetry by averaging mirrored taps.
fn symmetrize(coeffs: &mut [f64]) {
    let n = coeffs.len();
    for i in 0..n / 2 {
        let avg = 0.5 * (coeffs[i] + coeffs[n - 1 - i]);
        coeffs[i] = avg;
        coeffs[n - 1 - i] = avg;
    }
}

/// Worst-case passband deviation and worst-case stopband attenuation (both dB)
/// of a symmetric filter against a lowpass template.
pub fn lowpass_template_margins(coeffs: &[f64], spec: &FilterSpec, points: usize) -> (f64, f64) {
    let mut pass_dev: f64 = 0.0;
    let mut stop_atten = f64::INFINITY;
    for i in 0..points {
        let f = i as f64 / (points - 1) as f64;
        let mag = amplitude(coeffs, f).abs();
        if f <= spec.f_pass {
            pass_dev = pass_dev.max((20.0 * mag.log10()).abs());
        } else if f >= spec.f_stop {
            stop_atten = stop_atten.min(-20.0 * mag.max(1e-300).log10());
        }
    }
    (pass_dev, stop_atten)
}

/// Designs the lowpass prototype for `spec`.
///
/// The returned filter is odd-length, exactly symmetric, and meets the
/// template on a [`VERIFY_GRID_POINTS`] grid: passband deviation at most
/// [`PASSBAND_RIPPLE_DB`] and stopband attenuation at least `spec.atten_db`.
pub fn design_lowpass(spec: &FilterSpec) -> Result<FirFilter> {
    spec.validate()?;
    let beta = kaiser_beta(spec.atten_db);
    let cutoff = 0.5 * (spec.f_pass + spec.f_stop);
    let mut len = kaiser_length(spec.atten_db, spec.transition_width()).max(3);
    for _ in 0..MAX_DESIGN_RETRIES {
        let mut coeffs = windowed_sinc(len, cutoff, beta);
        symmetrize(&mut coeffs);
        let (pass_dev, stop_atten) = lowpass_template_margins(&coeffs, spec, VERIFY_GRID_POINTS);
        if pass_dev <= PASSBAND_RIPPLE_DB && stop_atten >= spec.atten_db {
            return Ok(FirFilter::new(
                coeffs,
                FilterKind::Lowpass,
                FilterMeta {
                    edges: Some((spec.f_pass, spec.f_stop)),
                    ..FilterMeta::default()
                },
            ));
        }
        len += 2;
    }
    Err(Error::DesignFailed(format!(
        "no Kaiser design up to {len} taps meets {spec:?}"
    )))
}

/// Delay-minus-filter complement of an odd-length symmetric lowpass.
pub fn complementary(h: &FirFilter) -> Result<FirFilter> {
    if h.kind != FilterKind::Lowpass {
        return Err(Error::WrongKind {
            expected: FilterKind::Lowpass.name(),
            got: h.kind.name(),
        });
    }
    if h.len() % 2 == 0 {
        return Err(Error::EvenLength(h.len()));
    }
    let mid = (h.len() - 1) / 2;
    let mut coeffs: Vec<f64> = h.coeffs.iter().map(|c| -c).collect();
    coeffs[mid] = 1.0 - h.coeffs[mid];
    Ok(FirFilter::new(coeffs, FilterKind::Complementary, h.meta))
}

/// Coefficient decimation type II: keeps every `decimation`-th coefficient.
///
/// Odd-length filters are sampled on the lattice through the center tap so
/// the result stays symmetric; even-length filters start at index 0. If the
/// filter declares band edges, the stretched stopband edge must not pass
/// Nyquist. The stretched response carries a gain of roughly `1/D`.
pub fn coeff_decimate_ii(h: &FirFilter, decimation: usize) -> Result<FirFilter> {
    if decimation == 0 {
        return Err(Error::InvalidConfig("decimation factor must be positive".into()));
    }
    let mut meta = h.meta;
    if let Some((f_pass, f_stop)) = h.meta.edges {
        let product = decimation as f64 * f_stop;
        if product > 1.0 + 1e-12 {
            return Err(Error::FoldOver {
                decimation,
                product,
            });
        }
        meta.edges = Some((f_pass * decimation as f64, product.min(1.0)));
    }
    meta.decimation = Some(decimation * h.meta.decimation.unwrap_or(1));
    let offset = if h.len() % 2 == 1 {
        ((h.len() - 1) / 2) % decimation
    } else {
        0
    };
    let coeffs = h.coeffs.iter().skip(offset).step_by(decimation).copied().collect();
    Ok(FirFilter::new(coeffs, h.kind, meta))
}

/// Inserts `factor - 1` zeros between coefficients, compressing the response.
pub fn interpolate(h: &FirFilter, factor: usize) -> Result<FirFilter> {
    if factor == 0 {
        return Err(Error::InvalidConfig("interpolation factor must be positive".into()));
    }
    if h.is_empty() {
        return Ok(h.clone());
    }
    let mut coeffs = vec![0.0; (h.len() - 1) * factor + 1];
    for (n, c) in h.coeffs.iter().enumerate() {
        coeffs[n * factor] = *c;
    }
    let kind = match h.kind {
        FilterKind::Lowpass if factor > 1 => FilterKind::MultibandModal,
        FilterKind::Complementary if factor > 1 => FilterKind::MultibandComplementary,
        other => other,
    };
    let mut meta = h.meta;
    meta.interpolation = Some(factor * h.meta.interpolation.unwrap_or(1));
    Ok(FirFilter::new(coeffs, kind, meta))
}

/// Half-widths (passband, stopband) shared by every masking filter of a bank.
///
/// The passband covers the widest subband the bank can produce; the stopband
/// begins just before the nearest same-branch image, `2/M` away.
pub fn masking_half_widths(cfg: &BankConfig) -> (f64, f64) {
    let spacing = 2.0 / cfg.m as f64;
    let widest = cfg.max_subband_half_width();
    let margin = 0.02 / cfg.m as f64;
    (widest + margin, spacing - widest - margin)
}

/// Fixed masking filter that isolates band `band` (center `band / M`).
///
/// Bands 0 and M are one-sided (lowpass / highpass); interior bands are the
/// lowpass prototype modulated to the band center.
pub fn design_masking(band: usize, cfg: &BankConfig) -> Result<FirFilter> {
    if band > cfg.m {
        return Err(Error::BandOutOfRange { band, max: cfg.m });
    }
    let (pass, stop) = masking_half_widths(cfg);
    let widest = cfg.max_subband_half_width();
    if pass >= stop || pass < widest || stop > 2.0 / cfg.m as f64 - widest {
        return Err(Error::MaskingInfeasible {
            band,
            reason: format!("passband half-width {pass} vs stopband half-width {stop}"),
        });
    }
    let proto_spec = FilterSpec::new(pass, stop, cfg.spec.atten_db).map_err(|e| Error::MaskingInfeasible {
        band,
        reason: e.to_string(),
    })?;
    let proto = design_lowpass(&proto_spec)?;
    let center_freq = band as f64 / cfg.m as f64;
    let mid = proto.group_delay();
    let coeffs: Vec<f64> = proto
        .coeffs
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let m = n as f64 - mid;
            let carrier = if band == 0 {
                1.0
            } else if band == cfg.m {
                // cos(π m) evaluated exactly
                if (m as i64) % 2 == 0 { 1.0 } else { -1.0 }
            } else {
                2.0 * (PI * center_freq * m).cos()
            };
            carrier * p
        })
        .collect();
    let mut coeffs = coeffs;
    symmetrize(&mut coeffs);
    Ok(FirFilter::new(
        coeffs,
        FilterKind::Masking,
        FilterMeta {
            band: Some(band),
            edges: Some((pass, stop)),
            ..FilterMeta::default()
        },
    ))
}

/// Full linear convolution of two coefficient sequences.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Discrete-time Fourier transform of the coefficients at each grid frequency.
pub fn freq_response(h: &FirFilter, grid: &[f64]) -> Vec<Complex64> {
    grid.iter()
        .map(|&f| {
            let omega = PI * f;
            h.coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(n, c)| Complex64::from_polar(*c, -omega * n as f64))
                .sum()
        })
        .collect()
}

/// Zero-phase amplitude of a symmetric filter at frequency `f`.
pub fn amplitude(coeffs: &[f64], f: f64) -> f64 {
    let center = (coeffs.len().saturating_sub(1)) as f64 / 2.0;
    let omega = PI * f;
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(n, c)| c * (omega * (n as f64 - center)).cos())
        .sum()
}

/// `points` uniformly spaced frequencies covering [0, 1].
pub fn uniform_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

pub fn to_db(mag: f64) -> f64 {
    20.0 * mag.max(1e-300).log10()
}
