//! Synthetic wideband inputs: flat-PSD channels plus AWGN.
//!
//! Each channel is white Gaussian noise passed through a sharp Kaiser
//! windowed-sinc bandpass and scaled so its in-band PSD sits `snr_db` above
//! the noise PSD. Gaussian variates come from a ChaCha8 stream (seeded with
//! `seed_from_u64`) through the Box–Muller transform.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::edge_detect::SliceGrid;
use crate::error::{Error, Result};
use crate::filter_design::{kaiser_beta, kaiser_length, windowed_sinc};
use crate::filterbank::fft_filter_many;

/// Magic header of raw sample files, followed by little-endian `f64` samples.
pub const SAMPLE_MAGIC: [u8; 8] = *b"WBSIG\0\0\x01";

/// Transition width of the channel-shaping filters.
pub const CHANNEL_TRANSITION: f64 = 0.004;
/// Stopband attenuation of the channel-shaping filters.
pub const CHANNEL_ATTEN_DB: f64 = 60.0;

pub const DEFAULT_SNR_DB: f64 = 10.0;

/// Name of the generator algorithm, recorded in run manifests.
pub const GENERATOR_NAME: &str = "chacha8-box-muller";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub f_rising: f64,
    pub f_falling: f64,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
}

fn default_snr() -> f64 {
    DEFAULT_SNR_DB
}

impl Channel {
    pub fn new(f_rising: f64, f_falling: f64, snr_db: f64) -> Self {
        Self {
            f_rising,
            f_falling,
            snr_db,
        }
    }

    pub fn width(&self) -> f64 {
        self.f_falling - self.f_rising
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, rename = "channel")]
    pub channels: Vec<Channel>,
    #[serde(default = "default_noise_var")]
    pub noise_var: f64,
    #[serde(default)]
    pub seed: u64,
    pub n_total: usize,
}

fn default_noise_var() -> f64 {
    1.0
}

/// Channel layouts of the two reference spectra.
pub fn preset_channels(name: &str) -> Option<Vec<(f64, f64)>> {
    match name {
        "input1" => Some(vec![(0.0, 0.13), (0.3, 0.65), (0.78, 0.89)]),
        "input2" => Some(vec![(0.06, 0.16), (0.34, 0.49), (0.65, 0.77), (0.89, 1.0)]),
        _ => None,
    }
}

impl Scenario {
    pub fn new(channels: Vec<Channel>, noise_var: f64, seed: u64, n_total: usize) -> Result<Self> {
        let s = Self {
            channels,
            noise_var,
            seed,
            n_total,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str, snr_db: f64, seed: u64, n_total: usize) -> Result<Self> {
        let layout = preset_channels(name).ok_or_else(|| Error::InvalidScenario(format!("unknown preset `{name}`")))?;
        let channels = layout.into_iter().map(|(r, f)| Channel::new(r, f, snr_db)).collect();
        Self::new(channels, 1.0, seed, n_total)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_total == 0 {
            return Err(Error::InvalidScenario("n_total must be positive".into()));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidScenario("noise_var must be positive".into()));
        }
        for c in &self.channels {
            if !(0.0 <= c.f_rising && c.f_rising < c.f_falling && c.f_falling <= 1.0) {
                return Err(Error::InvalidScenario(format!(
                    "channel edges must satisfy 0 <= rising < falling <= 1, got ({}, {})",
                    c.f_rising, c.f_falling
                )));
            }
            if !c.snr_db.is_finite() {
                return Err(Error::InvalidScenario("non-finite SNR".into()));
            }
        }
        for pair in self.channels.windows(2) {
            if pair[1].f_rising < pair[0].f_falling {
                return Err(Error::InvalidScenario(format!(
                    "channels ({}, {}) and ({}, {}) overlap or are out of order",
                    pair[0].f_rising, pair[0].f_falling, pair[1].f_rising, pair[1].f_falling
                )));
            }
        }
        Ok(())
    }

    /// True edges in ascending order, alternating rising and falling.
    pub fn edges(&self) -> Vec<f64> {
        self.channels.iter().flat_map(|c| [c.f_rising, c.f_falling]).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Standard normal variates by the Box–Muller transform.
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, n: usize, std_dev: f64) -> Vec<f64> {
        (0..n).map(|_| std_dev * self.next_gaussian()).collect()
    }
}

/// Linear-phase bandpass with unit passband gain on `[lo, hi]`.
pub fn channel_filter(lo: f64, hi: f64) -> Vec<f64> {
    let len = kaiser_length(CHANNEL_ATTEN_DB, CHANNEL_TRANSITION);
    let beta = kaiser_beta(CHANNEL_ATTEN_DB);
    let upper = windowed_sinc(len, hi, beta);
    let lower = windowed_sinc(len, lo, beta);
    upper.iter().zip(&lower).map(|(u, l)| u - l).collect()
}

/// Realizes a scenario as `n_total` real samples.
pub fn generate(s: &Scenario) -> Result<Vec<f64>> {
    s.validate()?;
    let mut source = GaussianSource::new(s.seed);
    let mut out = source.fill(s.n_total, s.noise_var.sqrt());
    for c in &s.channels {
        let h = channel_filter(c.f_rising, c.f_falling);
        let settle = h.len() - 1;
        let excitation = source.fill(s.n_total + settle, 1.0);
        let shaped = fft_filter_many(&[&h], &excitation).pop().unwrap_or_default();
        let gain = (10f64.powf(c.snr_db / 10.0) * s.noise_var).sqrt();
        for (o, v) in out.iter_mut().zip(&shaped[settle..]) {
            *o += gain * v;
        }
    }
    Ok(out)
}

/// One-sided periodogram energy per bin; bin `j` sits at `2j/n` and the
/// bins sum to the total sample energy.
pub fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    (0..=half)
        .map(|j| {
            let p = buf[j].norm_sqr() / n as f64;
            if j == 0 || (n % 2 == 0 && j == half) {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Periodogram energy integrated over each interval of the Nyquist axis.
///
/// Bin `j` covers `[2j/n - 1/n, 2j/n + 1/n] ∩ [0, 1]` and is split between
/// intervals in proportion to overlap.
pub fn band_energies(x: &[f64], intervals: &[(f64, f64)]) -> Vec<f64> {
    let n = x.len();
    let bins = periodogram(x);
    let half_cell = 1.0 / n as f64;
    intervals
        .iter()
        .map(|&(lo, hi)| {
            let first = (((lo - half_cell) * n as f64 / 2.0).floor().max(0.0)) as usize;
            let last = ((((hi + half_cell) * n as f64 / 2.0).ceil()) as usize).min(bins.len() - 1);
            (first..=last)
                .map(|j| {
                    let f = 2.0 * j as f64 / n as f64;
                    let cell_lo = (f - half_cell).max(0.0);
                    let cell_hi = (f + half_cell).min(1.0);
                    let overlap = (cell_hi.min(hi) - cell_lo.max(lo)).max(0.0);
                    bins[j] * overlap / (cell_hi - cell_lo)
                })
                .sum()
        })
        .collect()
}

/// Independent per-slice energies from the periodogram of `x`.
pub fn oracle_spectrum(x: &[f64], grid: &SliceGrid) -> Vec<f64> {
    let intervals: Vec<(f64, f64)> = grid.slices().iter().map(|s| (s.lo, s.hi)).collect();
    band_energies(x, &intervals)
}

pub fn write_samples<W: Write>(mut w: W, samples: &[f64]) -> Result<()> {
    w.write_all(&SAMPLE_MAGIC)?;
    for v in samples {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < SAMPLE_MAGIC.len() || bytes[..8] != SAMPLE_MAGIC {
        return Err(Error::Parse("missing sample-file magic header".into()));
    }
    let body = &bytes[8..];
    if body.len() % 8 != 0 {
        return Err(Error::Parse("truncated sample file".into()));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
