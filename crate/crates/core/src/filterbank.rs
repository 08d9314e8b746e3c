//! The (M+1)-band reconfigurable bank.
//!
//! For a decimation factor `D` the modal prototype is coefficient-decimated
//! (CD-II), its complement is formed, and both are interpolated by `M`. The
//! modal images land on even band centers `k/M`, the complementary images on
//! odd centers. A fixed masking filter per band then isolates one image; the
//! two stages are composed into a single cascade FIR per band.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_design::{
    coeff_decimate_ii, complementary, convolve, design_lowpass, design_masking, interpolate, FilterKind,
    FilterMeta, FilterSpec, FirFilter,
};

/// How successive measurements draw their input samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Every D measurement of a cycle reads the same captured segment.
    #[default]
    Reuse,
    /// Each D measurement consumes the next segment of the input.
    Fresh,
}

/// Whether the new decimation factors of a stage are measured one after the other.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Serial,
    Parallel,
}

/// How slice energies are recovered from the band energies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceResolution {
    /// Nominal left-to-right subtraction of nested band energies.
    Chain,
    /// The same subtraction with every difference rescaled by the bank's
    /// effective band widths.
    Calibrated,
    /// Calibrated differences made consistent before the subtraction: the
    /// mismatch the last band exposes is spread over all bands in proportion
    /// to the square of their power density.
    #[default]
    Weighted,
}

/// Parameters of the sensing instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    /// Interpolation factor; the bank has `m + 1` bands.
    pub m: usize,
    /// Available decimation factors, ascending.
    pub d_set: Vec<usize>,
    /// Modal filter template.
    pub spec: FilterSpec,
    /// Samples accumulated per energy measurement.
    pub n_samples: usize,
    /// AWGN variance.
    pub noise_var: f64,
    /// Linear threshold factor over the expected noise energy of a slice.
    pub threshold_margin: f64,
    pub sampling: Sampling,
    pub schedule: Schedule,
    /// Estimate the noise level from the quietest slice instead of `noise_var`.
    pub estimate_noise_floor: bool,
    pub resolution: SliceResolution,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            m: 8,
            d_set: vec![3, 4, 5, 6, 7],
            spec: FilterSpec::default(),
            n_samples: 8192,
            noise_var: 1.0,
            threshold_margin: 5.0,
            sampling: Sampling::Reuse,
            schedule: Schedule::Serial,
            estimate_noise_floor: false,
            resolution: SliceResolution::default(),
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.m < 2 || self.m % 2 != 0 {
            return Err(Error::InvalidConfig(format!("M must be even and at least 2, got {}", self.m)));
        }
        if self.d_set.is_empty() {
            return Err(Error::InvalidConfig("empty decimation set".into()));
        }
        if self.d_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("decimation set must be strictly ascending".into()));
        }
        for &d in &self.d_set {
            if d == 0 || d > self.m {
                return Err(Error::InvalidConfig(format!("decimation factor {d} outside 1..=M")));
            }
            if d as f64 * self.spec.f_stop > 1.0 {
                return Err(Error::FoldOver {
                    decimation: d,
                    product: d as f64 * self.spec.f_stop,
                });
            }
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidConfig("noise_var must be positive".into()));
        }
        if !(self.threshold_margin > 1.0 && self.threshold_margin.is_finite()) {
            return Err(Error::InvalidConfig("threshold_margin must exceed 1".into()));
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.m + 1
    }

    pub fn band_center(&self, band: usize) -> f64 {
        band as f64 / self.m as f64
    }

    /// Ideal half-width of band `band` at decimation `d`.
    pub fn subband_half_width(&self, d: usize, band: usize) -> f64 {
        let modal = self.spec.f_pass * d as f64 / self.m as f64;
        if band % 2 == 0 {
            modal
        } else {
            1.0 / self.m as f64 - modal
        }
    }

    /// Widest half-width any band reaches over the decimation set.
    pub fn max_subband_half_width(&self) -> f64 {
        self.d_set
            .iter()
            .flat_map(|&d| [self.subband_half_width(d, 0), self.subband_half_width(d, 1)])
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, d: usize) -> bool {
        self.d_set.contains(&d)
    }
}

/// Ideal brick-wall edges `(lo, hi)` of band `band` at decimation `d`.
pub fn subband_edges(cfg: &BankConfig, d: usize, band: usize) -> (f64, f64) {
    let center = cfg.band_center(band);
    let w = cfg.subband_half_width(d, band);
    ((center - w).max(0.0), (center + w).min(1.0))
}

/// Per-band cascade filters of the bank configured for one decimation factor.
#[derive(Debug, Clone)]
pub struct SubbandFilterSet {
    pub decimation: usize,
    /// Multiband responses feeding the even / odd masking filters.
    pub modal_multiband: FirFilter,
    pub complementary_multiband: FirFilter,
    /// Composed multiband-plus-masking filter for each band 0..=M.
    pub bands: Vec<FirFilter>,
    pub group_delay_samples: usize,
}

impl SubbandFilterSet {
    pub fn band_count(&self) -> usize {
        self.bands.len()
    }
}

/// Modal prototype and masking filters designed once, plus every per-D set.
#[derive(Debug, Clone)]
pub struct FilterBank {
    cfg: BankConfig,
    modal: FirFilter,
    masking: Vec<FirFilter>,
    sets: BTreeMap<usize, SubbandFilterSet>,
}

impl FilterBank {
    pub fn new(cfg: &BankConfig) -> Result<Self> {
        cfg.validate()?;
        let modal = design_lowpass(&cfg.spec)?;
        let masking = (0..=cfg.m)
            .map(|k| design_masking(k, cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut sets = BTreeMap::new();
        for &d in &cfg.d_set {
            sets.insert(d, assemble(cfg, &modal, &masking, d)?);
        }
        Ok(Self {
            cfg: cfg.clone(),
            modal,
            masking,
            sets,
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn modal(&self) -> &FirFilter {
        &self.modal
    }

    pub fn masking(&self) -> &[FirFilter] {
        &self.masking
    }

    pub fn set(&self, d: usize) -> Result<&SubbandFilterSet> {
        self.sets.get(&d).ok_or(Error::UnknownDecimation(d))
    }
}

fn assemble(cfg: &BankConfig, modal: &FirFilter, masking: &[FirFilter], d: usize) -> Result<SubbandFilterSet> {
    // CD-II leaves a passband gain of about 1/D; restore unity before
    // forming the complement.
    let stretched = coeff_decimate_ii(modal, d)?.scaled(d as f64);
    let comp = complementary(&stretched)?;
    let modal_multiband = interpolate(&stretched, cfg.m)?;
    let complementary_multiband = interpolate(&comp, cfg.m)?;
    let bands: Vec<FirFilter> = masking
        .iter()
        .enumerate()
        .map(|(k, mask)| {
            let branch = if k % 2 == 0 {
                &modal_multiband
            } else {
                &complementary_multiband
            };
            FirFilter::new(
                convolve(branch.coeffs(), mask.coeffs()),
                FilterKind::Cascade,
                FilterMeta {
                    decimation: Some(d),
                    interpolation: Some(cfg.m),
                    band: Some(k),
                    edges: None,
                },
            )
        })
        .collect();
    let group_delay_samples = bands.iter().map(|b| (b.len() - 1) / 2).max().unwrap_or(0);
    Ok(SubbandFilterSet {
        decimation: d,
        modal_multiband,
        complementary_multiband,
        bands,
        group_delay_samples,
    })
}

/// Builds the bank for decimation factor `d`.
pub fn build_bank(cfg: &BankConfig, d: usize) -> Result<SubbandFilterSet> {
    if !cfg.contains(d) {
        return Err(Error::UnknownDecimation(d));
    }
    cfg.validate()?;
    let modal = design_lowpass(&cfg.spec)?;
    let masking = (0..=cfg.m)
        .map(|k| design_masking(k, cfg))
        .collect::<Result<Vec<_>>>()?;
    assemble(cfg, &modal, &masking, d)
}

/// Direct-form FIR filtering of `x` through band `band`, zero initial state,
/// output truncated to the input length.
pub fn filter_stream(set: &SubbandFilterSet, band: usize, x: &[f64]) -> Result<Vec<f64>> {
    let h = set
        .bands
        .get(band)
        .ok_or(Error::BandOutOfRange {
            band,
            max: set.bands.len().saturating_sub(1),
        })?
        .coeffs();
    Ok(fir_direct(h, x))
}

pub(crate) fn fir_direct(h: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let taps = h.len().min(n + 1);
            h[..taps].iter().enumerate().map(|(j, c)| c * x[n - j]).sum()
        })
        .collect()
}

/// FFT-based linear convolution of `x` with each filter, truncated to `x.len()`.
///
/// Numerically equivalent to [`filter_stream`] up to rounding; the input
/// spectrum is computed once and shared across filters.
pub fn fft_filter_many(filters: &[&[f64]], x: &[f64]) -> Vec<Vec<f64>> {
    let max_len = filters.iter().map(|h| h.len()).max().unwrap_or(0);
    if x.is_empty() || max_len == 0 {
        return filters.iter().map(|_| vec![0.0; x.len()]).collect();
    }
    let size = (x.len() + max_len - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);

    let mut spectrum: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    spectrum.resize(size, Complex64::new(0.0, 0.0));
    forward.process(&mut spectrum);

    let scale = 1.0 / size as f64;
    filters
        .iter()
        .map(|h| {
            let mut hs: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            hs.resize(size, Complex64::new(0.0, 0.0));
            forward.process(&mut hs);
            for (a, b) in hs.iter_mut().zip(&spectrum) {
                *a *= b;
            }
            inverse.process(&mut hs);
            hs[..x.len()].iter().map(|c| c.re * scale).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_design::{amplitude, masking_half_widths, to_db};

    fn cfg() -> BankConfig {
        BankConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
        assert_eq!(cfg().bands(), 9);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.m = 7;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.d_set = vec![5, 4];
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.d_set = vec![9];
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.threshold_margin = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn edges_examples() {
        let c = cfg();
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12;
        assert!(close(subband_edges(&c, 5, 0), (0.0, 0.0625)));
        assert!(close(subband_edges(&c, 4, 8), (0.95, 1.0)));
        assert!(close(subband_edges(&c, 6, 1), (0.075, 0.175)));
        assert!(close(subband_edges(&c, 3, 0), (0.0, 0.0375)));
        assert!(close(subband_edges(&c, 3, 1), (0.0375, 0.2125)));
        assert!(close(subband_edges(&c, 7, 1), (0.0875, 0.1625)));
        for k in 0..=8 {
            let (lo, hi) = subband_edges(&c, 5, k);
            let w = if k == 0 || k == 8 { 0.0625 } else { 0.125 };
            assert!((hi - lo - w).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_geometry_for_default_bank() {
        let c = cfg();
        let (pass, stop) = masking_half_widths(&c);
        assert!((pass - 0.09).abs() < 1e-12);
        assert!((stop - 0.16).abs() < 1e-12);
        let low = design_masking(0, &c).unwrap();
        assert!(to_db(amplitude(low.coeffs(), 0.0875).abs()) > -0.5);
        assert!(to_db(amplitude(low.coeffs(), 0.1625).abs()) <= -30.0);
        let mid = design_masking(4, &c).unwrap();
        assert!(mid.is_symmetric());
        for off in [0.0, 0.03, 0.06, 0.0875] {
            let a = amplitude(mid.coeffs(), 0.5 - off);
            let b = amplitude(mid.coeffs(), 0.5 + off);
            assert!((a - b).abs() < 1e-9, "asymmetric at {off}");
            assert!(to_db(a.abs()) > -0.5);
        }
        for f in [0.0, 0.2, 0.34, 0.66, 0.8, 1.0] {
            assert!(to_db(amplitude(mid.coeffs(), f).abs()) <= -30.0, "f = {f}");
        }
        assert!(design_masking(9, &c).is_err());
    }

    #[test]
    fn unknown_decimation_is_rejected() {
        assert!(matches!(build_bank(&cfg(), 2), Err(Error::UnknownDecimation(2))));
    }

    #[test]
    fn bank_structure() {
        let set = build_bank(&cfg(), 5).unwrap();
        assert_eq!(set.band_count(), 9);
        assert_eq!(set.modal_multiband.kind(), FilterKind::MultibandModal);
        assert_eq!(set.complementary_multiband.kind(), FilterKind::MultibandComplementary);
        for b in &set.bands {
            assert!(b.len() % 2 == 1);
            assert_eq!((b.len() - 1) / 2, set.group_delay_samples);
        }
    }

    #[test]
    fn cascade_isolates_one_band() {
        let set = build_bank(&cfg(), 5).unwrap();
        let h = set.bands[3].coeffs();
        // Passband away from the transition of the complementary response.
        for i in 0..=100 {
            let f = 0.3245 + (0.4255 - 0.3245) * i as f64 / 100.0;
            let a = to_db(amplitude(h, f).abs());
            assert!(a > -0.6, "f = {f}: {a}");
        }
        let transition = 0.015 * 5.0 / 8.0;
        for i in 0..=2000 {
            let f = i as f64 / 2000.0;
            if f < 0.3125 - transition || f > 0.4375 + transition {
                let a = to_db(amplitude(h, f).abs());
                assert!(a <= -30.0, "f = {f}: {a}");
            }
        }
    }

    #[test]
    fn direct_and_fft_filtering_agree() {
        let set = build_bank(&cfg(), 4).unwrap();
        let x: Vec<f64> = (0..1500).map(|n| ((n * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let filters: Vec<&[f64]> = set.bands.iter().map(|b| b.coeffs()).collect();
        let fast = fft_filter_many(&filters, &x);
        for k in 0..9 {
            let direct = filter_stream(&set, k, &x).unwrap();
            for (a, b) in direct.iter().zip(&fast[k]) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn impulse_gives_response_prefix() {
        let set = build_bank(&cfg(), 6).unwrap();
        let mut x = vec![0.0; 100];
        x[0] = 1.0;
        let y = filter_stream(&set, 2, &x).unwrap();
        assert_eq!(&y[..], &set.bands[2].coeffs()[..100]);
    }
}
