//! From the decision-metric matrix to channel edge frequencies.
//!
//! Nested subband energies measured at several decimation factors are
//! differenced into energies of narrow frequency slices. A slice is occupied
//! when its energy clears a width-scaled noise threshold; a left-to-right
//! scan over occupancy yields the slices holding rising and falling edges,
//! and a flat-PSD interpolation against the neighboring occupied slice places
//! each edge inside its slice.
//!
//! Slice layout: band `k` has a center slice (the narrowest configuration for
//! its parity), and between every pair of adjacent bands sits one crossover
//! holding `|d_subset| - 1` annulus slices, each swept by the even band's edge
//! between two consecutive decimation factors. The center slice of band `k`
//! therefore has index `k * |d_subset|`.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyMatrix;
use crate::error::{Error, Result};
use crate::filterbank::{subband_edges, BankConfig, FilterBank, SliceResolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceKind {
    Center { band: usize },
    /// Part of the crossover between `lower_band` and `lower_band + 1` that
    /// belongs to the even band at `d_outer` but not at `d_inner`.
    Annulus {
        lower_band: usize,
        d_inner: usize,
        d_outer: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub lo: f64,
    pub hi: f64,
    pub kind: SliceKind,
}

impl Slice {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, f: f64) -> bool {
        self.lo <= f && f <= self.hi
    }
}

/// Contiguous partition of [0, 1] induced by a set of decimation factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGrid {
    slices: Vec<Slice>,
    d_subset: Vec<usize>,
    m: usize,
}

impl SliceGrid {
    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn d_subset(&self) -> &[usize] {
        &self.d_subset
    }

    pub fn center_index(&self, band: usize) -> usize {
        band * self.d_subset.len()
    }

    /// Ascending slice boundaries, starting at 0 and ending at 1.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.slices.iter().map(|s| s.lo).collect();
        if let Some(last) = self.slices.last() {
            b.push(last.hi);
        }
        b
    }

    /// Index of the slice containing `f`; shared boundaries go to the right.
    pub fn locate(&self, f: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&f) {
            return None;
        }
        let idx = self.slices.partition_point(|s| s.hi <= f);
        Some(idx.min(self.slices.len() - 1))
    }
}

/// Edge of the even band `even_band` at decimation `d`, on the given side of its center.
fn even_edge(cfg: &BankConfig, even_band: usize, d: usize, upper: bool) -> f64 {
    let center = cfg.band_center(even_band);
    let w = cfg.subband_half_width(d, 0);
    if upper {
        (center + w).min(1.0)
    } else {
        (center - w).max(0.0)
    }
}

/// Builds the slice grid for the decimation factors in `d_subset`.
pub fn slice_grid(cfg: &BankConfig, d_subset: &[usize]) -> Result<SliceGrid> {
    if d_subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut ds = d_subset.to_vec();
    ds.sort_unstable();
    ds.dedup();
    if let Some(&d) = ds.iter().find(|d| !cfg.contains(**d)) {
        return Err(Error::UnknownDecimation(d));
    }
    let m = cfg.m;
    let (d_min, d_max) = (ds[0], ds[ds.len() - 1]);
    let mut slices = Vec::with_capacity((m + 1) * ds.len());
    for k in 0..=m {
        let (lo, hi) = if k % 2 == 0 {
            (even_edge(cfg, k, d_min, false), even_edge(cfg, k, d_min, true))
        } else {
            (even_edge(cfg, k - 1, d_max, true), even_edge(cfg, k + 1, d_max, false))
        };
        slices.push(Slice {
            lo,
            hi,
            kind: SliceKind::Center { band: k },
        });
        if k == m {
            break;
        }
        let pairs: Vec<(usize, usize)> = ds.windows(2).map(|w| (w[0], w[1])).collect();
        if k % 2 == 0 {
            // Even band below: its upper edge moves right as D grows.
            for &(d_inner, d_outer) in &pairs {
                slices.push(Slice {
                    lo: even_edge(cfg, k, d_inner, true),
                    hi: even_edge(cfg, k, d_outer, true),
                    kind: SliceKind::Annulus {
                        lower_band: k,
                        d_inner,
                        d_outer,
                    },
                });
            }
        } else {
            // Even band above: its lower edge moves left as D grows.
            for &(d_inner, d_outer) in pairs.iter().rev() {
                slices.push(Slice {
                    lo: even_edge(cfg, k + 1, d_outer, false),
                    hi: even_edge(cfg, k + 1, d_inner, false),
                    kind: SliceKind::Annulus {
                        lower_band: k,
                        d_inner,
                        d_outer,
                    },
                });
            }
        }
    }
    Ok(SliceGrid {
        slices,
        d_subset: ds,
        m,
    })
}

/// Slice energies with thresholds and occupancy decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceEnergies {
    /// Energies clamped at zero.
    pub energies: Vec<f64>,
    /// Energies before clamping.
    pub raw: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub occupancy: Vec<bool>,
    /// Noise variance the thresholds were computed with.
    pub noise_var: f64,
    pub n_samples: usize,
}

impl SliceEnergies {
    /// Expected noise energy in a slice of the given width.
    pub fn noise_energy(&self, width: f64) -> f64 {
        self.noise_var * self.n_samples as f64 * width
    }
}

/// Differences nested band energies into slice energies.
///
/// Center slices take the narrowest configuration of their band directly.
/// Crossovers are resolved left to right: an annulus slice is the growth (even
/// lower band) or shrinkage (odd lower band) of the lower band between the two
/// decimation factors, minus the matching slice already resolved on that
/// band's far side.
pub fn slice_energies(p: &EnergyMatrix, grid: &SliceGrid, cfg: &BankConfig) -> Result<SliceEnergies> {
    slice_energies_with(p, grid, cfg, None)
}

/// Squared magnitude responses of every band filter of a designed bank,
/// stored as running integrals over a uniform frequency grid on [0, 1].
///
/// Real amplitude-complementary pairs leave a gap of missing energy in every
/// transition band, so even bands grow and odd bands shrink with D at
/// slightly different rates than the nominal geometry says.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResponses {
    points: usize,
    /// `cumulative[d][k][j]` is the integral of `|H_dk|^2` over `[0, j / points]`.
    cumulative: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl BandResponses {
    pub const DEFAULT_POINTS: usize = 1 << 15;

    pub fn from_bank(bank: &FilterBank) -> Result<Self> {
        Self::with_points(bank, Self::DEFAULT_POINTS)
    }

    pub fn with_points(bank: &FilterBank, points: usize) -> Result<Self> {
        let mut cumulative = BTreeMap::new();
        for &d in &bank.config().d_set {
            let set = bank.set(d)?;
            let longest = set.bands.iter().map(|b| b.len()).max().unwrap_or(1);
            let size = (2 * points).max(longest).next_power_of_two();
            let step = size / (2 * points);
            let fft = FftPlanner::<f64>::new().plan_fft_forward(size);
            let rows = set
                .bands
                .iter()
                .map(|b| {
                    let mut buf: Vec<Complex64> = b.coeffs().iter().map(|&c| Complex64::new(c, 0.0)).collect();
                    buf.resize(size, Complex64::new(0.0, 0.0));
                    fft.process(&mut buf);
                    let power: Vec<f64> = (0..=points).map(|j| buf[j * step].norm_sqr()).collect();
                    let mut acc = Vec::with_capacity(points + 1);
                    acc.push(0.0);
                    let mut total = 0.0;
                    for w in power.windows(2) {
                        total += 0.5 * (w[0] + w[1]) / points as f64;
                        acc.push(total);
                    }
                    acc
                })
                .collect();
            cumulative.insert(d, rows);
        }
        Ok(Self { points, cumulative })
    }

    fn row(&self, d: usize, k: usize) -> Result<&[f64]> {
        let rows = self.cumulative.get(&d).ok_or(Error::UnknownDecimation(d))?;
        rows.get(k).map(Vec::as_slice).ok_or(Error::BandOutOfRange {
            band: k,
            max: rows.len().saturating_sub(1),
        })
    }

    /// Integral of `|H_dk|^2` over `[lo, hi]`.
    pub fn weight(&self, d: usize, k: usize, lo: f64, hi: f64) -> Result<f64> {
        let row = self.row(d, k)?;
        let at = |f: f64| {
            let x = f.clamp(0.0, 1.0) * self.points as f64;
            let j = (x.floor() as usize).min(self.points - 1);
            row[j] + (x - j as f64) * (row[j + 1] - row[j])
        };
        Ok(at(hi) - at(lo))
    }

    /// Effective noise bandwidth `sum(h^2)` of band `k` at decimation `d`.
    pub fn width(&self, d: usize, k: usize) -> Result<f64> {
        Ok(*self.row(d, k)?.last().expect("non-empty running integral"))
    }
}

fn nominal_width(cfg: &BankConfig, d: usize, k: usize) -> f64 {
    let (lo, hi) = subband_edges(cfg, d, k);
    hi - lo
}

/// Ratio of nominal to effective width for the energy `P[d][k]`.
fn level_scale(cfg: &BankConfig, r: Option<&BandResponses>, d: usize, k: usize) -> Result<f64> {
    let Some(r) = r else { return Ok(1.0) };
    let eff = r.width(d, k)?;
    Ok(if eff > 0.0 { nominal_width(cfg, d, k) / eff } else { 1.0 })
}

/// Ratio of nominal to effective width change of band `k` between two factors.
fn change_scale(cfg: &BankConfig, r: Option<&BandResponses>, inner: usize, outer: usize, k: usize) -> Result<f64> {
    let Some(r) = r else { return Ok(1.0) };
    let nominal = nominal_width(cfg, outer, k) - nominal_width(cfg, inner, k);
    let eff = r.width(outer, k)? - r.width(inner, k)?;
    Ok(if eff != 0.0 && nominal != 0.0 && eff.signum() == nominal.signum() {
        nominal / eff
    } else {
        1.0
    })
}

/// Left-to-right subtraction chain, optionally rescaling every nested
/// difference from effective to nominal width.
///
/// For each pair of consecutive factors the change of band `k` covers the
/// annuli on both of its sides, `c_k = A_{k-1} + A_k`, so the last band is
/// one equation more than there are annuli. The plain chain ignores it. When
/// `weighted` is set the alternating sum `sum (-1)^k c_k`, zero for exact
/// data, is first removed from the changes in proportion to each band's
/// squared power density. Bands holding strong signal absorb the mismatch
/// their transitions create instead of passing it down the chain.
fn chain_raw(
    p: &dyn Fn(usize, usize) -> Result<f64>,
    grid: &SliceGrid,
    cfg: &BankConfig,
    r: Option<&BandResponses>,
    weighted: bool,
) -> Result<Vec<f64>> {
    let ds = grid.d_subset();
    let m = grid.m;
    let (d_min, d_max) = (ds[0], ds[ds.len() - 1]);
    let mut raw = vec![0.0; grid.len()];
    for k in 0..=m {
        let d_star = if k % 2 == 0 { d_min } else { d_max };
        raw[grid.center_index(k)] = p(d_star, k)? * level_scale(cfg, r, d_star, k)?;
    }
    for pair in ds.windows(2) {
        let (d_inner, d_outer) = (pair[0], pair[1]);
        let mut changes = Vec::with_capacity(m + 1);
        let mut spread = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let (inner, outer) = (p(d_inner, k)?, p(d_outer, k)?);
            let scale = change_scale(cfg, r, d_inner, d_outer, k)?;
            changes.push(scale * if k % 2 == 0 { outer - inner } else { inner - outer });
            let density = (inner / nominal_width(cfg, d_inner, k)).max(outer / nominal_width(cfg, d_outer, k));
            let side = 0.5 * (nominal_width(cfg, d_outer, k) - nominal_width(cfg, d_inner, k)).abs();
            spread.push((density * side).powi(2));
        }
        let total: f64 = spread.iter().sum();
        if weighted && total > 0.0 {
            let mismatch: f64 = changes.iter().enumerate().map(|(k, c)| if k % 2 == 0 { *c } else { -c }).sum();
            for (k, c) in changes.iter_mut().enumerate() {
                let share = mismatch * spread[k] / total;
                *c -= if k % 2 == 0 { share } else { -share };
            }
        }
        let mut previous = 0.0;
        for (k, change) in changes.iter().take(m).enumerate() {
            let annulus = change - previous;
            let base = grid.center_index(k) + 1;
            let offset = grid.slices[base..base + ds.len() - 1]
                .iter()
                .position(|s| matches!(s.kind, SliceKind::Annulus { d_inner: di, .. } if di == d_inner))
                .expect("annulus pair from subset");
            raw[base + offset] = annulus;
            previous = annulus;
        }
    }
    Ok(raw)
}

/// Slice energies using the resolution selected in `cfg`.
///
/// Without band responses the nominal subtraction chain is used whatever the
/// configuration says; its raw slices telescope exactly to the band energies
/// of the narrowest configuration.
pub fn slice_energies_with(
    p: &EnergyMatrix,
    grid: &SliceGrid,
    cfg: &BankConfig,
    responses: Option<&BandResponses>,
) -> Result<SliceEnergies> {
    for &d in grid.d_subset() {
        p.row(d)?;
    }
    let measured = |d, k| p.get(d, k);
    let raw = match (cfg.resolution, responses) {
        (SliceResolution::Chain, _) | (_, None) => chain_raw(&measured, grid, cfg, None, false)?,
        (SliceResolution::Calibrated, Some(r)) => chain_raw(&measured, grid, cfg, Some(r), false)?,
        (SliceResolution::Weighted, Some(r)) => chain_raw(&measured, grid, cfg, Some(r), true)?,
    };
    Ok(classify_slices(raw, grid, cfg, p.n_effective()))
}

/// Clamps raw slice energies and applies the occupancy thresholds.
fn classify_slices(raw: Vec<f64>, grid: &SliceGrid, cfg: &BankConfig, n: usize) -> SliceEnergies {
    let energies: Vec<f64> = raw.iter().map(|e| e.max(0.0)).collect();
    let noise_var = if cfg.estimate_noise_floor {
        estimate_noise_var(&energies, grid, n).unwrap_or(cfg.noise_var)
    } else {
        cfg.noise_var
    };
    let thresholds: Vec<f64> = grid
        .slices
        .iter()
        .map(|s| cfg.threshold_margin * noise_var * n as f64 * s.width())
        .collect();
    let occupancy = energies.iter().zip(&thresholds).map(|(e, t)| e > t).collect();
    SliceEnergies {
        energies,
        raw,
        thresholds,
        occupancy,
        noise_var,
        n_samples: n,
    }
}

/// Noise variance implied by the quietest slice (lowest energy density).
pub fn estimate_noise_var(energies: &[f64], grid: &SliceGrid, n_samples: usize) -> Option<f64> {
    grid.slices
        .iter()
        .zip(energies)
        .filter(|(s, _)| s.width() > 0.0)
        .map(|(s, e)| e / (n_samples as f64 * s.width()))
        .filter(|v| *v > 0.0)
        .min_by(|a, b| a.total_cmp(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Rising,
    Falling,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Rising => "rising",
            Direction::Falling => "falling",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    /// Slice-level estimate, not refined.
    Slice,
    /// Interpolated from a fully occupied neighbor.
    High,
    /// No fully occupied neighbor (channel spans at most two slices).
    Low,
    /// Neighbor density was zero; slice center used.
    Degenerate,
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Confidence::Slice => "slice",
            Confidence::High => "high",
            Confidence::Low => "low",
            Confidence::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEstimate {
    pub direction: Direction,
    pub slice_index: usize,
    pub slice_lo: f64,
    pub slice_hi: f64,
    pub f_approx: f64,
    /// Sensing stage (1-based) that produced the estimate; 0 when not staged.
    pub stage: usize,
    pub confidence: Confidence,
}

/// Serial occupancy scan.
///
/// A rising edge sits in the first slice of every occupied run and a falling
/// edge in its last slice. Slice-level positions are the slice centers, except
/// that a run touching either end of the sensed range puts the edge on that end.
pub fn find_edges(se: &SliceEnergies, grid: &SliceGrid) -> Vec<EdgeEstimate> {
    let occ = &se.occupancy;
    let last = occ.len().saturating_sub(1);
    let mut edges = Vec::new();
    for (i, &o) in occ.iter().enumerate() {
        if !o {
            continue;
        }
        let s = grid.slices[i];
        let make = |direction, f_approx| EdgeEstimate {
            direction,
            slice_index: i,
            slice_lo: s.lo,
            slice_hi: s.hi,
            f_approx,
            stage: 0,
            confidence: Confidence::Slice,
        };
        if i == 0 || !occ[i - 1] {
            let f = if i == 0 { 0.0 } else { s.center() };
            edges.push(make(Direction::Rising, f));
        }
        if i == last || !occ[i + 1] {
            let f = if i == last { 1.0 } else { s.center() };
            edges.push(make(Direction::Falling, f));
        }
    }
    edges
}

/// Places an edge inside its slice assuming a flat in-channel PSD.
///
/// The channel density is averaged over the interior of the occupied run,
/// i.e. every occupied slice strictly between the run's rising and falling
/// slices. Summing unclamped slices there cancels most of the alternating
/// error the subtraction chain leaves in individual narrow slices. The
/// occupied width is the excess energy over noise of the edge slice, plus any
/// positive excess of the unoccupied slice just outside the run, divided by
/// that density. When it exceeds the edge slice the estimate moves into the
/// outside slice.
pub fn refine_edge(e: &EdgeEstimate, se: &SliceEnergies, grid: &SliceGrid) -> EdgeEstimate {
    let occ = &se.occupancy;
    let i = e.slice_index;
    let s = grid.slices[i];
    let interior = match e.direction {
        Direction::Rising => {
            let end = (i..occ.len()).take_while(|&j| occ[j]).last().unwrap_or(i);
            i + 1..end
        }
        Direction::Falling => {
            let start = (0..=i).rev().take_while(|&j| occ[j]).last().unwrap_or(i);
            start + 1..i
        }
    };
    let mut out = *e;
    if interior.is_empty() {
        out.confidence = Confidence::Low;
        return out;
    }
    let width: f64 = interior.clone().map(|j| grid.slices[j].width()).sum();
    let energy: f64 = interior.map(|j| se.raw[j]).sum();
    let density = (energy - se.noise_energy(width)).max(0.0) / width;
    if density <= 0.0 {
        out.f_approx = s.center();
        out.confidence = Confidence::Degenerate;
        return out;
    }
    let excess = |j: usize| se.raw[j] - se.noise_energy(grid.slices[j].width());
    // The unoccupied slice just outside the run may still hold part of the
    // channel below the detection threshold.
    let outside = match e.direction {
        Direction::Rising => i.checked_sub(1),
        Direction::Falling => (i + 1 < occ.len()).then_some(i + 1),
    };
    let spill = outside.map_or(0.0, |o| excess(o).max(0.0));
    let occupied = ((excess(i) + spill) / density).max(0.0);
    out.confidence = Confidence::High;
    match (outside, occupied > s.width()) {
        (Some(o), true) => {
            let so = grid.slices[o];
            let extra = (occupied - s.width()).min(so.width());
            out.slice_index = o;
            out.slice_lo = so.lo;
            out.slice_hi = so.hi;
            out.f_approx = match e.direction {
                Direction::Rising => so.hi - extra,
                Direction::Falling => so.lo + extra,
            }
            .clamp(so.lo, so.hi);
        }
        _ => {
            let occupied = occupied.min(s.width());
            out.f_approx = match e.direction {
                Direction::Rising => s.hi - occupied,
                Direction::Falling => s.lo + occupied,
            }
            .clamp(s.lo, s.hi);
        }
    }
    out
}

/// Percentage edge error on the Nyquist-normalized axis.
pub fn error_metric(f_actual: f64, f_approx: f64) -> f64 {
    (f_actual - f_approx).abs() * 100.0
}

/// Worst-case slice-center error in percent over all slices of a grid.
pub fn center_assignment_bound(grid: &SliceGrid) -> f64 {
    grid.slices.iter().map(|s| s.width() / 2.0 * 100.0).fold(0.0, f64::max)
}

/// Full edge-detection pass over one matrix and decimation subset.
#[derive(Debug, Clone)]
pub struct Detection {
    pub grid: SliceGrid,
    pub energies: SliceEnergies,
    /// Slice-level estimates from the occupancy scan.
    pub slice_edges: Vec<EdgeEstimate>,
    /// Refined estimates.
    pub edges: Vec<EdgeEstimate>,
}

pub fn detect(p: &EnergyMatrix, cfg: &BankConfig, d_subset: &[usize]) -> Result<Detection> {
    detect_with(p, cfg, d_subset, None)
}

pub fn detect_with(
    p: &EnergyMatrix,
    cfg: &BankConfig,
    d_subset: &[usize],
    responses: Option<&BandResponses>,
) -> Result<Detection> {
    let grid = slice_grid(cfg, d_subset)?;
    let energies = slice_energies_with(p, &grid, cfg, responses)?;
    let slice_edges = find_edges(&energies, &grid);
    let edges = slice_edges.iter().map(|e| refine_edge(e, &energies, &grid)).collect();
    Ok(Detection {
        grid,
        energies,
        slice_edges,
        edges,
    })
}

pub const EDGE_CSV_HEADER: &str = "stage,direction,slice_lo,slice_hi,f_approx,confidence";

pub fn edges_to_csv(edges: &[EdgeEstimate]) -> String {
    let mut out = format!("{EDGE_CSV_HEADER}\n");
    for e in edges {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.stage, e.direction, e.slice_lo, e.slice_hi, e.f_approx, e.confidence
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> BankConfig {
        BankConfig::default()
    }

    /// Brick-wall band energies for a piecewise-constant PSD (noise-free).
    fn ideal_matrix(cfg: &BankConfig, ds: &[usize], occupied: &[(f64, f64)], n: usize) -> EnergyMatrix {
        let mut p = EnergyMatrix::new(cfg.bands(), n);
        for &d in ds {
            let row = (0..=cfg.m)
                .map(|k| {
                    let (lo, hi) = crate::filterbank::subband_edges(cfg, d, k);
                    occupied
                        .iter()
                        .map(|&(a, b)| (hi.min(b) - lo.max(a)).max(0.0))
                        .sum::<f64>()
                        * n as f64
                })
                .collect();
            p.insert_row(d, row).unwrap();
        }
        p
    }

    fn arbitrary_matrix(cfg: &BankConfig) -> EnergyMatrix {
        let mut p = EnergyMatrix::new(cfg.bands(), 100);
        for d in 3..=7 {
            let row = (0..=cfg.m).map(|k| ((d * 31 + k * 17) % 23) as f64 + 0.5 * d as f64).collect();
            p.insert_row(d, row).unwrap();
        }
        p
    }

    #[test]
    fn full_grid_geometry() {
        let g = slice_grid(&cfg(), &[3, 4, 5, 6, 7]).unwrap();
        assert_eq!(g.len(), 41);
        let b = g.boundaries();
        let expected = [0.0, 0.0375, 0.05, 0.0625, 0.075, 0.0875, 0.1625];
        for (x, y) in b.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        assert_eq!(*b.last().unwrap(), 1.0);
        for k in 0..=8 {
            assert_eq!(g.slices()[5 * k].kind, SliceKind::Center { band: k });
        }
    }

    #[test]
    fn uniform_grid_at_middle_decimation() {
        let g = slice_grid(&cfg(), &[5]).unwrap();
        assert_eq!(g.len(), 9);
        for (i, s) in g.slices().iter().enumerate() {
            let w = if i == 0 || i == 8 { 0.0625 } else { 0.125 };
            assert!((s.width() - w).abs() < 1e-12);
        }
    }

    #[test]
    fn three_factor_grid() {
        let g = slice_grid(&cfg(), &[4, 5, 6]).unwrap();
        assert_eq!(g.len(), 25);
        let widest = g.slices().iter().map(Slice::width).fold(0.0, f64::max);
        assert!((widest - 0.1).abs() < 1e-12);
        let b = g.boundaries();
        for off in [0.05, 0.0625, 0.075] {
            assert!(b.iter().any(|x| (x - (0.25 + off)).abs() < 1e-12));
        }
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(slice_grid(&cfg(), &[]), Err(Error::EmptySubset)));
        assert!(matches!(slice_grid(&cfg(), &[2]), Err(Error::UnknownDecimation(2))));
    }

    #[test]
    fn grids_refine_monotonically() {
        let c = cfg();
        let b1 = slice_grid(&c, &[5]).unwrap().boundaries();
        let b2 = slice_grid(&c, &[4, 5, 6]).unwrap().boundaries();
        let b3 = slice_grid(&c, &[3, 4, 5, 6, 7]).unwrap().boundaries();
        let subset = |a: &[f64], b: &[f64]| a.iter().all(|x| b.iter().any(|y| (x - y).abs() < 1e-12));
        assert!(subset(&b1, &b2));
        assert!(subset(&b2, &b3));
    }

    #[test]
    fn subtraction_rules() {
        let c = cfg();
        let p = arbitrary_matrix(&c);
        let g = slice_grid(&c, &[3, 4, 5, 6, 7]).unwrap();
        let se = slice_energies(&p, &g, &c).unwrap();
        let at = |d, k| p.get(d, k).unwrap();
        assert_eq!(se.raw[0], at(3, 0));
        assert_eq!(se.raw[1], at(4, 0) - at(3, 0));
        assert_eq!(se.raw[4], at(7, 0) - at(6, 0));
        assert_eq!(se.raw[5], at(7, 1));
        assert_eq!(se.raw[6], at(6, 1) - at(7, 1) - se.raw[4]);
        assert_eq!(se.raw[10], at(3, 2));

        let g = slice_grid(&c, &[4, 5, 6]).unwrap();
        let se = slice_energies(&p, &g, &c).unwrap();
        assert_eq!(se.raw[0], at(4, 0));
        assert_eq!(se.raw[1], at(5, 0) - at(4, 0));
    }

    #[test]
    fn missing_row_is_rejected() {
        let c = cfg();
        let p = arbitrary_matrix(&c).subset(&[4, 5]).unwrap();
        let g = slice_grid(&c, &[4, 5, 6]).unwrap();
        assert!(matches!(slice_energies(&p, &g, &c), Err(Error::MissingRow(6))));
    }

    #[test]
    fn raw_slices_sum_to_narrowest_row() {
        let c = cfg();
        let p = arbitrary_matrix(&c);
        for ds in [&[5][..], &[4, 5, 6], &[3, 4, 5, 6, 7]] {
            let g = slice_grid(&c, ds).unwrap();
            let se = slice_energies(&p, &g, &c).unwrap();
            let total: f64 = se.raw.iter().sum();
            let row: f64 = p.row(ds[0]).unwrap().iter().sum();
            assert!((total - row).abs() < 1e-9 * row);
        }
    }

    #[test]
    fn ideal_matrix_recovers_exact_slice_energies() {
        let c = cfg();
        let ds = [3, 4, 5, 6, 7];
        let occupied = [(0.0, 0.13), (0.3, 0.65), (0.78, 0.89)];
        let p = ideal_matrix(&c, &ds, &occupied, 1000);
        let g = slice_grid(&c, &ds).unwrap();
        let se = slice_energies(&p, &g, &c).unwrap();
        for (s, e) in g.slices().iter().zip(&se.raw) {
            let truth: f64 = occupied.iter().map(|&(a, b)| (s.hi.min(b) - s.lo.max(a)).max(0.0)).sum::<f64>() * 1000.0;
            assert!((e - truth).abs() < 1e-9, "slice {s:?}: {e} vs {truth}");
        }
    }

    fn energies_from_occupancy(occ: &[bool]) -> SliceEnergies {
        SliceEnergies {
            energies: occ.iter().map(|&o| if o { 10.0 } else { 0.0 }).collect(),
            raw: occ.iter().map(|&o| if o { 10.0 } else { 0.0 }).collect(),
            thresholds: vec![1.0; occ.len()],
            occupancy: occ.to_vec(),
            noise_var: 0.0,
            n_samples: 1,
        }
    }

    #[test]
    fn scan_examples() {
        let g = slice_grid(&cfg(), &[3, 4, 5, 6, 7]).unwrap();
        let mut occ = vec![false; g.len()];
        occ[2..=4].fill(true);
        let edges = find_edges(&energies_from_occupancy(&occ), &g);
        assert_eq!(edges.len(), 2);
        assert_eq!((edges[0].direction, edges[0].slice_index), (Direction::Rising, 2));
        assert_eq!((edges[1].direction, edges[1].slice_index), (Direction::Falling, 4));

        assert!(find_edges(&energies_from_occupancy(&vec![false; g.len()]), &g).is_empty());

        let edges = find_edges(&energies_from_occupancy(&vec![true; g.len()]), &g);
        assert_eq!(edges.len(), 2);
        assert_eq!((edges[0].direction, edges[0].f_approx), (Direction::Rising, 0.0));
        assert_eq!((edges[1].direction, edges[1].f_approx), (Direction::Falling, 1.0));
    }

    fn refined_with(e_edge: f64, e_nb: f64) -> EdgeEstimate {
        let g = slice_grid(&cfg(), &[3, 4, 5, 6, 7]).unwrap();
        let n = g.len();
        let mut occ = vec![false; n];
        occ[2..=6].fill(true);
        let mut se = energies_from_occupancy(&occ);
        // Noise-free densities: energy per unit width.
        for j in 2..=6 {
            let density = if j == 2 { e_edge } else { e_nb };
            se.energies[j] = density * g.slices()[j].width();
            se.raw[j] = se.energies[j];
        }
        let rising = find_edges(&se, &g)[0];
        refine_edge(&rising, &se, &g)
    }

    #[test]
    fn refinement_follows_energy_ratio() {
        let equal = refined_with(5.0, 5.0);
        assert!((equal.f_approx - equal.slice_lo).abs() < 1e-12);
        let small = refined_with(0.5, 5.0);
        assert!(small.slice_hi - small.f_approx < 0.2 * (small.slice_hi - small.slice_lo));
        assert_eq!(small.confidence, Confidence::High);
        let zero = refined_with(0.5, 0.0);
        assert_eq!(zero.confidence, Confidence::Degenerate);
    }

    #[test]
    fn narrow_channel_falls_back() {
        let g = slice_grid(&cfg(), &[5]).unwrap();
        let mut occ = vec![false; g.len()];
        occ[3] = true;
        let se = energies_from_occupancy(&occ);
        let edges = find_edges(&se, &g);
        assert_eq!(edges.len(), 2);
        for e in &edges {
            let r = refine_edge(e, &se, &g);
            assert_eq!(r.confidence, Confidence::Low);
            assert_eq!(r.f_approx, g.slices()[3].center());
        }
    }

    #[test]
    fn error_metric_examples() {
        assert!((error_metric(0.65, 0.642) - 0.8).abs() < 1e-9);
        assert!((error_metric(0.13, 0.128) - 0.2).abs() < 1e-9);
        assert_eq!(error_metric(0.4, 0.4), 0.0);
    }

    #[test]
    fn center_bounds_per_stage() {
        let c = cfg();
        let b = |ds: &[usize]| center_assignment_bound(&slice_grid(&c, ds).unwrap());
        assert!((b(&[5]) - 6.25).abs() < 1e-9);
        assert!((b(&[4, 5, 6]) - 5.0).abs() < 1e-9);
        assert!((b(&[3, 4, 5, 6, 7]) - 3.75).abs() < 1e-9);
    }

    #[test]
    fn edge_csv_layout() {
        let g = slice_grid(&cfg(), &[5]).unwrap();
        let mut occ = vec![false; g.len()];
        occ[1] = true;
        let text = edges_to_csv(&find_edges(&energies_from_occupancy(&occ), &g));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], EDGE_CSV_HEADER);
        assert_eq!(lines[1], "0,rising,0.0625,0.1875,0.125,slice");
    }

    proptest! {
        #[test]
        fn grid_partitions_unit_interval(mask in 1u8..32) {
            let c = cfg();
            let ds: Vec<usize> = (0..5).filter(|i| mask & (1 << i) != 0).map(|i| i + 3).collect();
            let g = slice_grid(&c, &ds).unwrap();
            prop_assert_eq!(g.len(), c.m * ds.len() + 1);
            prop_assert_eq!(g.slices()[0].lo, 0.0);
            prop_assert_eq!(g.slices().last().unwrap().hi, 1.0);
            for w in g.slices().windows(2) {
                prop_assert_eq!(w[0].hi, w[1].lo);
            }
            for s in g.slices() {
                prop_assert!(s.width() > 0.0);
            }
        }

        #[test]
        fn scan_alternates_and_refinement_stays_in_slice(
            bits in proptest::collection::vec(any::<bool>(), 41),
            energies in proptest::collection::vec(0.0f64..50.0, 41),
        ) {
            let c = cfg();
            let g = slice_grid(&c, &[3, 4, 5, 6, 7]).unwrap();
            let se = SliceEnergies {
                energies: energies.clone(),
                raw: energies,
                thresholds: vec![0.0; 41],
                occupancy: bits,
                noise_var: 1.0,
                n_samples: 100,
            };
            let edges = find_edges(&se, &g);
            prop_assert_eq!(edges.len() % 2, 0);
            for (i, e) in edges.iter().enumerate() {
                let expected = if i % 2 == 0 { Direction::Rising } else { Direction::Falling };
                prop_assert_eq!(e.direction, expected);
                let r = refine_edge(e, &se, &g);
                prop_assert!(r.f_approx >= r.slice_lo && r.f_approx <= r.slice_hi);
            }
        }
    }
}
