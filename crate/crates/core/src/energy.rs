//! Subband decision metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::filterbank::{fft_filter_many, BankConfig, SubbandFilterSet};

/// Sum of squared samples.
pub fn decision_metric(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

/// Decision metrics `P[D][k]`, one row per measured decimation factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMatrix {
    bands: usize,
    rows: BTreeMap<usize, Vec<f64>>,
    n_effective: usize,
}

impl EnergyMatrix {
    pub fn new(bands: usize, n_effective: usize) -> Self {
        Self {
            bands,
            rows: BTreeMap::new(),
            n_effective,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn n_effective(&self) -> usize {
        self.n_effective
    }

    pub fn insert_row(&mut self, d: usize, row: Vec<f64>) -> Result<()> {
        if row.len() != self.bands {
            return Err(Error::InvalidConfig(format!(
                "row for D = {d} has {} entries, expected {}",
                row.len(),
                self.bands
            )));
        }
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!("row for D = {d} has negative or non-finite entries")));
        }
        self.rows.insert(d, row);
        Ok(())
    }

    pub fn row(&self, d: usize) -> Result<&[f64]> {
        self.rows.get(&d).map(Vec::as_slice).ok_or(Error::MissingRow(d))
    }

    pub fn get(&self, d: usize, band: usize) -> Result<f64> {
        self.row(d)?
            .get(band)
            .copied()
            .ok_or(Error::BandOutOfRange {
                band,
                max: self.bands - 1,
            })
    }

    pub fn decimations(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    /// Copy restricted to the given decimation factors.
    pub fn subset(&self, ds: &[usize]) -> Result<Self> {
        let mut out = Self::new(self.bands, self.n_effective);
        for &d in ds {
            out.rows.insert(d, self.row(d)?.to_vec());
        }
        Ok(out)
    }

    /// CSV with header `D,k0,...,k{M}` and one line per measured row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("D");
        for k in 0..self.bands {
            out.push_str(&format!(",k{k}"));
        }
        out.push('\n');
        for (d, row) in &self.rows {
            out.push_str(&d.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, n_effective: usize) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty energy CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"D") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad energy CSV header `{header}`")));
        }
        let mut out = Self::new(cols.len() - 1, n_effective);
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse(format!("bad energy CSV line `{line}`")));
            }
            let d = fields[0].trim().parse().map_err(|_| Error::Parse(format!("bad D in `{line}`")))?;
            let row = fields[1..]
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad value in `{line}`"))))
                .collect::<Result<Vec<_>>>()?;
            out.insert_row(d, row)?;
        }
        Ok(out)
    }
}

/// Samples a row measurement reads from its input, counting the cascade transient.
pub fn samples_needed(set: &SubbandFilterSet, cfg: &BankConfig) -> usize {
    cfg.n_samples + set.group_delay_samples
}

/// Measures `P[D][k]` for every band from `x[offset..]`.
///
/// Each band output starts from zero state; the first `group_delay_samples`
/// outputs are dropped and the next `n_samples` are accumulated.
pub fn measure_row_at(set: &SubbandFilterSet, x: &[f64], offset: usize, cfg: &BankConfig) -> Result<Vec<f64>> {
    let needed = samples_needed(set, cfg);
    let available = x.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::InputTooShort {
            needed: offset + needed,
            got: x.len(),
        });
    }
    let segment = &x[offset..offset + needed];
    let filters: Vec<&[f64]> = set.bands.iter().map(|b| b.coeffs()).collect();
    let skip = set.group_delay_samples;
    Ok(fft_filter_many(&filters, segment)
        .iter()
        .map(|y| decision_metric(&y[skip..skip + cfg.n_samples]))
        .collect())
}

pub fn measure_row(set: &SubbandFilterSet, x: &[f64], cfg: &BankConfig) -> Result<Vec<f64>> {
    measure_row_at(set, x, 0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{build_bank, filter_stream};
    use crate::signal_gen::GaussianSource;

    #[test]
    fn metric_definition() {
        assert_eq!(decision_metric(&[1.0, -2.0, 2.0]), 9.0);
        assert_eq!(decision_metric(&[0.0; 16]), 0.0);
        assert_eq!(decision_metric(&[]), 0.0);
    }

    #[test]
    fn white_noise_metric_concentrates() {
        let n = 65536;
        for seed in 0..20 {
            let x = GaussianSource::new(seed).fill(n, 1.0);
            let p = decision_metric(&x);
            assert!((p / n as f64 - 1.0).abs() < 0.02, "seed {seed}: {p}");
        }
    }

    #[test]
    fn zeros_give_zero_row() {
        let cfg = BankConfig::default();
        let set = build_bank(&cfg, 5).unwrap();
        let x = vec![0.0; samples_needed(&set, &cfg)];
        assert!(measure_row(&set, &x, &cfg).unwrap().iter().all(|&v| v.abs() < 1e-20));
    }

    #[test]
    fn short_input_is_rejected() {
        let cfg = BankConfig::default();
        let set = build_bank(&cfg, 5).unwrap();
        let x = vec![0.0; cfg.n_samples];
        assert!(matches!(measure_row(&set, &x, &cfg), Err(Error::InputTooShort { .. })));
    }

    #[test]
    fn row_matches_direct_filtering() {
        let mut cfg = BankConfig::default();
        cfg.n_samples = 512;
        let set = build_bank(&cfg, 3).unwrap();
        let x = GaussianSource::new(1).fill(samples_needed(&set, &cfg) + 10, 1.0);
        let row = measure_row(&set, &x, &cfg).unwrap();
        let gd = set.group_delay_samples;
        for (k, p) in row.iter().enumerate() {
            let y = filter_stream(&set, k, &x[..gd + cfg.n_samples]).unwrap();
            let direct = decision_metric(&y[gd..]);
            assert!((p - direct).abs() < 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn csv_roundtrip() {
        let mut p = EnergyMatrix::new(3, 100);
        p.insert_row(5, vec![1.0, 2.5, 0.125]).unwrap();
        p.insert_row(4, vec![0.0, 3.0, 1e-3]).unwrap();
        let text = p.to_csv();
        assert!(text.starts_with("D,k0,k1,k2\n4,"));
        assert_eq!(EnergyMatrix::from_csv(&text, 100).unwrap(), p);
        assert!(p.insert_row(6, vec![1.0]).is_err());
        assert!(p.insert_row(6, vec![1.0, -1.0, 0.0]).is_err());
        assert!(matches!(p.row(7), Err(Error::MissingRow(7))));
    }
}
