//! One sensing cycle: staged decimation schedule and time accounting.
//!
//! Stage 1 measures the middle decimation factor. Each following stage adds
//! the next lower and next higher factor and re-runs edge detection on every
//! factor measured so far.

use serde::Serialize;

use crate::edge_detect::{detect_with, error_metric, BandResponses, Direction, EdgeEstimate};
use crate::energy::{measure_row_at, samples_needed, EnergyMatrix};
use crate::error::{Error, Result};
use crate::filterbank::{BankConfig, FilterBank, Sampling, Schedule};
use crate::signal_gen::Scenario;

/// New decimation factors measured at each stage, middle outwards.
pub fn stage_schedule(d_set: &[usize]) -> Vec<Vec<usize>> {
    if d_set.is_empty() {
        return Vec::new();
    }
    let mid = d_set.len() / 2;
    let mut stages = vec![vec![d_set[mid]]];
    for step in 1.. {
        let mut added = Vec::new();
        if let Some(i) = mid.checked_sub(step) {
            added.push(d_set[i]);
        }
        if mid + step < d_set.len() {
            added.push(d_set[mid + step]);
        }
        if added.is_empty() {
            break;
        }
        stages.push(added);
    }
    stages
}

#[derive(Debug, Clone, Serialize)]
pub struct StageResult {
    /// 1-based stage number.
    pub stage: usize,
    pub d_subset: Vec<usize>,
    pub elapsed_samples: usize,
    /// Refined edge estimates.
    pub edges: Vec<EdgeEstimate>,
    /// Slice-level estimates before refinement.
    pub slice_edges: Vec<EdgeEstimate>,
    /// Largest refined error against the truth, in percent.
    pub max_error_pct: Option<f64>,
    /// Largest slice-level error against the truth, in percent.
    pub max_error_unrefined_pct: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CycleResult {
    pub stages: Vec<StageResult>,
    pub energy: EnergyMatrix,
}

impl CycleResult {
    pub fn final_stage(&self) -> &StageResult {
        self.stages.last().expect("a cycle has at least one stage")
    }

    /// `stage,elapsed_samples,max_error_pct` with the slice-level error.
    pub fn stages_csv(&self) -> String {
        let mut out = String::from("stage,elapsed_samples,max_error_pct\n");
        for s in &self.stages {
            let err = s.max_error_unrefined_pct.map_or_else(String::new, |e| e.to_string());
            out.push_str(&format!("{},{},{}\n", s.stage, s.elapsed_samples, err));
        }
        out
    }
}

/// Error of each true edge against the nearest estimate of the same direction.
/// Edges without any same-direction estimate score 100 %.
pub fn edge_errors(edges: &[EdgeEstimate], truth: &Scenario) -> Vec<f64> {
    truth
        .channels
        .iter()
        .flat_map(|c| [(Direction::Rising, c.f_rising), (Direction::Falling, c.f_falling)])
        .map(|(dir, f)| {
            edges
                .iter()
                .filter(|e| e.direction == dir)
                .map(|e| error_metric(f, e.f_approx))
                .fold(f64::INFINITY, f64::min)
                .min(100.0)
        })
        .collect()
}

pub fn max_edge_error(edges: &[EdgeEstimate], truth: &Scenario) -> f64 {
    edge_errors(edges, truth).into_iter().fold(0.0, f64::max)
}

/// Bank plus schedule, reusable across cycles.
#[derive(Debug, Clone)]
pub struct Sensor {
    bank: FilterBank,
    schedule: Vec<Vec<usize>>,
    responses: BandResponses,
}

impl Sensor {
    pub fn new(cfg: &BankConfig) -> Result<Self> {
        let bank = FilterBank::new(cfg)?;
        let responses = BandResponses::from_bank(&bank)?;
        Ok(Self {
            schedule: stage_schedule(&cfg.d_set),
            bank,
            responses,
        })
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn config(&self) -> &BankConfig {
        self.bank.config()
    }

    pub fn responses(&self) -> &BandResponses {
        &self.responses
    }

    pub fn schedule(&self) -> &[Vec<usize>] {
        &self.schedule
    }

    /// Measurement cost of one decimation factor, in input samples.
    pub fn measurement_cost(&self, d: usize) -> Result<usize> {
        Ok(samples_needed(self.bank.set(d)?, self.config()))
    }

    /// Input length needed to run the first `stages` stages.
    pub fn required_samples(&self, stages: usize) -> Result<usize> {
        let ds = self.schedule.iter().take(stages).flatten();
        let costs = ds.map(|&d| self.measurement_cost(d)).collect::<Result<Vec<_>>>()?;
        Ok(match self.config().sampling {
            Sampling::Reuse => costs.into_iter().max().unwrap_or(0),
            Sampling::Fresh => costs.into_iter().sum(),
        })
    }

    pub fn run_cycle(&self, x: &[f64], truth: Option<&Scenario>) -> Result<CycleResult> {
        self.run_stages(x, truth, self.schedule.len())
    }

    /// Runs the first `max_stages` stages of a cycle.
    pub fn run_stages(&self, x: &[f64], truth: Option<&Scenario>, max_stages: usize) -> Result<CycleResult> {
        let cfg = self.config();
        let stages = max_stages.clamp(1, self.schedule.len());
        let needed = self.required_samples(stages)?;
        if x.len() < needed {
            return Err(Error::InputTooShort { needed, got: x.len() });
        }
        let mut energy = EnergyMatrix::new(cfg.bands(), cfg.n_samples);
        let mut measured: Vec<usize> = Vec::new();
        let mut elapsed = 0;
        let mut offset = 0;
        let mut results = Vec::with_capacity(stages);
        for (index, added) in self.schedule.iter().take(stages).enumerate() {
            let mut stage_costs = Vec::new();
            for &d in added {
                let set = self.bank.set(d)?;
                let start = match cfg.sampling {
                    Sampling::Reuse => 0,
                    Sampling::Fresh => offset,
                };
                energy.insert_row(d, measure_row_at(set, x, start, cfg)?)?;
                let cost = samples_needed(set, cfg);
                offset += cost;
                stage_costs.push(cost);
                measured.push(d);
            }
            elapsed += match cfg.schedule {
                Schedule::Serial => stage_costs.iter().sum::<usize>(),
                Schedule::Parallel => stage_costs.iter().copied().max().unwrap_or(0),
            };
            measured.sort_unstable();
            let detection = detect_with(&energy, cfg, &measured, Some(&self.responses))?;
            let stage = index + 1;
            let tag = |mut e: EdgeEstimate| {
                e.stage = stage;
                e
            };
            let edges: Vec<EdgeEstimate> = detection.edges.into_iter().map(tag).collect();
            let slice_edges: Vec<EdgeEstimate> = detection.slice_edges.into_iter().map(tag).collect();
            results.push(StageResult {
                stage,
                d_subset: measured.clone(),
                elapsed_samples: elapsed,
                max_error_pct: truth.map(|t| max_edge_error(&edges, t)),
                max_error_unrefined_pct: truth.map(|t| max_edge_error(&slice_edges, t)),
                edges,
                slice_edges,
            });
        }
        Ok(CycleResult {
            stages: results,
            energy,
        })
    }
}

/// Runs one full cycle with a freshly designed bank.
pub fn run_cycle(x: &[f64], cfg: &BankConfig, truth: Option<&Scenario>) -> Result<CycleResult> {
    Sensor::new(cfg)?.run_cycle(x, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_gen::{generate, Channel};

    #[test]
    fn schedule_grows_from_the_middle() {
        assert_eq!(stage_schedule(&[3, 4, 5, 6, 7]), vec![vec![5], vec![4, 6], vec![3, 7]]);
        assert_eq!(stage_schedule(&[5]), vec![vec![5]]);
        assert_eq!(stage_schedule(&[3, 4, 5, 6]), vec![vec![5], vec![4, 6], vec![3]]);
        assert!(stage_schedule(&[]).is_empty());
    }

    #[test]
    fn cycle_bookkeeping() {
        let cfg = BankConfig::default();
        let sensor = Sensor::new(&cfg).unwrap();
        let scenario = Scenario::new(
            vec![Channel::new(0.2, 0.45, 10.0)],
            1.0,
            3,
            sensor.required_samples(3).unwrap(),
        )
        .unwrap();
        let x = generate(&scenario).unwrap();
        let with_truth = sensor.run_cycle(&x, Some(&scenario)).unwrap();
        assert_eq!(with_truth.stages.len(), 3);
        let subsets: Vec<_> = with_truth.stages.iter().map(|s| s.d_subset.clone()).collect();
        assert_eq!(subsets, vec![vec![5], vec![4, 5, 6], vec![3, 4, 5, 6, 7]]);
        let elapsed: Vec<_> = with_truth.stages.iter().map(|s| s.elapsed_samples).collect();
        assert!(elapsed.windows(2).all(|w| w[0] < w[1]));
        let total: usize = [3, 4, 5, 6, 7].iter().map(|&d| sensor.measurement_cost(d).unwrap()).sum();
        assert_eq!(*elapsed.last().unwrap(), total);
        assert!(with_truth.stages.iter().all(|s| s.max_error_pct.is_some()));
        assert_eq!(with_truth.final_stage().edges.len(), 2);

        let blind = sensor.run_cycle(&x, None).unwrap();
        assert!(blind.stages.iter().all(|s| s.max_error_pct.is_none()));
        assert_eq!(blind.final_stage().edges, with_truth.final_stage().edges);
    }

    #[test]
    fn short_input_is_rejected() {
        let cfg = BankConfig::default();
        let sensor = Sensor::new(&cfg).unwrap();
        let x = vec![0.0; cfg.n_samples];
        assert!(matches!(sensor.run_cycle(&x, None), Err(Error::InputTooShort { .. })));
    }

    #[test]
    fn fresh_sampling_needs_every_segment() {
        let mut cfg = BankConfig::default();
        cfg.n_samples = 1024;
        cfg.sampling = Sampling::Fresh;
        let sensor = Sensor::new(&cfg).unwrap();
        let total: usize = [3, 4, 5, 6, 7].iter().map(|&d| sensor.measurement_cost(d).unwrap()).sum();
        assert_eq!(sensor.required_samples(3).unwrap(), total);
        let x = vec![0.0; total];
        assert_eq!(sensor.run_cycle(&x, None).unwrap().stages.len(), 3);
        assert!(sensor.run_cycle(&x[..total - 1], None).is_err());
    }

    #[test]
    fn parallel_schedule_charges_slowest_measurement() {
        let mut cfg = BankConfig::default();
        cfg.n_samples = 1024;
        cfg.schedule = Schedule::Parallel;
        let sensor = Sensor::new(&cfg).unwrap();
        let x = vec![0.0; sensor.required_samples(3).unwrap()];
        let r = sensor.run_cycle(&x, None).unwrap();
        let cost = |d| sensor.measurement_cost(d).unwrap();
        assert_eq!(r.stages[1].elapsed_samples, cost(5) + cost(4).max(cost(6)));
    }

    #[test]
    fn missing_edges_score_full_error() {
        let truth = Scenario::new(vec![Channel::new(0.2, 0.4, 10.0)], 1.0, 0, 10).unwrap();
        assert_eq!(edge_errors(&[], &truth), vec![100.0, 100.0]);
    }
}
