use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wbsense::analysis::{
    compare_at_proposed_bounds, comparison_report, default_references, default_sweep_configs, tradeoff_csv,
    tradeoff_sweep, CountRules, Method, ReferenceModel, PUBLISHED_EDGE_TABLE,
};
use wbsense::edge_detect::{edges_to_csv, error_metric, Direction};
use wbsense::filterbank::BankConfig;
use wbsense::sensing::{CycleResult, Sensor};
use wbsense::signal_gen::{generate, preset_channels, write_samples, Scenario, DEFAULT_SNR_DB, GENERATOR_NAME};

const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "wbsense", version, about = "Wideband spectrum sensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sensing cycle on a preset or scenario file.
    Sense(SenseArgs),
    /// Reproduce the edge table, the complexity tradeoff and the error staircase.
    Tables(TablesArgs),
    /// Write the designed filter coefficients of the bank.
    Design(DesignArgs),
}

#[derive(Args)]
struct SenseArgs {
    /// Bank configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in spectrum: input1 or input2.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    /// Scenario file (TOML with [[channel]] tables).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-channel SNR for presets.
    #[arg(long, default_value_t = DEFAULT_SNR_DB)]
    snr_db: f64,
    /// Samples per measurement (overrides the configuration).
    #[arg(long)]
    samples: Option<usize>,
    /// Number of stages to run.
    #[arg(long)]
    stages: Option<usize>,
    /// Also write the generated input as a binary sample file.
    #[arg(long)]
    export_samples: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TablesArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds per preset, numbered from 0.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = DEFAULT_SNR_DB)]
    snr_db: f64,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = std::result::Result<T, Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    generator: &'static str,
    seed: Option<u64>,
    config: &'a BankConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<&'a Scenario>,
    files: BTreeMap<String, usize>,
}

/// Output files collected in memory and written only once everything succeeded.
#[derive(Default)]
struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.insert(name.to_string(), contents.into());
    }

    fn write(self, dir: &Path, manifest: impl FnOnce(BTreeMap<String, usize>) -> String) -> Outcome<()> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(runtime_err)?;
        let mut sizes = BTreeMap::new();
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes).map_err(runtime_err)?;
            sizes.insert(name.clone(), bytes.len());
        }
        write_atomic(&dir.join("manifest.json"), manifest(sizes).as_bytes()).map_err(runtime_err)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path.file_name().ok_or_else(|| anyhow!("bad output path {}", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn load_config(path: Option<&Path>, samples: Option<usize>) -> Outcome<BankConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(config_err)?;
            toml::from_str::<BankConfig>(&text)
                .with_context(|| format!("parsing config {}", p.display()))
                .map_err(config_err)?
        }
        None => BankConfig::default(),
    };
    if let Some(n) = samples {
        cfg.n_samples = n;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn manifest_json(manifest: &Manifest) -> String {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    text
}

fn sense(args: &SenseArgs) -> Outcome<()> {
    let cfg = load_config(args.config.as_deref(), args.samples)?;
    let sensor = Sensor::new(&cfg).map_err(config_err)?;
    let stages = args.stages.unwrap_or(sensor.schedule().len());
    if stages == 0 || stages > sensor.schedule().len() {
        return Err(config_err(anyhow!("--stages must be between 1 and {}", sensor.schedule().len())));
    }
    let needed = sensor.required_samples(stages).map_err(config_err)?;
    let scenario = match (&args.preset, &args.scenario) {
        (Some(name), _) => Scenario::preset(name, args.snr_db, args.seed.unwrap_or(0), needed).map_err(config_err)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading scenario {}", path.display()))
                .map_err(config_err)?;
            let mut s = Scenario::from_toml_str(&text)
                .with_context(|| format!("parsing scenario {}", path.display()))
                .map_err(config_err)?;
            if let Some(seed) = args.seed {
                s.seed = seed;
            }
            s
        }
        (None, None) => return Err(config_err(anyhow!("either --preset or --scenario is required"))),
    };
    let x = generate(&scenario).map_err(runtime_err)?;
    let result = sensor.run_stages(&x, Some(&scenario), stages).map_err(runtime_err)?;

    let mut outputs = Outputs::default();
    let edges: Vec<_> = result.stages.iter().flat_map(|s| s.edges.iter().copied()).collect();
    outputs.add("edges.csv", edges_to_csv(&edges));
    outputs.add("stages.csv", result.stages_csv());
    outputs.add("energy.csv", result.energy.to_csv());
    if let Some(path) = &args.export_samples {
        let mut bytes = Vec::new();
        write_samples(&mut bytes, &x).map_err(runtime_err)?;
        write_atomic(path, &bytes).map_err(runtime_err)?;
    }
    outputs.write(&args.out, |files| {
        manifest_json(&Manifest {
            tool: "wbsense",
            version: env!("CARGO_PKG_VERSION"),
            command: "sense",
            generator: GENERATOR_NAME,
            seed: Some(scenario.seed),
            config: &cfg,
            scenario: Some(&scenario),
            files,
        })
    })
}

/// Mean refined estimate and error of every true edge over the seeded runs.
fn table1(runs: &[(&str, Vec<(Scenario, CycleResult)>)]) -> String {
    let mut out = String::from(
        "preset,channel,direction,f_actual,f_approx_mean,error_mean_pct,error_max_pct,published_f_approx,published_error_pct\n",
    );
    for (preset, cycles) in runs {
        let layout = preset_channels(preset).expect("known preset");
        for (c, &(rising, falling)) in layout.iter().enumerate() {
            for (direction, f) in [(Direction::Rising, rising), (Direction::Falling, falling)] {
                let estimates: Vec<f64> = cycles
                    .iter()
                    .map(|(_, r)| {
                        r.final_stage()
                            .edges
                            .iter()
                            .filter(|e| e.direction == direction)
                            .map(|e| e.f_approx)
                            .min_by(|a, b| (a - f).abs().total_cmp(&(b - f).abs()))
                            .unwrap_or(f64::NAN)
                    })
                    .collect();
                let errors: Vec<f64> = estimates
                    .iter()
                    .map(|&e| if e.is_nan() { 100.0 } else { error_metric(f, e) })
                    .collect();
                let count = estimates.len().max(1) as f64;
                let mean_f = estimates.iter().sum::<f64>() / count;
                let mean_err = errors.iter().sum::<f64>() / count;
                let max_err = errors.iter().copied().fold(0.0, f64::max);
                let published = PUBLISHED_EDGE_TABLE
                    .iter()
                    .find(|(p, actual, _, _)| p == preset && (actual - f).abs() < 1e-12);
                let (pub_f, pub_err) = published.map_or((String::new(), String::new()), |(_, _, a, e)| {
                    (a.to_string(), e.to_string())
                });
                out.push_str(&format!(
                    "{preset},{},{direction},{f},{mean_f},{mean_err},{max_err},{pub_f},{pub_err}\n",
                    c + 1
                ));
            }
        }
    }
    out
}

/// Per-stage elapsed time and mean maximum error over the seeded runs.
fn error_vs_time(runs: &[(&str, Vec<(Scenario, CycleResult)>)]) -> String {
    let mut out = String::from("preset,stage,elapsed_samples,mean_max_error_pct,mean_max_error_refined_pct\n");
    for (preset, cycles) in runs {
        let Some((_, first)) = cycles.first() else { continue };
        for (i, stage) in first.stages.iter().enumerate() {
            let count = cycles.len() as f64;
            let mean = |f: &dyn Fn(&CycleResult) -> f64| cycles.iter().map(|(_, r)| f(r)).sum::<f64>() / count;
            let unrefined = mean(&|r| r.stages[i].max_error_unrefined_pct.unwrap_or(f64::NAN));
            let refined = mean(&|r| r.stages[i].max_error_pct.unwrap_or(f64::NAN));
            out.push_str(&format!("{preset},{},{},{unrefined},{refined}\n", stage.stage, stage.elapsed_samples));
        }
    }
    out
}

fn tables(args: &TablesArgs) -> Outcome<()> {
    let cfg = load_config(args.config.as_deref(), args.samples)?;
    if args.seeds == 0 {
        return Err(config_err(anyhow!("--seeds must be positive")));
    }
    let sensor = Sensor::new(&cfg).map_err(config_err)?;
    let needed = sensor.required_samples(sensor.schedule().len()).map_err(config_err)?;
    let mut runs = Vec::new();
    for preset in ["input1", "input2"] {
        let mut cycles = Vec::new();
        for seed in 0..args.seeds {
            let scenario = Scenario::preset(preset, args.snr_db, seed, needed).map_err(config_err)?;
            let x = generate(&scenario).map_err(runtime_err)?;
            let r = sensor.run_cycle(&x, Some(&scenario)).map_err(runtime_err)?;
            cycles.push((scenario, r));
        }
        runs.push((preset, cycles));
    }

    let model = ReferenceModel::from_spec(&cfg.spec);
    let rows = tradeoff_sweep(&default_sweep_configs(), &default_references(), &model, CountRules::default())
        .map_err(runtime_err)?;
    let mut report = comparison_report(&cfg, &model).map_err(runtime_err)?;
    report.push_str("\nproposed vs dftfb at each proposed error bound <= 3%\nbound_pct  proposed  dftfb  proposed_lower\n");
    for (bound, proposed, dft) in compare_at_proposed_bounds(&rows, Method::Dftfb, 3.0) {
        let dft_text = dft.map_or_else(|| "unreachable".to_string(), |d| d.to_string());
        let lower = dft.is_none_or(|d| proposed < d);
        report.push_str(&format!("{bound}  {proposed}  {dft_text}  {lower}\n"));
    }

    let mut outputs = Outputs::default();
    outputs.add("table1.csv", table1(&runs));
    outputs.add("tradeoff.csv", tradeoff_csv(&rows));
    outputs.add("error_vs_time.csv", error_vs_time(&runs));
    outputs.add("report.txt", report);
    outputs.write(&args.out, |files| {
        manifest_json(&Manifest {
            tool: "wbsense",
            version: env!("CARGO_PKG_VERSION"),
            command: "tables",
            generator: GENERATOR_NAME,
            seed: None,
            config: &cfg,
            scenario: None,
            files,
        })
    })
}

fn design(args: &DesignArgs) -> Outcome<()> {
    let cfg = load_config(args.config.as_deref(), None)?;
    let sensor = Sensor::new(&cfg).map_err(config_err)?;
    let bank = sensor.bank();
    let mut outputs = Outputs::default();
    outputs.add("modal.txt", bank.modal().to_text());
    for (k, h) in bank.masking().iter().enumerate() {
        outputs.add(&format!("masking_k{k}.txt"), h.to_text());
    }
    for &d in &cfg.d_set {
        let set = bank.set(d).map_err(runtime_err)?;
        for (k, h) in set.bands.iter().enumerate() {
            outputs.add(&format!("band_d{d}_k{k}.txt"), h.to_text());
        }
    }
    outputs.write(&args.out, |files| {
        manifest_json(&Manifest {
            tool: "wbsense",
            version: env!("CARGO_PKG_VERSION"),
            command: "design",
            generator: GENERATOR_NAME,
            seed: None,
            config: &cfg,
            scenario: None,
            files,
        })
    })
}

/// Runs a parsed command and returns the process exit code.
fn run(cli: &Cli) -> u8 {
    let outcome = match &cli.command {
        Command::Sense(a) => sense(a),
        Command::Tables(a) => tables(a),
        Command::Design(a) => design(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(&Cli::parse()))
}
