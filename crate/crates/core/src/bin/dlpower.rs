//! Command-line front end: generate labeled datasets, solve one-off
//! instances, train per-cell models, and evaluate/report CDFs.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use dlpower_core::geometry::NetworkConfig;
use dlpower_core::nn::{self, MlpModel, TrainConfig};
use dlpower_core::pipeline::{
    self, evaluate, generate_dataset, load_gain_cache, read_dataset, train_models, DatasetFile,
    GenOptions, NetPreset,
};
use dlpower_core::power::{SolverOptions, Strategy};
use dlpower_core::precoding::Precoder;
use dlpower_core::se::sinr_all;

#[derive(Parser)]
#[command(
    name = "dlpower",
    version,
    about = "Massive MIMO downlink power allocation: exact solvers and a learned predictor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or resume) a solver-labeled dataset of random UE drops.
    Generate {
        /// Key-value config file (network, solver, and training keys).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed; every sample derives its own seed from it.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of samples (ids 0..n).
        #[arg(long, default_value_t = 100)]
        samples: u64,
        /// Strategies to label (repeatable); default: both.
        #[arg(long)]
        strategy: Vec<String>,
        /// Precoders to label (repeatable); default: both.
        #[arg(long)]
        precoder: Vec<String>,
        /// Fading realizations per sample.
        #[arg(long, default_value_t = 100)]
        n_real: usize,
        /// Also write a .gains sidecar for fast evaluation.
        #[arg(long)]
        cache_gains: bool,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one instance from a seed and print the allocation.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "maxmin")]
        strategy: String,
        #[arg(long, default_value = "mmse")]
        precoder: String,
        #[arg(long, default_value_t = 100)]
        n_real: usize,
    },
    /// Train one model per cell on a labeled dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "maxprod")]
        strategy: String,
        #[arg(long, default_value = "mmse")]
        precoder: String,
        /// Architecture: compact | wide.
        #[arg(long, default_value = "compact")]
        net: String,
        /// Training sample ids, as LO..HI (default: all records).
        #[arg(long)]
        train_range: Option<String>,
        /// Shuffle/init seed (overrides any train_seed in --config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for model files and loss histories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate trained models on held-out samples and print summary stats.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding model_cell<j>.dlp files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "maxprod")]
        strategy: String,
        #[arg(long, default_value = "mmse")]
        precoder: String,
        /// Test sample ids, as LO..HI; must not overlap the training range.
        #[arg(long)]
        test_range: String,
        /// Read gain tables from the dataset's .gains sidecar.
        #[arg(long)]
        cache_gains: bool,
    },
    /// Evaluate and write the SE and MSE CDF CSVs.
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "maxprod")]
        strategy: String,
        #[arg(long, default_value = "mmse")]
        precoder: String,
        #[arg(long)]
        test_range: String,
        #[arg(long)]
        cache_gains: bool,
        /// Output directory for se_cdf.csv and mse_cdf.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate {
            config,
            seed,
            samples,
            strategy,
            precoder,
            n_real,
            cache_gains,
            out,
        } => {
            let (net_cfg, text) = load_config(config.as_deref())?;
            let mut solver = SolverOptions::default();
            solver.apply_text(&text)?;
            let opts = GenOptions {
                n_real,
                pairs: requested_pairs(&strategy, &precoder)?,
                solver,
                cache_gains,
            };
            let report = generate_dataset(&net_cfg, samples, &opts, seed, &out)?;
            println!(
                "dataset {}: {} records ({} new, {} skipped of {} requested)",
                out.display(),
                report.total_records,
                report.written,
                report.skipped.len(),
                report.requested
            );
            if !report.skipped.is_empty() {
                println!("skipped ids: {:?}", report.skipped);
            }
        }
        Command::Solve {
            config,
            seed,
            strategy,
            precoder,
            n_real,
        } => {
            let (net_cfg, text) = load_config(config.as_deref())?;
            let strategy = Strategy::from_str(&strategy)?;
            let precoder = Precoder::from_str(&precoder)?;
            let mut solver = SolverOptions::default();
            solver.apply_text(&text)?;
            let opts = GenOptions {
                n_real,
                pairs: vec![(strategy, precoder)],
                solver,
                cache_gains: false,
            };
            let outcome =
                pipeline::sample_instance(&net_cfg, &opts, pipeline::derive_seed(seed, 0))?;
            print_solution(&net_cfg, &outcome, strategy, precoder);
        }
        Command::Train {
            config,
            data,
            strategy,
            precoder,
            net,
            train_range,
            seed,
            out,
        } => {
            let (_, text) = load_config(config.as_deref())?;
            let mut tc = TrainConfig::default();
            tc.apply_text(&text)?;
            if let Some(s) = seed {
                tc.seed = s;
            }
            let strategy = Strategy::from_str(&strategy)?;
            let precoder = Precoder::from_str(&precoder)?;
            let preset = NetPreset::from_str(&net)?;
            let ds = read_dataset(&data)?;
            let range = match train_range {
                Some(r) => parse_range(&r)?,
                None => (0, ds.records.last().map(|r| r.id + 1).unwrap_or(0)),
            };
            std::fs::create_dir_all(&out)?;
            let trained = train_models(&ds, strategy, precoder, preset, &tc, range)?;
            for (cell, (model, history)) in trained.iter().enumerate() {
                let path = out.join(format!("model_cell{cell}.dlp"));
                nn::save_model_file(model, &path)?;
                let mut csv = String::from("epoch,train_loss,val_loss\n");
                for (e, (tr, va)) in history.iter().enumerate() {
                    csv.push_str(&format!("{e},{tr},{va}\n"));
                }
                std::fs::write(out.join(format!("history_cell{cell}.csv")), csv)?;
                let (tr, va) = history.last().unwrap();
                println!(
                    "cell {cell}: {} epochs, train loss {tr:.6}, val loss {va:.6} -> {}",
                    history.len(),
                    path.display()
                );
            }
        }
        Command::Evaluate {
            data,
            models,
            strategy,
            precoder,
            test_range,
            cache_gains,
        } => {
            let report = run_evaluation(
                &data,
                &models,
                &strategy,
                &precoder,
                &test_range,
                cache_gains,
            )?;
            println!("test samples: {}", report.n_samples);
            println!("mean MSE of SEs: {:.6}", report.mean_mse);
            println!(
                "median per-UE SE: exact {:.4}, predicted {:.4} bit/s/Hz",
                report.median_se_exact(),
                report.median_se_nn()
            );
            println!(
                "max stored-objective deviation: {:.3e}",
                report.max_objective_dev
            );
        }
        Command::Report {
            data,
            models,
            strategy,
            precoder,
            test_range,
            cache_gains,
            out,
        } => {
            let report = run_evaluation(
                &data,
                &models,
                &strategy,
                &precoder,
                &test_range,
                cache_gains,
            )?;
            std::fs::create_dir_all(&out)?;
            let se_path = out.join("se_cdf.csv");
            let mse_path = out.join("mse_cdf.csv");
            let mut se_buf = Vec::new();
            pipeline::write_cdf_csv(&mut se_buf, &report.se_cdf())?;
            std::fs::write(&se_path, se_buf)?;
            let mut mse_buf = Vec::new();
            pipeline::write_cdf_csv(&mut mse_buf, &report.mse_cdf())?;
            std::fs::write(&mse_path, mse_buf)?;
            println!("mean MSE of SEs: {:.6}", report.mean_mse);
            println!("wrote {}", se_path.display());
            println!("wrote {}", mse_path.display());
        }
    }
    Ok(())
}

/// Read the config file (or defaults); returns the parsed network config and
/// the raw text so solver/training keys can be applied from the same file.
fn load_config(path: Option<&Path>) -> anyhow::Result<(NetworkConfig, String)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
            Ok((NetworkConfig::from_text(&text)?, text))
        }
        None => Ok((NetworkConfig::default(), String::new())),
    }
}

fn requested_pairs(
    strategies: &[String],
    precoders: &[String],
) -> anyhow::Result<Vec<(Strategy, Precoder)>> {
    let strategies: Vec<Strategy> = if strategies.is_empty() {
        vec![Strategy::MaxProd, Strategy::MaxMin]
    } else {
        strategies
            .iter()
            .map(|s| Strategy::from_str(s))
            .collect::<Result<_, _>>()?
    };
    let precoders: Vec<Precoder> = if precoders.is_empty() {
        vec![Precoder::Mmse, Precoder::Mr]
    } else {
        precoders
            .iter()
            .map(|p| Precoder::from_str(p))
            .collect::<Result<_, _>>()?
    };
    let mut pairs = Vec::new();
    for &s in &strategies {
        for &p in &precoders {
            pairs.push((s, p));
        }
    }
    Ok(pairs)
}

fn parse_range(text: &str) -> anyhow::Result<(u64, u64)> {
    let (lo, hi) = text
        .split_once("..")
        .ok_or_else(|| anyhow::anyhow!("range must be LO..HI, got '{text}'"))?;
    let lo: u64 = lo.trim().parse()?;
    let hi: u64 = hi.trim().parse()?;
    if lo >= hi {
        anyhow::bail!("empty range {lo}..{hi}");
    }
    Ok((lo, hi))
}

fn run_evaluation(
    data: &Path,
    models_dir: &Path,
    strategy: &str,
    precoder: &str,
    test_range: &str,
    cache_gains: bool,
) -> anyhow::Result<pipeline::EvalReport> {
    let strategy = Strategy::from_str(strategy)?;
    let precoder = Precoder::from_str(precoder)?;
    let range = parse_range(test_range)?;
    let ds: DatasetFile = read_dataset(data)?;
    let models = load_models(models_dir, ds.header.config.l)?;
    let cache = if cache_gains {
        Some(load_gain_cache(data, &ds.header, range)?)
    } else {
        None
    };
    Ok(evaluate(
        &models,
        &ds,
        strategy,
        precoder,
        range,
        cache.as_ref(),
    )?)
}

fn load_models(dir: &Path, l: usize) -> anyhow::Result<Vec<MlpModel>> {
    (0..l)
        .map(|cell| {
            let path = dir.join(format!("model_cell{cell}.dlp"));
            nn::load_model_file(&path)
                .map_err(|e| anyhow::anyhow!("cannot load {}: {e}", path.display()))
        })
        .collect()
}

fn print_solution(
    config: &NetworkConfig,
    outcome: &pipeline::SampleOutcome,
    strategy: Strategy,
    precoder: Precoder,
) {
    let ps = &outcome.powers[0];
    let table = &outcome.gains[0].1;
    let sinrs = sinr_all(table, &ps.rho);
    let min = sinrs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = sinrs.iter().cloned().fold(0.0f64, f64::max);
    let p_max = config.p_dl_max_mw();

    println!(
        "strategy = {strategy}, precoder = {precoder}, converged = {} ({} iterations)",
        ps.converged, ps.iterations
    );
    match strategy {
        Strategy::MaxMin => {
            println!(
                "t* = {min:.6} (min SE = {:.4} bit/s/Hz)",
                config.prelog() * (1.0 + min).log2()
            );
        }
        Strategy::MaxProd => {
            println!("sum log SINR = {:.6}", ps.objective);
        }
    }
    for cell in 0..config.l {
        let rho = &ps.rho[cell * config.k..(cell + 1) * config.k];
        let cells: Vec<String> = rho.iter().map(|r| format!("{r:.3}")).collect();
        println!(
            "cell {cell}: rho_mW = [{}], sum = {:.3} / {:.0}",
            cells.join(", "),
            rho.iter().sum::<f64>(),
            p_max
        );
    }
    let spread = (max - min) / min;
    if strategy == Strategy::MaxMin {
        println!(
            "SINR spread (max-min)/min = {spread:.3e} -> all equal within 1e-6: {}",
            if spread < 1e-6 { "yes" } else { "NO" }
        );
    } else {
        println!("per-UE SINR range: [{min:.4}, {max:.4}]");
    }
}
