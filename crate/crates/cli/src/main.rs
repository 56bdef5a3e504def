//! `pnsim` command-line front end.
//!
//! Exit codes: 0 success, 1 oracle check failed, 2 invalid configuration or
//! usage, 3 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pnsim::config::RunConfig;
use pnsim::covariance::{train_covariances, CovarianceSet};
use pnsim::engine::{sweep, with_workers};
use pnsim::oracle::{alpha_beta_sums, decompose_dense, max_relative_deviation, Oracle, SumRange, BRUTE_FORCE_MAX_NFFT};
use pnsim::rng::derive_seed;
use pnsim::waveform::random_block;
use pnsim::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

/// Chain tolerance between the demodulated block and `s * alpha + beta`.
const CHAIN_TOL: f64 = 1e-10;
/// Tolerance between the triple sums and the matrix chain.
const SUM_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "pnsim", version, about = "DFT-s-OFDM phase-noise link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write sweep.csv plus manifest.json.
    Run(Common),
    /// Compare the triple-sum interference formulas with the matrix chain.
    OracleCheck(Common),
    /// Train and cache the covariance set for the interpolation filter.
    Train(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, value_name = "N", env = "PNSIM_WORKERS")]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> pnsim::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn workers(cfg: &RunConfig) -> usize {
    cfg.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_IO
    }
}

fn write_file(path: &Path, text: &str) -> pnsim::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn obtain_covariance(cfg: &RunConfig) -> pnsim::Result<Option<CovarianceSet>> {
    if !cfg.needs_covariance() {
        return Ok(None);
    }
    if let Some(set) = cfg.load_cached_covariance()? {
        eprintln!("loaded covariance cache {}", cfg.covariance.cache.as_ref().expect("cache path").display());
        return Ok(Some(set));
    }
    let pn = cfg.phase_noise_model()?;
    eprintln!(
        "training covariances: {} frames, model {}",
        cfg.covariance.training_frames,
        pn.model_id()
    );
    let set = with_workers(workers(cfg), || {
        train_covariances(&cfg.frame, &pn, cfg.covariance.training_frames, 0.0, cfg.training_seed())
    })??;
    Ok(Some(set))
}

fn cmd_run(cfg: &RunConfig) -> pnsim::Result<u8> {
    let t0 = Instant::now();
    let mut setup = cfg.link_setup()?;
    setup.covariance = obtain_covariance(cfg)?;
    let n_workers = workers(cfg);
    let result = with_workers(n_workers, || sweep(&setup, &cfg.patterns, &cfg.estimators, &cfg.snr_db, cfg.seed))??;

    let csv = result.to_csv();
    let csv_path = cfg.out_dir.join("sweep.csv");
    write_file(&csv_path, &csv)?;
    let config_echo: serde_json::Value = serde_json::from_str(&cfg.to_json())?;
    let manifest = json!({
        "tool": "pnsim",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "workers": n_workers,
        "phase_noise_model": setup.pn.model_id(),
        "csv": "sweep.csv",
        "csv_sha256": result.csv_sha256(),
        "rows": result.rows.iter().map(|r| json!({
            "estimator": r.estimator,
            "pattern": r.pattern,
            "snr_db": r.snr_db,
            "runtime_s": r.runtime_s,
        })).collect::<Vec<_>>(),
        "covariance": setup.covariance.as_ref().map(|c| json!({
            "model_id": c.meta.model_id,
            "n_frames": c.meta.n_frames,
            "seed": c.meta.seed,
            "cfg_hash": c.meta.cfg_hash,
            "beta_mean_norm": c.meta.beta_mean_norm,
            "beta_mean_negligible": c.beta_mean_negligible(),
        })),
        "total_runtime_s": t0.elapsed().as_secs_f64(),
        "config": config_echo,
    });
    let manifest_text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_file(&cfg.out_dir.join("manifest.json"), &manifest_text)?;
    println!("wrote {} rows to {}", result.rows.len(), csv_path.display());
    Ok(0)
}

fn cmd_oracle_check(cfg: &RunConfig) -> pnsim::Result<u8> {
    let frame = &cfg.frame;
    if frame.n_fft > BRUTE_FORCE_MAX_NFFT {
        return Err(Error::Resource(format!(
            "oracle check is limited to N_p <= {BRUTE_FORCE_MAX_NFFT}, config has N_p = {}",
            frame.n_fft
        )));
    }
    let pn = cfg.phase_noise_model()?;
    let oracle = Oracle::new(frame)?;
    let (mut worst_chain, mut worst_fast, mut worst_alloc, mut worst_full) = (0f64, 0f64, 0f64, 0f64);
    println!("trial  chain_vs_matrix  fast_vs_matrix  sums_allocated  sums_full_fft");
    for t in 0..cfg.oracle_trials.max(1) {
        let seed = derive_seed(cfg.seed, &[t as u64]);
        let trace = pn.frame_trace(frame.symbol_len(), frame.fs, seed)?;
        let phi = &trace.samples()[frame.body_range(0)];
        let s = random_block(frame.n_active, frame.mod_order, derive_seed(seed, &[1]))?;
        let dense = decompose_dense(phi, &s, frame)?;
        let r = oracle.received(phi, &s)?;
        let chain = max_relative_deviation(&r, &dense.reconstruct(&s));
        let fast = oracle.decompose(phi, &s)?;
        let fast_dev = max_relative_deviation(&fast.alpha, &dense.alpha)
            .max(max_relative_deviation(&fast.reconstruct(&s), &dense.reconstruct(&s)));
        let alloc = alpha_beta_sums(phi, &s, frame, SumRange::Allocated)?;
        let alloc_dev = max_relative_deviation(&alloc.reconstruct(&s), &r);
        let full = alpha_beta_sums(phi, &s, frame, SumRange::FullFft)?;
        let full_dev = max_relative_deviation(&full.reconstruct(&s), &r);
        println!("{t:5}  {chain:15.3e}  {fast_dev:14.3e}  {alloc_dev:14.3e}  {full_dev:13.3e}");
        worst_chain = worst_chain.max(chain);
        worst_fast = worst_fast.max(fast_dev);
        worst_alloc = worst_alloc.max(alloc_dev);
        worst_full = worst_full.max(full_dev);
    }
    let ok = worst_chain < CHAIN_TOL && worst_fast < CHAIN_TOL && worst_alloc < SUM_TOL;
    println!("max chain deviation {worst_chain:.3e} (limit {CHAIN_TOL:e})");
    println!("max fast-path deviation {worst_fast:.3e} (limit {CHAIN_TOL:e})");
    println!("max triple-sum deviation, m over allocated bins {worst_alloc:.3e} (limit {SUM_TOL:e})");
    if worst_full >= SUM_TOL {
        println!(
            "divergence report: with m over all {} FFT bins the triple sums deviate by {worst_full:.3e}; \
             they agree with the chain only when m is restricted to the {} allocated bins",
            frame.n_fft, frame.n_active
        );
    } else {
        println!("triple sums with m over all FFT bins also agree ({worst_full:.3e})");
    }
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_train(cfg: &RunConfig) -> pnsim::Result<u8> {
    let pn = cfg.phase_noise_model()?;
    let t0 = Instant::now();
    let set = with_workers(workers(cfg), || {
        train_covariances(&cfg.frame, &pn, cfg.covariance.training_frames, 0.0, cfg.training_seed())
    })??;
    let path = cfg.out_dir.join(cfg.cache_file_name(&set.meta.model_id));
    write_file(&path, &set.to_csv())?;
    println!(
        "wrote {} ({} frames, {:.1}s, mean beta norm {:.3e}{})",
        path.display(),
        set.meta.n_frames,
        t0.elapsed().as_secs_f64(),
        set.meta.beta_mean_norm,
        if set.beta_mean_negligible() { "" } else { ", NOT negligible" }
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&RunConfig) -> pnsim::Result<u8>) = match &cli.command {
        Command::Run(c) => (c, cmd_run),
        Command::OracleCheck(c) => (c, cmd_oracle_check),
        Command::Train(c) => (c, cmd_train),
    };
    let outcome = common.load().and_then(|cfg| run(&cfg));
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
