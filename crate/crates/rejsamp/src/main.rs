use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rejsamp::config::ExperimentConfig;
use rejsamp::core::ldist::{chisq_quantile, v_pgamma};
use rejsamp::core::variance::confidence_interval;
use rejsamp::core::ldist::MixtureQuantiler;
use rejsamp::core::Column;
use rejsamp::harness::{draw_chain, replicate_rng, run_experiment, theoretical_varred, Evaluator, RunOptions};
use rejsamp::oracle::{enumerate_two_phase, identity_errors};
use rejsamp::{Error, Result};

#[derive(Parser)]
#[command(name = "rejsamp", version, about = "Rejective multi-phase sampling: draws, estimates and Monte Carlo studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the base seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Desk-scale sizes: N = 20000, SRS phases of 1000 and 200.
    #[arg(long)]
    fast: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one chain and print the sampled units of every phase.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Setting label; the first setting by default.
        #[arg(long)]
        setting: Option<String>,
    },
    /// Draw one chain and evaluate every estimator on it.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        setting: Option<String>,
    },
    /// Run the full Monte Carlo study and write the summary table.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write per-replicate records to this file.
        #[arg(long)]
        keep_replicates: Option<PathBuf>,
    },
    /// Exact enumeration checks on a synthetic frame of at most 14 units.
    Oracle {
        #[arg(long, default_value_t = 6)]
        n_units: usize,
        #[arg(long, default_value_t = 4)]
        n_i: usize,
        #[arg(long, default_value_t = 2)]
        n_ii: usize,
        #[arg(long, default_value = "inf")]
        gamma_sq: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print `v_{p,γ²}`, acceptance rates and theoretical variance reductions.
    Ldist {
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
        gamma_sq: Vec<f64>,
        /// Phase sampling fractions for the variance-reduction table.
        #[arg(long, default_value_t = 0.04)]
        f_ii_i: f64,
        #[arg(long, default_value_t = 0.05)]
        f_i_0: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.8")]
        r_sq: Vec<f64>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io { path: p.into(), source: e })?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.fast {
        cfg.make_fast();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_err(e: io::Error) -> Error {
    Error::Io { path: "<output>".into(), source: e }
}

fn one_chain(common: &Common, setting: Option<&str>) -> Result<(ExperimentConfig, Vec<rejsamp::config::LabeledFrame>, rejsamp::core::PhaseChain, Vec<rejsamp::core::Design>)> {
    let cfg = load(common)?;
    let frames = cfg.frames()?;
    let s = match setting {
        Some(label) => cfg
            .settings
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::Config(format!("no setting labelled {label:?}")))?,
        None => &cfg.settings[0],
    };
    let designs = cfg.designs(&frames[0].pop)?;
    let criteria = cfg.criteria(s, &frames[0].pop)?;
    let chain = draw_chain(&mut replicate_rng(cfg.seed, 0), &frames[0].pop, &designs, &criteria)?;
    Ok((cfg, frames, chain, designs))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { common, setting } => {
            let (_, frames, chain, _) = one_chain(&common, setting.as_deref())?;
            let mut out = output(common.out.as_deref())?;
            writeln!(out, "phase,unit,pi_star,draws").map_err(io_err)?;
            let ids = frames[0].pop.unit_ids();
            for (k, level) in chain.levels().iter().enumerate() {
                for (&u, &p) in level.units().iter().zip(level.pi_star()) {
                    writeln!(out, "{},{},{},{}", k + 1, ids[u], p, level.draws()).map_err(io_err)?;
                }
            }
            out.flush().map_err(io_err)?;
        }
        Command::Estimate { common, setting } => {
            let (cfg, frames, chain, designs) = one_chain(&common, setting.as_deref())?;
            let evaluator = Evaluator::from_config(&cfg, &designs)?;
            let mut q = MixtureQuantiler::new(cfg.quantile_draws, cfg.quantile_seed);
            let mut out = output(common.out.as_deref())?;
            writeln!(out, "population,estimator,estimate,variance,ci_low,ci_high,negative_weights").map_err(io_err)?;
            for f in &frames {
                for (spec, r) in evaluator.estimators.iter().zip(evaluator.evaluate(&chain, &f.pop)) {
                    let r = r?;
                    let (var, lo, hi) = match &r.components {
                        Some(c) => {
                            let (lo, hi) = confidence_interval(r.estimate, c, cfg.alpha, Some(&mut q))?;
                            (c.total().to_string(), lo.to_string(), hi.to_string())
                        }
                        None => Default::default(),
                    };
                    let neg = r.negative_weights.map(|n| n.to_string()).unwrap_or_default();
                    writeln!(out, "{},{},{},{var},{lo},{hi},{neg}", f.label, spec, r.estimate).map_err(io_err)?;
                }
            }
            out.flush().map_err(io_err)?;
        }
        Command::Simulate { common, keep_replicates } => {
            let cfg = load(&common)?;
            let opts = RunOptions { keep_replicates: keep_replicates.is_some() };
            let result = run_experiment(&cfg, &opts)?;
            result.write_summary(output(common.out.as_deref())?)?;
            if let Some(path) = keep_replicates {
                result.write_replicates(output(Some(&path))?)?;
            }
        }
        Command::Oracle { n_units, n_i, n_ii, gamma_sq, seed } => {
            let pop = rejsamp::core::population::generate_synthetic(seed, n_units, 1.0, 1.0)?;
            let start = std::time::Instant::now();
            let e = enumerate_two_phase(&pop, n_i, n_ii, gamma_sq)?;
            let err = identity_errors(&pop, &e, Column::X(0), Column::Y)?;
            let pairs: usize = e.outcomes.iter().map(|o| o.n_accepted()).sum();
            println!("phase-I samples: {}, accepted pairs: {pairs}", e.outcomes.len());
            println!("|E(mean) - frame mean|: {:.3e}", err.unbiased_mean);
            println!("max |cov(u,v | A) - (1/n_II - 1/n_I) V_uv,I|: {:.3e}", err.conditional_covariance);
            println!("max |E(V_uv,II | A) - V_uv,I|: {:.3e}", err.conditional_sample_covariance);
            println!("elapsed: {:.3} s", start.elapsed().as_secs_f64());
        }
        Command::Ldist { p, gamma_sq, f_ii_i, f_i_0, r_sq } => {
            println!("gamma_sq,v,acceptance_rate,chisq_0.001_quantile{}", r_sq.iter().map(|r| format!(",varred_r2={r}")).collect::<String>());
            let q001 = chisq_quantile(p, 0.001)?;
            for g in gamma_sq {
                let cells: String = r_sq.iter().map(|&r| format!(",{:.1}", theoretical_varred(f_ii_i, f_i_0, p, g, r))).collect();
                let rate = rejsamp::core::ldist::chisq_cdf(p, g);
                println!("{g},{:.4},{:.4},{q001:.6}{cells}", v_pgamma(p, g), rate);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
