use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use replicated_cox::estimation::{cross_validate, evaluation_draws, fit, FitConfig};
use replicated_cox::io::{load_events, load_model, read_grid_csv, save_model, write_events_csv, FitMetadata, RunConfig};
use replicated_cox::process::simulate_replicates;
use replicated_cox::scores::{attach_scores, component_curves, posterior_scores_all, summarize_scores, DEFAULT_CURVE_MULTIPLIER};
use replicated_cox::{Error, Result};

/// Replicated Cox process models: simulate, fit, cross-validate, score.
#[derive(Parser)]
#[command(name = "repcox", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicates from a saved model and write them as event CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to an event file.
    Fit {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit report (JSON); defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// K-fold cross-validation over a smoothing grid.
    Cv {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Grid CSV with `nu1,nu2,p` or `log10_nu1,log10_nu2,p`; overrides the config grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior mean scores of every replicate under a saved model.
    Scores {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Column mapping for CSV input.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baseline, components and ±multiplier·σ curves on a grid.
    ExportCurves {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_CURVE_MULTIPLIER)]
        multiplier: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { model, n, seed, out } => {
            let m = load_model(&model)?;
            let (data, _) = simulate_replicates(&m.theta, &m.space, n, seed)?;
            write_events_csv(&data, create(&out)?)?;
            log::info!("wrote {} replicates with {} events", data.len(), data.total_events());
        }
        Command::Fit {
            events,
            config,
            out,
            report,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let domain = cfg.domain()?;
            let loaded = load_events(&events, &domain, &cfg.columns())?;
            let space = cfg.model_space(&domain)?;
            let mut result = fit(&loaded.dataset, &space, &cfg.fit_config()?)?;
            if result.theta_hat.p() > 0 {
                attach_scores(&mut result, &loaded.dataset, &space)?;
            }
            save_model(&out, &result.theta_hat, &space, Some(FitMetadata::from_fit(&result)))?;
            let report_path = report.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".report.json");
                s.into()
            });
            let ids: Vec<&str> = loaded.dataset.patterns().iter().map(|p| p.replicate_id.as_str()).collect();
            let body = serde_json::json!({
                "objective": result.objective,
                "converged": result.converged,
                "termination": format!("{:?}", result.termination),
                "start": result.start,
                "trace": result.trace,
                "stage_starts": result.stage_starts,
                "replicate_ids": ids,
                "logliks": result.logliks,
                "loglik_std_errors": result.loglik_std_errors,
                "dropped_outside_domain": loaded.dropped_outside_domain,
                "dropped_outside_dates": loaded.dropped_outside_dates,
            });
            let text = serde_json::to_string_pretty(&body).map_err(|e| Error::Usage(e.to_string()))?;
            std::fs::write(&report_path, text + "\n")?;
            if !result.converged {
                log::warn!("optimizer did not converge ({:?})", result.termination);
            }
        }
        Command::Cv {
            events,
            config,
            grid,
            folds,
            out,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let domain = cfg.domain()?;
            let loaded = load_events(&events, &domain, &cfg.columns())?;
            let space = cfg.model_space(&domain)?;
            let points = match grid {
                Some(g) => read_grid_csv(g)?,
                None => cfg
                    .grid()?
                    .ok_or_else(|| Error::Usage("no grid: pass --grid or set grid_* in the config".into()))?,
            };
            let table = cross_validate(
                &loaded.dataset,
                &space,
                &points,
                folds.unwrap_or(cfg.folds()),
                &cfg.fit_config()?,
            )?;
            table.write_csv(create(&out)?)?;
            let best = table.best();
            log::info!("best: nu1={} nu2={} p={}", best.point.nu1, best.point.nu2, best.point.p);
        }
        Command::Scores {
            model,
            events,
            config,
            out,
        } => {
            let m = load_model(&model)?;
            let columns = match config {
                Some(c) => RunConfig::from_path(c)?.columns(),
                None => Default::default(),
            };
            let loaded = load_events(&events, m.space.basis().domain(), &columns)?;
            let mut fc = FitConfig {
                p: m.theta.p(),
                ..Default::default()
            };
            if let Some(meta) = &m.fit {
                fc.eval_draws = meta.eval_draws;
                fc.seed = meta.seed;
            }
            let scores = if m.theta.p() > 0 {
                let s = posterior_scores_all(&loaded.dataset, &m.theta, &m.space, &evaluation_draws(&fc)?)?;
                replicated_cox::nalgebra::DMatrix::from_fn(s.len(), m.theta.p(), |i, k| s[i].mean[k])
            } else {
                replicated_cox::nalgebra::DMatrix::zeros(loaded.dataset.len(), 0)
            };
            let summary = summarize_scores(&loaded.dataset, &scores)?;
            summary.write_csv(create(&out)?)?;
            if let Some(r) = summary.count_correlation {
                log::info!("corr(u_1, m) = {r:.3}");
            }
        }
        Command::ExportCurves {
            model,
            resolution,
            multiplier,
            out,
        } => {
            let m = load_model(&model)?;
            component_curves(&m.theta, m.space.basis(), resolution, multiplier)?.write_csv(create(&out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
