use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hrv_bold::rng::derive_seed;
use hrv_bold::simulator::DefectKind;
use hrv_bold_cli::error::EXIT_VALIDATION;
use hrv_bold_cli::manifest::{KEPT_MANIFEST_FILE, MANIFEST_FILE};
use hrv_bold_cli::report::{COMPARE_DIR, CV_DIR};
use hrv_bold_cli::{compare, qc, report, simulate, train_cv, windows, CliError, ExperimentConfig, Result, RunRecord};

#[derive(Parser)]
#[command(name = "hrv-bold", version, about = "Reconstruct HRV from BOLD ROI time series")]
struct Cli {
    /// Experiment configuration (JSON); omitted fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scans into <out>/scans and write <out>/manifest.csv.
    Simulate {
        #[arg(long)]
        n_scans: Option<usize>,
        /// Defect proportions, e.g. `None=0.5,Clipping=0.5`.
        #[arg(long, value_parser = parse_mix)]
        mix: Option<Mix>,
    },
    /// Classify PPG quality and write the kept manifest.
    Qc {
        /// Defaults to <data root>/manifest.csv.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Report per-scan window counts.
    Windows {
        /// Defaults to <data root>/manifest_kept.csv.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write a binary window cache.
        #[arg(long)]
        cache: bool,
    },
    /// k-fold cross-validation into <out>/cv.
    TrainCv {
        /// Defaults to <data root>/manifest_kept.csv.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Cross-validation per ROI configuration into <out>/compare.
    CompareRois {
        /// Defaults to <data root>/manifest_kept.csv.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Render SVG plots and a markdown summary from earlier outputs.
    Report {
        /// Defaults to the output root.
        #[arg(long)]
        root: Option<PathBuf>,
    },
}

#[derive(Clone)]
struct Mix(Vec<(DefectKind, f64)>);

fn parse_mix(s: &str) -> std::result::Result<Mix, String> {
    s.split(',')
        .map(|pair| {
            let (k, p) = pair.split_once('=').ok_or_else(|| format!("expected KIND=P, got {pair:?}"))?;
            let kind = k.trim().parse::<DefectKind>().map_err(|e| e.to_string())?;
            let p = p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))?;
            Ok((kind, p))
        })
        .collect::<std::result::Result<_, String>>()
        .map(Mix)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_root = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    }
    let out = cfg.output_root.clone();
    let data = cfg.data_root().to_path_buf();
    let kept = |m: Option<PathBuf>| m.unwrap_or_else(|| data.join(KEPT_MANIFEST_FILE));
    let mut record = RunRecord::new("", &cfg, cli.jobs);
    match cli.command {
        Command::Simulate { n_scans, mix } => {
            if let Some(n) = n_scans {
                cfg.simulate.n_scans = n;
            }
            if let Some(mix) = mix {
                cfg.simulate.defect_mix = mix.0.into_iter().collect();
            }
            record = RunRecord::new("simulate", &cfg, cli.jobs);
            record.derived_seeds.insert("defect_order".into(), derive_seed(cfg.seed, "defects", 0));
            let s = simulate::cmd_simulate(&cfg, &out)?;
            println!("simulated {} scans; manifest {}", s.rows.len(), s.manifest.display());
            record.write(&out)?;
        }
        Command::Qc { manifest } => {
            record.command = "qc".into();
            let manifest = manifest.unwrap_or_else(|| data.join(MANIFEST_FILE));
            let r = qc::cmd_qc(&manifest, &cfg.qc, &out)?;
            println!("{}", r.summary.line());
            if let Some(acc) = r.summary.label_accuracy {
                println!("agreement with defect labels: {:.1}% of {}", acc * 100.0, r.summary.n_labelled);
            }
            record.write(&out)?;
        }
        Command::Windows { manifest, cache } => {
            record.command = "windows".into();
            let rows = windows::cmd_windows(&kept(manifest), &cfg.window, cfg.hrv_window_s, &out, cache)?;
            let total: usize = rows.iter().map(|r| r.n_windows).sum();
            println!("{total} windows over {} scans", rows.len());
            record.write(&out)?;
        }
        Command::TrainCv { manifest, k } => {
            if let Some(k) = k {
                cfg.k = k;
            }
            record = RunRecord::new("train-cv", &cfg, cli.jobs);
            record.derived_seeds.insert("folds".into(), derive_seed(cfg.seed, "folds", 0));
            let dir = out.join(CV_DIR);
            let r = train_cv::cmd_train_cv(&cfg, &kept(manifest), &dir)?;
            if let Some(m) = &r.mean_across_scans {
                println!(
                    "mean over {} scans: r {} MAE {:.5} MSE {:.3e} DTW {:.4}",
                    m.n_scans,
                    m.pearson_r.map_or("undefined".to_string(), |r| format!("{r:.4}")),
                    m.mae,
                    m.mse,
                    m.dtw
                );
            }
            record.write(&dir)?;
        }
        Command::CompareRois { manifest } => {
            record.command = "compare-rois".into();
            let dir = out.join(COMPARE_DIR);
            let r = compare::cmd_compare_rois(&cfg, &kept(manifest), &dir)?;
            println!("{}", r.output.note);
            for l in &r.output.comparison.labels {
                println!("{l}: mean r {:.4}", r.output.comparison.summary[l][&hrv_bold::metrics::Metric::PearsonR].mean);
            }
            if let Some(w) = &r.output.wm_effect {
                let p = w.test.as_ref().map_or("n/a".to_string(), |t| format!("{:.4}", t.p_value));
                println!("with vs without white matter: {:.4} vs {:.4}, Wilcoxon p {p}", w.mean_r_with_wm, w.mean_r_without_wm);
            }
            record.write(&dir)?;
        }
        Command::Report { root } => {
            let root = root.unwrap_or(out);
            for r in report::cmd_report(&root)? {
                println!("wrote {} files to {}", r.files.len(), r.dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
