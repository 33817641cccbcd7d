use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use galbnn_core::config::{Preset, RunConfig};
use galbnn_core::eval::Score;
use galbnn_core::pipeline::{
    self, check_provenance, dataset_seed, evaluate_regime, predict, read_json, simulate,
    train_stage, write_json, write_text, EvalInput, Regime, RegimeEvaluation, RunManifest,
};
use galbnn_core::protocol::history_csv;
use galbnn_core::simulator::{Category, Dataset};
use galbnn_core::store::{self, ModelMeta, PredictionFile, PredictionHeader};
use galbnn_core::{report, Error, Result};

/// Thread cap for the parallel parts of the pipeline.
const THREADS_ENV: &str = "GALBNN_THREADS";

#[derive(Parser)]
#[command(
    name = "galbnn",
    version,
    about = "Galaxy ellipticity posteriors with MC-dropout networks"
)]
struct Cli {
    /// TOML run configuration layered over its preset (desk by default).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labelled dataset.
    Simulate {
        #[arg(long)]
        category: Category,
        #[arg(long)]
        n: usize,
        /// Use the evaluation seed stream instead of the training one.
        #[arg(long)]
        eval: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train stage 1 (plain mean) or stage 2 (MVN, from a stage-1 model).
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        regime: Regime,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 model whose trunk stage 2 starts from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Where periodic checkpoints go (every `train.checkpoint_every` epochs).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw MC-dropout predictions and their uncertainty split.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Calibration, ROC and error curves of one regime.
    Evaluate {
        #[arg(long)]
        regime: Regime,
        #[arg(long)]
        isolated: PathBuf,
        #[arg(long)]
        isolated_predictions: PathBuf,
        #[arg(long)]
        blended: PathBuf,
        #[arg(long)]
        blended_predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accept predictions made on a different dataset file.
        #[arg(long)]
        force: bool,
    },
    /// Tables and figures from evaluation files.
    Report {
        #[arg(long = "evaluation", required = true)]
        evaluations: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// The full grid: both regimes, both test sets, report.
    ReproPaper {
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Co-train mean and covariance from scratch over several seeds.
    Probe {
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "corrupt" => 4,
        "version" => 5,
        "hash-mismatch" => 6,
        "contract" => 7,
        "divergence" => 8,
        "domain" | "measurement" => 9,
        "inference" | "numeric" => 10,
        _ => 1,
    }
}

fn log(line: &str) {
    eprintln!("galbnn: {line}");
}

fn load_config(cli: &Cli, preset: Option<Preset>) -> Result<RunConfig> {
    let cfg = match (&cli.config, preset) {
        (Some(path), p) => {
            let cfg = RunConfig::load(path)?;
            if let Some(p) = p.filter(|p| *p != cfg.preset) {
                return Err(Error::Config(format!(
                    "--preset {} conflicts with preset {} of {}",
                    p.name(),
                    cfg.preset.name(),
                    path.display()
                )));
            }
            cfg
        }
        (None, p) => RunConfig::preset(p.unwrap_or(Preset::Desk)),
    };
    match cli.seed {
        Some(seed) => {
            log(&format!("--seed {seed} overrides every configured seed"));
            let cfg = cfg.with_seed(seed);
            cfg.validate()?;
            Ok(cfg)
        }
        None => Ok(cfg),
    }
}

/// `<file>.manifest.json` next to an output file.
fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(
    command: &str,
    cfg: &RunConfig,
    seed: Option<u64>,
    outputs: &[&Path],
    at: &Path,
) -> Result<()> {
    let mut m = RunManifest::new(command, cfg, seed);
    let base = at.parent().unwrap_or(Path::new(""));
    for p in outputs {
        m.add(base, p)?;
    }
    m.write(at)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate {
            category,
            n,
            eval,
            out,
        } => {
            let cfg = load_config(cli, None)?;
            let seed = dataset_seed(&cfg, !eval, *category);
            let d = simulate(&cfg.sim, *category, *n, seed, Some(cfg.content_hash()))?;
            store::write_dataset(out, &d)?;
            log(&format!(
                "wrote {n} {} scenes to {}",
                category.name(),
                out.display()
            ));
            write_manifest("simulate", &cfg, cli.seed, &[out], &manifest_path(out))
        }
        Command::Train {
            stage,
            regime,
            data,
            out,
            init,
            resume,
            checkpoint,
        } => {
            let cfg = load_config(cli, None)?;
            let dataset = store::read_dataset(data)?;
            let init = match (stage, init) {
                (2, Some(p)) if resume.is_none() => Some(store::read_model(p)?.model),
                (2, None) if resume.is_none() => {
                    return Err(Error::Config(
                        "train --stage 2 needs --init <stage-1 model>".into(),
                    ))
                }
                _ => None,
            };
            let resume = resume.as_deref().map(store::read_model).transpose()?;
            let run = train_stage(
                &cfg,
                *regime,
                *stage,
                &dataset,
                init.as_ref(),
                resume,
                checkpoint.clone(),
            )?;
            let history = out.with_extension("csv");
            write_text(&history, &history_csv(&run.history))?;
            if let Some(d) = run.divergence {
                write_manifest("train", &cfg, cli.seed, &[&history], &manifest_path(out))?;
                return Err(d.into());
            }
            let meta = ModelMeta {
                epoch: run.history.len() - 1,
                history: run.history.clone(),
                run_config_hash: Some(cfg.content_hash()),
                manifest_hash: None,
            };
            store::write_model(out, &run.model, Some(&run.optimizer), meta)?;
            if let Some(last) = run.history.last() {
                log(&format!(
                    "stage {stage} finished after epoch {}, validation loss {:.5}",
                    last.epoch, last.val_loss
                ));
            }
            write_manifest(
                "train",
                &cfg,
                cli.seed,
                &[out, &history],
                &manifest_path(out),
            )
        }
        Command::Predict {
            model,
            data,
            out,
            mc_samples,
        } => {
            let cfg = load_config(cli, None)?;
            let k = mc_samples.unwrap_or(cfg.bayes.mc_samples);
            if k < 2 {
                return Err(Error::Contract(format!(
                    "decomposition requires K >= 2 MC samples, got {k}"
                )));
            }
            let file = store::read_model(model)?;
            let dataset = store::read_dataset(data)?;
            let mut net = file.model;
            let records = predict(&mut net, &dataset, k, cfg.bayes.seed, cfg.bayes.batch_size)?;
            let pred = PredictionFile {
                header: PredictionHeader {
                    count: records.len(),
                    mc_samples: k,
                    sigma_floor: net.arch().sigma_floor,
                    dataset_hash: store::file_hash(data)?,
                    model_hash: store::file_hash(model)?,
                    run_config_hash: Some(cfg.content_hash()),
                },
                records,
            };
            store::write_predictions(out, &pred)?;
            log(&format!(
                "wrote {} predictions with K = {k} to {}",
                pred.records.len(),
                out.display()
            ));
            write_manifest("predict", &cfg, cli.seed, &[out], &manifest_path(out))
        }
        Command::Evaluate {
            regime,
            isolated,
            isolated_predictions,
            blended,
            blended_predictions,
            out,
            force,
        } => {
            let cfg = load_config(cli, None)?;
            let load = |data: &Path, preds: &Path| -> Result<_> {
                let d = store::read_dataset(data)?;
                let p = store::read_predictions(preds)?;
                let data_hash = store::file_hash(data)?;
                check_provenance(&p.header, &data_hash, *force)?;
                if p.header.dataset_hash != data_hash {
                    log(&format!(
                        "--force: {} was not predicted from {}",
                        preds.display(),
                        data.display()
                    ));
                }
                Ok((d, p, data_hash, store::file_hash(preds)?))
            };
            let iso = load(isolated, isolated_predictions)?;
            let blend = load(blended, blended_predictions)?;
            let (iso, blend) = (eval_input(&iso), eval_input(&blend));
            let ev = evaluate_regime(*regime, &iso, &blend, &cfg.eval, Some(cfg.content_hash()))?;
            write_json(out, &ev)?;
            print_aucs(&[ev]);
            write_manifest("evaluate", &cfg, cli.seed, &[out], &manifest_path(out))
        }
        Command::Report { evaluations, out } => {
            let cfg = load_config(cli, None)?;
            let evals = evaluations
                .iter()
                .map(|p| read_json::<RegimeEvaluation>(p))
                .collect::<Result<Vec<_>>>()?;
            let paths =
                report::emit_report(out, &evals, cfg.eval.confidence_level, &cfg.content_hash())?;
            let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
            log(&format!(
                "wrote {} report files to {}",
                paths.len(),
                out.display()
            ));
            write_manifest("report", &cfg, cli.seed, &refs, &out.join("manifest.json"))
        }
        Command::ReproPaper { preset, out } => {
            let cfg = load_config(cli, *preset)?;
            log(&format!(
                "repro-paper, preset {}, config {}",
                cfg.preset.name(),
                cfg.content_hash()
            ));
            let outcome = pipeline::repro_paper(&cfg, out, cli.seed, &mut |s| log(s))?;
            print_aucs(&outcome.evaluations);
            Ok(())
        }
        Command::Probe { out } => {
            let cfg = load_config(cli, None)?;
            let outcome = pipeline::probe(&cfg, out, &mut |s| log(s))?;
            println!(
                "probe: {} of {} co-training runs diverged (needed {}): {}",
                outcome.divergences,
                outcome.runs.len(),
                outcome.min_divergences,
                if outcome.pass {
                    "pass"
                } else {
                    "informational"
                }
            );
            let mut paths = vec![out.join("probe.json")];
            paths.extend((0..outcome.runs.len()).map(|i| out.join(format!("probe-seed{i}.csv"))));
            let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
            write_manifest("probe", &cfg, cli.seed, &refs, &out.join("manifest.json"))
        }
    }
}

fn eval_input(x: &(Dataset, PredictionFile, String, String)) -> EvalInput<'_> {
    EvalInput {
        data: &x.0,
        predictions: &x.1,
        data_hash: x.2.clone(),
        predictions_hash: x.3.clone(),
    }
}

fn print_aucs(evals: &[RegimeEvaluation]) {
    print!("{:<22}", "AUC");
    for e in evals {
        print!("{:>12}", e.regime.name());
    }
    println!();
    for s in Score::ALL {
        print!("{:<22}", s.name());
        for e in evals {
            print!("{:>12.4}", e.auc(s).unwrap_or(f64::NAN));
        }
        println!();
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": { "category": e.category(), "message": e.to_string() } });
            eprintln!("{report}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
