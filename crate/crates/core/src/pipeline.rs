//! The experiment grid end to end: simulate, train both stages for a
//! noiseless and a noisy regime, sample predictions on isolated and blended
//! evaluation sets, evaluate, report.

use std::path::{Path, PathBuf};

use galbnn_nn::derive_seed;
use serde::{Deserialize, Serialize};

use crate::bayes::{decompose, sample_ensembles, UncertaintySplit};
use crate::config::{EvalConfig, RunConfig};
use crate::ellipticity::{ellipticity_error, Ellipticity};
use crate::error::{Error, Result};
use crate::eval::{
    calibration_report, mean_error_curve, median, proportion_grid, resample_targets, roc_auc,
    CalibrationReport, ComponentSummary, ErrorCurve, RocResult, Score,
};
use crate::linalg::Sym2;
use crate::model::{HeadKind, ShapeNet};
use crate::protocol::{
    history_csv, model_seed, stage1_spec, stage2_model, stage2_spec, DataPlan, TrainRun, Trainer,
};
use crate::report;
use crate::simulator::{generate_dataset, Category, Dataset, SimConfig};
use crate::store::{
    self, ModelFile, ModelMeta, PredictionFile, PredictionHeader, PredictionRecord,
};

const TRAIN_ROLE: u64 = 1;
const EVAL_ROLE: u64 = 2;
const PROBE_ROLE: u64 = 3;

/// Training distribution of one of the two models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Noiseless,
    Noisy,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Noiseless, Regime::Noisy];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Noiseless => "noiseless",
            Regime::Noisy => "noisy",
        }
    }

    pub fn train_category(self) -> Category {
        match self {
            Regime::Noiseless => Category::IsolatedClean,
            Regime::Noisy => Category::IsolatedNoisy,
        }
    }

    pub fn isolated_category(self) -> Category {
        self.train_category()
    }

    pub fn blended_category(self) -> Category {
        match self {
            Regime::Noiseless => Category::BlendClean,
            Regime::Noisy => Category::BlendNoisy,
        }
    }

    /// Stage 1 of the noisy model follows the noise ramp.
    pub fn stage1_plan(self, cfg: &RunConfig) -> DataPlan {
        match self {
            Regime::Noiseless => DataPlan::Clean,
            Regime::Noisy => DataPlan::Ramp(cfg.train.ramp),
        }
    }

    /// Stage 2 trains on the final distribution of stage 1.
    pub fn stage2_plan(self) -> DataPlan {
        match self {
            Regime::Noiseless => DataPlan::Clean,
            Regime::Noisy => DataPlan::Noisy,
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noiseless" => Ok(Regime::Noiseless),
            "noisy" => Ok(Regime::Noisy),
            _ => Err(Error::Config(format!(
                "unknown regime '{s}' (expected noiseless or noisy)"
            ))),
        }
    }
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn train_data(&self, regime: Regime) -> PathBuf {
        self.root
            .join("data")
            .join(format!("train-{}.gsds", regime.name()))
    }

    pub fn eval_data(&self, category: Category) -> PathBuf {
        self.root
            .join("data")
            .join(format!("eval-{}.gsds", category.name()))
    }

    pub fn model(&self, regime: Regime, stage: u8) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{}-stage{stage}.gsmd", regime.name()))
    }

    pub fn history(&self, regime: Regime, stage: u8) -> PathBuf {
        self.root
            .join("train")
            .join(format!("{}-stage{stage}.csv", regime.name()))
    }

    pub fn predictions(&self, regime: Regime, blended: bool) -> PathBuf {
        let part = if blended { "blended" } else { "isolated" };
        self.root
            .join("predictions")
            .join(format!("{}-{part}.gspr", regime.name()))
    }

    pub fn evaluation(&self, regime: Regime) -> PathBuf {
        self.root
            .join("evaluations")
            .join(format!("{}.json", regime.name()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

pub fn dataset_seed(cfg: &RunConfig, train: bool, category: Category) -> u64 {
    let role = if train { TRAIN_ROLE } else { EVAL_ROLE };
    derive_seed(cfg.data.seed, &[role, category.code() as u64])
}

pub fn simulate(
    sim: &SimConfig,
    category: Category,
    n: usize,
    seed: u64,
    run_hash: Option<String>,
) -> Result<Dataset> {
    let mut d = generate_dataset(sim, category, n, seed)?;
    d.header.run_config_hash = run_hash;
    Ok(d)
}

/// Base MC seed of record `index` of a dataset.
pub fn record_seed(bayes_seed: u64, dataset_seed: u64, index: usize) -> u64 {
    derive_seed(bayes_seed, &[dataset_seed, index as u64])
}

/// MC-dropout predictions for every record, in record order.
pub fn predict(
    model: &mut ShapeNet<f32>,
    data: &Dataset,
    mc_samples: usize,
    seed: u64,
    batch: usize,
) -> Result<Vec<PredictionRecord>> {
    if mc_samples < 2 {
        return Err(Error::Contract(format!(
            "decomposition requires K >= 2 MC samples, got {mc_samples}"
        )));
    }
    let mut out = Vec::with_capacity(data.records.len());
    let indices: Vec<usize> = (0..data.records.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let stamps: Vec<&[f32]> = chunk.iter().map(|&i| data.records[i].observed()).collect();
        let seeds: Vec<u64> = chunk
            .iter()
            .map(|&i| record_seed(seed, data.header.base_seed, i))
            .collect();
        let ensembles =
            sample_ensembles(model, &stamps, mc_samples, &seeds).map_err(|e| match e {
                Error::Inference { sample, reason } => Error::Inference {
                    sample,
                    reason: format!("records {}..: {reason}", chunk[0]),
                },
                other => other,
            })?;
        for ((&i, base_seed), ens) in chunk.iter().zip(seeds).zip(ensembles) {
            let split = decompose(&ens)?;
            let raw = ens
                .samples
                .iter()
                .map(|s| s.raw.map(|v| v as f32))
                .collect();
            out.push(PredictionRecord {
                index: i as u64,
                base_seed,
                seeds: ens.seeds,
                raw,
                split,
            });
        }
    }
    Ok(out)
}

/// Refuses predictions made on a different dataset file unless forced.
pub fn check_provenance(header: &PredictionHeader, dataset_hash: &str, force: bool) -> Result<()> {
    if header.dataset_hash != dataset_hash && !force {
        return Err(Error::HashMismatch(format!(
            "predictions were made on dataset {} but the given dataset hashes to {dataset_hash}",
            header.dataset_hash
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRoc {
    pub score: Score,
    pub roc: RocResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub truth: [f64; 2],
    pub mu_bar: [f64; 2],
    pub sigma_aleat: Sym2,
    pub sigma_epist: Sym2,
    pub sigma_pred: Sym2,
    pub is_blend: bool,
}

/// Every analysis of one regime's mixed isolated + blended evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeEvaluation {
    pub regime: Regime,
    pub config_hash: Option<String>,
    pub n_isolated: usize,
    pub n_blended: usize,
    /// Calibration on the isolated part.
    pub calibration: CalibrationReport,
    /// The same statistics for targets resampled from the predicted MVNs.
    pub self_consistency: [ComponentSummary; 2],
    pub rocs: Vec<ScoreRoc>,
    pub curve_split: f64,
    pub curves: Vec<ErrorCurve>,
    pub mean_error_isolated: f64,
    pub mean_error_blended: f64,
    pub median_u_epist_isolated: f64,
    pub median_u_epist_blended: f64,
    pub scatter: Vec<ScatterPoint>,
    pub isolated_dataset_hash: String,
    pub blended_dataset_hash: String,
    pub isolated_predictions_hash: String,
    pub blended_predictions_hash: String,
}

impl RegimeEvaluation {
    pub fn auc(&self, score: Score) -> Option<f64> {
        self.rocs
            .iter()
            .find(|r| r.score == score)
            .map(|r| r.roc.auc)
    }

    pub fn curve(&self, sorted_by: &str) -> Option<&ErrorCurve> {
        self.curves.iter().find(|c| c.sorted_by == sorted_by)
    }
}

/// A dataset with its predictions and both files' hashes.
pub struct EvalInput<'a> {
    pub data: &'a Dataset,
    pub predictions: &'a PredictionFile,
    pub data_hash: String,
    pub predictions_hash: String,
}

fn aligned(input: &EvalInput<'_>) -> Result<()> {
    let n = input.data.records.len();
    if input.predictions.records.len() != n
        || input
            .predictions
            .records
            .iter()
            .enumerate()
            .any(|(i, r)| r.index != i as u64)
    {
        return Err(Error::Contract(format!(
            "prediction file does not cover the {n} dataset records in order"
        )));
    }
    Ok(())
}

pub fn evaluate_regime(
    regime: Regime,
    isolated: &EvalInput<'_>,
    blended: &EvalInput<'_>,
    cfg: &EvalConfig,
    config_hash: Option<String>,
) -> Result<RegimeEvaluation> {
    aligned(isolated)?;
    aligned(blended)?;
    let splits: Vec<&UncertaintySplit> = isolated
        .predictions
        .records
        .iter()
        .chain(&blended.predictions.records)
        .map(|r| &r.split)
        .collect();
    let records: Vec<_> = isolated
        .data
        .records
        .iter()
        .chain(&blended.data.records)
        .collect();
    let labels: Vec<bool> = records.iter().map(|r| r.is_blend()).collect();
    let targets: Vec<[f64; 2]> = records.iter().map(|r| r.label().as_array()).collect();
    let errors: Vec<f64> = splits
        .iter()
        .zip(&records)
        .map(|(s, r)| ellipticity_error(Ellipticity::new(s.mu_bar[0], s.mu_bar[1]), r.label()))
        .collect();
    let n_iso = isolated.data.records.len();

    let iso_splits: Vec<UncertaintySplit> = splits[..n_iso].iter().map(|s| **s).collect();
    let calibration = calibration_report(&iso_splits, &targets[..n_iso], cfg.histogram_bins)?;
    let resampled = resample_targets(&iso_splits, derive_seed(cfg.seed, &[regime as u64]));
    let sc = calibration_report(&iso_splits, &resampled, cfg.histogram_bins)?;

    let mut rocs = Vec::new();
    let mut curves = Vec::new();
    let grid = proportion_grid(cfg.grid_step)?;
    for score in Score::ALL {
        let values: Vec<f64> = splits.iter().map(|s| score.of(s)).collect();
        rocs.push(ScoreRoc {
            score,
            roc: roc_auc(&values, &labels)?,
        });
        curves.push(mean_error_curve(
            &errors,
            Some((score.name(), &values)),
            &grid,
        )?);
    }
    curves.push(mean_error_curve(&errors, None, &grid)?);

    let u_epist: Vec<f64> = splits.iter().map(|s| s.u_epist).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let half = cfg.scatter_points / 2;
    let scatter = (0..n_iso.min(half))
        .chain(n_iso..(n_iso + (records.len() - n_iso).min(cfg.scatter_points - half.min(n_iso))))
        .map(|i| ScatterPoint {
            truth: targets[i],
            mu_bar: splits[i].mu_bar,
            sigma_aleat: splits[i].sigma_aleat,
            sigma_epist: splits[i].sigma_epist,
            sigma_pred: splits[i].sigma_pred,
            is_blend: labels[i],
        })
        .collect();
    Ok(RegimeEvaluation {
        regime,
        config_hash,
        n_isolated: n_iso,
        n_blended: records.len() - n_iso,
        self_consistency: sc.components,
        calibration,
        rocs,
        curve_split: cfg.curve_split,
        curves,
        mean_error_isolated: mean(&errors[..n_iso]),
        mean_error_blended: mean(&errors[n_iso..]),
        median_u_epist_isolated: median(&u_epist[..n_iso]).unwrap_or(f64::NAN),
        median_u_epist_blended: median(&u_epist[n_iso..]).unwrap_or(f64::NAN),
        scatter,
        isolated_dataset_hash: isolated.data_hash.clone(),
        blended_dataset_hash: blended.data_hash.clone(),
        isolated_predictions_hash: isolated.predictions_hash.clone(),
        blended_predictions_hash: blended.predictions_hash.clone(),
    })
}

/// Trains one stage of one regime. Stage 2 starts from `init`, the stage-1
/// model; `resume` continues a checkpoint instead of starting afresh.
pub fn train_stage(
    cfg: &RunConfig,
    regime: Regime,
    stage: u8,
    data: &Dataset,
    init: Option<&ShapeNet<f32>>,
    resume: Option<ModelFile>,
    checkpoint: Option<PathBuf>,
) -> Result<TrainRun> {
    let t = &cfg.train;
    let (spec, model) = match stage {
        1 => (stage1_spec(t, regime.stage1_plan(cfg)), None),
        2 => (stage2_spec(t, regime.stage2_plan()), init),
        _ => return Err(Error::Config(format!("stage must be 1 or 2, got {stage}"))),
    };
    let trainer = match resume {
        Some(file) => {
            let expected = if stage == 1 {
                HeadKind::PlainL2
            } else {
                HeadKind::MvnNll
            };
            if file.header.head != expected {
                return Err(Error::Contract(format!(
                    "checkpoint head {:?} does not belong to stage {stage}",
                    file.header.head
                )));
            }
            Trainer::resume(file, spec, t, data)?
        }
        None => {
            let model = match (stage, model) {
                (1, _) => ShapeNet::new(&cfg.arch, HeadKind::PlainL2, model_seed(t, 1))?,
                (_, Some(s1)) => stage2_model(s1, t)?,
                (_, None) => return Err(Error::Contract("stage 2 needs the stage-1 model".into())),
            };
            if model.arch() != &cfg.arch {
                return Err(Error::Contract(
                    "stage-1 model architecture differs from the configuration".into(),
                ));
            }
            Trainer::new(model, spec, t, data)?
        }
    };
    let trainer = match checkpoint {
        Some(p) => trainer.with_checkpoints(p, Some(cfg.content_hash())),
        None => trainer,
    };
    trainer.run()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed_override: Option<u64>,
    pub config: RunConfig,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, seed_override: Option<u64>) -> Self {
        Self {
            tool: "galbnn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: cfg.content_hash(),
            seed_override,
            config: cfg.clone(),
            files: Vec::new(),
        }
    }

    /// Records `path`, stored relative to `base` when it lies below it.
    pub fn add(&mut self, base: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(base).unwrap_or(path);
        self.files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: store::file_hash(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Contract(e.to_string()))?;
        store::write_atomic(path, json.as_bytes())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(e.to_string()))?;
    store::write_atomic(path, json.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: path.into(),
        offset: 0,
        reason: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    store::write_atomic(path, text.as_bytes())
}

pub struct ReproOutcome {
    pub evaluations: Vec<RegimeEvaluation>,
    pub histories: Vec<(Regime, u8, TrainRun)>,
    pub manifest: RunManifest,
}

/// Runs the whole grid into `root`; `log` receives one line per step.
pub fn repro_paper(
    cfg: &RunConfig,
    root: &Path,
    seed_override: Option<u64>,
    log: &mut dyn FnMut(&str),
) -> Result<ReproOutcome> {
    cfg.validate()?;
    let layout = Layout::new(root);
    let hash = cfg.content_hash();
    let mut manifest = RunManifest::new("repro-paper", cfg, seed_override);
    write_text(&layout.config(), &cfg.to_toml())?;
    manifest.add(root, &layout.config())?;

    let sim = &cfg.sim;
    let save_data = |path: PathBuf, d: &Dataset, manifest: &mut RunManifest| -> Result<String> {
        store::write_dataset(&path, d)?;
        manifest.add(root, &path)?;
        store::file_hash(&path)
    };

    let mut evaluations = Vec::new();
    let mut histories = Vec::new();
    for regime in Regime::ALL {
        let cat = regime.train_category();
        log(&format!(
            "{}: simulating {} training scenes",
            regime.name(),
            cfg.data.train_count
        ));
        let train = simulate(
            sim,
            cat,
            cfg.data.train_count,
            dataset_seed(cfg, true, cat),
            Some(hash.clone()),
        )?;
        save_data(layout.train_data(regime), &train, &mut manifest)?;

        let mut stage1 = None;
        for stage in [1u8, 2] {
            log(&format!("{}: training stage {stage}", regime.name()));
            let run = train_stage(cfg, regime, stage, &train, stage1.as_ref(), None, None)?;
            write_text(&layout.history(regime, stage), &history_csv(&run.history))?;
            manifest.add(root, &layout.history(regime, stage))?;
            if let Some(d) = &run.divergence {
                manifest.write(&layout.manifest())?;
                return Err(d.clone().into());
            }
            let meta = ModelMeta {
                epoch: run.history.len() - 1,
                history: run.history.clone(),
                run_config_hash: Some(hash.clone()),
                manifest_hash: None,
            };
            store::write_model(&layout.model(regime, stage), &run.model, None, meta)?;
            manifest.add(root, &layout.model(regime, stage))?;
            if let Some(last) = run.history.last() {
                log(&format!(
                    "{}: stage {stage} done, validation loss {:.4}",
                    regime.name(),
                    last.val_loss
                ));
            }
            if stage == 1 {
                stage1 = Some(run.model.clone());
            }
            histories.push((regime, stage, run));
        }
        let mut model = histories
            .last()
            .map(|(_, _, r)| r.model.clone())
            .expect("stage 2 ran");
        let model_hash = store::file_hash(&layout.model(regime, 2))?;

        let mut inputs = Vec::new();
        for (blended, cat, n) in [
            (false, regime.isolated_category(), cfg.data.eval_isolated),
            (true, regime.blended_category(), cfg.data.eval_blended),
        ] {
            log(&format!(
                "{}: simulating and predicting {n} {} scenes",
                regime.name(),
                cat.name()
            ));
            let data = simulate(
                sim,
                cat,
                n,
                dataset_seed(cfg, false, cat),
                Some(hash.clone()),
            )?;
            let data_hash = save_data(layout.eval_data(cat), &data, &mut manifest)?;
            let records = predict(
                &mut model,
                &data,
                cfg.bayes.mc_samples,
                cfg.bayes.seed,
                cfg.bayes.batch_size,
            )?;
            let pred = PredictionFile {
                header: PredictionHeader {
                    count: records.len(),
                    mc_samples: cfg.bayes.mc_samples,
                    sigma_floor: cfg.arch.sigma_floor,
                    dataset_hash: data_hash.clone(),
                    model_hash: model_hash.clone(),
                    run_config_hash: Some(hash.clone()),
                },
                records,
            };
            let path = layout.predictions(regime, blended);
            store::write_predictions(&path, &pred)?;
            manifest.add(root, &path)?;
            let predictions_hash = store::file_hash(&path)?;
            inputs.push((data, pred, data_hash, predictions_hash));
        }
        let input = |i: usize| EvalInput {
            data: &inputs[i].0,
            predictions: &inputs[i].1,
            data_hash: inputs[i].2.clone(),
            predictions_hash: inputs[i].3.clone(),
        };
        let ev = evaluate_regime(regime, &input(0), &input(1), &cfg.eval, Some(hash.clone()))?;
        write_json(&layout.evaluation(regime), &ev)?;
        manifest.add(root, &layout.evaluation(regime))?;
        log(&format!(
            "{}: AUC epistemic {:.3}, aleatoric {:.3}, predictive {:.3}",
            regime.name(),
            ev.auc(Score::Epistemic).unwrap_or(f64::NAN),
            ev.auc(Score::Aleatoric).unwrap_or(f64::NAN),
            ev.auc(Score::Predictive).unwrap_or(f64::NAN)
        ));
        evaluations.push(ev);
    }
    log("writing report");
    for path in report::emit_report(
        &layout.report(),
        &evaluations,
        cfg.eval.confidence_level,
        &hash,
    )? {
        manifest.add(root, &path)?;
    }
    manifest.write(&layout.manifest())?;
    Ok(ReproOutcome {
        evaluations,
        histories,
        manifest,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub seed: u64,
    pub diverged: bool,
    pub divergence_epoch: Option<usize>,
    pub reason: Option<String>,
    pub epochs_run: usize,
    /// Validation loss of the last epoch, absent when it is not finite.
    pub final_val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub config_hash: String,
    pub runs: Vec<ProbeRun>,
    pub divergences: usize,
    pub min_divergences: usize,
    /// Whether enough runs diverged; informational either way.
    pub pass: bool,
}

/// Co-trains mean and covariance from scratch on noisy isolated data once
/// per probe seed and counts the runs the divergence detector stops.
pub fn probe(cfg: &RunConfig, root: &Path, log: &mut dyn FnMut(&str)) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let p = &cfg.probe;
    let cat = Category::IsolatedNoisy;
    let data_seed = derive_seed(cfg.data.seed, &[PROBE_ROLE, cat.code() as u64]);
    let hash = cfg.content_hash();
    let data = simulate(&cfg.sim, cat, p.train_count, data_seed, Some(hash.clone()))?;
    let mut runs = Vec::new();
    for i in 0..p.seeds {
        let seed = derive_seed(cfg.train.seed, &[PROBE_ROLE, i as u64]);
        let train = crate::protocol::TrainConfig {
            stage2_epochs: p.epochs,
            seed,
            ..cfg.train
        };
        let run = crate::protocol::co_train(&data, &cfg.arch, &train, DataPlan::Noisy)?;
        write_text(
            &root.join(format!("probe-seed{i}.csv")),
            &history_csv(&run.history),
        )?;
        let last = run.history.last().map_or(f64::NAN, |m| m.val_loss);
        log(&format!(
            "probe seed {i}: {}",
            match &run.divergence {
                Some(d) => format!("diverged at epoch {} ({})", d.epoch, d.reason),
                None => format!("converged, validation loss {last:.4}"),
            }
        ));
        runs.push(ProbeRun {
            seed,
            diverged: run.divergence.is_some(),
            divergence_epoch: run.divergence.as_ref().map(|d| d.epoch),
            reason: run.divergence.map(|d| d.reason),
            epochs_run: run.history.len() - 1,
            final_val_loss: last.is_finite().then_some(last),
        });
    }
    let divergences = runs.iter().filter(|r| r.diverged).count();
    let outcome = ProbeOutcome {
        config_hash: hash,
        runs,
        divergences,
        min_divergences: p.min_divergences,
        pass: divergences >= p.min_divergences,
    };
    write_json(&root.join("probe.json"), &outcome)?;
    Ok(outcome)
}
