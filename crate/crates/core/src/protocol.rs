//! Two-stage training: a plain squared-error network trained under an
//! incremental noise schedule, then trunk transfer and MVN likelihood
//! training.

use std::path::PathBuf;

use galbnn_nn::{derive_seed, Adam, AdamHyper, Mode, NnError, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    batch_loss, head_to_mvn, transfer_trunk, ArchitectureConfig, HeadKind, ShapeNet,
};
use crate::simulator::{Dataset, DatasetRecord};
use crate::store::{self, ModelFile, ModelMeta};

const VALIDATION_STREAM: u64 = 0x7661_6c;
const PERMUTATION_STREAM: u64 = 0x7065_726d;
const MODEL_STREAM: u64 = 0x6d6f_64;
const VAL_BATCH: usize = 256;

/// Step schedule of the fraction of training records served noisy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRamp {
    pub step_fraction: f64,
    pub step_epochs: usize,
    pub total_epochs: usize,
}

impl NoiseRamp {
    /// 5% more of the sample every 50 epochs over 1000 epochs.
    pub fn reference() -> Self {
        Self {
            step_fraction: 0.05,
            step_epochs: 50,
            total_epochs: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_epochs == 0 || !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::Config(
                "train.ramp: need step_epochs >= 1 and step_fraction in (0, 1]".into(),
            ));
        }
        let steps = (self.total_epochs / self.step_epochs) as f64;
        if self.step_fraction * steps > 1.0 + 1e-12 {
            return Err(Error::Config(
                "train.ramp: step_fraction · (total / step) exceeds 1".into(),
            ));
        }
        Ok(())
    }
}

/// `step_fraction · ⌊epoch / step_epochs⌋`, frozen after `total_epochs` and
/// clamped to `[0, 1]`.
pub fn noisy_fraction(epoch: usize, ramp: &NoiseRamp) -> f64 {
    let steps = epoch.min(ramp.total_epochs) / ramp.step_epochs.max(1);
    (ramp.step_fraction * steps as f64).clamp(0.0, 1.0)
}

/// Which variant of each record a stage trains on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataPlan {
    Clean,
    Noisy,
    /// Clean records switch to noisy following the ramp.
    Ramp(NoiseRamp),
}

impl DataPlan {
    /// Variant used for validation: the distribution the stage ends on.
    fn validation_noisy(&self) -> bool {
        !matches!(self, DataPlan::Clean)
    }
}

/// Per-record clean/noisy assignment: the noisy records of an epoch are a
/// prefix of one seeded permutation, so a record switches at most once.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub ramp: NoiseRamp,
    /// Rank of each record in the switching order.
    rank: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(ramp: NoiseRamp, n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[PERMUTATION_STREAM],
        )));
        let mut rank = vec![0; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        Self { ramp, rank }
    }

    pub fn noisy_count(&self, epoch: usize) -> usize {
        (noisy_fraction(epoch, &self.ramp) * self.rank.len() as f64).round() as usize
    }

    pub fn is_noisy(&self, record: usize, epoch: usize) -> bool {
        self.rank[record] < self.noisy_count(epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ramp: NoiseRamp,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Validation loss growth that counts as divergence.
    pub divergence_factor: f64,
    pub divergence_reference_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 1000,
            stage2_epochs: 200,
            batch_size: 64,
            stage1_lr: 1e-3,
            stage2_lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ramp: NoiseRamp::reference(),
            seed: 1,
            validation_fraction: 0.1,
            checkpoint_every: 0,
            divergence_factor: 10.0,
            divergence_reference_epoch: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ramp.validate()?;
        let fail = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.stage1_lr > 0.0 && self.stage2_lr > 0.0) {
            return fail("learning rates must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return fail("need beta1, beta2 in [0, 1) and eps > 0");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must be in (0, 1)");
        }
        if !(self.divergence_factor > 1.0) || self.divergence_reference_epoch == 0 {
            return fail("need divergence_factor > 1 and divergence_reference_epoch >= 1");
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Whether a record belongs to the validation split; decided by its scene
/// seed so clean and noisy variants of a scene never straddle the split.
pub fn is_validation(record: &DatasetRecord, fraction: f64) -> bool {
    let h = derive_seed(record.scene.seed, &[VALIDATION_STREAM]);
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss of the epoch; absent for the pre-training row.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub noisy_fraction: f64,
    /// RMS of the standardised validation residuals (MVN head only).
    pub val_rms_z: Option<f64>,
    /// Mean determinant of the predicted covariance on validation data.
    pub val_mean_det: Option<f64>,
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,val_loss,noisy_fraction,val_rms_z,val_mean_det\n");
    for m in history {
        s.push_str(&format!(
            "{},{},{:.9e},{:.4},{},{}\n",
            m.epoch,
            opt(m.train_loss),
            m.val_loss,
            m.noisy_fraction,
            opt(m.val_rms_z),
            opt(m.val_mean_det)
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub reason: String,
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Self {
        Error::Divergence {
            epoch: d.epoch,
            reason: d.reason,
        }
    }
}

/// Divergence rule applied after every epoch: a non-finite loss, or, after
/// the reference epoch, a validation loss above `L_ref + (factor − 1)·|L_ref|`
/// (for positive losses simply `factor · L_ref`).
pub fn detect_divergence(
    history: &[EpochMetrics],
    m: &EpochMetrics,
    cfg: &TrainConfig,
) -> Option<Divergence> {
    let epoch = m.epoch;
    if !m.val_loss.is_finite() || m.train_loss.is_some_and(|l| !l.is_finite()) {
        return Some(Divergence {
            epoch,
            reason: "non-finite loss".into(),
        });
    }
    let r = cfg.divergence_reference_epoch;
    let reference = history.iter().find(|h| h.epoch == r)?.val_loss;
    let limit = reference + (cfg.divergence_factor - 1.0) * reference.abs();
    (epoch > r && m.val_loss > limit).then(|| Divergence {
        epoch,
        reason: format!(
            "validation loss {:.4e} exceeds {}x its epoch-{r} value {:.4e}",
            m.val_loss, cfg.divergence_factor, reference
        ),
    })
}

/// What one training stage does.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSpec {
    pub stage: u8,
    pub epochs: usize,
    pub lr: f64,
    pub plan: DataPlan,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: ShapeNet<f32>,
    pub optimizer: Adam<f32>,
    pub history: Vec<EpochMetrics>,
    pub divergence: Option<Divergence>,
}

/// Resumable training loop over one stage. All randomness is derived from
/// `(seed, stage, epoch, batch)`, so the loop carries no RNG state.
pub struct Trainer<'d> {
    pub model: ShapeNet<f32>,
    pub optimizer: Adam<f32>,
    pub history: Vec<EpochMetrics>,
    spec: StageSpec,
    cfg: TrainConfig,
    data: &'d Dataset,
    train: Vec<usize>,
    val: Vec<usize>,
    schedule: Option<NoiseSchedule>,
    checkpoint: Option<PathBuf>,
    run_config_hash: Option<String>,
}

impl<'d> Trainer<'d> {
    pub fn new(
        model: ShapeNet<f32>,
        spec: StageSpec,
        cfg: &TrainConfig,
        data: &'d Dataset,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.records.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        if data.header.height != model.arch().stamp_size
            || data.header.width != model.arch().stamp_size
        {
            return Err(Error::Contract(format!(
                "dataset stamps are {}×{}, model expects {}",
                data.header.height,
                data.header.width,
                model.arch().stamp_size
            )));
        }
        if spec.plan != DataPlan::Clean && data.records.iter().any(|r| r.noisy.is_none()) {
            return Err(Error::Contract(
                "noisy training requires records with noisy variants".into(),
            ));
        }
        let (val, train): (Vec<usize>, Vec<usize>) = (0..data.records.len())
            .partition(|&i| is_validation(&data.records[i], cfg.validation_fraction));
        if train.is_empty() || val.is_empty() {
            return Err(Error::Contract(format!(
                "split of {} records leaves {} train / {} validation",
                data.records.len(),
                train.len(),
                val.len()
            )));
        }
        let schedule = match spec.plan {
            DataPlan::Ramp(r) => Some(NoiseSchedule::new(
                r,
                train.len(),
                derive_seed(cfg.seed, &[spec.stage as u64]),
            )),
            _ => None,
        };
        let mut t = Self {
            model,
            optimizer: Adam::new(cfg.adam(spec.lr)),
            history: Vec::new(),
            spec,
            cfg: *cfg,
            data,
            train,
            val,
            schedule,
            checkpoint: None,
            run_config_hash: None,
        };
        let initial = t.validate_epoch(0)?;
        t.history.push(initial);
        Ok(t)
    }

    /// Continues from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(
        file: ModelFile,
        spec: StageSpec,
        cfg: &TrainConfig,
        data: &'d Dataset,
    ) -> Result<Self> {
        let epoch = file.header.epoch;
        let history = file.header.history;
        if history.len() != epoch + 1 {
            return Err(Error::Contract(format!(
                "checkpoint at epoch {epoch} with {} history rows",
                history.len()
            )));
        }
        let mut t = Self::new(file.model, spec, cfg, data)?;
        t.run_config_hash = file.header.run_config_hash;
        t.optimizer = file
            .optimizer
            .ok_or_else(|| Error::Contract("checkpoint lacks optimizer state".into()))?;
        t.history = history;
        Ok(t)
    }

    pub fn with_checkpoints(mut self, path: PathBuf, run_config_hash: Option<String>) -> Self {
        self.checkpoint = Some(path);
        self.run_config_hash = run_config_hash;
        self
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.history.len() - 1
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let meta = ModelMeta {
            epoch: self.epoch(),
            history: self.history.clone(),
            run_config_hash: self.run_config_hash.clone(),
            manifest_hash: None,
        };
        store::write_model(path, &self.model, Some(&self.optimizer), meta)
    }

    fn pixels(&self, record: usize, noisy: bool) -> &'d [f32] {
        let r = &self.data.records[record];
        match (&r.noisy, noisy) {
            (Some(n), true) => n,
            _ => &r.clean,
        }
    }

    fn target(&self, record: usize) -> [f64; 2] {
        self.data.records[record].label().as_array()
    }

    fn loss_floor(&self) -> f64 {
        self.model.arch().sigma_floor
    }

    fn validate_epoch(&mut self, epoch: usize) -> Result<EpochMetrics> {
        let noisy = self.spec.plan.validation_noisy();
        let head = self.model.head();
        let floor = self.loss_floor();
        let (mut loss, mut z2, mut det) = (0.0, 0.0, 0.0);
        let val = self.val.clone();
        for chunk in val.chunks(VAL_BATCH) {
            let stamps: Vec<&[f32]> = chunk.iter().map(|&i| self.pixels(i, noisy)).collect();
            let targets: Vec<[f64; 2]> = chunk.iter().map(|&i| self.target(i)).collect();
            let x = self.model.input_batch(&stamps)?;
            let out = match self.model.forward(x, &Mode::Eval) {
                Ok(o) => o,
                Err(Error::Nn(NnError::NonFinite { .. })) => {
                    loss = f64::NAN;
                    break;
                }
                Err(e) => return Err(e),
            };
            let (l, _) = batch_loss(head, &out, &targets, floor)?;
            loss += l * chunk.len() as f64;
            if head == HeadKind::MvnNll {
                for (row, t) in out.data().chunks_exact(5).zip(&targets) {
                    let p = head_to_mvn(std::array::from_fn(|i| row[i].as_f64()), floor)?;
                    let r = [t[0] - p.mu[0], t[1] - p.mu[1]];
                    let z = p
                        .cov
                        .inv_sqrt(0.0)
                        .map(|w| w.apply(r))
                        .unwrap_or([f64::NAN; 2]);
                    z2 += z[0] * z[0] + z[1] * z[1];
                    det += p.cov.det();
                }
            }
        }
        let n = self.val.len() as f64;
        let mvn = head == HeadKind::MvnNll;
        Ok(EpochMetrics {
            epoch,
            train_loss: None,
            val_loss: loss / n,
            noisy_fraction: self.fraction(epoch.saturating_sub(1)),
            val_rms_z: mvn.then(|| (z2 / (2.0 * n)).sqrt()),
            val_mean_det: mvn.then(|| det / n),
        })
    }

    fn fraction(&self, epoch_index: usize) -> f64 {
        match self.spec.plan {
            DataPlan::Clean => 0.0,
            DataPlan::Noisy => 1.0,
            DataPlan::Ramp(r) => noisy_fraction(epoch_index, &r),
        }
    }

    /// Trains one epoch; returns the divergence, if detected.
    pub fn run_epoch(&mut self) -> Result<Option<Divergence>> {
        let e = self.epoch();
        let stage = self.spec.stage as u64;
        let seed = self.cfg.seed;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[stage, e as u64, 0],
        )));
        let head = self.model.head();
        let floor = self.loss_floor();
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let stamps: Vec<&[f32]> = chunk
                .iter()
                .map(|&pos| {
                    let noisy = match (&self.schedule, self.spec.plan) {
                        (Some(s), _) => s.is_noisy(pos, e),
                        (None, DataPlan::Noisy) => true,
                        _ => false,
                    };
                    self.pixels(self.train[pos], noisy)
                })
                .collect();
            let targets: Vec<[f64; 2]> = chunk
                .iter()
                .map(|&pos| self.target(self.train[pos]))
                .collect();
            let x = self.model.input_batch(&stamps)?;
            let mode = Mode::Train {
                seed: derive_seed(seed, &[stage, e as u64, 1, b as u64]),
            };
            let out = match self.model.forward(x, &mode) {
                Ok(o) => o,
                Err(Error::Nn(NnError::NonFinite { layer })) => {
                    self.model.net_mut().clear_tape();
                    return Ok(Some(
                        self.abort_epoch(e, format!("non-finite activations in {layer}")),
                    ));
                }
                Err(err) => return Err(err),
            };
            let (loss, grad) = batch_loss(head, &out, &targets, floor)?;
            if !loss.is_finite() || !grad.is_finite() {
                self.model.net_mut().clear_tape();
                return Ok(Some(self.abort_epoch(e, "non-finite training loss".into())));
            }
            total += loss * chunk.len() as f64;
            seen += chunk.len();
            let net = self.model.net_mut();
            net.zero_grad();
            match net.backward(grad) {
                Ok(_) => {}
                Err(NnError::NonFinite { layer }) => {
                    return Ok(Some(
                        self.abort_epoch(e, format!("non-finite gradient in {layer}")),
                    ))
                }
                Err(err) => return Err(err.into()),
            }
            self.optimizer.step(net);
        }
        let mut m = self.validate_epoch(e + 1)?;
        m.train_loss = Some(total / seen as f64);
        m.noisy_fraction = self.fraction(e);
        let div = detect_divergence(&self.history, &m, &self.cfg);
        self.history.push(m);
        if div.is_none()
            && self.cfg.checkpoint_every > 0
            && (e + 1) % self.cfg.checkpoint_every == 0
        {
            if let Some(p) = self.checkpoint.clone() {
                self.save_checkpoint(&p)?;
            }
        }
        Ok(div)
    }

    /// Records a NaN row for an epoch cut short by non-finite numbers.
    fn abort_epoch(&mut self, e: usize, reason: String) -> Divergence {
        self.history.push(EpochMetrics {
            epoch: e + 1,
            train_loss: Some(f64::NAN),
            val_loss: f64::NAN,
            noisy_fraction: self.fraction(e),
            val_rms_z: None,
            val_mean_det: None,
        });
        Divergence {
            epoch: e + 1,
            reason,
        }
    }

    /// Runs until the stage's epoch budget is spent or training diverges.
    pub fn run(mut self) -> Result<TrainRun> {
        let mut divergence = None;
        while self.epoch() < self.spec.epochs {
            if let Some(d) = self.run_epoch()? {
                divergence = Some(d);
                break;
            }
        }
        Ok(TrainRun {
            model: self.model,
            optimizer: self.optimizer,
            history: self.history,
            divergence,
        })
    }
}

/// Initial weights of stage `stage`'s network.
pub fn model_seed(cfg: &TrainConfig, stage: u8) -> u64 {
    derive_seed(cfg.seed, &[MODEL_STREAM, stage as u64])
}

pub fn stage1_spec(cfg: &TrainConfig, plan: DataPlan) -> StageSpec {
    StageSpec {
        stage: 1,
        epochs: cfg.stage1_epochs,
        lr: cfg.stage1_lr,
        plan,
    }
}

pub fn stage2_spec(cfg: &TrainConfig, plan: DataPlan) -> StageSpec {
    StageSpec {
        stage: 2,
        epochs: cfg.stage2_epochs,
        lr: cfg.stage2_lr,
        plan,
    }
}

/// Stage 1: plain squared-error network.
pub fn train_stage1(
    data: &Dataset,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    plan: DataPlan,
) -> Result<TrainRun> {
    let model = ShapeNet::new(arch, HeadKind::PlainL2, model_seed(cfg, 1))?;
    Trainer::new(model, stage1_spec(cfg, plan), cfg, data)?.run()
}

/// Fresh MVN network carrying the trunk of a stage-1 model.
pub fn stage2_model(stage1: &ShapeNet<f32>, cfg: &TrainConfig) -> Result<ShapeNet<f32>> {
    if stage1.head() != HeadKind::PlainL2 {
        return Err(Error::Contract(
            "stage 2 starts from a plain-head stage-1 model".into(),
        ));
    }
    let mut model = ShapeNet::new(stage1.arch(), HeadKind::MvnNll, model_seed(cfg, 2))?;
    transfer_trunk(stage1, &mut model)?;
    Ok(model)
}

/// Stage 2: trunk transfer, then NLL training on the stage's fixed variant.
pub fn train_stage2(
    stage1: &ShapeNet<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    plan: DataPlan,
) -> Result<TrainRun> {
    let model = stage2_model(stage1, cfg)?;
    Trainer::new(model, stage2_spec(cfg, plan), cfg, data)?.run()
}

/// Mean and covariance learned jointly from scratch, without stage 1.
pub fn co_train(
    data: &Dataset,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    plan: DataPlan,
) -> Result<TrainRun> {
    let model = ShapeNet::new(arch, HeadKind::MvnNll, model_seed(cfg, 2))?;
    Trainer::new(model, stage2_spec(cfg, plan), cfg, data)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schedule_values() {
        let r = NoiseRamp::reference();
        assert_eq!(noisy_fraction(0, &r), 0.0);
        assert_eq!(noisy_fraction(49, &r), 0.0);
        assert!((noisy_fraction(50, &r) - 0.05).abs() < 1e-15);
        assert!((noisy_fraction(999, &r) - 0.95).abs() < 1e-12);
        assert!((noisy_fraction(1000, &r) - 1.0).abs() < 1e-12);
        assert!((noisy_fraction(5000, &r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_monotone_step_function() {
        let r = NoiseRamp {
            step_fraction: 0.05,
            step_epochs: 5,
            total_epochs: 100,
        };
        let mut prev = 0.0;
        for e in 0..150 {
            let f = noisy_fraction(e, &r);
            assert!(f >= prev);
            let expected = 0.05 * (e.min(100) / 5) as f64;
            assert!((f - expected).abs() < 1e-12, "epoch {e}");
            prev = f;
        }
    }

    #[test]
    fn ramp_validation() {
        assert!(NoiseRamp::reference().validate().is_ok());
        assert!(NoiseRamp {
            step_fraction: 0.1,
            step_epochs: 5,
            total_epochs: 100
        }
        .validate()
        .is_err());
        assert!(NoiseRamp {
            step_fraction: 0.1,
            step_epochs: 0,
            total_epochs: 100
        }
        .validate()
        .is_err());
    }

    #[test]
    fn records_switch_once_as_a_prefix() {
        let r = NoiseRamp {
            step_fraction: 0.1,
            step_epochs: 2,
            total_epochs: 20,
        };
        let s = NoiseSchedule::new(r, 137, 9);
        let mut state = vec![false; 137];
        for e in 0..30 {
            let now: Vec<bool> = (0..137).map(|i| s.is_noisy(i, e)).collect();
            for i in 0..137 {
                assert!(!state[i] || now[i], "record {i} switched back at epoch {e}");
            }
            assert_eq!(now.iter().filter(|&&b| b).count(), s.noisy_count(e));
            state = now;
        }
        assert!(state.iter().all(|&b| b));
    }

    fn row(epoch: usize, val_loss: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            train_loss: Some(val_loss),
            val_loss,
            noisy_fraction: 0.0,
            val_rms_z: None,
            val_mean_det: None,
        }
    }

    #[test]
    fn divergence_rule() {
        let cfg = TrainConfig::default();
        let hist: Vec<EpochMetrics> = (0..=6).map(|e| row(e, 1.0)).collect();
        assert!(detect_divergence(&hist, &row(7, 9.9), &cfg).is_none());
        assert!(detect_divergence(&hist, &row(7, 10.1), &cfg).is_some());
        assert!(detect_divergence(&hist[..3], &row(3, 1e9), &cfg).is_none());
        assert!(detect_divergence(&hist[..3], &row(3, f64::NAN), &cfg).is_some());
        // Negative reference: the allowed growth is 9|L_ref|.
        let neg: Vec<EpochMetrics> = (0..=6).map(|e| row(e, -2.0)).collect();
        assert!(detect_divergence(&neg, &row(7, 15.9), &cfg).is_none());
        assert!(detect_divergence(&neg, &row(7, 16.1), &cfg).is_some());
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let h = vec![EpochMetrics {
            epoch: 0,
            train_loss: None,
            val_loss: 1.5,
            noisy_fraction: 0.0,
            val_rms_z: Some(1.0),
            val_mean_det: None,
        }];
        let csv = history_csv(&h);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,,1.5"));
    }
}
