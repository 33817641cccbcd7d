use galbnn_core::model::{ArchitectureConfig, HeadKind};
use galbnn_core::protocol::{
    co_train, stage1_spec, train_stage1, train_stage2, DataPlan, NoiseRamp, TrainConfig, Trainer,
};
use galbnn_core::simulator::{generate_dataset, Category, Dataset, SimConfig};
use galbnn_core::store::{self, ModelMeta};
use galbnn_nn::Mode;

fn smoke_data(n: usize, seed: u64) -> Dataset {
    generate_dataset(&SimConfig::desk(), Category::IsolatedNoisy, n, seed).unwrap()
}

fn smoke_cfg(stage1: usize, stage2: usize) -> TrainConfig {
    TrainConfig {
        stage1_epochs: stage1,
        stage2_epochs: stage2,
        batch_size: 32,
        ramp: NoiseRamp {
            step_fraction: 0.25,
            step_epochs: 1,
            total_epochs: 4,
        },
        seed: 5,
        ..TrainConfig::default()
    }
}

/// Baseline of the implementation's own 30-epoch smoke run: the final
/// training loss ends below half of the first epoch's.
#[test]
fn stage1_smoke_run_halves_training_loss() {
    let data = smoke_data(200, 1);
    let run = train_stage1(
        &data,
        &ArchitectureConfig::desk(),
        &smoke_cfg(30, 0),
        DataPlan::Clean,
    )
    .unwrap();
    assert!(run.divergence.is_none(), "{:?}", run.divergence);
    assert_eq!(run.history.len(), 31);
    let first = run.history[1].train_loss.unwrap();
    let last = run.history[30].train_loss.unwrap();
    assert!(last < 0.5 * first, "train L2 {first} -> {last}");
}

#[test]
fn fixed_seeds_give_identical_histories() {
    let data = smoke_data(120, 2);
    let cfg = smoke_cfg(3, 0);
    let plan = DataPlan::Ramp(cfg.ramp);
    let a = train_stage1(&data, &ArchitectureConfig::desk(), &cfg, plan).unwrap();
    let b = train_stage1(&data, &ArchitectureConfig::desk(), &cfg, plan).unwrap();
    assert_eq!(a.history, b.history);
    let bytes = |m| store::encode_model(m, None, ModelMeta::default());
    assert_eq!(bytes(&a.model), bytes(&b.model));
    assert_eq!(a.history[3].noisy_fraction, 0.5);
}

#[test]
fn resumed_checkpoint_reproduces_uninterrupted_run() {
    let data = smoke_data(120, 3);
    let arch = ArchitectureConfig::desk();
    let cfg = smoke_cfg(4, 0);
    let plan = DataPlan::Ramp(cfg.ramp);
    let full = train_stage1(&data, &arch, &cfg, plan).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.gsmd");
    let model = galbnn_core::model::ShapeNet::new(
        &arch,
        HeadKind::PlainL2,
        galbnn_core::protocol::model_seed(&cfg, 1),
    )
    .unwrap();
    let mut t = Trainer::new(model, stage1_spec(&cfg, plan), &cfg, &data).unwrap();
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    t.save_checkpoint(&ckpt).unwrap();
    drop(t);

    let file = store::read_model(&ckpt).unwrap();
    assert_eq!(file.header.epoch, 2);
    let resumed = Trainer::resume(file, stage1_spec(&cfg, plan), &cfg, &data)
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(resumed.history, full.history);
    let meta = || ModelMeta {
        epoch: 4,
        ..ModelMeta::default()
    };
    assert_eq!(
        store::encode_model(&resumed.model, Some(&resumed.optimizer), meta()),
        store::encode_model(&full.model, Some(&full.optimizer), meta())
    );
}

#[test]
fn stage2_on_noiseless_data_shrinks_covariance() {
    let data = smoke_data(200, 4);
    let arch = ArchitectureConfig::desk();
    let cfg = smoke_cfg(10, 10);
    let s1 = train_stage1(&data, &arch, &cfg, DataPlan::Clean).unwrap();
    let s2 = train_stage2(&s1.model, &data, &cfg, DataPlan::Clean).unwrap();
    assert!(s2.divergence.is_none(), "{:?}", s2.divergence);
    assert_eq!(s2.model.head(), HeadKind::MvnNll);
    let initial = s2.history[0].val_mean_det.unwrap();
    let last = s2.history.last().unwrap().val_mean_det.unwrap();
    assert!(last < initial, "mean det {initial} -> {last}");
    assert!(s2.history.iter().all(|m| m.val_rms_z.is_some()));

    // The trunk that stage 2 started from is the stage-1 trunk.
    let mut fresh = galbnn_core::protocol::stage2_model(&s1.model, &cfg).unwrap();
    let mut src = s1.model.clone();
    let stamps = [data.records[0].clean.as_slice()];
    let x = src.input_batch(&stamps).unwrap();
    assert_eq!(
        src.trunk(x.clone(), &Mode::Eval).unwrap(),
        fresh.trunk(x, &Mode::Eval).unwrap()
    );
}

#[test]
fn noisy_training_requires_noisy_variants() {
    let data = generate_dataset(&SimConfig::desk(), Category::IsolatedClean, 50, 5).unwrap();
    let cfg = smoke_cfg(1, 1);
    let err = train_stage1(&data, &ArchitectureConfig::desk(), &cfg, DataPlan::Noisy).unwrap_err();
    assert_eq!(err.category(), "contract");
    let err = co_train(
        &data,
        &ArchitectureConfig::desk(),
        &cfg,
        DataPlan::Ramp(cfg.ramp),
    )
    .unwrap_err();
    assert_eq!(err.category(), "contract");
}

#[test]
fn exploding_learning_rate_trips_the_detector() {
    let data = smoke_data(120, 6);
    let cfg = TrainConfig {
        stage1_lr: 1e4,
        ..smoke_cfg(8, 0)
    };
    let run = train_stage1(&data, &ArchitectureConfig::desk(), &cfg, DataPlan::Clean).unwrap();
    let d = run.divergence.expect("divergence");
    assert!(d.epoch >= 1 && d.epoch <= 8);
    assert_eq!(run.history.len(), d.epoch + 1);
}
