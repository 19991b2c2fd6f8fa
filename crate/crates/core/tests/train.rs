//! Optimizer and training-loop tests. Adam is checked against an independent
//! scalar recurrence written out in the test body; the loops are checked for
//! bit determinism, log/bookkeeping shape, error attribution, and actual loss
//! reduction on a small diatomic ensemble.

use boltzgen_core::diffusion::NoiseSchedule;
use boltzgen_core::encoder::GtnConfig;
use boltzgen_core::exec::Serial;
use boltzgen_core::graph::{
    Atom, Bond, BondOrder, Conformation, ConformerEnsemble, DatasetRecord, MolecularGraph,
};
use boltzgen_core::opt::{AdamState, ParamSet};
use boltzgen_core::rng::RngState;
use boltzgen_core::score::SchnetConfig;
use boltzgen_core::split::split_dataset;
use boltzgen_core::tape::{Grads, Tape};
use boltzgen_core::train::{
    finetune, pretrain, pretrain_step, Checkpoint, FinetuneMode, TrainConfig, TrainItem,
    CHECKPOINT_VERSION,
};
use boltzgen_core::{CoreError, Tensor};

fn atom(z: u32) -> Atom {
    Atom {
        atomic_number: z,
        formal_charge: 0,
    }
}

fn diatomic(z1: u32, z2: u32) -> MolecularGraph {
    MolecularGraph::new(
        vec![atom(z1), atom(z2)],
        vec![Bond {
            i: 0,
            j: 1,
            order: BondOrder::Single,
        }],
    )
    .unwrap()
}

fn bond_conformer(d: f64) -> Conformation {
    Conformation::new(
        Tensor::from_vec(&[2, 3], vec![-d / 2.0, 0.0, 0.0, d / 2.0, 0.0, 0.0]).unwrap(),
    )
    .unwrap()
}

fn diatomic_record(
    id: &str,
    z1: u32,
    z2: u32,
    lengths: &[f64],
    label: Option<f64>,
) -> DatasetRecord {
    DatasetRecord {
        id: id.to_string(),
        graph: diatomic(z1, z2),
        ensemble: ConformerEnsemble {
            conformations: lengths.iter().map(|&d| bond_conformer(d)).collect(),
        },
        label,
    }
}

fn tiny_gtn() -> GtnConfig {
    GtnConfig {
        layers: 1,
        heads: 2,
        model_dim: 6,
        pe_dim: 2,
        feedforward_dim: 8,
        dropout: 0.0,
    }
}

fn tiny_schnet() -> SchnetConfig {
    SchnetConfig {
        interaction_blocks: 1,
        feature_dim: 8,
        rbf_count: 5,
        r_cut: 10.0,
        time_dim: 4,
        denom_floor: 1e-6,
    }
}

/// Short hand-built forward process; plenty for optimizer plumbing tests.
fn short_schedule() -> NoiseSchedule {
    NoiseSchedule::from_betas(vec![0.02, 0.05, 0.08, 0.12, 0.16, 0.20, 0.25, 0.30]).unwrap()
}

/// Produce a `Grads` holding exactly the requested per-parameter values by
/// differentiating `sum(w * c)` on a throwaway tape (the gradient of which is
/// `c`).
fn grads_with_values(params: &ParamSet, values: &[(&str, Tensor)]) -> Grads {
    let mut tape = Tape::new();
    let vars = params.register_on(&mut tape).unwrap();
    let mut total = None;
    for (name, c) in values {
        let cv = tape.constant(c.clone());
        let prod = tape.mul(vars[*name], cv).unwrap();
        let s = tape.sum_all(prod).unwrap();
        total = Some(match total {
            Some(acc) => tape.add(acc, s).unwrap(),
            None => s,
        });
    }
    tape.backward(total.unwrap()).unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

fn params_identical(a: &ParamSet, b: &ParamSet, prefix: &str) -> bool {
    a.iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .all(|(name, t)| bits(t) == bits(b.get(name).unwrap()))
}

// ----- Adam -----

#[test]
fn adam_matches_independent_recurrence_without_clipping() {
    let mut params = ParamSet::new();
    params
        .insert("w", Tensor::from_vec(&[1, 2], vec![0.3, -0.4]).unwrap())
        .unwrap();
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let step_grads = [[0.5, -1.0], [0.25, 0.75], [-1.5, 0.1]];

    let mut opt = AdamState::new();
    let mut w = [0.3, -0.4];
    let mut m = [0.0; 2];
    let mut v = [0.0; 2];
    for (k, g) in step_grads.iter().enumerate() {
        let grads = grads_with_values(
            &params,
            &[("w", Tensor::from_vec(&[1, 2], g.to_vec()).unwrap())],
        );
        let norm = opt
            .update(&mut params, &grads, lr, b1, b2, eps, 1e12)
            .unwrap();
        assert!((norm - (g[0] * g[0] + g[1] * g[1]).sqrt()).abs() < 1e-12);

        let t = (k + 1) as i32;
        for i in 0..2 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / (1.0 - b1.powi(t));
            let v_hat = v[i] / (1.0 - b2.powi(t));
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let got = params.get("w").unwrap();
        for i in 0..2 {
            assert!(
                (got.data()[i] - w[i]).abs() < 1e-12,
                "step {k}, coord {i}: {} vs reference {}",
                got.data()[i],
                w[i]
            );
        }
    }
    assert_eq!(opt.step_count(), 3);
}

#[test]
fn adam_clips_by_global_norm_and_reports_the_preclip_norm() {
    // First gradient inside the clip radius, second outside (norm 5 vs 1).
    let mut params = ParamSet::new();
    params
        .insert("w", Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap())
        .unwrap();
    let (lr, b1, b2, eps, clip) = (0.05, 0.9, 0.999, 1e-8, 1.0);
    let step_grads = [[0.3, -0.4], [3.0, 4.0]];

    let mut opt = AdamState::new();
    let mut w = [1.0, 1.0];
    let mut m = [0.0; 2];
    let mut v = [0.0; 2];
    for (k, g) in step_grads.iter().enumerate() {
        let grads = grads_with_values(
            &params,
            &[("w", Tensor::from_vec(&[1, 2], g.to_vec()).unwrap())],
        );
        let norm = opt
            .update(&mut params, &grads, lr, b1, b2, eps, clip)
            .unwrap();
        let raw = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!(
            (norm - raw).abs() < 1e-12,
            "returned norm must be the pre-clip value"
        );

        let scale = if raw > clip { clip / raw } else { 1.0 };
        let t = (k + 1) as i32;
        for i in 0..2 {
            let gc = g[i] * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * gc;
            v[i] = b2 * v[i] + (1.0 - b2) * gc * gc;
            let m_hat = m[i] / (1.0 - b1.powi(t));
            let v_hat = v[i] / (1.0 - b2.powi(t));
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let got = params.get("w").unwrap();
        for i in 0..2 {
            assert!((got.data()[i] - w[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn adam_leaves_parameters_without_gradients_bitwise_untouched() {
    let mut params = ParamSet::new();
    params
        .insert("used", Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap())
        .unwrap();
    params
        .insert(
            "unused",
            Tensor::from_vec(&[1, 3], vec![-3.0, 0.5, 7.25]).unwrap(),
        )
        .unwrap();
    let before = bits(params.get("unused").unwrap());

    let mut opt = AdamState::new();
    for _ in 0..3 {
        let grads = grads_with_values(
            &params,
            &[("used", Tensor::from_vec(&[1, 2], vec![0.5, -0.25]).unwrap())],
        );
        opt.update(&mut params, &grads, 0.01, 0.9, 0.999, 1e-8, 10.0)
            .unwrap();
    }
    assert_eq!(
        before,
        bits(params.get("unused").unwrap()),
        "zero-gradient parameter must not move"
    );
    assert!(
        (params.get("used").unwrap().data()[0] - 1.0).abs() > 1e-6,
        "gradient-bearing parameter must move"
    );
}

// ----- pretrain_step -----

#[test]
fn pretrain_step_updates_both_encoder_and_score_parameters() {
    let gtn = tiny_gtn();
    let schnet = tiny_schnet();
    let schedule = short_schedule();
    let init = Checkpoint::init(&gtn, &schnet, &schedule, 11).unwrap();
    let mut params = init.params.clone();

    let graph = diatomic(6, 8);
    let conf = bond_conformer(1.4);
    let batch = vec![TrainItem {
        id: "co",
        graph: &graph,
        conformation: &conf.coords,
    }];
    let mut optim = AdamState::new();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let rng = RngState::from_seed(5);
    let loss = pretrain_step(
        &mut params,
        &gtn,
        &schnet,
        &batch,
        &schedule,
        &mut optim,
        &cfg,
        &rng,
        &Serial,
        4,
    )
    .unwrap();
    assert!(loss.is_finite() && loss > 0.0, "loss {loss}");

    let mut enc_moved = 0;
    let mut score_moved = 0;
    for (name, value) in params.iter() {
        if bits(value) == bits(init.params.get(name).unwrap()) {
            continue;
        }
        if name.starts_with("enc.") {
            enc_moved += 1;
        } else if name.starts_with("score.") {
            score_moved += 1;
        }
    }
    assert!(enc_moved > 0, "no encoder parameter moved");
    assert!(score_moved > 0, "no score parameter moved");
}

#[test]
fn pretrain_step_names_the_offending_record_on_nonfinite_loss() {
    let gtn = tiny_gtn();
    let schnet = tiny_schnet();
    let schedule = short_schedule();
    let mut params = Checkpoint::init(&gtn, &schnet, &schedule, 2).unwrap().params;
    // Poison the encoder so every forward pass goes non-finite.
    let enc_names: Vec<String> = params
        .names()
        .filter(|n| n.starts_with("enc."))
        .cloned()
        .collect();
    for name in &enc_names {
        for x in params.get_mut(name).unwrap().data_mut() {
            *x = f64::NAN;
        }
    }

    let graph = diatomic(6, 8);
    let conf = bond_conformer(1.4);
    let batch = vec![TrainItem {
        id: "poisoned",
        graph: &graph,
        conformation: &conf.coords,
    }];
    let mut optim = AdamState::new();
    let cfg = TrainConfig::default();
    let err = pretrain_step(
        &mut params,
        &gtn,
        &schnet,
        &batch,
        &schedule,
        &mut optim,
        &cfg,
        &RngState::from_seed(0),
        &Serial,
        4,
    )
    .unwrap_err();
    match err {
        CoreError::InvalidRecord { id, reason } => {
            assert_eq!(id, "poisoned");
            assert!(
                reason.contains("non-finite loss at diffusion time t="),
                "unexpected reason: {reason}"
            );
        }
        other => panic!("expected InvalidRecord, got {other:?}"),
    }
}

// ----- pretrain -----

#[test]
fn pretrain_is_bit_deterministic_for_a_fixed_seed() {
    let records = vec![
        diatomic_record("a", 6, 8, &[1.2, 1.3, 1.4], None),
        diatomic_record("b", 7, 7, &[1.1, 1.5], None),
    ];
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 3,
        learning_rate: 1e-3,
        valid_fraction: 0.25,
        ..TrainConfig::default()
    };
    let run = || {
        pretrain(
            &records,
            &tiny_gtn(),
            &tiny_schnet(),
            &short_schedule(),
            &cfg,
            &Serial,
            2,
            &mut |_| {},
        )
        .unwrap()
    };
    let o1 = run();
    let o2 = run();
    assert_eq!(o1.log.len(), o2.log.len());
    for (a, b) in o1.log.iter().zip(&o2.log) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.train_loss.map(f64::to_bits), b.train_loss.map(f64::to_bits));
        assert_eq!(a.valid_loss.to_bits(), b.valid_loss.to_bits());
    }
    for (name, t1) in o1.checkpoint.params.iter() {
        assert_eq!(
            bits(t1),
            bits(o2.checkpoint.params.get(name).unwrap()),
            "parameter {name} differs between identical runs"
        );
    }
}

#[test]
fn pretrain_seed_changes_the_initial_validation_loss() {
    let records = vec![diatomic_record("x", 6, 6, &[1.2, 1.4], None)];
    let eval = |seed: u64| {
        let cfg = TrainConfig {
            epochs: 0,
            valid_fraction: 0.5,
            seed,
            ..TrainConfig::default()
        };
        pretrain(
            &records,
            &tiny_gtn(),
            &tiny_schnet(),
            &short_schedule(),
            &cfg,
            &Serial,
            4,
            &mut |_| {},
        )
        .unwrap()
        .log[0]
            .valid_loss
    };
    assert_ne!(eval(0).to_bits(), eval(1).to_bits());
}

#[test]
fn training_reduces_loss_on_a_diatomic_ensemble() {
    // Twelve conformers of one species with bond lengths spread around 1.5 A.
    let lengths: Vec<f64> = (0..12).map(|i| 1.28 + 0.04 * i as f64).collect();
    let records = vec![diatomic_record("co", 6, 8, &lengths, None)];
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 8,
        learning_rate: 3e-3,
        valid_fraction: 0.25,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = pretrain(
        &records,
        &tiny_gtn(),
        &tiny_schnet(),
        &short_schedule(),
        &cfg,
        &Serial,
        8,
        &mut |_| {},
    )
    .unwrap();
    let v0 = out.log[0].valid_loss;
    let best = out.checkpoint.meta.best_valid_loss;
    assert!(
        best < 0.7 * v0,
        "validation loss did not improve enough: {v0} -> {best}"
    );
    let first_train = out.log[1].train_loss.unwrap();
    let last_train = out.log.last().unwrap().train_loss.unwrap();
    assert!(
        last_train < first_train,
        "train loss did not improve: {first_train} -> {last_train}"
    );
}

#[test]
fn pretrain_log_shape_and_best_epoch_bookkeeping() {
    let records = vec![diatomic_record("x", 6, 6, &[1.2, 1.4, 1.6, 1.3], None)];
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 2,
        learning_rate: 1e-3,
        valid_fraction: 0.25,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = pretrain(
        &records,
        &tiny_gtn(),
        &tiny_schnet(),
        &short_schedule(),
        &cfg,
        &Serial,
        4,
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(out.log.len(), cfg.epochs + 1);
    assert_eq!(out.log[0].epoch, 0);
    assert!(out.log[0].train_loss.is_none());
    for (e, entry) in out.log.iter().enumerate().skip(1) {
        assert_eq!(entry.epoch, e);
        assert!(entry.train_loss.is_some());
        assert!(entry.valid_loss.is_finite());
    }
    // Best epoch = earliest argmin of validation loss, mirrored in the meta.
    let mut best_e = 0;
    let mut best_v = out.log[0].valid_loss;
    for entry in &out.log {
        if entry.valid_loss < best_v {
            best_v = entry.valid_loss;
            best_e = entry.epoch;
        }
    }
    assert_eq!(out.best_epoch, best_e);
    assert_eq!(out.checkpoint.meta.best_epoch, best_e);
    assert_eq!(out.checkpoint.meta.best_valid_loss.to_bits(), best_v.to_bits());
    assert_eq!(out.checkpoint.meta.seed, cfg.seed);
    assert_eq!(out.checkpoint.version, CHECKPOINT_VERSION);
}

#[test]
fn pretrain_with_zero_epochs_returns_the_initial_parameters() {
    let records = vec![diatomic_record("x", 6, 6, &[1.2, 1.4], None)];
    let cfg = TrainConfig {
        epochs: 0,
        valid_fraction: 0.5,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = pretrain(
        &records,
        &tiny_gtn(),
        &tiny_schnet(),
        &short_schedule(),
        &cfg,
        &Serial,
        4,
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.best_epoch, 0);
    let init = Checkpoint::init(&tiny_gtn(), &tiny_schnet(), &short_schedule(), 9).unwrap();
    assert_eq!(init.params.len(), out.checkpoint.params.len());
    for (name, t) in out.checkpoint.params.iter() {
        assert_eq!(
            bits(t),
            bits(init.params.get(name).unwrap()),
            "{name} differs from a fresh initialization"
        );
    }
}

#[test]
fn pretrain_rejects_duplicate_and_invalid_records() {
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let dup = vec![
        diatomic_record("same", 6, 6, &[1.2], None),
        diatomic_record("same", 7, 7, &[1.3], None),
    ];
    assert!(matches!(
        pretrain(&dup, &tiny_gtn(), &tiny_schnet(), &short_schedule(), &cfg, &Serial, 4, &mut |_| {}),
        Err(CoreError::DuplicateId { .. })
    ));

    let empty: Vec<DatasetRecord> = Vec::new();
    assert!(matches!(
        pretrain(&empty, &tiny_gtn(), &tiny_schnet(), &short_schedule(), &cfg, &Serial, 4, &mut |_| {}),
        Err(CoreError::EmptyData { .. })
    ));

    let no_conformers = vec![diatomic_record("x", 6, 6, &[], None)];
    assert!(matches!(
        pretrain(&no_conformers, &tiny_gtn(), &tiny_schnet(), &short_schedule(), &cfg, &Serial, 4, &mut |_| {}),
        Err(CoreError::InvalidRecord { .. })
    ));
}

#[test]
fn train_config_validation_rejects_bad_values() {
    assert!(TrainConfig::default().validate().is_ok());
    let cases = [
        ("zero learning rate", TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        }),
        ("negative learning rate", TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        }),
        ("beta1 at 1", TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        }),
        ("negative beta2", TrainConfig {
            beta2: -0.1,
            ..TrainConfig::default()
        }),
        ("zero batch size", TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }),
        ("zero adam eps", TrainConfig {
            adam_eps: 0.0,
            ..TrainConfig::default()
        }),
        ("valid fraction at 1", TrainConfig {
            valid_fraction: 1.0,
            ..TrainConfig::default()
        }),
        ("fractions leave no training share", TrainConfig {
            valid_fraction: 0.5,
            test_fraction: 0.5,
            ..TrainConfig::default()
        }),
    ];
    for (what, cfg) in cases {
        assert!(
            matches!(cfg.validate(), Err(CoreError::InvalidConfig { .. })),
            "{what} must be rejected"
        );
    }
}

#[test]
fn checkpoint_init_is_deterministic_and_seed_sensitive() {
    let gtn = tiny_gtn();
    let schnet = tiny_schnet();
    let schedule = short_schedule();
    let a = Checkpoint::init(&gtn, &schnet, &schedule, 7).unwrap();
    let b = Checkpoint::init(&gtn, &schnet, &schedule, 7).unwrap();
    let c = Checkpoint::init(&gtn, &schnet, &schedule, 8).unwrap();
    assert_eq!(a.version, CHECKPOINT_VERSION);
    assert_eq!(a.meta.seed, 7);
    assert!(a.meta.best_valid_loss.is_infinite());
    for (name, t) in a.params.iter() {
        assert_eq!(bits(t), bits(b.params.get(name).unwrap()));
    }
    let any_differs = a
        .params
        .iter()
        .any(|(name, t)| bits(t) != bits(c.params.get(name).unwrap()));
    assert!(any_differs, "different seeds must give different parameters");
}

// ----- finetune -----

#[test]
fn finetune_rejects_missing_labels_and_degenerate_splits() {
    let ckpt = Checkpoint::init(&tiny_gtn(), &tiny_schnet(), &short_schedule(), 0).unwrap();
    let labeled: Vec<DatasetRecord> = (0..8)
        .map(|i| diatomic_record(&format!("r{i}"), 6, 6, &[1.4], Some(1.0)))
        .collect();
    let mut unlabeled = labeled.clone();
    unlabeled[3].label = None;
    let cfg = TrainConfig {
        epochs: 1,
        valid_fraction: 0.25,
        test_fraction: 0.25,
        ..TrainConfig::default()
    };
    let err = finetune(&ckpt, &unlabeled, &cfg, &Serial, 4, &mut |_| {}).unwrap_err();
    assert!(matches!(err, CoreError::MissingLabel { ref id } if id == "r3"));

    let no_test_split = TrainConfig {
        test_fraction: 0.0,
        ..cfg
    };
    assert!(matches!(
        finetune(&ckpt, &labeled, &no_test_split, &Serial, 4, &mut |_| {}).unwrap_err(),
        CoreError::InvalidConfig { .. }
    ));
}

#[test]
fn finetune_fits_constant_labels() {
    let ckpt = Checkpoint::init(&tiny_gtn(), &tiny_schnet(), &short_schedule(), 0).unwrap();
    let records: Vec<DatasetRecord> = (0..8)
        .map(|i| diatomic_record(&format!("r{i}"), 6, 6, &[1.4], Some(1.7)))
        .collect();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        learning_rate: 0.05,
        valid_fraction: 0.25,
        test_fraction: 0.25,
        finetune_mode: FinetuneMode::FrozenEncoder,
        seed: 0,
        ..TrainConfig::default()
    };
    let out = finetune(&ckpt, &records, &cfg, &Serial, 4, &mut |_| {}).unwrap();
    assert_eq!(out.log.len(), cfg.epochs + 1);
    assert!(out.log[0].train_loss.is_none());
    assert!(
        out.test_mse < 0.05,
        "constant label not fitted: test MSE {}",
        out.test_mse
    );
    assert!(out.checkpoint.params.get("head.l1.w").is_some());
    assert!(out.checkpoint.params.get("head.l2.b").is_some());
}

#[test]
fn finetune_separates_two_species_better_than_the_mean_predictor() {
    // C-C records labeled 0, N-N records labeled 1. The regression input is
    // the graph latent alone, so the head must map two distinct encodings to
    // two distinct values; the mean predictor is stuck at MSE ~ 0.25.
    let mut records = Vec::new();
    for i in 0..8 {
        records.push(diatomic_record(&format!("c{i}"), 6, 6, &[1.5], Some(0.0)));
        records.push(diatomic_record(&format!("n{i}"), 7, 7, &[1.1], Some(1.0)));
    }
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        learning_rate: 0.05,
        valid_fraction: 0.25,
        test_fraction: 0.25,
        finetune_mode: FinetuneMode::FrozenEncoder,
        seed: 0,
        ..TrainConfig::default()
    };
    // Fixture sanity: the hash split at this seed must give the training set
    // at least one record of each species, or the task is unlearnable.
    let (train, _, test) = split_dataset(
        &records,
        (0.5, cfg.valid_fraction, cfg.test_fraction),
        cfg.seed,
    )
    .unwrap();
    let has_both = |split: &[&DatasetRecord]| {
        split.iter().any(|r| r.id.starts_with('c')) && split.iter().any(|r| r.id.starts_with('n'))
    };
    assert!(has_both(&train), "calibrated seed must mix species in train");
    assert!(!test.is_empty());

    let ckpt = Checkpoint::init(&tiny_gtn(), &tiny_schnet(), &short_schedule(), 0).unwrap();
    let out = finetune(&ckpt, &records, &cfg, &Serial, 4, &mut |_| {}).unwrap();
    assert!(
        out.test_mse < 0.1,
        "species not separated: test MSE {}",
        out.test_mse
    );
}

#[test]
fn frozen_encoder_finetune_keeps_encoder_and_score_parameters_bitwise() {
    let ckpt = Checkpoint::init(&tiny_gtn(), &tiny_schnet(), &short_schedule(), 4).unwrap();
    let records: Vec<DatasetRecord> = (0..8)
        .map(|i| diatomic_record(&format!("r{i}"), 6, 8, &[1.3], Some(1.7)))
        .collect();
    let frozen_cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        learning_rate: 0.05,
        valid_fraction: 0.25,
        test_fraction: 0.25,
        finetune_mode: FinetuneMode::FrozenEncoder,
        ..TrainConfig::default()
    };
    let frozen = finetune(&ckpt, &records, &frozen_cfg, &Serial, 4, &mut |_| {}).unwrap();
    assert!(params_identical(&ckpt.params, &frozen.checkpoint.params, "enc."));
    assert!(params_identical(&ckpt.params, &frozen.checkpoint.params, "score."));
    // The head did train: its bias must leave the zero initialization.
    let head_bias = frozen.checkpoint.params.get("head.l2.b").unwrap();
    assert!(head_bias.data()[0].abs() > 1e-3, "head bias never moved");

    // Full mode moves the encoder but still never touches score parameters
    // (the regression loss does not involve them).
    let full_cfg = TrainConfig {
        finetune_mode: FinetuneMode::Full,
        ..frozen_cfg
    };
    let full = finetune(&ckpt, &records, &full_cfg, &Serial, 4, &mut |_| {}).unwrap();
    assert!(!params_identical(&ckpt.params, &full.checkpoint.params, "enc."));
    assert!(params_identical(&ckpt.params, &full.checkpoint.params, "score."));
}
