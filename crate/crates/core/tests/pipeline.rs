use std::fs;
use std::path::PathBuf;

use defa_core::config::RunConfig;
use defa_core::domain::{count_sample_frequencies, Pair, Sample, Vocab};
use defa_core::encoders::TokenInit;
use defa_core::io::{generate_synthetic, Dataset, SyntheticSpec};
use defa_core::numerics::Graph;
use defa_core::pipeline::{
    argmax, batch_losses, checkpoint_bytes, checkpoint_from_bytes, train, Adam, AdamConfig, DefaModel, LossContext,
    LossWeights, ModelConfig,
};

fn dataset(spec: SyntheticSpec) -> Dataset {
    let data = generate_synthetic(&spec).unwrap();
    Dataset::assemble(data.manifest, &data.embeddings).unwrap()
}

fn small_task(seed: u64) -> Dataset {
    dataset(SyntheticSpec {
        n_attrs: 4,
        n_objs: 4,
        d_backbone: 12,
        seen_frac: 0.6,
        samples_per_pair: 20,
        eval_per_pair: 4,
        seed,
        ..SyntheticSpec::default()
    })
}

fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        d: 8,
        // wide enough that no sample has every hidden unit inactive at init
        proj_hidden: Some(32),
        lr: 1e-3,
        batch_size: 16,
        epochs: 2,
        seed,
        validate: false,
        ..RunConfig::default()
    }
}

fn model_for(data: &Dataset, rc: &RunConfig) -> DefaModel {
    DefaModel::new(
        data.manifest.vocab.clone(),
        rc.model_config(data.dim),
        rc.weights(),
        rc.seed,
        TokenInit::Uniform,
    )
    .unwrap()
}

fn context(data: &Dataset, model: &DefaModel, rc: &RunConfig) -> LossContext {
    let freq = count_sample_frequencies(&data.train, &data.train_space).unwrap();
    LossContext::new(
        &data.train_space,
        &freq,
        &model.weights,
        rc.comp_candidates,
        rc.pair_candidates,
        rc.cartesian_candidates,
    )
    .unwrap()
}

fn batch(samples: &[Sample]) -> (defa_core::numerics::Tensor2, Vec<Pair>) {
    (
        DefaModel::features(samples).unwrap(),
        samples.iter().map(|s| s.pair).collect(),
    )
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/projector_seed0.txt")
}

/// Set `DEFA_BLESS=1` to rewrite the golden file.
#[test]
fn seed0_projectors_match_golden_vector() {
    let vocab = Vocab::new(vec!["a0".into(), "a1".into()], vec!["o0".into(), "o1".into()]).unwrap();
    let model = DefaModel::new(
        vocab,
        ModelConfig::new(8, 6),
        LossWeights::default(),
        0,
        TokenInit::Uniform,
    )
    .unwrap();
    let v: Vec<f64> = (0..8).map(|i| (0.37 * i as f64).sin()).collect();
    let sample = Sample {
        image_id: "probe".into(),
        feature: v,
        pair: Pair::new(0, 0),
    };
    let (va, vo, vc) = model.project(&[sample]).unwrap();
    let text: String = [("va", &va), ("vo", &vo), ("vc", &vc)]
        .iter()
        .map(|(name, t)| {
            let bits: Vec<String> = t.row(0).iter().map(|x| format!("{:016x}", x.to_bits())).collect();
            format!("{name} {}\n", bits.join(" "))
        })
        .collect();
    if std::env::var_os("DEFA_BLESS").is_some() {
        fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        fs::write(golden_path(), &text).unwrap();
    }
    assert_eq!(text, fs::read_to_string(golden_path()).unwrap());
}

#[test]
fn checkpoint_round_trip_scores_bit_exact() {
    let data = small_task(1);
    let rc = small_config(1);
    let mut model = model_for(&data, &rc);
    train(&mut model, &data, &rc.train_config()).unwrap();
    let bytes = checkpoint_bytes(&model, &[("note", "probe".into())]).unwrap();
    let loaded = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(loaded.header.get("note").map(String::as_str), Some("probe"));

    let cands = data.test_space.full();
    let a = model.score_bundle(&data.test, &cands).unwrap();
    let b = loaded.model.score_bundle(&data.test, &cands).unwrap();
    let bits = |t: &defa_core::numerics::Tensor2| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.s), bits(&b.s));
    assert_eq!(bits(&a.s_cla), bits(&b.s_cla));
    assert_eq!(bits(&a.s_pair), bits(&b.s_pair));
    assert_eq!(
        checkpoint_bytes(&loaded.model, &[("note", "probe".into())]).unwrap(),
        bytes
    );
}

#[test]
fn zero_lr_training_leaves_parameters_and_loss_unchanged() {
    let data = small_task(2);
    let rc = RunConfig {
        lr: 0.0,
        epochs: 3,
        batch_size: 1000,
        ..small_config(2)
    };
    let mut model = model_for(&data, &rc);
    let before = model.store.clone();
    let out = train(&mut model, &data, &rc.train_config()).unwrap();
    for id in before.ids() {
        let same = before
            .value(id)
            .data()
            .iter()
            .zip(model.store.value(id).data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{} changed", before.name(id));
    }
    let first = &out.logs[0];
    for log in &out.logs[1..] {
        // one batch per epoch; only the summation order differs
        for (a, b) in first.parts.values().into_iter().zip(log.parts.values()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn training_reduces_classification_loss() {
    let data = small_task(3);
    let rc = RunConfig {
        epochs: 25,
        ..small_config(3)
    };
    let mut model = model_for(&data, &rc);
    let ctx = context(&data, &model, &rc);
    let l_cla = |m: &DefaModel| {
        let (x, labels) = batch(&data.train);
        let mut g = Graph::new();
        let b = batch_losses(&mut g, m, &ctx, x, &labels).unwrap();
        g.value(b.l_cla).item()
    };
    let steps = rc.epochs * data.train.len().div_ceil(rc.batch_size);
    assert!(steps >= 200, "{steps} steps");
    let initial = l_cla(&model);
    train(&mut model, &data, &rc.train_config()).unwrap();
    let last = l_cla(&model);
    assert!(last < initial, "{initial} -> {last}");
}

#[test]
fn small_adam_step_usually_decreases_total_loss() {
    let mut decreased = 0;
    for seed in 0..20 {
        let data = small_task(100 + seed);
        let rc = small_config(seed);
        let mut model = model_for(&data, &rc);
        let ctx = context(&data, &model, &rc);
        let (x, labels) = batch(&data.train[..24]);
        let total = |m: &DefaModel| {
            let mut g = Graph::new();
            let b = batch_losses(&mut g, m, &ctx, x.clone(), &labels).unwrap();
            (g.value(b.total).item(), g, b)
        };
        let (before, g, b) = total(&model);
        model.store.zero_grads();
        g.backward(b.total, &mut model.store);
        let mut opt = Adam::new(
            &model.store,
            AdamConfig {
                lr: 1e-5,
                ..AdamConfig::default()
            },
        );
        opt.step(&mut model.store);
        if total(&model).0 < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 18, "{decreased}/20");
}

#[test]
fn beta_one_predictions_ignore_the_augmentation_path() {
    let data = small_task(4);
    let rc = RunConfig {
        lambda4: 0.0,
        lambda5: 0.0,
        beta: 1.0,
        ..small_config(4)
    };
    let mut model = model_for(&data, &rc);
    train(&mut model, &data, &rc.train_config()).unwrap();
    let cands = data.test_space.test_closed();
    let bundle = model.score_bundle(&data.test, &cands).unwrap();
    let bits = |t: &defa_core::numerics::Tensor2| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&bundle.s), bits(&bundle.s_cla));

    // scrambling the fusion network cannot change anything
    let mut other = model.clone();
    for id in other.fusion.mlp.param_ids().collect::<Vec<_>>() {
        for x in other.store.value_mut(id).data_mut() {
            *x = -3.0 * *x + 0.25;
        }
    }
    assert_eq!(
        model.predict(&data.test, &cands).unwrap(),
        other.predict(&data.test, &cands).unwrap()
    );
    let baseline: Vec<Pair> = (0..bundle.s_cla.rows())
        .map(|i| cands[argmax(bundle.s_cla.row(i))])
        .collect();
    assert_eq!(model.predict(&data.test, &cands).unwrap(), baseline);
}

#[test]
fn predictions_ignore_a_constant_score_shift() {
    let data = small_task(5);
    let rc = small_config(5);
    let mut model = model_for(&data, &rc);
    train(&mut model, &data, &rc.train_config()).unwrap();
    let cands = data.test_space.test_closed();
    let s = model.inference_scores(&data.test, &cands).unwrap();
    for shift in [-7.0, 0.5, 1e3] {
        for i in 0..s.rows() {
            let shifted: Vec<f64> = s.row(i).iter().map(|x| x + shift).collect();
            let (a, b) = (argmax(s.row(i)), argmax(&shifted));
            // a shift can only merge scores that were within one ulp
            assert!(a == b || (s.row(i)[a] - s.row(i)[b]).abs() <= 1e-12);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let data = small_task(6);
    let rc = RunConfig {
        validate: true,
        ..small_config(6)
    };
    let run = || {
        let mut m = model_for(&data, &rc);
        let out = train(&mut m, &data, &rc.train_config()).unwrap();
        (checkpoint_bytes(&m, &[]).unwrap(), out.logs)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn mismatched_dimension_is_rejected() {
    let data = small_task(7);
    let rc = small_config(7);
    let mut model = DefaModel::new(
        data.manifest.vocab.clone(),
        rc.model_config(data.dim + 1),
        rc.weights(),
        0,
        TokenInit::Uniform,
    )
    .unwrap();
    assert!(train(&mut model, &data, &rc.train_config()).is_err());
    assert!(model.predict(&data.test, &data.test_space.full()).is_err());
}
