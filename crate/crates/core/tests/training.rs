use mdphd::data::{Corpus, CorpusOptions, NoiseKind, SynthCorpusSpec};
use mdphd::hybrid::{HybridConfig, HybridModel, PathMode};
use mdphd::models::{preset, Domain};
use mdphd::training::{
    lr_at, Checkpoint, TrainConfig, Trainer, CHECKPOINT_FILE, LOG_FILE, LOG_HEADER,
};
use mdphd::Error;

const WINDOW: usize = 1024;

fn corpus() -> Corpus {
    let spec = SynthCorpusSpec {
        utterances: 4,
        length: 2048,
        kinds: vec![NoiseKind::HighfreqSine, NoiseKind::BabbleSurrogate],
        snrs: vec![0.0, 5.0],
        seed: 3,
    };
    Corpus::synthetic(
        &spec,
        CorpusOptions {
            window: WINDOW,
            hop: WINDOW / 2,
            ..Default::default()
        },
    )
    .unwrap()
}

fn hybrid(mode: PathMode) -> HybridModel {
    let cfg = HybridConfig {
        tasnet: preset("tasnet-toy").unwrap(),
        unet: preset("unet-toy").unwrap(),
        mode,
        both_paths_per_step: false,
    };
    HybridModel::new(&cfg, 11).unwrap()
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        max_steps: steps,
        log_interval: 2,
        checkpoint_interval: 3,
        lr0: 1e-3,
        ..Default::default()
    }
}

fn params(m: &HybridModel) -> Vec<Vec<f64>> {
    m.networks()
        .iter()
        .flat_map(|n| n.params().iter().map(|p| p.value.data().to_vec()))
        .collect()
}

#[test]
fn learning_rate_schedule() {
    assert_eq!(lr_at(2e-4, 0.5, 100, 0), 2e-4);
    assert_eq!(lr_at(2e-4, 0.5, 100, 99), 2e-4);
    assert_eq!(lr_at(2e-4, 0.5, 100, 100), 1e-4);
    assert_eq!(lr_at(2e-4, 0.5, 100, 250), 5e-5);
    let c = TrainConfig {
        max_steps: 300,
        ..Default::default()
    };
    assert_eq!(c.decay_interval(), 100);
    assert_eq!(c.lr_at(200), 5e-5);
}

#[test]
fn both_networks_receive_gradients_within_two_steps() {
    let corpus = corpus();
    let mut t = Trainer::new(hybrid(PathMode::Alternating), config(2)).unwrap();
    let mut touched: Vec<Vec<bool>> = Vec::new();
    for _ in 0..2 {
        t.train_step(&corpus).unwrap();
        let now: Vec<Vec<bool>> = t
            .model
            .networks()
            .iter()
            .flat_map(|n| {
                n.params()
                    .iter()
                    .map(|p| p.grad.data().iter().map(|g| *g != 0.0).collect())
            })
            .collect();
        if touched.is_empty() {
            touched = now;
        } else {
            for (a, b) in touched.iter_mut().zip(now) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x |= y);
            }
        }
    }
    let names: Vec<String> = t
        .model
        .networks()
        .iter()
        .flat_map(|n| n.params().iter().map(|p| p.name().to_string()))
        .collect();
    for (name, flags) in names.iter().zip(&touched) {
        assert!(flags.iter().any(|f| *f), "{name} never received a gradient");
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let corpus = corpus();
    let mut t = Trainer::new(hybrid(PathMode::Alternating), config(3)).unwrap();
    for _ in 0..3 {
        t.train_step(&corpus).unwrap();
    }
    let bytes = t.checkpoint().to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let restored = Trainer::from_checkpoint(&ck).unwrap();
    assert_eq!(restored.checkpoint().to_bytes(), bytes);
    assert_eq!(restored.step(), 3);
    assert_eq!(params(&restored.model), params(&t.model));
}

#[test]
fn checkpoint_rejects_damage_without_partial_writes() {
    let t = Trainer::new(hybrid(PathMode::Alternating), config(1)).unwrap();
    let bytes = t.checkpoint().to_bytes();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad)
        .unwrap_err()
        .to_string()
        .contains("magic"));

    // a checkpoint of another architecture must not touch the model
    let other_cfg = HybridConfig {
        tasnet: preset("tasnet-toy").unwrap(),
        unet: preset("unet-1.5m").unwrap(),
        mode: PathMode::Alternating,
        both_paths_per_step: false,
    };
    let other = Trainer::new(HybridModel::new(&other_cfg, 1).unwrap(), config(1)).unwrap();
    let ck = other.checkpoint();
    let mut target = Trainer::new(hybrid(PathMode::Alternating), config(1)).unwrap();
    let before = params(&target.model);
    let err = ck
        .apply(&mut target.model, &mut target.adam)
        .unwrap_err()
        .to_string();
    assert!(
        err.contains(&ck.meta.fingerprint) && err.contains(&target.model.config().fingerprint()),
        "{err}"
    );
    assert_eq!(params(&target.model), before);
}

#[test]
fn zero_steps_saves_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let mut t = Trainer::new(hybrid(PathMode::Alternating), config(0)).unwrap();
    let init = t.checkpoint().to_bytes();
    let rows = t.run(&corpus, Some(dir.path()), None).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(
        std::fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap(),
        init
    );
}

#[test]
fn log_has_expected_rows_and_resume_matches() {
    let corpus = corpus();
    let dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(hybrid(PathMode::Alternating), config(6)).unwrap();
    full.run(&corpus, Some(dir.path()), None).unwrap();
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len() - 1, 6 / 2 + 1);
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",u2d"));
    assert!(lines[2].starts_with("2,"));

    let dir2 = tempfile::tempdir().unwrap();
    let mut part = Trainer::new(hybrid(PathMode::Alternating), config(6)).unwrap();
    part.run(&corpus, Some(dir2.path()), Some(4)).unwrap();
    let ck = Checkpoint::load(dir2.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.step().unwrap(), 4);
    let mut resumed = Trainer::from_checkpoint(&ck).unwrap();
    resumed.run(&corpus, Some(dir2.path()), None).unwrap();
    assert_eq!(
        resumed.checkpoint().to_bytes(),
        full.checkpoint().to_bytes()
    );
    assert_eq!(
        std::fs::read_to_string(dir2.path().join(LOG_FILE)).unwrap(),
        log
    );
}

#[test]
fn nan_halts_and_keeps_last_good_checkpoint() {
    let corpus = corpus();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(hybrid(PathMode::Alternating), config(10)).unwrap();
    t.run(&corpus, Some(dir.path()), Some(3)).unwrap();
    let good = std::fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();
    let p = t.model.tasnet_mut().params_mut().iter_mut().next().unwrap();
    p.value.data_mut()[0] = f64::NAN;
    let err = t.run(&corpus, Some(dir.path()), None).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert_eq!(t.step(), 3);
    assert_eq!(
        std::fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap(),
        good
    );
}

#[test]
fn solo_mode_leaves_other_network_alone() {
    let corpus = corpus();
    let mut t = Trainer::new(hybrid(PathMode::Solo(Domain::Time)), config(2)).unwrap();
    let unet_before: Vec<Vec<f64>> = t
        .model
        .unet()
        .params()
        .iter()
        .map(|p| p.value.data().to_vec())
        .collect();
    let tas_before: Vec<Vec<f64>> = t
        .model
        .tasnet()
        .params()
        .iter()
        .map(|p| p.value.data().to_vec())
        .collect();
    t.train_step(&corpus).unwrap();
    let unet_after: Vec<Vec<f64>> = t
        .model
        .unet()
        .params()
        .iter()
        .map(|p| p.value.data().to_vec())
        .collect();
    let tas_after: Vec<Vec<f64>> = t
        .model
        .tasnet()
        .params()
        .iter()
        .map(|p| p.value.data().to_vec())
        .collect();
    assert_eq!(unet_before, unet_after);
    assert_ne!(tas_before, tas_after);
    let bytes = t.checkpoint().to_bytes();
    assert_eq!(
        Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap())
            .unwrap()
            .checkpoint()
            .to_bytes(),
        bytes
    );
}
