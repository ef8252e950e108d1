use keystroke_core::labels::Window;
use keystroke_core::nn::{ModelConfig, ModelParams};
use keystroke_core::synth::{generate_session, HandKinematicModel, KeyboardLayout, TypingScript};
use keystroke_core::train::{
    make_folds, prepare_windows, train_model, EpochRecord, LossKind, Recording, TrainConfig, WindowOptions,
};
use keystroke_core::{Error, NUM_CLASSES};

fn small() -> ModelConfig {
    ModelConfig {
        conv1_channels: 4,
        conv2_channels: 6,
        gru_hidden: 8,
        fc_hidden: 8,
        window: 20,
        ..ModelConfig::default()
    }
}

fn recording(id: &str, text: &str, seed: u64) -> Recording {
    let s = generate_session(
        &TypingScript::new(text, 40.0, seed),
        &HandKinematicModel::default(),
        &KeyboardLayout::qwerty(),
    )
    .unwrap();
    Recording {
        id: id.to_string(),
        frames: s.frames,
        labels: s.labels,
    }
}

fn windows(recs: &[Recording], size: usize) -> Vec<Window> {
    let opts = WindowOptions {
        size,
        step: size / 2,
        ..WindowOptions::default()
    };
    recs.iter().flat_map(|r| prepare_windows(r, &opts).unwrap()).collect()
}

fn hyper(epochs: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = small();
    let w = windows(&[recording("a", "ff", 1)], 20);
    let out = train_model(&w, &w, &cfg, &hyper(0, 4)).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best, ModelParams::init(&cfg, 11));
}

#[test]
fn one_batch_one_epoch_keeps_the_stepped_params() {
    let cfg = small();
    let w = windows(&[recording("a", "fj", 1)], 20);
    let h = hyper(1, w.len());
    let out = train_model(&w, &w, &cfg, &h).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.best_epoch, Some(0));
    assert_ne!(out.best, ModelParams::init(&cfg, 11));
    // the same single step again gives the same parameters
    assert_eq!(out, train_model(&w, &w, &cfg, &h).unwrap());
}

#[test]
fn empty_sets_are_rejected() {
    let cfg = small();
    let w = windows(&[recording("a", "f", 1)], 20);
    assert_eq!(train_model(&[], &w, &cfg, &hyper(1, 4)), Err(Error::EmptyDataset));
    assert_eq!(train_model(&w, &[], &cfg, &hyper(1, 4)), Err(Error::EmptyDataset));
}

#[test]
fn micro_dataset_learns() {
    // two classes: idle and f, about 200 frames
    let cfg = small();
    let rec = recording("a", "fffffffffffffffffff", 2);
    assert!((150..=260).contains(&rec.frames.len()), "{}", rec.frames.len());
    let w = windows(&[rec], 20);
    let out = train_model(&w, &w, &cfg, &hyper(30, 4)).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    let lrs: Vec<f64> = out.history.iter().map(|r: &EpochRecord| r.lr).collect();
    assert!(lrs.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = small();
    let recs = [recording("a", "the fox", 3), recording("b", "lazy dog", 4)];
    let w = windows(&recs, 20);
    let mut weights = [1.0; NUM_CLASSES];
    weights[0] = 0.1;
    let h = TrainConfig {
        loss: LossKind::WeightedCrossEntropy(weights),
        ..hyper(3, 5)
    };
    let a = train_model(&w, &w, &cfg, &h).unwrap();
    let b = train_model(&w, &w, &cfg, &h).unwrap();
    assert_eq!(a, b);
    let bits = |r: &[EpochRecord]| r.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.history), bits(&b.history));
}

#[test]
fn validation_recordings_stay_out_of_training() {
    let recs: Vec<Recording> = (0..6).map(|i| recording(&format!("r{i}"), "abc", i)).collect();
    let ids: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
    let plan = make_folds(&ids, 3, 9).unwrap();
    for fold in 0..3 {
        let train_ids = plan.train(fold);
        let train: Vec<Recording> = recs.iter().filter(|r| train_ids.contains(&r.id)).cloned().collect();
        let w = windows(&train, 20);
        assert!(w.iter().all(|win| !plan.validation(fold).contains(&win.recording)));
    }
}
