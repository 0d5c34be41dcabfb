use bcdunet::data::{synth_dataset, SynthKind};
use bcdunet::model::{Model, ModelConfig, Preset};
use bcdunet::nn::Mode;
use bcdunet::train::{evaluate, fit, EarlyStopping, Example, OptimizerKind, TrainConfig, Trainer};
use bcdunet::{Real, Tensor};

fn micro(seed: u64) -> ModelConfig {
    ModelConfig {
        seed,
        ..Preset::Micro.model_config()
    }
}

fn discs<T: Real>(n: usize, seed: u64, prefix: &str) -> Vec<Example<T>> {
    synth_dataset(SynthKind::Discs, n, 8, seed)
        .unwrap()
        .iter()
        .map(|p| p.to_example(&format!("{prefix}{}", p.id)))
        .collect()
}

fn batch_loss(model: &Model<f64>, data: &[Example<f64>]) -> f64 {
    let inputs: Vec<_> = data.iter().map(|e| e.input.clone()).collect();
    let targets: Vec<_> = data.iter().map(|e| e.target.clone()).collect();
    let y = Tensor::stack(&targets).unwrap();
    let mut s = model.session(Mode::Train);
    let x = s.input(Tensor::stack(&inputs).unwrap());
    let p = model.forward(&mut s, x).unwrap();
    let l = s.graph.bce(p, &y).unwrap();
    s.graph.value(l).item().unwrap()
}

#[test]
fn one_adam_step_lowers_the_batch_loss() {
    let mut decreased = 0;
    for seed in 0..20 {
        let mut model = Model::<f64>::build(micro(seed)).unwrap();
        let data = discs::<f64>(4, seed, "");
        let before = batch_loss(&model, &data);
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, &model).unwrap();
        trainer.train_epoch(&mut model, &data, 1).unwrap();
        if batch_loss(&model, &data) < before {
            decreased += 1;
        }
    }
    assert_eq!(decreased, 20);
}

fn small_fit(seed: u64) -> (Model<f32>, bcdunet::train::TrainLog, Vec<Example<f32>>) {
    let mut model = Model::<f32>::build(micro(seed)).unwrap();
    let train = discs::<f32>(6, 1, "t");
    let val = discs::<f32>(2, 2, "v");
    let config = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 3,
        max_epochs: 12,
        patience: 3,
        seed,
        ..TrainConfig::default()
    };
    let log = fit(&mut model, &train, &val, &config).unwrap();
    (model, log, val)
}

#[test]
fn fit_is_reproducible() {
    let (ma, la, _) = small_fit(5);
    let (mb, lb, _) = small_fit(5);
    assert_eq!(la.to_text(), lb.to_text());
    for (a, b) in ma.store().entries().iter().zip(mb.store().entries()) {
        assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
    }
}

#[test]
fn fit_restores_the_best_epoch() {
    let (model, log, val) = small_fit(0);
    let min = log
        .records
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(log.best_val_loss, min);
    assert_eq!(log.records[log.best_epoch - 1].val_loss, min);
    let again = evaluate(&model, &val, 3).unwrap();
    assert_eq!(again.loss, min);
    if log.stopping_epoch < 12 {
        assert!(log.stopping_epoch >= log.best_epoch + 3);
    }
}

#[test]
fn constant_validation_loss_stops_at_one_plus_patience() {
    for patience in [1, 3, 10] {
        let mut es = EarlyStopping::new(patience, 1e-4);
        let stop = (1..=100).find(|&e| es.observe(e, 0.693).stop);
        assert_eq!(stop, Some(1 + patience));
        assert_eq!(es.best_epoch(), 1);
    }
}

#[test]
fn stalled_fit_stops_patience_epochs_after_its_best() {
    let mut model = Model::<f32>::build(micro(0)).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-9,
        optimizer: OptimizerKind::Sgd,
        batch_size: 2,
        max_epochs: 40,
        patience: 10,
        ..TrainConfig::default()
    };
    let log = fit(&mut model, &discs(2, 1, "t"), &discs(2, 2, "v"), &config).unwrap();
    assert!(log.stopping_epoch < 40);
    assert_eq!(log.stopping_epoch, log.best_epoch + 10);
}

#[test]
fn fit_rejects_shared_sources() {
    let mut model = Model::<f32>::build(micro(0)).unwrap();
    let train = discs::<f32>(3, 1, "x");
    let err = fit(&mut model, &train, &train[..1], &TrainConfig::default()).unwrap_err();
    assert!(err.to_string().contains("xdiscs000"), "{err}");
}

#[test]
fn trainlog_text_round_trips_records() {
    let (_, log, _) = small_fit(1);
    let parsed = bcdunet::train::TrainLog::parse_records(&log.to_text()).unwrap();
    assert_eq!(parsed.len(), log.records.len());
    for (a, b) in parsed.iter().zip(&log.records) {
        assert_eq!(a.epoch, b.epoch);
        assert!((a.val_loss - b.val_loss).abs() < 1e-9);
    }
}
