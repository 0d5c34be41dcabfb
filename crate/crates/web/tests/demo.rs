use bcdunet_web::{DemoTrainer, DEMO_SIZE};

#[test]
fn training_lowers_loss_and_roc_spans_the_unit_square() {
    let mut t = DemoTrainer::new("discs", 4, 2, 1).unwrap();
    assert!(t.last_loss().is_nan());
    let first = t.step(1).unwrap();
    let later = t.step(8).unwrap();
    assert_eq!(t.epoch(), 9);
    assert!(later < first, "{first} -> {later}");

    let roc = t.roc().unwrap();
    assert_eq!(roc.len() % 2, 0);
    assert_eq!(&roc[..2], &[0.0, 0.0]);
    assert_eq!(&roc[roc.len() - 2..], &[1.0, 1.0]);
    let auc = t.auc().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(t.metrics().unwrap().contains("f1="));
}

#[test]
fn images_are_bytes_of_the_demo_size() {
    let t = DemoTrainer::new("vessels", 3, 1, 0).unwrap();
    let n = DEMO_SIZE * DEMO_SIZE;
    assert_eq!(t.input(0).len(), n);
    assert!(t.target(2).iter().all(|&v| v == 0 || v == 255));
    assert_eq!(t.prediction(1).unwrap().len(), n);
    assert!(t.prediction(3).is_err());
    assert!(t.input(3).is_empty());
}

#[test]
fn more_dense_blocks_means_more_parameters() {
    let one = DemoTrainer::new("discs", 2, 1, 0).unwrap().params();
    let three = DemoTrainer::new("discs", 2, 3, 0).unwrap().params();
    // bottleneck at 16 channels: blocks 2 and 3 take 16 and 32 inputs
    let block = |c_in: usize| c_in * 16 * 9 + 16 + 16 * 16 * 9 + 16;
    assert_eq!(three - one, block(16) + block(32));
}
