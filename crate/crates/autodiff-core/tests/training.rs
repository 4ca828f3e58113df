use autodiff_core::{
    load_checkpoint, save_checkpoint, Adam, AutodiffError, Gradients, ParamStore, Tape, Tensor,
};

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::row(vec![0.25, -3.0]), true).unwrap();
    let mut grads = Gradients::empty(store.len());
    let zero_grad = {
        let mut t = Tape::new(&store);
        let wv = t.param(w);
        let z = t.scale(wv, 0.0).unwrap();
        let s = t.sum(z).unwrap();
        t.backward(s).unwrap()
    };
    grads.accumulate(&zero_grad).unwrap();
    let mut opt = Adam::default();
    for _ in 0..5 {
        opt.step(&mut store, &grads).unwrap();
    }
    assert_eq!(store.value(w).data(), &[0.25, -3.0]);
}

#[test]
fn adam_minimizes_a_quadratic() {
    // f(x) = 2 (x - 1.7)^2 has its minimum at 1.7
    let x_star = 1.7;
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(-0.4), true).unwrap();
    let mut opt = Adam::new(0.05).unwrap();
    for _ in 0..200 {
        let grads = {
            let mut t = Tape::new(&store);
            let xv = t.param(x);
            let d = t.add_scalar(xv, -x_star).unwrap();
            let sq = t.square(d).unwrap();
            let f = t.scale(sq, 2.0).unwrap();
            t.backward(f).unwrap()
        };
        opt.step(&mut store, &grads).unwrap();
    }
    let got = store.value(x).item();
    assert!((got - x_star).abs() < 1e-3, "{got}");
}

#[test]
fn learning_rate_after_ten_epochs() {
    let mut opt = Adam::default();
    assert_eq!(opt.learning_rate, 0.001);
    for epoch in 0..10 {
        opt.epoch_schedule(epoch);
        assert_eq!(opt.learning_rate, 0.001);
    }
    opt.epoch_schedule(10);
    assert!((opt.learning_rate - 0.00095).abs() < 1e-15);
}

fn sample_store() -> ParamStore {
    let mut store = ParamStore::new();
    store
        .add("enc.w", Tensor::from_fn(3, 4, |r, c| (r as f64 + 0.1) / (c as f64 + 0.3)), true)
        .unwrap();
    store.add("enc.b", Tensor::row(vec![f64::MIN_POSITIVE, -0.0, 1e300]), true).unwrap();
    store.add("frozen", Tensor::new(&[2], vec![std::f64::consts::PI, 1.0 / 3.0]).unwrap(), false).unwrap();
    store
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let store = sample_store();
    let meta = serde_json::json!({"d_model": 32, "lr": 0.001});
    save_checkpoint(&path, &store, &meta).unwrap();
    let (loaded, meta2) = load_checkpoint(&path).unwrap();
    assert_eq!(meta, meta2);
    assert_eq!(loaded.len(), store.len());
    for ((_, a), (_, b)) in store.iter().zip(loaded.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.requires_grad, b.requires_grad);
        assert_eq!(a.value.shape(), b.value.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &sample_store(), &serde_json::json!({})).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut flipped = good.clone();
    let last = flipped.len() - 10;
    flipped[last] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(AutodiffError::ChecksumMismatch { .. })));

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(AutodiffError::Checkpoint(_))));

    let key = b"\"format_version\": 1";
    let at = good.windows(key.len()).position(|w| w == key).unwrap();
    let mut bumped = good.clone();
    bumped[at + key.len() - 1] = b'9';
    std::fs::write(&path, &bumped).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(AutodiffError::VersionMismatch { found: 9, .. })));
}
