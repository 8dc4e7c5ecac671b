use super::*;
use crate::data::{synth_dataset, Image};
use crate::nets::EncoderPreset;

fn micro(learner: Learner, seed: u64) -> Network<f32> {
    Network::new(learner, EncoderPreset::by_name("desk_micro").unwrap(), [3, 16, 16], seed).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, augmentation: AugmentPolicy::off(), ..TrainConfig::default() }
}

fn normals(samples: &[Sample]) -> Vec<Sample> {
    samples.iter().filter(|s| s.label == Label::Normal).cloned().collect()
}

#[test]
fn config_preconditions() {
    let data = synth_dataset(8, 8, 16, 0);
    let mut net = micro(Learner::Classifier, 0);
    assert!(matches!(train_classifier(&mut net, &data, &[], &quick(0)), Err(TrainError::Config(_))));
    let cfg = TrainConfig { batch_size: 0, ..quick(1) };
    assert!(matches!(train_classifier(&mut net, &data, &[], &cfg), Err(TrainError::Config(_))));
    let cfg = TrainConfig { precision: Precision::F64, ..quick(1) };
    assert!(matches!(train_classifier(&mut net, &data, &[], &cfg), Err(TrainError::Config(_))));
    assert!(matches!(train_autoencoder(&mut net, &normals(&data), &[], &quick(1)), Err(TrainError::Config(_))));
}

#[test]
fn data_preconditions() {
    let data = synth_dataset(8, 8, 16, 0);
    let mut clf = micro(Learner::Classifier, 0);
    assert!(matches!(train_classifier(&mut clf, &normals(&data), &[], &quick(1)), Err(TrainError::Precondition(_))));
    let mut ae = micro(Learner::Autoencoder, 0);
    assert!(matches!(train_autoencoder(&mut ae, &data, &[], &quick(1)), Err(TrainError::Precondition(_))));
    assert!(matches!(train_autoencoder(&mut ae, &[], &[], &quick(1)), Err(TrainError::Precondition(_))));
    let mut semi = micro(Learner::Semi, 0);
    let unlabeled: Vec<Sample> = data.iter().cloned().map(|s| Sample { label: Label::Unlabeled, ..s }).collect();
    assert!(matches!(train_semi(&mut semi, &unlabeled, &[], &quick(1)), Err(TrainError::Precondition(_))));
    assert_eq!(clf.trained_epochs + ae.trained_epochs + semi.trained_epochs, 0);
}

#[test]
fn classifier_loss_decreases_and_reports_each_epoch() {
    // Dim normals, bright anomalies: separable by mean intensity alone.
    let level = |i: usize, anomalous: bool| {
        let v = 0.1 + 0.02 * (i % 10) as f32 + if anomalous { 0.5 } else { 0.0 };
        Sample {
            image: Image::filled(3, 16, 16, v),
            label: if anomalous { Label::Anomaly } else { Label::Normal },
            patient_id: format!("p{i}"),
            source_class: String::new(),
        }
    };
    let data: Vec<Sample> = (0..64).map(|i| level(i, i % 2 == 1)).collect();
    let val: Vec<Sample> = (0..16).map(|i| level(i + 3, i % 2 == 1)).collect();
    let mut net = micro(Learner::Classifier, 1);
    let cfg = TrainConfig { optimizer: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, ..quick(15) };
    let report = train_classifier(&mut net, &data, &val, &cfg).unwrap();
    assert_eq!(report.epoch_losses.len(), 15);
    assert_eq!(report.val_metrics.len(), 15);
    assert!(report.epoch_losses[14] < report.epoch_losses[0], "{:?}", report.epoch_losses);
    assert!(report.val_metrics[14].as_ref().unwrap().auc.unwrap() > 0.9);
    assert_eq!(net.trained_epochs, 15);
}

#[test]
fn training_is_deterministic_under_seed() {
    let data = synth_dataset(20, 20, 16, 5);
    let cfg = TrainConfig { augmentation: AugmentPolicy::default(), ..quick(2) };
    let mut a = micro(Learner::Classifier, 7);
    let mut b = micro(Learner::Classifier, 7);
    let ra = train_classifier(&mut a, &data, &[], &cfg).unwrap();
    let rb = train_classifier(&mut b, &data, &[], &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(ra.epoch_losses, rb.epoch_losses);
    let mut c = micro(Learner::Classifier, 7);
    train_classifier(&mut c, &data, &[], &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn autoencoder_fits_constant_images() {
    let img = Image::filled(3, 16, 16, 0.4);
    let data: Vec<Sample> = (0..32)
        .map(|i| Sample { image: img.clone(), label: Label::Normal, patient_id: format!("p{}", i % 4), source_class: "normal".into() })
        .collect();
    let mut net = micro(Learner::Autoencoder, 2);
    let cfg = TrainConfig { optimizer: AdamConfig { lr: 1e-2, ..AdamConfig::default() }, ..quick(30) };
    train_autoencoder(&mut net, &data, &[], &cfg).unwrap();
    let mse = infer::reconstruction_mse(&net, &[&img]).unwrap()[0];
    assert!(mse < 1e-3, "{mse}");
}

#[test]
fn semi_with_zero_lambda_matches_autoencoder() {
    let data = normals(&synth_dataset(24, 4, 16, 6));
    let cfg = TrainConfig { lambda: 0.0, augmentation: AugmentPolicy::default(), sampler: SamplerKind::Uniform, ..quick(2) };
    let mut ae = micro(Learner::Autoencoder, 3);
    let mut semi = micro(Learner::Semi, 3);
    let ra = train_autoencoder(&mut ae, &data, &[], &cfg).unwrap();
    let rs = train_semi(&mut semi, &data, &[], &cfg).unwrap();
    for (name, t) in ae.params.iter() {
        let other = semi.params.get(semi.params.find(name).unwrap());
        assert_eq!(t.data(), other.data(), "{name}");
    }
    assert_eq!(ra.epoch_losses, rs.epoch_losses);
}

#[test]
fn semi_uses_labeled_and_unlabeled_rows() {
    let mut data = synth_dataset(16, 16, 16, 8);
    for s in data.iter_mut().take(10) {
        s.label = Label::Unlabeled;
    }
    let mut net = micro(Learner::Semi, 4);
    let report = train_semi(&mut net, &data, &data, &quick(1)).unwrap();
    assert_eq!(report.train_samples, 32);
    assert!(report.epoch_losses[0].is_finite());
}

/// Loss of `net` on `batch` for the given objective, forward only.
fn loss_value(net: &Network<f64>, batch: &[Sample], objective: Objective) -> f64 {
    let refs: Vec<&Sample> = batch.iter().collect();
    let images: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
    let mut g = Graph::new();
    let p = net.params.bind_frozen(&mut g);
    let x = g.constant(to_batch::<f64>(&images).unwrap());
    let l = build_loss(net, &mut g, &p, &refs, x, objective).unwrap();
    g.value(l).item().unwrap()
}

#[test]
fn full_network_gradients_match_finite_differences() {
    use rand::{Rng, SeedableRng};
    let mut batch = synth_dataset(3, 3, 16, 9);
    batch[1].label = Label::Unlabeled;
    for (learner, objective) in
        [(Learner::Classifier, Objective::Classifier), (Learner::Autoencoder, Objective::Autoencoder), (Learner::Semi, Objective::Semi(0.7))]
    {
        let mut net = Network::<f64>::new(learner, EncoderPreset::by_name("desk_micro").unwrap(), [3, 16, 16], 5).unwrap();
        // Move the affine parameters off their init so every path is exercised.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for (_, t) in net.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        let batch: Vec<Sample> = if learner == Learner::Autoencoder { normals(&batch) } else { batch.clone() };
        let refs: Vec<&Sample> = batch.iter().collect();
        let images: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
        let mut g = Graph::new();
        let p = net.params.bind(&mut g);
        let x = g.constant(to_batch::<f64>(&images).unwrap());
        let l = build_loss(&net, &mut g, &p, &refs, x, objective).unwrap();
        g.backward(l).unwrap();
        net.params.unbind(&mut g, &p);
        let names: Vec<String> = net.params.names().to_vec();
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for name in &names {
            let id = net.params.find(name).unwrap();
            let n = net.params.get(id).len();
            // A few coordinates per tensor keeps the check fast.
            for j in [0, n / 2, n - 1] {
                let analytic = net.params.get(id).grad().unwrap()[j];
                let orig = net.params.get(id).data()[j];
                let h = 1e-6;
                net.params.get_mut(id).data_mut()[j] = orig + h;
                let up = loss_value(&net, &batch, objective);
                net.params.get_mut(id).data_mut()[j] = orig - h;
                let down = loss_value(&net, &batch, objective);
                net.params.get_mut(id).data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                diff2 += (analytic - numeric).powi(2);
                norm2 += analytic.powi(2) + numeric.powi(2);
            }
        }
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
        assert!(rel < 1e-4, "{learner}: {rel}");
    }
}
