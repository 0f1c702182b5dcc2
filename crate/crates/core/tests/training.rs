mod support;

use sparseforge::autodiff::{Graph, Variable};
use sparseforge::data_io::{load_mnist, Dataset, Split};
use sparseforge::network::init_weights;
use sparseforge::training::{accuracy, fit, total_loss, train, FitOptions, OptimizerKind};
use sparseforge::{prune, Error, Network, NetworkSpec, Tensor, TrainConfig};

/// 100 MNIST training images when the data is present, synthetic ones otherwise.
fn slice_100() -> Dataset {
    match load_mnist(support::data_dir()) {
        Ok((train, _)) => train.head(100).unwrap(),
        Err(_) => support::synthetic(100, 9),
    }
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 20,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_threshold_sibling_matches_baseline_bit_for_bit() {
    let spec = NetworkSpec::lenet300();
    let data = slice_100();
    let cfg = TrainConfig {
        lambda_t: 0.0,
        p_init: 0.0,
        ..small_config(1)
    };
    let mut base = Network::new(spec.clone(), init_weights(&spec, 4)).unwrap();
    let mut sib = Network::sibling(spec.clone(), init_weights(&spec, 4), cfg.alpha, 0.0).unwrap();
    for layer in sib.layers_mut() {
        let t = layer.threshold.as_mut().unwrap();
        assert!(t.value.data().iter().all(|&v| v == 0.0));
        *t = Variable::constant(t.value.clone());
    }
    fit(&mut base, &data, &cfg, FitOptions::default()).unwrap();
    fit(&mut sib, &data, &cfg, FitOptions::default()).unwrap();
    assert_eq!(base.params(), sib.params());
    assert_eq!(accuracy(&base, &data, 50).unwrap(), accuracy(&sib, &data, 50).unwrap());
}

#[test]
fn same_seed_gives_identical_reports() {
    let data = support::synthetic(200, 1);
    let spec = NetworkSpec::lenet300();
    let (a, ra) = train(&spec, &data, &small_config(2)).unwrap();
    let (b, rb) = train(&spec, &data, &small_config(2)).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    let (_, rc) = train(
        &spec,
        &data,
        &TrainConfig {
            seed: 1,
            ..small_config(2)
        },
    )
    .unwrap();
    assert_ne!(ra, rc);
}

#[test]
fn weight_gradients_ignore_threshold_penalty() {
    let spec = NetworkSpec::lenet300();
    let data = support::synthetic(32, 2);
    let (images, labels) = data.batch(&(0..32).collect::<Vec<_>>()).unwrap();
    let net = support::random_sibling(&spec, 5);
    let weight_grads = |lambda_t: f64| {
        let cfg = TrainConfig {
            lambda_t,
            ..TrainConfig::default()
        };
        let mut g = Graph::new();
        let loss = total_loss(&mut g, &net, &images, &labels, &cfg).unwrap();
        g.backward(loss.total).unwrap();
        loss.forward
            .params
            .iter()
            .map(|p| (g.grad_or_zeros(p.weight), g.grad_or_zeros(p.threshold.unwrap())))
            .collect::<Vec<_>>()
    };
    let (a, b) = (weight_grads(0.0), weight_grads(0.5));
    for ((wa, ta), (wb, tb)) in a.iter().zip(&b) {
        assert_eq!(wa, wb);
        assert_ne!(ta, tb);
    }
}

#[test]
fn report_is_consistent_and_thresholds_stay_non_negative() {
    let data = support::synthetic(300, 3);
    let cfg = TrainConfig {
        optimizer: OptimizerKind::adam(3e-3),
        rho: 1.0,
        lambda_t: 1.0,
        ..small_config(3)
    };
    let (net, report) = train(&NetworkSpec::lenet300(), &data, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 3);
    for e in &report.epochs {
        let sum = e.cross_entropy + e.weight_decay + e.threshold_loss;
        assert!((sum - e.loss).abs() <= 1e-6 * e.loss.abs());
        assert!(e.thresholds.iter().flatten().all(|&t| t >= 0.0));
    }
    let first = &report.epochs[0];
    let last = report.last().unwrap();
    assert!(last.mean_threshold() > first.mean_threshold());
    assert!(last.threshold_loss < first.threshold_loss);
    assert!(last.train_accuracy > 0.9, "synthetic classes are separable");
    assert!(accuracy(&net, &data, 100).unwrap() > 0.9);

    let model = prune(&net, cfg.gamma).unwrap();
    let live: Vec<f64> = model
        .stats()
        .layers
        .iter()
        .map(|l| l.kept as f64 / l.total as f64)
        .collect();
    for (a, b) in live.iter().zip(&last.live_fraction) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn threads_split_batches_deterministically() {
    let data = support::synthetic(120, 4);
    let spec = NetworkSpec::lenet300();
    let cfg = TrainConfig {
        threads: 3,
        ..small_config(1)
    };
    let (a, _) = train(&spec, &data, &cfg).unwrap();
    let (b, _) = train(&spec, &data, &cfg).unwrap();
    assert_eq!(a, b);
    let (serial, _) = train(&spec, &data, &small_config(1)).unwrap();
    let diff = a.layers()[0]
        .weight
        .value
        .data()
        .iter()
        .zip(serial.layers()[0].weight.value.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(diff < 1e-4, "{diff}");
}

#[test]
fn empty_and_diverging_runs_fail() {
    let spec = NetworkSpec::lenet300();
    let data = support::synthetic(40, 5);
    let empty = Dataset::new(Tensor::zeros([0, 1, 28, 28]), Vec::new(), Split::Custom).unwrap();
    assert!(matches!(
        train(&spec, &empty, &small_config(1)),
        Err(Error::EmptyDataset)
    ));
    let cfg = TrainConfig {
        optimizer: OptimizerKind::sgd(1e30),
        ..small_config(1)
    };
    assert!(matches!(train(&spec, &data, &cfg), Err(Error::Divergence { .. })));
}
