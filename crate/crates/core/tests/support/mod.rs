//! Shared oracles for the integration and acceptance targets.
//!
//! Every check returns `Ok(detail)` or `Err(reason)` so the acceptance
//! runner can print a verdict line and the integration tests can assert.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseforge::data_io::mnist::{parse_images, parse_labels};
use sparseforge::data_io::model_file::{decode, encode_checkpoint, encode_sparse};
use sparseforge::data_io::{Checkpoint, Dataset, ModelArtifact, Split};
use sparseforge::export::Provenance;
use sparseforge::network::{init_weights, LayerParams};
use sparseforge::pruning_math::{theta, theta_bar, theta_inv, DEFAULT_INVERSE_TOL, SIGMOID_CLAMP};
use sparseforge::{prune, Error, FormatError, Network, NetworkSpec, PruneParams, Tensor};

pub type Outcome = Result<String, String>;

/// MNIST directory: `SPARSEFORGE_DATA_DIR`, else `data/mnist` at the workspace root.
pub fn data_dir() -> PathBuf {
    match std::env::var_os("SPARSEFORGE_DATA_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

pub fn params(alpha: f64, t: f64) -> PruneParams {
    PruneParams::new(alpha, t).expect("valid parameters")
}

/// Max grid deviation of the sharp pruning function from the hard dead-zone
/// map, away from the kinks at `+-t`.
pub fn weak_convergence() -> Outcome {
    let alpha = 1e4;
    let mut worst = Vec::new();
    for t in [0.5, 1.0, 2.0] {
        let p = params(alpha, t);
        let bound = 1e-2 * f64::max(t, 1.0);
        let mut max_dev = 0.0f64;
        for i in 0..=200_000 {
            let x = -10.0 + 1e-4 * i as f64;
            if (x.abs() - t).abs() <= 0.01 {
                continue;
            }
            let dev = (theta(x, p).unwrap() - theta_bar(x, t).unwrap()).abs();
            max_dev = max_dev.max(dev);
        }
        if max_dev > bound {
            return Err(format!("t = {t}: deviation {max_dev:.3e} > {bound:.1e}"));
        }
        worst.push(format!("t={t}: {max_dev:.1e}"));
    }
    Ok(format!("max deviation {}", worst.join(", ")))
}

/// Inverse round trip on random points, then the full cut pipeline against
/// the direct filter on random weights.
pub fn inverse_and_pipeline(samples: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut tested = 0;
    while tested < samples {
        let alpha = 10f64.powf(rng.random_range(0.0..3.0));
        let t = 10f64.powf(rng.random_range(-3.0..0.7));
        let x: f64 = rng.random_range(-10.0..10.0);
        // The clamp makes theta constant deep in the dead zone.
        if alpha * (t - x.abs()) >= SIGMOID_CLAMP {
            continue;
        }
        let p = params(alpha, t);
        let back = theta_inv(theta(x, p).unwrap(), p, DEFAULT_INVERSE_TOL).map_err(|e| e.to_string())?;
        max_err = max_err.max((back - x).abs());
        tested += 1;
    }
    if max_err > 1e-8 {
        return Err(format!("inverse round-trip error {max_err:.3e} > 1e-8"));
    }

    let (kept, total, value_err) = pipeline_vs_filter(samples, seed ^ 0x5eed)?;
    if value_err > 1e-8 {
        return Err(format!("pipeline values differ by {value_err:.3e}"));
    }
    Ok(format!(
        "inverse error {max_err:.1e}; pipeline kept {kept}/{total}, identical support, value error {value_err:.1e}"
    ))
}

/// Prunes a random single-layer sibling network and compares the stored
/// weights with "keep `w` iff `|theta(w; t)| >= gamma`".
pub fn pipeline_vs_filter(weights: usize, seed: u64) -> Result<(usize, usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = 100;
    let rows = weights.div_ceil(cols);
    let spec = NetworkSpec::new(
        "probe",
        vec![cols],
        rows,
        vec![sparseforge::LayerSpec::dense("fc", cols, rows)],
    )
    .map_err(|e| e.to_string())?;
    let weight = Tensor::from_fn([rows, cols], |_| rng.random_range(-0.3f32..0.3));
    let bias = Tensor::zeros([rows]);
    let alpha = 100.0;
    let t = 0.1;
    let gamma = 1e-3;
    let mut net = Network::sibling(spec, vec![LayerParams { weight, bias }], alpha, 0.0).map_err(|e| e.to_string())?;
    net.layers_mut()[0].threshold.as_mut().unwrap().value.data_mut()[0] = t as f32;
    let model = prune(&net, gamma).map_err(|e| e.to_string())?;
    let stored = model.layers[0].to_dense();
    let p = params(alpha, t);
    let mut kept = 0;
    let mut value_err = 0.0f64;
    for (&w, &s) in net.layers()[0].weight.value.data().iter().zip(&stored) {
        let keep = theta(w as f64, p).unwrap().abs() >= gamma;
        if keep != (s != 0.0) {
            return Err(format!("support differs at weight {w}"));
        }
        if keep {
            kept += 1;
            value_err = value_err.max((s as f64 - w as f64).abs());
        }
    }
    Ok((kept, stored.len(), value_err))
}

/// Two 28x28 images written byte by byte: image 0 holds `i % 256`, image 1
/// holds `255 - i % 256`.
pub fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
    images.extend((0..784).map(|i| (i % 256) as u8));
    images.extend((0..784).map(|i| 255 - (i % 256) as u8));
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
    (images, labels)
}

fn format_error(result: Result<impl std::fmt::Debug, Error>) -> Option<FormatError> {
    match result {
        Err(Error::Format(e)) => Some(e),
        _ => None,
    }
}

/// The hand-made fixture parses to known pixels and each corrupt variant is
/// rejected with its own error kind.
pub fn idx_corpus() -> Outcome {
    let (images, labels) = idx_fixture();
    let pixels = parse_images(&images).map_err(|e| e.to_string())?;
    if pixels.shape() != [2, 1, 28, 28] {
        return Err(format!("fixture shape {:?}", pixels.shape()));
    }
    for (i, &v) in pixels.data().iter().enumerate() {
        let raw = if i < 784 { i % 256 } else { 255 - (i - 784) % 256 };
        if v != raw as f32 / 255.0 {
            return Err(format!("pixel {i} = {v}"));
        }
    }
    if parse_labels(&labels).map_err(|e| e.to_string())? != [7, 3] {
        return Err("fixture labels".into());
    }

    let mut wrong_magic = images.clone();
    wrong_magic[3] = 1;
    let mut wrong_dims = images.clone();
    wrong_dims[11] = 27;
    let short_payload = &images[..images.len() - 1];
    let mut bad_label = labels.clone();
    bad_label[9] = 10;
    let mut label_magic = labels.clone();
    label_magic[3] = 3;

    type Case = (&'static str, Option<FormatError>, fn(&FormatError) -> bool);
    let cases: Vec<Case> = vec![
        ("empty file", format_error(parse_images(&[])), |e| {
            matches!(e, FormatError::Truncated { .. })
        }),
        ("short header", format_error(parse_images(&images[..10])), |e| {
            matches!(e, FormatError::Truncated { found: 10, .. })
        }),
        ("short payload", format_error(parse_images(short_payload)), |e| {
            matches!(
                e,
                FormatError::Truncated {
                    expected: 1584,
                    found: 1583
                }
            )
        }),
        ("wrong image magic", format_error(parse_images(&wrong_magic)), |e| {
            matches!(
                e,
                FormatError::BadMagic {
                    expected: 0x803,
                    found: 0x801
                }
            )
        }),
        ("wrong label magic", format_error(parse_labels(&label_magic)), |e| {
            matches!(
                e,
                FormatError::BadMagic {
                    expected: 0x801,
                    found: 0x803
                }
            )
        }),
        ("wrong dimensions", format_error(parse_images(&wrong_dims)), |e| {
            matches!(e, FormatError::BadDimensions { rows: 27, cols: 28 })
        }),
        ("label out of range", format_error(parse_labels(&bad_label)), |e| {
            matches!(e, FormatError::LabelOutOfRange(10))
        }),
        (
            "count mismatch",
            format_error(Dataset::new(pixels.clone(), vec![1, 2, 3], Split::Custom)),
            |e| matches!(e, FormatError::CountMismatch { images: 2, labels: 3 }),
        ),
    ];
    for (name, err, expected) in &cases {
        match err {
            Some(e) if expected(e) => {}
            other => return Err(format!("{name}: got {other:?}")),
        }
    }
    Ok(format!("fixture parsed, {} corrupt variants rejected", cases.len()))
}

/// A random sibling network with spread-out thresholds.
pub fn random_sibling(spec: &NetworkSpec, seed: u64) -> Network<f32> {
    let mut net = Network::sibling(spec.clone(), init_weights(spec, seed), 100.0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in net.layers_mut() {
        for t in layer.threshold.as_mut().unwrap().value.data_mut() {
            *t = rng.random_range(0.0..0.08);
        }
    }
    net
}

/// encode -> decode -> encode is byte-identical for checkpoints and sparse
/// models of both architectures.
pub fn spfg_round_trip() -> Outcome {
    let mut checked = 0;
    for spec in [NetworkSpec::lenet300(), NetworkSpec::lenet5_small()] {
        let net = random_sibling(&spec, 11);
        let provenance = Provenance {
            config_digest: 0xfeed,
            seed: 11,
        };
        let ckpt = Checkpoint {
            network: net.clone(),
            provenance,
        };
        let bytes = encode_checkpoint(&ckpt);
        match decode(&bytes).map_err(|e| e.to_string())? {
            ModelArtifact::Checkpoint(back) if back == ckpt && encode_checkpoint(&back) == bytes => {}
            _ => return Err(format!("{}: checkpoint round trip differs", spec.arch)),
        }
        let model = prune(&net, 1e-3)
            .map_err(|e| e.to_string())?
            .with_provenance(provenance);
        let bytes = encode_sparse(&model);
        match decode(&bytes).map_err(|e| e.to_string())? {
            ModelArtifact::Sparse(back) if back == model && encode_sparse(&back) == bytes => {}
            _ => return Err(format!("{}: sparse round trip differs", spec.arch)),
        }
        let mut corrupt = bytes.clone();
        corrupt[bytes.len() / 2] ^= 0x40;
        if !matches!(decode(&corrupt), Err(Error::Format(FormatError::Checksum { .. }))) {
            return Err(format!("{}: corrupted payload not detected", spec.arch));
        }
        checked += 2;
    }
    Ok(format!("{checked} artifacts byte-identical, corruption detected"))
}

/// Linearly separable ten-class images: class `c` lights up a band of rows
/// with some noise.
pub fn synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let mut pixels = Vec::with_capacity(n * 784);
    for &c in &labels {
        for p in 0..784 {
            let row = p / 28;
            let on = row / 3 == c as usize || (row == 29 - c as usize);
            let base = if on { 0.8 } else { 0.05 };
            pixels.push(base + rng.random_range(0.0..0.15f32));
        }
    }
    let images = Tensor::new([n, 1, 28, 28], pixels).unwrap();
    Dataset::new(images, labels, Split::Custom).unwrap()
}

/// Straight transcription of the definition, independent of the library's
/// cancellation-free form.
pub fn theta_reference(x: f64, alpha: f64, t: f64) -> f64 {
    let s = |z: f64| 1.0 / (1.0 + (-z).exp());
    (x - t).max(0.0) + t * s(alpha * (x - t)) - (-x - t).max(0.0) - t * s(alpha * (-x - t))
}

/// Library derivatives against central differences of [`theta_reference`].
pub fn gradients_vs_reference(samples: usize, seed: u64) -> Outcome {
    use sparseforge::gradcheck::{rel_err, sample_point};
    use sparseforge::pruning_math::{theta_grad_t, theta_grad_x};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let (mut err_x, mut err_t) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let (x, alpha, t) = sample_point(&mut rng);
        let p = params(alpha, t);
        let fd_x = (theta_reference(x + h, alpha, t) - theta_reference(x - h, alpha, t)) / (2.0 * h);
        let fd_t = (theta_reference(x, alpha, t + h) - theta_reference(x, alpha, t - h)) / (2.0 * h);
        err_x = err_x.max(rel_err(theta_grad_x(x, p).unwrap(), fd_x));
        err_t = err_t.max(rel_err(theta_grad_t(x, p).unwrap(), fd_t));
    }
    if err_x.max(err_t) > 1e-4 {
        return Err(format!("max rel err dx {err_x:.3e}, dt {err_t:.3e}"));
    }
    Ok(format!("reference max rel err dx {err_x:.1e}, dt {err_t:.1e}"))
}
