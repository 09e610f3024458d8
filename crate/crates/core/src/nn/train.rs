//! Minibatch training loop: shuffled epochs, class-weighted softmax
//! cross-entropy, RMSProp/Adam updates, best-validation weight retention,
//! and per-epoch history suitable for CSV export.

use super::layers::{
    backward, for_each_param_mut, forward, Cache, ForwardMode, LayerKind, Precision,
};
use super::loss::weighted_cross_entropy;
use super::optim::{Optimizer, OptimizerKind};
use super::tensor::Tensor;
use super::NnError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Input extents per sample, (h, w, c).
    pub input_shape: (usize, usize, usize),
    /// One weight per class, applied to the loss of samples of that class.
    pub class_weights: Vec<f64>,
    pub shuffle: bool,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub layers: Vec<LayerKind>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn batch_tensor(samples: &[Vec<f64>], shape: (usize, usize, usize)) -> Tensor {
    let (h, w, c) = shape;
    let per = h * w * c;
    let mut data = Vec::with_capacity(samples.len() * per);
    for s in samples {
        assert_eq!(s.len(), per, "sample length must match input shape");
        data.extend_from_slice(s);
    }
    Tensor::from_data(&[samples.len(), h, w, c], data)
}

fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let [b, classes]: [usize; 2] = probs.shape().try_into().unwrap();
    (0..b)
        .map(|bi| {
            let row = &probs.data()[bi * classes..(bi + 1) * classes];
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, av), (i, &v)| {
                    if v > av {
                        (i, v)
                    } else {
                        (ai, av)
                    }
                })
                .0
        })
        .collect()
}

/// Runs the model over `samples` in inference mode and returns
/// (mean weighted loss, accuracy, predicted labels).
pub fn evaluate(
    layers: &[LayerKind],
    samples: &[Vec<f64>],
    labels: &[usize],
    input_shape: (usize, usize, usize),
    class_weights: &[f64],
    batch_size: usize,
    precision: Precision,
) -> (f64, f64, Vec<usize>) {
    assert_eq!(samples.len(), labels.len());
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(samples.len());
    for (chunk, label_chunk) in samples
        .chunks(batch_size.max(1))
        .zip(labels.chunks(batch_size.max(1)))
    {
        let input = batch_tensor(chunk, input_shape);
        let (probs, _) = forward(layers, &input, ForwardMode::Infer, precision);
        let (loss, _) = weighted_cross_entropy(&probs, label_chunk, class_weights);
        total_loss += loss * chunk.len() as f64;
        for (pred, &truth) in argmax_rows(&probs).into_iter().zip(label_chunk) {
            if pred == truth {
                correct += 1;
            }
            predictions.push(pred);
        }
    }
    let n = samples.len().max(1) as f64;
    (total_loss / n, correct as f64 / n, predictions)
}

/// Trains `layers` in place over `epochs` passes. `fetch(epoch, index)`
/// produces the training sample for that epoch (the hook where per-epoch
/// augmentation plugs in); validation samples are fixed. Returns the
/// weights from the best validation-accuracy epoch.
#[allow(clippy::too_many_arguments)]
pub fn train(
    layers: Vec<LayerKind>,
    config: &TrainConfig,
    fetch: &(dyn Fn(usize, usize) -> Vec<f64> + Sync),
    train_labels: &[usize],
    val_samples: &[Vec<f64>],
    val_labels: &[usize],
) -> Result<TrainedModel, NnError> {
    let n = train_labels.len();
    if n == 0 || val_samples.is_empty() {
        return Err(NnError::Config("training and validation sets must be non-empty".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(NnError::Config("batch size and epochs must be >= 1".into()));
    }
    let mut layers = layers;
    let mut sizes = Vec::new();
    super::layers::for_each_param(&layers, &mut |t| sizes.push(t.len()));
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &sizes);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<LayerKind>)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if config.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1 + epoch as u64); // one shuffle stream per epoch
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<Vec<f64>> = batch.iter().map(|&i| fetch(epoch, i)).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let input = batch_tensor(&samples, config.input_shape);
            let dropout_seed = config
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((epoch as u64) << 24)
                .wrapping_add(batch_no as u64);
            let (probs, caches) = forward(
                &layers,
                &input,
                ForwardMode::Train { dropout_seed },
                config.precision,
            );
            let (loss, d_probs) = weighted_cross_entropy(&probs, &labels, &config.class_weights);
            if !loss.is_finite() {
                return Err(NnError::Divergence { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            for (pred, &truth) in argmax_rows(&probs).into_iter().zip(&labels) {
                if pred == truth {
                    correct += 1;
                }
            }
            let (_, grads) = backward_with_caches(&layers, &caches, &d_probs, config.precision);
            apply_grads(&mut layers, &mut optimizer, &grads);
        }

        let (val_loss, val_accuracy, _) = evaluate(
            &layers,
            val_samples,
            val_labels,
            config.input_shape,
            &config.class_weights,
            config.batch_size,
            config.precision,
        );
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / n as f64,
            train_accuracy: correct as f64 / n as f64,
            val_loss,
            val_accuracy,
        };
        if config.verbose {
            eprintln!(
                "epoch {:>3}  train loss {:.4}  train acc {:.4}  val loss {:.4}  val acc {:.4}",
                stats.epoch, stats.train_loss, stats.train_accuracy, stats.val_loss, stats.val_accuracy
            );
        }
        history.push(stats);
        let better = match &best {
            None => true,
            Some((_, acc, _)) => val_accuracy > *acc,
        };
        if better {
            best = Some((epoch, val_accuracy, layers.clone()));
        }
    }

    let (best_epoch, best_val_accuracy, best_layers) = best.expect("epochs >= 1");
    Ok(TrainedModel {
        layers: best_layers,
        history,
        best_epoch,
        best_val_accuracy,
    })
}

fn backward_with_caches(
    layers: &[LayerKind],
    caches: &[Cache],
    d_probs: &Tensor,
    precision: Precision,
) -> (Tensor, Vec<Tensor>) {
    backward(layers, caches, d_probs, precision)
}

/// Walks parameters in declaration order and applies the optimizer slot
/// by slot so grads[i] always updates the i-th parameter tensor.
fn apply_grads(layers: &mut [LayerKind], optimizer: &mut Optimizer, grads: &[Tensor]) {
    optimizer.begin_step();
    let opt = std::cell::RefCell::new(optimizer);
    let mut idx = 0usize;
    for_each_param_mut(layers, &mut |t| {
        opt.borrow_mut().apply_slot(idx, t, &grads[idx]);
        idx += 1;
    });
    assert_eq!(idx, grads.len(), "gradient count mismatch");
}

/// Writes the per-epoch history as CSV with a header row.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<(), NnError> {
    let mut file = std::fs::File::create(path).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut write = || -> std::io::Result<()> {
        writeln!(file, "epoch,train_loss,train_accuracy,val_loss,val_accuracy")?;
        for s in history {
            writeln!(
                file,
                "{},{},{},{},{}",
                s.epoch, s.train_loss, s.train_accuracy, s.val_loss, s.val_accuracy
            )?;
        }
        Ok(())
    };
    write().map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{build_model, ActivationKind, LayerConfig};

    fn blob_dataset() -> (Vec<Vec<f64>>, Vec<usize>) {
        // class 0: bright top-left quadrant; class 1: bright bottom-right
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng;
        for i in 0..80 {
            let class = i % 2;
            let mut img = vec![0.0; 64];
            for y in 0..4usize {
                for x in 0..4usize {
                    let (yy, xx) = if class == 0 { (y, x) } else { (y + 4, x + 4) };
                    img[yy * 8 + xx] = 0.8 + 0.2 * rng.gen::<f64>();
                }
            }
            samples.push(img);
            labels.push(class);
        }
        (samples, labels)
    }

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            seed: 5,
            precision: Precision::F64,
            input_shape: (8, 8, 1),
            class_weights: vec![1.0, 1.0],
            shuffle: true,
            verbose: false,
        }
    }

    fn small_model(seed: u64) -> Vec<crate::nn::LayerKind> {
        build_model(
            &[
                LayerConfig::Conv2d {
                    filters: 4,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: 0,
                },
                LayerConfig::Activation(ActivationKind::Relu),
                LayerConfig::GlobalAveragePool,
                LayerConfig::Dense { units: 2 },
                LayerConfig::Softmax,
            ],
            (8, 8, 1),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn learns_separable_blobs() {
        let (samples, labels) = blob_dataset();
        let (train_x, val_x) = samples.split_at(64);
        let (train_y, val_y) = labels.split_at(64);
        let model = train(
            small_model(1),
            &small_config(15),
            &|_, i| train_x[i].clone(),
            train_y,
            val_x,
            val_y,
        )
        .unwrap();
        assert!(
            model.best_val_accuracy > 0.9,
            "val accuracy {}",
            model.best_val_accuracy
        );
        assert_eq!(model.history.len(), 15);
    }

    #[test]
    fn training_is_deterministic() {
        let (samples, labels) = blob_dataset();
        let (train_x, val_x) = samples.split_at(64);
        let (train_y, val_y) = labels.split_at(64);
        let run = || {
            train(
                small_model(1),
                &small_config(3),
                &|_, i| train_x[i].clone(),
                train_y,
                val_x,
                val_y,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (ea, eb) in a.history.iter().zip(&b.history) {
            assert_eq!(ea.train_loss, eb.train_loss);
            assert_eq!(ea.val_accuracy, eb.val_accuracy);
        }
        assert_eq!(a.layers, b.layers);
    }

    #[test]
    fn divergent_loss_is_reported() {
        let (samples, labels) = blob_dataset();
        let (train_x, val_x) = samples.split_at(64);
        let (train_y, val_y) = labels.split_at(64);
        let mut cfg = small_config(5);
        cfg.learning_rate = 1e200; // blow up on purpose: products overflow to inf
        let err = train(
            small_model(1),
            &cfg,
            &|_, i| train_x[i].clone(),
            train_y,
            val_x,
            val_y,
        );
        match err {
            Err(NnError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn history_csv_round_trips_by_eye() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let history = vec![EpochStats {
            epoch: 0,
            train_loss: 0.5,
            train_accuracy: 0.75,
            val_loss: 0.6,
            val_accuracy: 0.7,
        }];
        write_history_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_loss"));
        assert!(text.contains("0,0.5,0.75,0.6,0.7"));
    }
}
