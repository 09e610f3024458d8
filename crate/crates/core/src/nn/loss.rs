//! Softmax and class-weighted cross-entropy.

use super::tensor::Tensor;

/// Row-wise softmax with per-row max subtraction for numerical stability.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let [b, classes]: [usize; 2] = logits
        .shape()
        .try_into()
        .expect("softmax input must be rank 2");
    let mut out = Tensor::zeros(&[b, classes]);
    for bi in 0..b {
        let row = &logits.data()[bi * classes..(bi + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out.data_mut()[bi * classes..(bi + 1) * classes];
        let mut sum = 0.0;
        for (o, &x) in orow.iter_mut().zip(row) {
            *o = (x - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Mean class-weighted negative log likelihood over the batch, plus the
/// gradient with respect to the probabilities. Probabilities below 1e-12
/// are clamped before the log and a warning is printed once per call.
pub fn weighted_cross_entropy(
    probs: &Tensor,
    targets: &[usize],
    class_weights: &[f64],
) -> (f64, Tensor) {
    const CLAMP: f64 = 1e-12;
    let [b, classes]: [usize; 2] = probs
        .shape()
        .try_into()
        .expect("loss input must be rank 2");
    assert_eq!(targets.len(), b, "one target per batch row");
    assert_eq!(class_weights.len(), classes, "one weight per class");
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[b, classes]);
    let inv_b = 1.0 / b as f64;
    let mut clamped = 0usize;
    for (bi, &t) in targets.iter().enumerate() {
        assert!(t < classes, "target {t} out of range for {classes} classes");
        let w = class_weights[t];
        let p = probs.data()[bi * classes + t];
        let p_safe = if p < CLAMP {
            clamped += 1;
            CLAMP
        } else {
            p
        };
        loss += -w * p_safe.ln();
        grad.data_mut()[bi * classes + t] = -w / p_safe * inv_b;
    }
    if clamped > 0 {
        eprintln!(
            "warning: clamped {clamped} probabilit{} below 1e-12 in cross-entropy",
            if clamped == 1 { "y" } else { "ies" }
        );
    }
    (loss * inv_b, grad)
}
