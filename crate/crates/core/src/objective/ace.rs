use crate::dataset::ClassId;

#[derive(Debug, Clone, PartialEq)]
pub struct AceLoss {
    pub loss: f64,
    /// Gradient with respect to each logit row.
    pub grad: Vec<Vec<f64>>,
}

/// `w_c = N / (C · N_c)`; classes absent from `counts` get weight 1.
pub fn inverse_frequency_weights(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let c = counts.len() as f64;
    counts
        .iter()
        .map(|&nc| if nc == 0 { 1.0 } else { n as f64 / (c * nc as f64) })
        .collect()
}

/// Rescales weights to mean 1. Equal weights map to exactly 1.
pub fn normalized_weights(weights: &[f64]) -> Vec<f64> {
    if weights.windows(2).all(|w| w[0] == w[1]) {
        return vec![1.0; weights.len()];
    }
    let sum: f64 = weights.iter().sum();
    let c = weights.len() as f64;
    weights.iter().map(|w| w * c / sum).collect()
}

/// Alpha (class-weighted) cross-entropy:
/// `mean_i w_{y_i} · -log softmax(z_i)_{y_i}` with weights at mean 1.
pub fn ace_loss(logits: &[Vec<f64>], labels: &[ClassId], class_weights: &[f64]) -> AceLoss {
    assert_eq!(logits.len(), labels.len(), "one logit row per label");
    let w = normalized_weights(class_weights);
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let lse = max + sum.ln();
            loss += w[y] * (lse - z[y]);
            exps.iter()
                .enumerate()
                .map(|(c, e)| {
                    let soft = e / sum;
                    w[y] * (soft - if c == y { 1.0 } else { 0.0 }) / n
                })
                .collect()
        })
        .collect();
    AceLoss { loss: loss / n, grad }
}
