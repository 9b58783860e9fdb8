//! Evaluation metrics and the zero-velocity baseline.

use serde::Serialize;
use symgnn_autodiff::Tensor;

use crate::data::Repr;
use crate::error::{ensure, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    /// One entry per future frame.
    pub pck_005: Option<Vec<f64>>,
    /// One entry per future frame.
    pub mae: Option<Vec<f64>>,
    /// Mean per-sample ℓ1 error of the predicted clips.
    pub pred_l1: Option<f64>,
    pub zerov_l1: Option<f64>,
}

/// Fraction of rows of `posteriors [N, C]` whose label is among the `k`
/// largest entries; ties rank the lower class index first.
pub fn topk(posteriors: &Tensor<f64>, labels: &[usize], k: usize) -> Result<f64> {
    let s = posteriors.shape();
    ensure!(s.len() == 2 && s[0] == labels.len(), "posteriors {s:?} for {} labels", labels.len());
    let c = s[1];
    ensure!(k >= 1 && k <= c, "k = {k} outside 1..={c}");
    ensure!(!labels.is_empty(), "no samples");
    let mut hits = 0usize;
    for (row, &y) in posteriors.data().chunks(c).zip(labels) {
        ensure!(y < c, "label {y} out of range for {c} classes");
        let py = row[y];
        let rank = row.iter().enumerate().filter(|&(j, &p)| p > py || (p == py && j < y)).count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Largest pairwise joint distance of frame 0 of each target clip
/// `[N, T, M, D]`.
pub fn pck_normalizer(target: &Tensor<f64>) -> Result<Vec<f64>> {
    let s = target.shape();
    ensure!(s.len() == 4, "expected [N, T, M, D], got {s:?}");
    let (n, t, m, d) = (s[0], s[1], s[2], s[3]);
    let data = target.data();
    Ok((0..n)
        .map(|i| {
            let frame = &data[i * t * m * d..i * t * m * d + m * d];
            let mut best = 0.0f64;
            for a in 0..m {
                for b in a + 1..m {
                    let dist = (0..d).map(|c| (frame[a * d + c] - frame[b * d + c]).powi(2)).sum::<f64>().sqrt();
                    best = best.max(dist);
                }
            }
            best
        })
        .collect())
}

/// Per-frame fraction of joints with `‖pred − target‖ / norm < threshold`.
pub fn pck(pred: &Tensor<f64>, target: &Tensor<f64>, threshold: f64, normalizer: &[f64]) -> Result<Vec<f64>> {
    let s = target.shape();
    ensure!(pred.shape() == s, "prediction {:?} and target {s:?} differ", pred.shape());
    ensure!(s.len() == 4, "expected [N, T, M, D], got {s:?}");
    let (n, t, m, d) = (s[0], s[1], s[2], s[3]);
    ensure!(normalizer.len() == n, "{} normalizers for {n} samples", normalizer.len());
    ensure!(normalizer.iter().all(|&z| z > 0.0 && z.is_finite()), "PCK normalizer must be positive");
    let mut hits = vec![0usize; t];
    for (i, &z) in normalizer.iter().enumerate() {
        for (f, h) in hits.iter_mut().enumerate() {
            for j in 0..m {
                let base = ((i * t + f) * m + j) * d;
                let dist = (0..d)
                    .map(|c| (pred.data()[base + c] - target.data()[base + c]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if dist / z < threshold {
                    *h += 1;
                }
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / (n * m) as f64).collect())
}

/// Per-frame mean absolute error over samples, joints and coordinates of
/// exponential-map clips.
pub fn mae(pred: &Tensor<f64>, target: &Tensor<f64>, repr: Repr) -> Result<Vec<f64>> {
    ensure!(repr == Repr::Expmap, "MAE is an angle metric and needs expmap data");
    let s = target.shape();
    ensure!(pred.shape() == s, "prediction {:?} and target {s:?} differ", pred.shape());
    ensure!(s.len() == 4, "expected [N, T, M, D], got {s:?}");
    let (n, t, per) = (s[0], s[1], s[2] * s[3]);
    let mut sums = vec![0.0; t];
    for i in 0..n {
        for (f, acc) in sums.iter_mut().enumerate() {
            let base = (i * t + f) * per;
            for k in base..base + per {
                *acc += (pred.data()[k] - target.data()[k]).abs();
            }
        }
    }
    Ok(sums.into_iter().map(|v| v / (n * per) as f64).collect())
}

/// `steps` copies of the last frame of `prev [T, M, D]`.
pub fn zerov_baseline(prev: &Tensor<f64>, steps: usize) -> Result<Tensor<f64>> {
    let s = prev.shape();
    ensure!(s.len() == 3, "expected [T, M, D], got {s:?}");
    ensure!(s[0] >= 1, "empty observed clip");
    let per = s[1] * s[2];
    let last = &prev.data()[(s[0] - 1) * per..];
    Ok(Tensor::new(&[steps, s[1], s[2]], last.repeat(steps))?)
}

/// `(1/N) Σ_n ‖pred_n − target_n‖₁`.
pub fn pred_l1(pred: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    ensure!(pred.shape() == target.shape(), "prediction {:?} and target {:?} differ", pred.shape(), target.shape());
    ensure!(!pred.shape().is_empty() && pred.shape()[0] > 0, "no samples");
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.shape()[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_tie_prefers_lower_index() {
        let p = Tensor::from_f64(&[1, 3], &[0.4, 0.4, 0.2]).unwrap();
        assert_eq!(topk(&p, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk(&p, &[1], 1).unwrap(), 0.0);
        assert_eq!(topk(&p, &[1], 2).unwrap(), 1.0);
        assert!(topk(&p, &[1], 4).is_err());
    }

    #[test]
    fn pck_is_strict() {
        let target = Tensor::zeros(&[1, 1, 2, 1]);
        let pred = Tensor::from_f64(&[1, 1, 2, 1], &[0.05, 0.0]).unwrap();
        assert_eq!(pck(&pred, &target, 0.05, &[1.0]).unwrap(), vec![0.5]);
        assert!(pck(&pred, &target, 0.05, &[0.0]).is_err());
    }

    #[test]
    fn mae_rejects_xyz() {
        let t = Tensor::zeros(&[1, 1, 1, 3]);
        assert!(mae(&t, &t, Repr::Xyz).is_err());
        assert!((mae(&t, &t.map(|v| v + 0.1), Repr::Expmap).unwrap()[0] - 0.1).abs() < 1e-15);
    }
}
