//! Connectionist temporal classification: loss, gradient and greedy decoding.
//!
//! Class layout: `0..P` are phonemes, the last class `P` is the blank.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};

use crate::error::{Error, Result};

/// Index of the blank class for `classes` output columns.
pub fn blank_of(classes: usize) -> u32 {
    classes as u32 - 1
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Fewest frames that can emit `labels`: one per label plus a blank between
/// each pair of repeated neighbours.
pub fn min_frames(labels: &[u32]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(labels: &[u32], frames: usize, classes: usize) -> std::result::Result<(), String> {
    let blank = blank_of(classes);
    if let Some(&bad) = labels.iter().find(|&&l| l >= blank) {
        return Err(format!("label {bad} is outside the {} phoneme classes", classes - 1));
    }
    let need = min_frames(labels);
    if need > frames {
        return Err(format!("{} labels need at least {need} frames, got {frames}", labels.len()));
    }
    Ok(())
}

/// Negative log-likelihood of `labels` under `log_probs` (`frames x classes`,
/// row-major) and its gradient with respect to every log-probability.
///
/// The log-probabilities are treated as free inputs, so the gradient at
/// `(t, k)` is minus the posterior occupancy of class `k` at frame `t`.
pub fn ctc_nll(log_probs: &[f64], classes: usize, labels: &[u32]) -> Result<(f64, Vec<f64>)> {
    if classes < 2 || log_probs.len() % classes != 0 {
        return Err(Error::Shape(format!("{} log-probs do not form rows of {classes}", log_probs.len())));
    }
    let frames = log_probs.len() / classes;
    check_labels(labels, frames, classes).map_err(Error::InvalidInput)?;
    let blank = blank_of(classes);
    let ext: Vec<u32> = std::iter::once(blank)
        .chain(labels.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = ext.len();
    let lp = |t: usize, s: usize| log_probs[t * classes + ext[s] as usize];
    // A state may skip the blank before it when its label differs from the
    // label two states back.
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; frames * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == neg { neg } else { a + lp(t, s) };
        }
    }
    let mut beta = vec![neg; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = lp(frames - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(frames - 1, s_len - 2);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == neg { neg } else { b + lp(t, s) };
        }
    }

    let mut log_total = alpha[last + s_len - 1];
    if s_len > 1 {
        log_total = log_add(log_total, alpha[last + s_len - 2]);
    }
    if !log_total.is_finite() {
        return Err(Error::NonFinite {
            term: "ctc".into(),
            step: None,
            value: log_total,
        });
    }

    let mut grad = vec![0.0; log_probs.len()];
    let mut occupancy = vec![neg; classes];
    for t in 0..frames {
        occupancy.fill(neg);
        for s in 0..s_len {
            let k = ext[s] as usize;
            let g = alpha[t * s_len + s] + beta[t * s_len + s] - lp(t, s);
            occupancy[k] = log_add(occupancy[k], g);
        }
        for (k, &o) in occupancy.iter().enumerate() {
            grad[t * classes + k] = -(o - log_total).exp();
        }
    }
    Ok((-log_total, grad))
}

struct CtcLoss {
    labels: Vec<Vec<u32>>,
    lengths: Vec<usize>,
}

impl CtcLoss {
    /// Per-sample losses and the flattened `(B, T, C)` gradient.
    fn evaluate(&self, x: &[f64], frames: usize, classes: usize) -> candle_core::Result<(Vec<f64>, Vec<f64>)> {
        let mut losses = Vec::with_capacity(self.labels.len());
        let mut grad = vec![0.0; x.len()];
        for (b, (labels, &len)) in self.labels.iter().zip(&self.lengths).enumerate() {
            let sample = &x[b * frames * classes..][..len * classes];
            let (loss, g) = ctc_nll(sample, classes, labels).map_err(|e| candle_core::Error::Msg(format!("sample {b}: {e}")))?;
            losses.push(loss);
            grad[b * frames * classes..][..len * classes].copy_from_slice(&g);
        }
        Ok((losses, grad))
    }
}

fn as_f64(storage: &CpuStorage, layout: &Layout) -> candle_core::Result<Vec<f64>> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("ctc expects contiguous log-probs".into()))?;
    Ok(match storage {
        CpuStorage::F32(v) => v[start..end].iter().map(|&x| x as f64).collect(),
        CpuStorage::F64(v) => v[start..end].to_vec(),
        _ => candle_core::bail!("ctc supports f32 and f64"),
    })
}

impl CustomOp1 for CtcLoss {
    fn name(&self) -> &'static str {
        "ctc-loss"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, t, c) = layout.shape().dims3()?;
        let x = as_f64(storage, layout)?;
        let (losses, _) = self.evaluate(&x, t, c)?;
        let out = match storage {
            CpuStorage::F32(_) => CpuStorage::F32(losses.iter().map(|&l| l as f32).collect()),
            _ => CpuStorage::F64(losses),
        };
        Ok((out, Shape::from(b)))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (b, t, c) = arg.dims3()?;
        let x: Vec<f64> = arg.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let (_, mut grad) = self.evaluate(&x, t, c)?;
        let scale: Vec<f64> = grad_res.to_dtype(DType::F64)?.to_vec1()?;
        for (i, g) in grad.iter_mut().enumerate() {
            *g *= scale[i / (t * c)];
        }
        let g = Tensor::from_vec(grad, (b, t, c), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(g))
    }
}

/// Differentiable per-sample CTC loss.
///
/// `log_probs` is `(B, T, C)`; sample `b` uses its first `lengths[b]` frames
/// and must be able to emit `labels[b]` in them.
pub fn ctc_loss(log_probs: &Tensor, labels: &[Vec<u32>], lengths: &[usize]) -> Result<Tensor> {
    let (b, t, c) = log_probs.dims3()?;
    if labels.len() != b || lengths.len() != b {
        return Err(Error::Shape(format!("{b} samples but {} label sets and {} lengths", labels.len(), lengths.len())));
    }
    for (i, (l, &len)) in labels.iter().zip(lengths).enumerate() {
        if len == 0 || len > t {
            return Err(Error::InvalidInput(format!("sample {i}: length {len} outside 1..={t}")));
        }
        check_labels(l, len, c).map_err(|m| Error::InvalidInput(format!("sample {i}: {m}")))?;
    }
    let op = CtcLoss {
        labels: labels.to_vec(),
        lengths: lengths.to_vec(),
    };
    Ok(log_probs.contiguous()?.apply_op1(op)?)
}

/// Collapses repeats, then drops blanks.
pub fn collapse_path(path: &[u32], blank: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Greedy best-path decoding of a `frames x classes` posterior matrix.
/// Ties pick the lowest class index.
pub fn ctc_decode(posteriors: &Tensor) -> Result<Vec<u32>> {
    let (_, classes) = posteriors.dims2()?;
    let rows: Vec<Vec<f64>> = posteriors.to_dtype(DType::F64)?.to_vec2()?;
    let path: Vec<u32> = rows
        .iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    Ok(collapse_path(&path, blank_of(classes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
        logits
            .chunks(classes)
            .flat_map(|r| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z = m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                r.iter().map(move |x| x - z).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Sums the probability of every frame-level path that collapses to `labels`.
    fn enumerate_paths(log_probs: &[f64], classes: usize, labels: &[u32]) -> f64 {
        let frames = log_probs.len() / classes;
        let blank = blank_of(classes);
        let mut total = 0.0;
        for code in 0..classes.pow(frames as u32) {
            let mut c = code;
            let path: Vec<u32> = (0..frames)
                .map(|_| {
                    let k = (c % classes) as u32;
                    c /= classes;
                    k
                })
                .collect();
            if collapse_path(&path, blank) == labels {
                total += path.iter().enumerate().map(|(t, &k)| log_probs[t * classes + k as usize]).sum::<f64>().exp();
            }
        }
        -total.ln()
    }

    fn random_log_probs(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..frames * classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
        log_softmax_rows(&logits, classes)
    }

    #[test]
    fn one_frame_one_label() {
        let lp = log_softmax_rows(&[0.3, -1.0, 0.7], 3);
        let (loss, _) = ctc_nll(&lp, 3, &[1]).unwrap();
        assert!((loss + lp[1]).abs() < 1e-12);
    }

    #[test]
    fn empty_label_is_the_all_blank_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lp = random_log_probs(&mut rng, 5, 4);
        let (loss, _) = ctc_nll(&lp, 4, &[]).unwrap();
        let expected: f64 = -(0..5).map(|t| lp[t * 4 + 3]).sum::<f64>();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn three_frames_two_labels_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lp = random_log_probs(&mut rng, 3, 3);
        let (loss, _) = ctc_nll(&lp, 3, &[0, 1]).unwrap();
        assert!((loss - enumerate_paths(&lp, 3, &[0, 1])).abs() < 1e-6);
    }

    #[test]
    fn infeasible_labels_are_rejected_per_sample() {
        let lp = Tensor::zeros((2, 2, 3), DType::F64, &Device::Cpu).unwrap();
        let err = ctc_loss(&lp, &[vec![0], vec![1, 1]], &[2, 2]).unwrap_err();
        assert!(err.to_string().contains("sample 1"), "{err}");
        assert!(ctc_loss(&lp, &[vec![2], vec![]], &[2, 2]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_through_log_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, c) = (6, 4);
        let logits: Vec<f64> = (0..2 * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels = vec![vec![0, 2, 2], vec![1]];
        let lengths = [6, 4];
        let loss_of = |v: &[f64]| -> f64 {
            let x = Tensor::from_slice(v, (2, t, c), &Device::Cpu).unwrap();
            let lp = candle_core::Tensor::log_sum_exp(&x, 2).unwrap();
            let lp = x.broadcast_sub(&lp.unsqueeze(2).unwrap()).unwrap();
            crate::nn::scalar(&ctc_loss(&lp, &labels, &lengths).unwrap().sum_all().unwrap()).unwrap()
        };
        let var = Var::from_tensor(&Tensor::from_slice(&logits, (2, t, c), &Device::Cpu).unwrap()).unwrap();
        let x = var.as_tensor();
        let lp = x.broadcast_sub(&x.log_sum_exp(2).unwrap().unsqueeze(2).unwrap()).unwrap();
        let loss = ctc_loss(&lp, &labels, &lengths).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = crate::nn::to_f64_vec(grads.get(&var).unwrap()).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut up = logits.clone();
            up[i] += h;
            let mut down = logits.clone();
            down[i] -= h;
            let fd = (loss_of(&up) - loss_of(&down)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
        // Padded frames of the second sample receive no gradient.
        assert!(g[t * c + 4 * c..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_rules() {
        let one_hot = |path: &[u32], c: usize| {
            let v: Vec<f32> = path.iter().flat_map(|&k| (0..c).map(move |j| if j == k as usize { 0.0 } else { -10.0 })).collect();
            Tensor::from_vec(v, (path.len(), c), &Device::Cpu).unwrap()
        };
        assert!(ctc_decode(&one_hot(&[2, 2, 2], 3)).unwrap().is_empty());
        assert_eq!(ctc_decode(&one_hot(&[0, 0, 2, 1], 3)).unwrap(), vec![0, 1]);
        assert_eq!(ctc_decode(&one_hot(&[0, 2, 0], 3)).unwrap(), vec![0, 0]);
    }

    /// Second decoder: group equal runs first, then keep non-blank run heads.
    fn decode_by_runs(rows: &[Vec<f64>]) -> Vec<u32> {
        let blank = rows[0].len() - 1;
        let argmax: Vec<usize> = rows
            .iter()
            .map(|r| r.iter().enumerate().fold(0, |b, (k, &v)| if v > r[b] { k } else { b }))
            .collect();
        let mut runs: Vec<usize> = Vec::new();
        for k in argmax {
            if runs.last() != Some(&k) {
                runs.push(k);
            }
        }
        runs.into_iter().filter(|&k| k != blank).map(|k| k as u32).collect()
    }

    proptest! {
        #[test]
        fn loss_matches_enumeration_for_short_inputs(
            seed in any::<u64>(),
            frames in 1usize..=4,
            labels in proptest::collection::vec(0u32..2, 0..=2),
        ) {
            prop_assume!(min_frames(&labels) <= frames);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lp = random_log_probs(&mut rng, frames, 3);
            let (loss, _) = ctc_nll(&lp, 3, &labels).unwrap();
            prop_assert!((loss - enumerate_paths(&lp, 3, &labels)).abs() < 1e-9);
        }

        #[test]
        fn greedy_decode_matches_run_oracle(seed in any::<u64>(), frames in 1usize..30, classes in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lp = random_log_probs(&mut rng, frames, classes);
            let rows: Vec<Vec<f64>> = lp.chunks(classes).map(|r| r.to_vec()).collect();
            let t = Tensor::from_vec(lp.clone(), (frames, classes), &Device::Cpu).unwrap();
            prop_assert_eq!(ctc_decode(&t).unwrap(), decode_by_runs(&rows));
        }
    }
}
