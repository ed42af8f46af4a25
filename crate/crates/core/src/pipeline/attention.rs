//! Soft selection over a family of canonical variants, and model ensembling.

use crate::align::ProbSequence;
use crate::error::{Error, Result};
use crate::image::GrayImage;

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_family(family: &[GrayImage], weights: usize) -> Result<()> {
    let first = family.first().ok_or_else(|| Error::Shape("empty variant family".into()))?;
    if weights != family.len() {
        return Err(Error::Shape(format!("{weights} weights for {} variants", family.len())));
    }
    for (i, v) in family.iter().enumerate() {
        if (v.height(), v.width()) != (first.height(), first.width()) {
            return Err(Error::Shape(format!(
                "variant {i} is {}x{}, variant 0 is {}x{}",
                v.height(),
                v.width(),
                first.height(),
                first.width()
            )));
        }
    }
    Ok(())
}

/// `sum_k softmax(logits)_k * family[k]`, clamped to `[0, 1]`.
pub fn attention_combine(family: &[GrayImage], logits: &[f64]) -> Result<GrayImage> {
    check_family(family, logits.len())?;
    let w = softmax(logits);
    let mut out = GrayImage::new(family[0].height(), family[0].width());
    for (img, &wk) in family.iter().zip(&w) {
        for (o, &v) in out.data_mut().iter_mut().zip(img.data()) {
            *o += (wk * v as f64) as f32;
        }
    }
    out.clamp_unit();
    Ok(out)
}

/// Learnable attention logits, one per variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub logits: Vec<f64>,
    velocity: Vec<f64>,
}

impl AttentionWeights {
    /// Uniform attention over `variants` inputs.
    pub fn new(variants: usize) -> Self {
        AttentionWeights {
            logits: vec![0.0; variants],
            velocity: vec![0.0; variants],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn combine(&self, family: &[GrayImage]) -> Result<GrayImage> {
        attention_combine(family, &self.logits)
    }

    /// Gradient of the loss with respect to the logits, given the gradient
    /// `upstream` with respect to the combined image.
    pub fn backward(&self, family: &[GrayImage], upstream: &[f64]) -> Result<Vec<f64>> {
        check_family(family, self.logits.len())?;
        let w = self.weights();
        // d out / d logit_k = w_k (x_k - out)
        let dots: Vec<f64> = family
            .iter()
            .map(|img| img.data().iter().zip(upstream).map(|(&x, &g)| x as f64 * g).sum())
            .collect();
        let mean: f64 = w.iter().zip(&dots).map(|(a, b)| a * b).sum();
        Ok(w.iter().zip(&dots).map(|(wk, dk)| wk * (dk - mean)).collect())
    }

    /// Momentum SGD step on the logits.
    pub fn step(&mut self, grad: &[f64], lr: f64, momentum: f64) {
        for ((l, v), g) in self.logits.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = momentum * *v - lr * g;
            *l += *v;
        }
    }
}

/// Elementwise mean of equally shaped sequences.
pub fn ensemble_average(seqs: &[ProbSequence]) -> Result<ProbSequence> {
    let first = seqs.first().ok_or_else(|| Error::MalformedSequence("empty ensemble".into()))?;
    let mut data = vec![0.0; first.data().len()];
    for s in seqs {
        if (s.rows(), s.symbols()) != (first.rows(), first.symbols()) {
            return Err(Error::MalformedSequence(format!(
                "{}x{} member in a {}x{} ensemble",
                s.rows(),
                s.symbols(),
                first.rows(),
                first.symbols()
            )));
        }
        data.iter_mut().zip(s.data()).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / seqs.len() as f64;
    data.iter_mut().for_each(|v| *v *= inv);
    ProbSequence::new(first.rows(), first.symbols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(seed: u32) -> GrayImage {
        GrayImage::from_fn(32, 128, move |y, x| ((y * 7 + x * 3 + seed as usize * 11) % 17) as f32 / 16.0)
    }

    #[test]
    fn combine_examples() {
        let a = img(1);
        assert_eq!(attention_combine(std::slice::from_ref(&a), &[3.7]).unwrap(), a);
        let out = attention_combine(&[a.clone(), a.clone()], &[0.2, -1.0]).unwrap();
        assert!(out.data().iter().zip(a.data()).all(|(x, y)| (x - y).abs() < 1e-6));
        let b = img(2);
        let out = attention_combine(&[a.clone(), b], &[1000.0, 0.0]).unwrap();
        assert!(out.data().iter().zip(a.data()).all(|(x, y)| (x - y).abs() < 1e-6));
        assert!(attention_combine(&[a, GrayImage::new(32, 256)], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let fam = [img(1), img(2), img(3)];
        let up: Vec<f64> = (0..32 * 128).map(|i| ((i % 13) as f64 - 6.0) / 10.0).collect();
        let att = AttentionWeights { logits: vec![0.3, -0.2, 0.5], velocity: vec![0.0; 3] };
        let loss = |l: &[f64]| -> f64 {
            let w = softmax(l);
            (0..up.len())
                .map(|p| up[p] * fam.iter().zip(&w).map(|(f, wk)| wk * f.data()[p] as f64).sum::<f64>())
                .sum()
        };
        let g = att.backward(&fam, &up).unwrap();
        for k in 0..3 {
            let (mut lp, mut lm) = (att.logits.clone(), att.logits.clone());
            lp[k] += 1e-6;
            lm[k] -= 1e-6;
            let num = (loss(&lp) - loss(&lm)) / 2e-6;
            assert!((num - g[k]).abs() < 1e-5, "{num} vs {}", g[k]);
        }
    }

    #[test]
    fn ensemble_examples() {
        let a = ProbSequence::new(3, 2, vec![0.5, 0.5, 1.0, 0.0, 0.2, 0.8]).unwrap();
        assert_eq!(ensemble_average(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(ensemble_average(&[a.clone(), a.clone()]).unwrap(), a);
        let b = ProbSequence::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(ensemble_average(&[a, b]).is_err());
    }

    proptest! {
        #[test]
        fn combination_is_convex(l in prop::collection::vec(-5.0f64..5.0, 3), s in 0u32..50) {
            let fam = [img(s), img(s + 1), img(s + 2)];
            let out = attention_combine(&fam, &l).unwrap();
            for p in 0..out.data().len() {
                let lo = fam.iter().map(|f| f.data()[p]).fold(f32::INFINITY, f32::min);
                let hi = fam.iter().map(|f| f.data()[p]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(out.data()[p] >= lo - 1e-6 && out.data()[p] <= hi + 1e-6);
            }
        }

        #[test]
        fn ensembles_stay_normalized(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 3), n in 1usize..4) {
            let seqs: Vec<ProbSequence> = (0..n).map(|k| {
                let data: Vec<f64> = rows.iter().flat_map(|r| {
                    let r: Vec<f64> = r.iter().enumerate().map(|(i, v)| v + (i * k) as f64 * 0.1).collect();
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(move |v| v / s)
                }).collect();
                ProbSequence::new(3, 4, data).unwrap()
            }).collect();
            let avg = ensemble_average(&seqs).unwrap();
            for r in 0..3 {
                prop_assert!((avg.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
