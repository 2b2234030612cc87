//! Gradient-check helpers shared by the integration tests.

#![allow(dead_code)]

use cxrank::neuralcx::{candidate_loss, candidate_loss_grad, Mlp};
use cxrank::rng;
use ndarray::{Array1, Array2};
use rand::Rng;

pub const K: usize = 4;

pub fn batch_loss(p: &Mlp, x: &Array2<f64>, truths: &[usize]) -> f64 {
    let (s, _) = p.forward_batch(x.view(), None).unwrap();
    truths
        .iter()
        .enumerate()
        .map(|(b, t)| {
            candidate_loss(
                s.slice(ndarray::s![b * K..(b + 1) * K]).as_slice().unwrap(),
                *t,
            )
        })
        .sum::<f64>()
        / truths.len() as f64
}

pub fn batch_grad(p: &Mlp, x: &Array2<f64>, truths: &[usize]) -> Mlp {
    let (s, cache) = p.forward_batch(x.view(), None).unwrap();
    let mut d = Array1::zeros(s.len());
    for (b, t) in truths.iter().enumerate() {
        let (_, g) = candidate_loss_grad(
            s.slice(ndarray::s![b * K..(b + 1) * K]).as_slice().unwrap(),
            *t,
        );
        for (i, gi) in g.into_iter().enumerate() {
            d[b * K + i] = gi / truths.len() as f64;
        }
    }
    let mut grads = p.zeros_like();
    p.backward(&cache, d.view(), &mut grads, false).unwrap();
    grads
}

pub fn random_instance(seed: u64, dim: usize, n: usize) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng::stream(seed, 1);
    let x = Array2::from_shape_fn((n * K, dim), |_| r.random_range(-1.0..1.0));
    let t = (0..n).map(|_| r.random_range(0..K)).collect();
    (x, t)
}

pub fn pattern(p: &Mlp, x: &Array2<f64>) -> Vec<bool> {
    p.forward_batch(x.view(), None).unwrap().1.active_pattern()
}

/// Max over parameters of |fd − an| / max(|fd| + |an|, 1e-6), central
/// differences with step 1e-4. Probes whose ±h evaluations flip a ReLU are
/// at a non-differentiable point and are skipped; returns the error and the
/// skipped fraction.
pub fn max_relative_error(p: &Mlp, x: &Array2<f64>, t: &[usize]) -> (f64, f64) {
    let g = batch_grad(p, x, t);
    let base = pattern(p, x);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let (mut skipped, mut total) = (0usize, 0usize);
    for ti in 0..p.sizes().len() {
        for i in 0..p.sizes()[ti] {
            total += 1;
            let mut a = p.clone();
            a.tensors_mut()[ti][i] += h;
            let mut b = p.clone();
            b.tensors_mut()[ti][i] -= h;
            if pattern(&a, x) != base || pattern(&b, x) != base {
                skipped += 1;
                continue;
            }
            let fd = (batch_loss(&a, x, t) - batch_loss(&b, x, t)) / (2.0 * h);
            let an = g.tensors()[ti][i];
            worst = worst.max((fd - an).abs() / (fd.abs() + an.abs()).max(1e-6));
        }
    }
    (worst, skipped as f64 / total as f64)
}
