//! Fully-connected ReLU network with inverted dropout and a scalar output.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CxError, Result};
use crate::real::Real;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `out × in`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

/// `n_layers` hidden ReLU layers followed by a linear `h → 1` output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Layer<T>>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    masks: Vec<Option<Array2<T>>>,
}

impl<T: Real> MlpCache<T> {
    /// Sign of every hidden pre-activation, in layer order.
    pub fn active_pattern(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|a| a.iter().map(|v| *v > T::zero()))
            .collect()
    }
}

impl<T: Real> MlpParams<T> {
    /// Uniform `±1/√fan_in` weights and biases.
    pub fn init(input_dim: usize, n_layers: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || n_layers == 0 || hidden == 0 {
            return Err(CxError::InvalidArgument(format!(
                "network needs positive sizes: input {input_dim}, layers {n_layers}, hidden {hidden}"
            )));
        }
        let mut r = rng::stream(seed, 0x31a7);
        let mut layers = Vec::with_capacity(n_layers + 1);
        let mut fan_in = input_dim;
        for l in 0..=n_layers {
            let out = if l == n_layers { 1 } else { hidden };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((out, fan_in), |_| T::of(r.random_range(-bound..bound)));
            let b = Array1::from_shape_fn(out, |_| T::of(r.random_range(-bound..bound)));
            layers.push(Layer { w, b });
            fan_in = out;
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_units(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.len(), l.b.len()])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("contiguous"),
                    l.b.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("contiguous"),
                    l.b.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn scale_assign(&mut self, c: T) {
        for l in &mut self.layers {
            l.w.mapv_inplace(|x| x * c);
            l.b.mapv_inplace(|x| x * c);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.mapv(|x| U::of(x.as_f64())),
                    b: l.b.mapv(|x| U::of(x.as_f64())),
                })
                .collect(),
        }
    }

    /// Scores for each row of `x`. With `dropout = Some((p, rng))` hidden
    /// units are zeroed with probability `p` and survivors scaled by
    /// `1/(1-p)`.
    pub fn forward_batch(
        &self,
        x: ArrayView2<'_, T>,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(Array1<T>, MlpCache<T>)> {
        if x.ncols() != self.input_dim() {
            return Err(CxError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n = self.layers.len();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::new(),
        };
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = h.dot(&layer.w.t()) + &layer.b;
            cache.inputs.push(h);
            if l + 1 == n {
                cache.pre.push(a.clone());
                let scores = a.index_axis(Axis(1), 0).to_owned();
                return Ok((scores, cache));
            }
            let mut out = a.mapv(|v| v.max(T::zero()));
            let mask = match dropout.as_mut() {
                Some((p, r)) if *p > 0.0 => {
                    let keep = T::of(1.0 / (1.0 - *p));
                    let m = Array2::from_shape_fn(out.raw_dim(), |_| {
                        if r.random::<f64>() < *p {
                            T::zero()
                        } else {
                            keep
                        }
                    });
                    out *= &m;
                    Some(m)
                }
                _ => None,
            };
            cache.pre.push(a);
            cache.masks.push(mask);
            h = out;
        }
        unreachable!("network has an output layer")
    }

    /// Single-row convenience; deterministic when `dropout` is `None`.
    pub fn forward(&self, x: &[T], dropout: Option<(f64, u64)>) -> Result<T> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        let (s, _) = match dropout {
            Some((p, seed)) => {
                let mut r = rng::stream(seed, 0xd0);
                self.forward_batch(view, Some((p, &mut r)))?
            }
            None => self.forward_batch(view, None)?,
        };
        Ok(s[0])
    }

    /// Accumulate `∂L/∂θ` into `grads` given `∂L/∂scores`; returns
    /// `∂L/∂x` when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        d_scores: ArrayView1<'_, T>,
        grads: &mut Self,
        want_input_grad: bool,
    ) -> Result<Option<Array2<T>>> {
        let n = self.layers.len();
        let rows = cache.inputs[0].nrows();
        if d_scores.len() != rows {
            return Err(CxError::DimensionMismatch {
                expected: rows,
                got: d_scores.len(),
            });
        }
        let mut d_a = d_scores.to_owned().insert_axis(Axis(1));
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            g.w += &d_a.t().dot(&cache.inputs[l]);
            g.b += &d_a.sum_axis(Axis(0));
            if l == 0 && !want_input_grad {
                return Ok(None);
            }
            let d_h = d_a.dot(&layer.w);
            if l == 0 {
                return Ok(Some(d_h));
            }
            let mut d_prev = d_h;
            if let Some(m) = &cache.masks[l - 1] {
                d_prev *= m;
            }
            d_prev.zip_mut_with(&cache.pre[l - 1], |d, a| {
                if *a <= T::zero() {
                    *d = T::zero();
                }
            });
            d_a = d_prev;
        }
        unreachable!("loop returns at layer 0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_scores_zero() {
        let mut p = MlpParams::<f64>::init(3, 2, 4, 0).unwrap();
        p.scale_assign(0.0);
        assert_eq!(p.forward(&[1.0, -5.0, 2.0], None).unwrap(), 0.0);
        assert_eq!(p.forward(&[1.0, -5.0, 2.0], Some((0.5, 3))).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_affine_relu_affine() {
        let mut p = MlpParams::<f64>::init(1, 1, 1, 0).unwrap();
        p.layers[0].w[[0, 0]] = 2.0;
        p.layers[0].b[0] = -1.0;
        p.layers[1].w[[0, 0]] = 3.0;
        p.layers[1].b[0] = 0.5;
        // 3·max(0, 2·1.5 − 1) + 0.5
        assert_eq!(p.forward(&[1.5], None).unwrap(), 6.5);
        assert_eq!(p.forward(&[0.25], None).unwrap(), 0.5);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let p = MlpParams::<f64>::init(5, 2, 8, 7).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 0.5];
        assert_eq!(p.forward(&x, None).unwrap(), p.forward(&x, None).unwrap());
        assert!(p.forward(&[1.0], None).is_err());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut p = MlpParams::<f64>::init(1, 1, 2000, 0).unwrap();
        for l in &mut p.layers {
            l.w.fill(1.0);
            l.b.fill(0.0);
        }
        let full = p.forward(&[1.0], None).unwrap();
        assert_eq!(full, 2000.0);
        let dropped = p.forward(&[1.0], Some((0.25, 9))).unwrap();
        let survivors = dropped * 0.75;
        assert!((survivors - survivors.round()).abs() < 1e-6);
        assert!((dropped - full).abs() < 0.1 * full);
    }

    #[test]
    fn output_layer_is_positively_homogeneous() {
        let p = MlpParams::<f64>::init(4, 2, 6, 1).unwrap();
        let mut q = p.clone();
        let last = q.layers.last_mut().unwrap();
        last.w.mapv_inplace(|x| x * 2.5);
        last.b.mapv_inplace(|x| x * 2.5);
        let x = [0.3, -0.1, 0.8, 0.2];
        assert!((q.forward(&x, None).unwrap() - 2.5 * p.forward(&x, None).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn f32_and_f64_agree() {
        let p = MlpParams::<f64>::init(4, 2, 6, 1).unwrap();
        let q: MlpParams<f32> = p.cast();
        let x = [0.3, -0.1, 0.8, 0.2];
        let xf: Vec<f32> = x.iter().map(|v| *v as f32).collect();
        assert!(
            (p.forward(&x, None).unwrap() - f64::from(q.forward(&xf, None).unwrap())).abs() < 1e-5
        );
    }
}
