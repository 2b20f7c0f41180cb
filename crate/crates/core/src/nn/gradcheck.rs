//! Finite-difference gradient checks for the layer kernels and whole networks.
//!
//! Every check builds a scalar loss, evaluates the analytic gradient through
//! the backward kernels and compares it element-wise with central
//! differences. The returned value is the worst relative error seen.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layers::{self, DropoutMode};
use super::{one_hot, Mode, NetworkSpec, NnError, Tensor};

pub const FD_STEP: f64 = 1e-5;
/// Components smaller than this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool2x2,
    Dropout,
    Dense,
    SoftmaxCrossEntropy,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Conv2d,
        LayerKind::Relu,
        LayerKind::MaxPool2x2,
        LayerKind::Dropout,
        LayerKind::Dense,
        LayerKind::SoftmaxCrossEntropy,
    ];
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

fn weighted_sum(y: &Tensor, c: &Tensor) -> f64 {
    y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

fn with(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).expect("probe keeps the shape")
}

/// Checks one layer kind on a random instance. The loss is `Σ c·y` for a
/// random weight tensor `c`, except for the fused softmax + cross-entropy
/// head, which uses the real loss.
pub fn check_layer(kind: LayerKind, seed: u64) -> Result<f64, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    match kind {
        LayerKind::Conv2d => {
            let x = normal(&mut rng, &[2, 6, 6]);
            let w = normal(&mut rng, &[3, 2, 3, 3]);
            let b = normal(&mut rng, &[3]);
            let c = normal(&mut rng, &[3, 4, 4]);
            let mut gw = Tensor::zeros(w.shape());
            let mut gb = Tensor::zeros(b.shape());
            let gx = layers::conv2d_backward(&x, &w, &c, &mut gw, &mut gb, true)?
                .expect("input gradient requested");
            let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
                weighted_sum(&layers::conv2d(x, w, b).expect("valid shapes"), &c)
            };
            let nx = central_difference(|p| loss(&with(x.shape(), p), &w, &b), x.data(), h);
            let nw = central_difference(|p| loss(&x, &with(w.shape(), p), &b), w.data(), h);
            let nb = central_difference(|p| loss(&x, &w, &with(b.shape(), p)), b.data(), h);
            Ok(worst(gx.data(), &nx)
                .max(worst(gw.data(), &nw))
                .max(worst(gb.data(), &nb)))
        }
        LayerKind::Relu => {
            // keep every input well away from the kink at zero
            let x = Tensor::from_fn(&[3, 5, 5], |_| {
                let v: f64 = rng.sample(StandardNormal);
                v.signum() * (v.abs() + 0.05)
            });
            let c = normal(&mut rng, x.shape());
            let gx = layers::relu_backward(&x, &c)?;
            let nx = central_difference(
                |p| weighted_sum(&layers::relu(&with(x.shape(), p)), &c),
                x.data(),
                h,
            );
            Ok(worst(gx.data(), &nx))
        }
        LayerKind::MaxPool2x2 => {
            // distinct values 0.01 apart so no window has a near tie
            let mut values: Vec<f64> = (0..2 * 6 * 7).map(|i| i as f64 * 0.01).collect();
            values.shuffle(&mut rng);
            let x = Tensor::new(vec![2, 6, 7], values)?;
            let (y, argmax) = layers::maxpool2x2(&x)?;
            let c = normal(&mut rng, y.shape());
            let gx = layers::maxpool2x2_backward(x.shape(), &argmax, &c)?;
            let nx = central_difference(
                |p| {
                    let (y, _) = layers::maxpool2x2(&with(x.shape(), p)).expect("valid shape");
                    weighted_sum(&y, &c)
                },
                x.data(),
                h,
            );
            Ok(worst(gx.data(), &nx))
        }
        LayerKind::Dropout => {
            let x = normal(&mut rng, &[40]);
            let c = normal(&mut rng, &[40]);
            let mask_seed: u64 = rng.random();
            let run = |x: &Tensor| {
                let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                layers::dropout(x, 0.5, DropoutMode::Train, &mut r).expect("valid rate")
            };
            let (_, mask) = run(&x);
            let gx = layers::dropout_backward(&mask.expect("train mode"), &c)?;
            let nx = central_difference(
                |p| weighted_sum(&run(&with(x.shape(), p)).0, &c),
                x.data(),
                h,
            );
            Ok(worst(gx.data(), &nx))
        }
        LayerKind::Dense => {
            let x = normal(&mut rng, &[7]);
            let w = normal(&mut rng, &[5, 7]);
            let b = normal(&mut rng, &[5]);
            let c = normal(&mut rng, &[5]);
            let mut gw = Tensor::zeros(w.shape());
            let mut gb = Tensor::zeros(b.shape());
            let gx = layers::dense_backward(&x, &w, &c, &mut gw, &mut gb, true)?
                .expect("input gradient requested");
            let loss = |x: &Tensor, w: &Tensor, b: &Tensor| {
                weighted_sum(&layers::dense(x, w, b).expect("valid shapes"), &c)
            };
            let nx = central_difference(|p| loss(&with(x.shape(), p), &w, &b), x.data(), h);
            let nw = central_difference(|p| loss(&x, &with(w.shape(), p), &b), w.data(), h);
            let nb = central_difference(|p| loss(&x, &w, &with(b.shape(), p)), b.data(), h);
            Ok(worst(gx.data(), &nx)
                .max(worst(gw.data(), &nw))
                .max(worst(gb.data(), &nb)))
        }
        LayerKind::SoftmaxCrossEntropy => {
            let z = Tensor::from_fn(&[10], |_| 3.0 * rng.sample::<f64, _>(StandardNormal));
            let target = one_hot(rng.random_range(0..10), 10);
            let probs = layers::softmax(&z);
            let gz = layers::softmax_cross_entropy_grad(&probs, &target)?;
            let loss = |p: &[f64]| {
                let probs = layers::softmax(&with(&[10], p));
                -probs
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| t * p.ln())
                    .sum::<f64>()
            };
            Ok(worst(gz.data(), &central_difference(loss, z.data(), h)))
        }
    }
}

/// Checks every parameter gradient of `spec` on a random input and label.
/// The spec must not contain dropout layers with a non-zero rate.
pub fn check_network(spec: &NetworkSpec, seed: u64) -> Result<f64, NnError> {
    if spec
        .layers
        .iter()
        .any(|l| matches!(l, super::LayerSpec::Dropout { rate } if *rate > 0.0))
    {
        return Err(NnError::InvalidSpec(
            "gradient checks need dropout disabled".into(),
        ));
    }
    let classes = spec.num_classes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec.init_params(rng.random())?;
    let input = Tensor::from_fn(&spec.input, |_| rng.random::<f64>());
    let target = one_hot(rng.random_range(0..classes), classes);
    let mode = Mode::Train { seed: 0 };

    let (_, cache) = spec.forward(&params, &input, mode)?;
    let grads = spec.backward(&params, cache, &target)?;

    let loss = |params: &super::Parameters| -> f64 {
        let (probs, _) = spec.forward(params, &input, mode).expect("valid network");
        let k = target.argmax();
        -probs.data()[k].ln()
    };
    let mut worst_seen: f64 = 0.0;
    let mut probe = params.clone();
    for (li, layer) in params.layers.iter().enumerate() {
        for which in 0..2 {
            let base = if which == 0 {
                &layer.weights
            } else {
                &layer.bias
            };
            let analytic = if which == 0 {
                &grads.layers[li].weights
            } else {
                &grads.layers[li].bias
            };
            let numeric = central_difference(
                |p| {
                    let slot = if which == 0 {
                        &mut probe.layers[li].weights
                    } else {
                        &mut probe.layers[li].bias
                    };
                    slot.data_mut().copy_from_slice(p);
                    loss(&probe)
                },
                base.data(),
                FD_STEP,
            );
            let slot = if which == 0 {
                &mut probe.layers[li].weights
            } else {
                &mut probe.layers[li].bias
            };
            slot.data_mut().copy_from_slice(base.data());
            worst_seen = worst_seen.max(worst(analytic.data(), &numeric));
        }
    }
    Ok(worst_seen)
}

/// Conv(2) → ReLU → pool → dense(4) → ReLU → dense(10) → softmax on 8×8.
pub fn tiny_network() -> NetworkSpec {
    use super::LayerSpec::*;
    NetworkSpec {
        input: [1, 8, 8],
        layers: vec![
            Conv2d { out_channels: 2 },
            Relu,
            MaxPool2x2,
            Flatten,
            Dense { out_features: 4 },
            Relu,
            Dense { out_features: 10 },
            Softmax,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-7) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_a_cubic() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let numeric = central_difference(|x| x[0] * x[0], &[3.0], FD_STEP);
        assert!(relative_error(5.0, numeric[0]) > 0.1);
    }

    #[test]
    fn rejects_active_dropout() {
        let mut spec = tiny_network();
        spec.layers
            .insert(3, super::super::LayerSpec::Dropout { rate: 0.5 });
        assert!(check_network(&spec, 0).is_err());
    }
}
