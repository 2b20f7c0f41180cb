use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, DropoutMode};
use super::{NnError, Tensor};
use crate::imaging::{GrayImage32, INPUT_SIDE};

/// Number of output classes of the sign-digit network.
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3×3 valid convolution.
    Conv2d {
        out_channels: usize,
    },
    Relu,
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

pub const KERNEL: usize = 3;

impl LayerSpec {
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }
}

/// `(weights, bias)` shape of one parametric layer.
pub type ShapePair = (Vec<usize>, Vec<usize>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `(channels, height, width)`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Weight and bias tensors for one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Learnable tensors in parametric-layer order. Gradients share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

pub type Gradients = Parameters;

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn same_shapes(&self, other: &Parameters) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors_mut().for_each(|t| t.scale(alpha));
    }

    pub fn add_scaled(&mut self, other: &Parameters, alpha: f64) -> Result<(), NnError> {
        if !self.same_shapes(other) {
            return Err(NnError::ShapeMismatch(
                "parameter sets differ in shape".into(),
            ));
        }
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_scaled(b, alpha)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    /// Dropout active, masks drawn from a generator seeded with `seed`.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv {
        input: Tensor,
    },
    Relu {
        input: Tensor,
    },
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Dropout {
        mask: Vec<f64>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor,
    },
    Softmax,
}

/// Everything a backward pass needs from one training-mode forward pass.
/// Consumed by [`NetworkSpec::backward`], so it cannot be replayed.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    probs: Tensor,
}

impl ForwardCache {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn is_trainable(&self) -> bool {
        !self.layers.is_empty()
    }
}

impl NetworkSpec {
    /// conv32 → relu → pool → dropout .25 → conv64 → relu → pool →
    /// dropout .5 → flatten → dense128 → relu → dense10 → softmax.
    pub fn sign_digits() -> Self {
        use LayerSpec::*;
        Self {
            input: [1, INPUT_SIDE, INPUT_SIDE],
            layers: vec![
                Conv2d { out_channels: 32 },
                Relu,
                MaxPool2x2,
                Dropout { rate: 0.25 },
                Conv2d { out_channels: 64 },
                Relu,
                MaxPool2x2,
                Dropout { rate: 0.5 },
                Flatten,
                Dense { out_features: 128 },
                Relu,
                Dense {
                    out_features: NUM_CLASSES,
                },
                Softmax,
            ],
        }
    }

    /// Output shape of every layer, checking that the chain is legal.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        if self.input.contains(&0) {
            return bad(format!("input shape {:?} has a zero extent", self.input));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) => {}
            _ => return bad("the final layer must be softmax".into()),
        }
        let mut shape = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape.as_slice()) {
                (LayerSpec::Conv2d { out_channels }, &[_, h, w]) => {
                    if out_channels == 0 {
                        return bad(format!("layer {i}: conv2d needs at least one filter"));
                    }
                    if h < KERNEL || w < KERNEL {
                        return bad(format!("layer {i}: conv2d input {h}x{w} too small"));
                    }
                    vec![out_channels, h - KERNEL + 1, w - KERNEL + 1]
                }
                (LayerSpec::MaxPool2x2, &[c, h, w]) => {
                    if h < 2 || w < 2 {
                        return bad(format!("layer {i}: pooling input {h}x{w} too small"));
                    }
                    vec![c, h / 2, w / 2]
                }
                (LayerSpec::Flatten, &[c, h, w]) => vec![c * h * w],
                (LayerSpec::Dense { out_features }, &[_]) => {
                    if out_features == 0 {
                        return bad(format!("layer {i}: dense needs at least one output"));
                    }
                    vec![out_features]
                }
                (LayerSpec::Relu, s) => s.to_vec(),
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return bad(format!("layer {i}: dropout rate {rate} outside [0, 1)"));
                    }
                    s.to_vec()
                }
                (LayerSpec::Softmax, &[k]) if i + 1 == self.layers.len() => vec![k],
                (layer, s) => {
                    return bad(format!("layer {i}: {layer:?} cannot follow shape {s:?}"))
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.shapes().map(|_| ())
    }

    pub fn num_classes(&self) -> Result<usize, NnError> {
        Ok(self.shapes()?.last().expect("softmax layer")[0])
    }

    /// `(weights, bias)` shapes of each parametric layer.
    pub fn param_shapes(&self) -> Result<Vec<ShapePair>, NnError> {
        let shapes = self.shapes()?;
        let mut prev = self.input.to_vec();
        let mut out = Vec::new();
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match *layer {
                LayerSpec::Conv2d { out_channels } => out.push((
                    vec![out_channels, prev[0], KERNEL, KERNEL],
                    vec![out_channels],
                )),
                LayerSpec::Dense { out_features } => {
                    out.push((vec![out_features, prev[0]], vec![out_features]))
                }
                _ => {}
            }
            prev = shape.clone();
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> Result<usize, NnError> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum())
    }

    /// He-normal weights (`σ = √(2/fan_in)`) for convolutions and hidden dense
    /// layers, `σ = √(1/fan_in)` for the output layer; zero biases.
    pub fn init_params(&self, seed: u64) -> Result<Parameters, NnError> {
        let shapes = self.param_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = shapes.len().saturating_sub(1);
        let layers = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (wshape, bshape))| {
                let fan_in: usize = wshape[1..].iter().product();
                let gain = if i == last { 1.0 } else { 2.0 };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt())
                    .expect("positive standard deviation");
                LayerParams {
                    weights: Tensor::from_fn(&wshape, |_| normal.sample(&mut rng)),
                    bias: Tensor::zeros(&bshape),
                }
            })
            .collect();
        Ok(Parameters { layers })
    }

    fn check_params(&self, params: &Parameters) -> Result<(), NnError> {
        let shapes = self.param_shapes()?;
        let ok = shapes.len() == params.layers.len()
            && shapes
                .iter()
                .zip(&params.layers)
                .all(|((w, b), l)| l.weights.shape() == w && l.bias.shape() == b);
        if ok {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch(
                "parameters do not match the network architecture".into(),
            ))
        }
    }

    /// Runs the network on a `(C,H,W)` input and returns class probabilities.
    /// The cache is only populated in training mode.
    pub fn forward(
        &self,
        params: &Parameters,
        input: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, ForwardCache), NnError> {
        self.check_params(params)?;
        if input.shape() != self.input {
            return Err(NnError::ShapeMismatch(format!(
                "network expects input {:?}, got {:?}",
                self.input,
                input.shape()
            )));
        }
        let (train, mut rng) = match mode {
            Mode::Infer => (false, ChaCha8Rng::seed_from_u64(0)),
            Mode::Train { seed } => (true, ChaCha8Rng::seed_from_u64(seed)),
        };
        let dropout_mode = if train {
            DropoutMode::Train
        } else {
            DropoutMode::Infer
        };
        let mut cache = Vec::with_capacity(if train { self.layers.len() } else { 0 });
        let mut x = input.clone();
        let mut p = 0;
        for layer in &self.layers {
            let (next, entry) = match *layer {
                LayerSpec::Conv2d { .. } => {
                    let lp = &params.layers[p];
                    p += 1;
                    let y = layers::conv2d(&x, &lp.weights, &lp.bias)?;
                    (y, LayerCache::Conv { input: x })
                }
                LayerSpec::Dense { .. } => {
                    let lp = &params.layers[p];
                    p += 1;
                    let y = layers::dense(&x, &lp.weights, &lp.bias)?;
                    (y, LayerCache::Dense { input: x })
                }
                LayerSpec::Relu => (layers::relu(&x), LayerCache::Relu { input: x }),
                LayerSpec::MaxPool2x2 => {
                    let (y, argmax) = layers::maxpool2x2(&x)?;
                    let input_shape = x.shape().to_vec();
                    (
                        y,
                        LayerCache::Pool {
                            input_shape,
                            argmax,
                        },
                    )
                }
                LayerSpec::Dropout { rate } => {
                    let (y, mask) = layers::dropout(&x, rate, dropout_mode, &mut rng)?;
                    (
                        y,
                        LayerCache::Dropout {
                            mask: mask.unwrap_or_default(),
                        },
                    )
                }
                LayerSpec::Flatten => {
                    let input_shape = x.shape().to_vec();
                    (layers::flatten(x), LayerCache::Flatten { input_shape })
                }
                LayerSpec::Softmax => (layers::softmax(&x), LayerCache::Softmax),
            };
            if train {
                cache.push(entry);
            }
            x = next;
        }
        let probs = x;
        Ok((
            probs.clone(),
            ForwardCache {
                layers: cache,
                probs,
            },
        ))
    }

    /// Probabilities for one preprocessed image, dropout disabled.
    pub fn infer(&self, params: &Parameters, image: &GrayImage32) -> Result<Tensor, NnError> {
        let input = image_tensor(image);
        self.forward(params, &input, Mode::Infer).map(|(p, _)| p)
    }

    /// Gradients of the cross-entropy loss for one sample.
    pub fn backward(
        &self,
        params: &Parameters,
        cache: ForwardCache,
        target: &Tensor,
    ) -> Result<Gradients, NnError> {
        let mut grads = params.zeros_like();
        self.accumulate_backward(params, cache, target, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Self::backward`] but adds into existing gradient buffers.
    pub fn accumulate_backward(
        &self,
        params: &Parameters,
        cache: ForwardCache,
        target: &Tensor,
        grads: &mut Gradients,
    ) -> Result<(), NnError> {
        self.check_params(params)?;
        if !params.same_shapes(grads) {
            return Err(NnError::ShapeMismatch(
                "gradient buffers do not match parameters".into(),
            ));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        check_onehot(target, cache.probs.len())?;

        let mut g = layers::softmax_cross_entropy_grad(&cache.probs, target)?;
        let mut p = params.layers.len();
        let n_layers = self.layers.len();
        for (idx, (layer, entry)) in self.layers.iter().zip(cache.layers).enumerate().rev() {
            // the network input needs no gradient
            let want_input = idx > 0;
            g = match (layer, entry) {
                (LayerSpec::Softmax, LayerCache::Softmax) if idx + 1 == n_layers => g,
                (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                    p -= 1;
                    let gl = &mut grads.layers[p];
                    match layers::dense_backward(
                        &input,
                        &params.layers[p].weights,
                        &g,
                        &mut gl.weights,
                        &mut gl.bias,
                        want_input,
                    )? {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                (LayerSpec::Conv2d { .. }, LayerCache::Conv { input }) => {
                    p -= 1;
                    let gl = &mut grads.layers[p];
                    match layers::conv2d_backward(
                        &input,
                        &params.layers[p].weights,
                        &g,
                        &mut gl.weights,
                        &mut gl.bias,
                        want_input,
                    )? {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                (LayerSpec::Relu, LayerCache::Relu { input }) => layers::relu_backward(&input, &g)?,
                (
                    LayerSpec::MaxPool2x2,
                    LayerCache::Pool {
                        input_shape,
                        argmax,
                    },
                ) => layers::maxpool2x2_backward(&input_shape, &argmax, &g)?,
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    layers::dropout_backward(&mask, &g)?
                }
                (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => {
                    g.reshape(input_shape)?
                }
                _ => return Err(NnError::StaleCache),
            };
        }
        Ok(())
    }
}

fn check_onehot(target: &Tensor, classes: usize) -> Result<(), NnError> {
    let ones = target.data().iter().filter(|&&v| v == 1.0).count();
    let zeros = target.data().iter().filter(|&&v| v == 0.0).count();
    if target.shape() != [classes] || ones != 1 || ones + zeros != classes {
        return Err(NnError::MalformedOneHot);
    }
    Ok(())
}

/// Indicator vector for `class`.
pub fn one_hot(class: usize, classes: usize) -> Tensor {
    Tensor::from_fn(&[classes], |i| if i == class { 1.0 } else { 0.0 })
}

/// Wraps a preprocessed image as a `(1, 32, 32)` tensor.
pub fn image_tensor(image: &GrayImage32) -> Tensor {
    Tensor::new(vec![1, INPUT_SIDE, INPUT_SIDE], image.pixels().to_vec()).expect("1024 samples")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_digit_shape_chain() {
        let spec = NetworkSpec::sign_digits();
        let shapes = spec.shapes().unwrap();
        let expected: Vec<Vec<usize>> = vec![
            vec![32, 30, 30],
            vec![32, 30, 30],
            vec![32, 15, 15],
            vec![32, 15, 15],
            vec![64, 13, 13],
            vec![64, 13, 13],
            vec![64, 6, 6],
            vec![64, 6, 6],
            vec![2304],
            vec![128],
            vec![128],
            vec![10],
            vec![10],
        ];
        assert_eq!(shapes, expected);
        assert_eq!(spec.num_classes().unwrap(), NUM_CLASSES);
    }

    #[test]
    fn sign_digit_parameter_count() {
        let spec = NetworkSpec::sign_digits();
        // 32·9+32, 64·32·9+64, 2304·128+128, 128·10+10
        assert_eq!(
            spec.parameter_count().unwrap(),
            320 + 18_496 + 295_040 + 1_290
        );
        assert_eq!(spec.parameter_count().unwrap(), 315_146);
        assert_eq!(spec.init_params(1).unwrap().count(), 315_146);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = NetworkSpec::sign_digits();
        spec.layers.pop();
        assert!(matches!(spec.validate(), Err(NnError::InvalidSpec(_))));

        let spec = NetworkSpec {
            input: [1, 8, 8],
            layers: vec![LayerSpec::Dense { out_features: 3 }, LayerSpec::Softmax],
        };
        assert!(spec.validate().is_err());

        let spec = NetworkSpec {
            input: [1, 8, 8],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: 1.0 },
                LayerSpec::Dense { out_features: 3 },
                LayerSpec::Softmax,
            ],
        }
        .validate();
        assert!(spec.is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = NetworkSpec::sign_digits();
        let a = spec.init_params(42).unwrap();
        assert_eq!(a, spec.init_params(42).unwrap());
        assert_ne!(a, spec.init_params(43).unwrap());
        assert!(a
            .layers
            .iter()
            .all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let spec = NetworkSpec::sign_digits();
        let params = spec.init_params(5).unwrap();
        let std = |t: &Tensor| {
            let n = t.len() as f64;
            (t.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt()
        };
        let dense1 = &params.layers[2].weights;
        assert!((std(dense1) - (2.0f64 / 2304.0).sqrt()).abs() < 0.002);
        let out = &params.layers[3].weights;
        assert!((std(out) - (1.0f64 / 128.0).sqrt()).abs() < 0.01);
    }

    #[test]
    fn inference_is_repeatable() {
        let spec = NetworkSpec::sign_digits();
        let params = spec.init_params(3).unwrap();
        let img = GrayImage32::new((0..1024).map(|i| (i % 17) as f64 / 16.0).collect()).unwrap();
        let a = spec.infer(&params, &img).unwrap();
        let b = spec.infer(&params, &img).unwrap();
        assert_eq!(a, b);
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn backward_rejects_inference_cache() {
        let spec = NetworkSpec::sign_digits();
        let params = spec.init_params(3).unwrap();
        let input = image_tensor(&GrayImage32::zeros());
        let (_, cache) = spec.forward(&params, &input, Mode::Infer).unwrap();
        assert!(!cache.is_trainable());
        assert!(matches!(
            spec.backward(&params, cache, &one_hot(1, 10)),
            Err(NnError::StaleCache)
        ));
    }

    #[test]
    fn backward_rejects_cache_from_other_network() {
        let small = NetworkSpec {
            input: [1, 32, 32],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 10 },
                LayerSpec::Softmax,
            ],
        };
        let sp = small.init_params(1).unwrap();
        let input = image_tensor(&GrayImage32::zeros());
        let (_, cache) = small.forward(&sp, &input, Mode::Train { seed: 1 }).unwrap();
        let big = NetworkSpec::sign_digits();
        let bp = big.init_params(1).unwrap();
        assert!(matches!(
            big.backward(&bp, cache, &one_hot(0, 10)),
            Err(NnError::StaleCache)
        ));
    }

    #[test]
    fn backward_rejects_bad_target() {
        let spec = NetworkSpec::sign_digits();
        let params = spec.init_params(3).unwrap();
        let input = image_tensor(&GrayImage32::zeros());
        let (_, cache) = spec
            .forward(&params, &input, Mode::Train { seed: 2 })
            .unwrap();
        let target = Tensor::new(vec![10], vec![0.5; 10]).unwrap();
        assert!(matches!(
            spec.backward(&params, cache, &target),
            Err(NnError::MalformedOneHot)
        ));
    }
}
