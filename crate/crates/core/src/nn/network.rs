use super::ops::{
    conv_backward_acc, conv_forward_into, dense_backward_acc, dense_forward_into, mse_slices,
    pool_backward_into, pool_forward_into, sigmoid_scalar, ConvParams, DenseParams, KERNEL,
};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256StarStar;

/// Channels, height, width of one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvParams),
    Sigmoid,
    AvgPool2,
    Flatten,
    Dense(DenseParams),
}

impl Layer {
    fn output_shape(&self, s: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(p) => {
                p.validate()?;
                if s.c != p.in_ch || s.h < KERNEL || s.w < KERNEL {
                    return Err(Error::Shape(format!(
                        "conv {}->{} cannot take {s:?}",
                        p.in_ch, p.out_ch
                    )));
                }
                Ok(Shape::new(p.out_ch, s.h - KERNEL + 1, s.w - KERNEL + 1))
            }
            Layer::Sigmoid => Ok(s),
            Layer::AvgPool2 => {
                if s.h % 2 != 0 || s.w % 2 != 0 {
                    return Err(Error::Shape(format!("pooling needs even dims, got {s:?}")));
                }
                Ok(Shape::new(s.c, s.h / 2, s.w / 2))
            }
            Layer::Flatten => Ok(Shape::new(s.len(), 1, 1)),
            Layer::Dense(p) => {
                p.validate()?;
                if s.len() != p.inputs {
                    return Err(Error::Shape(format!(
                        "dense layer expects {} inputs, got {}",
                        p.inputs,
                        s.len()
                    )));
                }
                Ok(Shape::new(p.outputs, 1, 1))
            }
        }
    }
}

/// Gradient buffers for one parametric layer (empty for the others).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zero(&mut self) {
        for g in &mut self.layers {
            g.weights.fill(0.0);
            g.bias.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().for_each(|v| *v *= factor);
            g.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// All gradient values in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }
}

/// A feed-forward stack of layers over a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

impl Network {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut s = input;
        for layer in &layers {
            s = layer.output_shape(s)?;
            shapes.push(s);
        }
        if layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        Ok(Self {
            input,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output shape after each layer.
    pub fn layer_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().expect("non-empty").len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(p) => p.kernels.len() + p.bias.len(),
                Layer::Dense(p) => p.weights.len() + p.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Every parameter in layer order (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv(p) => out.extend(p.kernels.iter().chain(&p.bias)),
                Layer::Dense(p) => out.extend(p.weights.iter().chain(&p.bias)),
                _ => {}
            }
        }
        out
    }

    /// Mutable access to the `index`-th parameter in [`Network::parameters`] order.
    pub fn parameter_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for layer in &mut self.layers {
            let (w, b) = match layer {
                Layer::Conv(p) => (&mut p.kernels, &mut p.bias),
                Layer::Dense(p) => (&mut p.weights, &mut p.bias),
                _ => continue,
            };
            if index < w.len() {
                return Some(&mut w[index]);
            }
            index -= w.len();
            if index < b.len() {
                return Some(&mut b[index]);
            }
            index -= b.len();
        }
        None
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(p) => LayerGrads {
                        weights: vec![0.0; p.kernels.len()],
                        bias: vec![0.0; p.bias.len()],
                    },
                    Layer::Dense(p) => LayerGrads {
                        weights: vec![0.0; p.weights.len()],
                        bias: vec![0.0; p.bias.len()],
                    },
                    _ => LayerGrads::default(),
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input.len() {
            return Err(Error::Shape(format!(
                "network expects {} input values, got {}",
                self.input.len(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Activations after every layer for one example.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input)?;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut in_shape = self.input;
        for (layer, &out_shape) in self.layers.iter().zip(&self.shapes) {
            let x: &[f64] = acts.last().map_or(input, |a| a.as_slice());
            let y = match layer {
                Layer::Conv(p) => {
                    let mut y = vec![0.0; out_shape.len()];
                    conv_forward_into(x, in_shape.h, in_shape.w, p, &mut y);
                    y
                }
                Layer::Sigmoid => x.iter().map(|&v| sigmoid_scalar(v)).collect(),
                Layer::AvgPool2 => {
                    let mut y = vec![0.0; out_shape.len()];
                    pool_forward_into(x, in_shape.c, in_shape.h, in_shape.w, &mut y);
                    y
                }
                Layer::Flatten => x.to_vec(),
                Layer::Dense(p) => {
                    let mut y = vec![0.0; out_shape.len()];
                    dense_forward_into(x, p, &mut y);
                    y
                }
            };
            acts.push(y);
            in_shape = out_shape;
        }
        Ok(acts)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.pop().expect("non-empty"))
    }

    /// Loss of one example against a target vector.
    pub fn loss(&self, input: &[f64], target: &[f64]) -> Result<f64> {
        let out = self.forward(input)?;
        self.check_target(target)?;
        Ok(mse_slices(&out, target).0)
    }

    fn check_target(&self, target: &[f64]) -> Result<()> {
        if target.len() != self.output_len() {
            return Err(Error::Shape(format!(
                "target has {} values, network outputs {}",
                target.len(),
                self.output_len()
            )));
        }
        Ok(())
    }

    /// Back-propagates one example and adds its parameter gradients into
    /// `grads`. Returns the example's loss.
    pub fn accumulate_gradients(&self, input: &[f64], target: &[f64], grads: &mut Gradients) -> Result<f64> {
        self.check_target(target)?;
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer does not match network".into()));
        }
        let acts = self.forward_trace(input)?;
        let (loss, mut g) = mse_slices(acts.last().expect("non-empty"), target);

        for li in (0..self.layers.len()).rev() {
            let x: &[f64] = if li == 0 { input } else { &acts[li - 1] };
            let in_shape = if li == 0 { self.input } else { self.shapes[li - 1] };
            let need_input_grad = li > 0;
            g = match &self.layers[li] {
                Layer::Sigmoid => {
                    for (gi, &s) in g.iter_mut().zip(&acts[li]) {
                        *gi *= s * (1.0 - s);
                    }
                    g
                }
                Layer::AvgPool2 => {
                    let mut gin = vec![0.0; in_shape.len()];
                    pool_backward_into(&g, in_shape.c, in_shape.h, in_shape.w, &mut gin);
                    gin
                }
                Layer::Flatten => g,
                Layer::Conv(p) => {
                    let LayerGrads { weights, bias } = &mut grads.layers[li];
                    let mut gin = if need_input_grad { vec![0.0; in_shape.len()] } else { Vec::new() };
                    conv_backward_acc(
                        x,
                        in_shape.h,
                        in_shape.w,
                        p,
                        &g,
                        weights,
                        bias,
                        need_input_grad.then_some(gin.as_mut_slice()),
                    );
                    gin
                }
                Layer::Dense(p) => {
                    let LayerGrads { weights, bias } = &mut grads.layers[li];
                    let mut gin = if need_input_grad { vec![0.0; in_shape.len()] } else { Vec::new() };
                    dense_backward_acc(
                        x,
                        p,
                        &g,
                        weights,
                        bias,
                        need_input_grad.then_some(gin.as_mut_slice()),
                    );
                    gin
                }
            };
        }
        Ok(loss)
    }

    /// Loss and exact parameter gradients of one example.
    pub fn gradients(&self, input: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
        let mut grads = self.zero_gradients();
        let loss = self.accumulate_gradients(input, target, &mut grads)?;
        Ok((loss, grads))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(p) => Some((&mut p.kernels, &mut p.bias)),
            Layer::Dense(p) => Some((&mut p.weights, &mut p.bias)),
            _ => None,
        })
    }
}

/// `p <- p - lr * (g / batch_size)` where `grads` holds the batch sum.
pub fn sgd_step(network: &mut Network, grads: &Gradients, lr: f64, batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if grads.layers.len() != network.layers.len() {
        return Err(Error::Shape("gradient buffer does not match network".into()));
    }
    let inv = 1.0 / batch_size as f64;
    let param_grads = grads.layers.iter().filter(|g| !g.weights.is_empty() || !g.bias.is_empty());
    for ((w, b), g) in network.params_mut().zip(param_grads) {
        if w.len() != g.weights.len() || b.len() != g.bias.len() {
            return Err(Error::Shape("gradient shape mismatch".into()));
        }
        for (p, d) in w.iter_mut().zip(&g.weights) {
            *p -= lr * (d * inv);
        }
        for (p, d) in b.iter_mut().zip(&g.bias) {
            *p -= lr * (d * inv);
        }
    }
    Ok(())
}

/// Uniform Glorot initialization: weights in `+-sqrt(6 / (fan_in + fan_out))`,
/// biases zero. Layers are filled in order from one seeded stream.
pub fn init_weights(network: &mut Network, seed: u64) {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    for layer in &mut network.layers {
        let (weights, bias, fan_in, fan_out) = match layer {
            Layer::Conv(p) => (
                &mut p.kernels,
                &mut p.bias,
                p.in_ch * KERNEL * KERNEL,
                p.out_ch * KERNEL * KERNEL,
            ),
            Layer::Dense(p) => (&mut p.weights, &mut p.bias, p.inputs, p.outputs),
            _ => continue,
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in weights.iter_mut() {
            *w = rng.uniform(-bound, bound);
        }
        bias.fill(0.0);
    }
}
