//! Layer stacks with explicit forward/backward passes.
//!
//! A [`Network`] is an ordered list of [`LayerSpec`]s ending in a
//! `SoftmaxXent` head. `forward` stops before the head and returns logits
//! plus a [`ForwardCache`]; the caller computes the loss gradient with
//! [`softmax_xent`](crate::layers::softmax_xent) and hands it to `backward`,
//! which accumulates into every [`Parameter::grad`].

use std::mem;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, out_extent, DropoutMask};
use crate::rng::{stream, RandomSource};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Conv2d {
        filters: usize,
        channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    SoftmaxXent,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => {
                Err(Error::InvalidSpec(format!("dense {inputs}->{outputs}: widths must be >= 1")))
            }
            LayerSpec::Conv2d {
                filters,
                channels,
                kernel,
                stride,
                ..
            } if filters == 0 || channels == 0 || kernel == 0 || stride == 0 => Err(
                Error::InvalidSpec(format!("conv2d {self:?}: extents must be >= 1")),
            ),
            LayerSpec::MaxPool { window, stride } if window == 0 || stride == 0 => {
                Err(Error::InvalidSpec(format!("maxpool {window}/{stride}: must be >= 1")))
            }
            LayerSpec::Dropout { rate } => layers::check_rate(rate),
            _ => Ok(()),
        }
    }

    /// Per-sample output dims (no batch axis).
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Error::ShapeMismatch(format!("{what} cannot take per-sample input {input:?}"))
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                _ => Err(mismatch(&format!("dense({inputs}->{outputs})"))),
            },
            LayerSpec::Conv2d {
                filters,
                channels,
                kernel,
                stride,
                pad,
            } => match *input {
                [c, h, w] if c == channels => Ok(vec![
                    filters,
                    out_extent(h, kernel, stride, pad)?,
                    out_extent(w, kernel, stride, pad)?,
                ]),
                _ => Err(mismatch(&format!("conv2d({channels} channels)"))),
            },
            LayerSpec::MaxPool { window, stride } => match *input {
                [c, h, w] => Ok(vec![
                    c,
                    out_extent(h, window, stride, 0)?,
                    out_extent(w, window, stride, 0)?,
                ]),
                _ => Err(mismatch("maxpool")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::SoftmaxXent => Ok(input.to_vec()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::SoftmaxXent => "softmax_xent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().clone());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug)]
enum LayerCache {
    Dense { input: Tensor },
    Relu { input: Tensor },
    Conv { input: Tensor },
    Pool { argmax: Vec<usize>, input_shape: Shape },
    Dropout { mask: Option<DropoutMask> },
    Flatten { input_shape: Shape },
    Taken,
}

/// State recorded by one forward pass for the matching backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    network_id: u64,
    version: u64,
    layers: Vec<LayerCache>,
    consumed: bool,
}

impl ForwardCache {
    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Network {
    id: u64,
    version: u64,
    input_dims: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Parameter>,
    slots: Vec<Option<usize>>,
    mode: Mode,
    seed: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            id: fresh_id(),
            version: self.version,
            input_dims: self.input_dims.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            slots: self.slots.clone(),
            mode: self.mode,
            seed: self.seed,
        }
    }
}

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Network {
    /// Validates the layer stack against the per-sample `input_dims` and
    /// initializes parameters from `seed`: weights Glorot-uniform, biases 0.
    pub fn build(input_dims: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Network> {
        let mut rng = RandomSource::with_stream(seed, stream::INIT);
        Self::assemble(input_dims, layers, seed, |shape, fan_in, fan_out| {
            let a = glorot_limit(fan_in, fan_out);
            Tensor::rand_uniform(&mut rng, shape, -a, a)
        })
    }

    /// Builds the stack with every parameter zeroed; the checkpoint loader
    /// fills values afterwards.
    pub(crate) fn build_zeroed(input_dims: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Network> {
        Self::assemble(input_dims, layers, seed, |shape, _, _| Ok(Tensor::zeros(shape)))
    }

    fn assemble(
        input_dims: &[usize],
        layers: Vec<LayerSpec>,
        seed: u64,
        mut init: impl FnMut(Shape, usize, usize) -> Result<Tensor>,
    ) -> Result<Network> {
        Shape::new(input_dims)?;
        match layers.last() {
            Some(LayerSpec::SoftmaxXent) => {}
            _ => return Err(Error::InvalidSpec("last layer must be softmax_xent".into())),
        }
        if layers[..layers.len() - 1].contains(&LayerSpec::SoftmaxXent) {
            return Err(Error::InvalidSpec("softmax_xent may only appear last".into()));
        }
        let mut dims = input_dims.to_vec();
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(layers.len());
        for (i, spec) in layers.iter().enumerate() {
            spec.validate()?;
            dims = spec
                .output_dims(&dims)
                .map_err(|e| Error::InvalidSpec(format!("layer {i} ({}): {e}", spec.name())))?;
            match *spec {
                LayerSpec::Dense { inputs, outputs } => {
                    slots.push(Some(params.len()));
                    let w = init(Shape::new([inputs, outputs])?, inputs, outputs)?;
                    params.push(Parameter::new(format!("{i}.dense.weight"), w));
                    params.push(Parameter::new(format!("{i}.dense.bias"), Tensor::zeros(Shape::new([outputs])?)));
                }
                LayerSpec::Conv2d {
                    filters,
                    channels,
                    kernel,
                    ..
                } => {
                    slots.push(Some(params.len()));
                    let area = kernel * kernel;
                    let w = init(
                        Shape::new([filters, channels, kernel, kernel])?,
                        channels * area,
                        filters * area,
                    )?;
                    params.push(Parameter::new(format!("{i}.conv2d.weight"), w));
                    params.push(Parameter::new(format!("{i}.conv2d.bias"), Tensor::zeros(Shape::new([filters])?)));
                }
                _ => slots.push(None),
            }
        }
        if dims.len() != 1 {
            return Err(Error::InvalidSpec(format!("logits must be a vector per sample, got {dims:?}")));
        }
        Ok(Network {
            id: fresh_id(),
            version: 0,
            input_dims: input_dims.to_vec(),
            layers,
            params,
            slots,
            mode: Mode::Train,
            seed,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn num_classes(&self) -> usize {
        let mut dims = self.input_dims.clone();
        for l in &self.layers {
            dims = l.output_dims(&dims).expect("validated at build");
        }
        dims[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// Mutable access for optimizers. Any forward cache taken before this
    /// call becomes stale.
    pub fn params_mut(&mut self) -> &mut [Parameter] {
        self.version += 1;
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Sets the rate of every dropout layer. Errors if there is none.
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        layers::check_rate(rate)?;
        let mut found = false;
        for l in &mut self.layers {
            if let LayerSpec::Dropout { rate: r } = l {
                *r = rate;
                found = true;
            }
        }
        if found {
            Ok(())
        } else {
            Err(Error::InvalidSpec("network has no dropout layer".into()))
        }
    }

    pub fn dropout_rate(&self) -> Option<f64> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::Dropout { rate } => Some(*rate),
            _ => None,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let d = x.dims();
        if d.len() != self.input_dims.len() + 1 || d[1..] != self.input_dims[..] {
            return Err(Error::ShapeMismatch(format!(
                "network expects batch x {:?}, got {:?}",
                self.input_dims, d
            )));
        }
        Ok(())
    }

    /// Forward pass in the network's current mode. `rng` is only drawn from
    /// by dropout layers in train mode.
    pub fn forward(&self, x: &Tensor, rng: &mut RandomSource) -> Result<(Tensor, ForwardCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let logits = self.run(x, rng, self.mode, Some(&mut caches))?;
        Ok((
            logits,
            ForwardCache {
                network_id: self.id,
                version: self.version,
                layers: caches,
                consumed: false,
            },
        ))
    }

    /// Eval-mode logits, no cache. Safe to call concurrently on a shared
    /// network.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut unused = RandomSource::with_stream(self.seed, stream::DROPOUT);
        self.run(x, &mut unused, Mode::Eval, None)
    }

    fn run(
        &self,
        x: &Tensor,
        rng: &mut RandomSource,
        mode: Mode,
        mut caches: Option<&mut Vec<LayerCache>>,
    ) -> Result<Tensor> {
        self.check_input(x)?;
        let batch = x.dims()[0];
        let mut cur = x.clone();
        let mut record = |c: LayerCache| {
            if let Some(v) = caches.as_deref_mut() {
                v.push(c);
            }
        };
        for (i, spec) in self.layers.iter().enumerate() {
            cur = match *spec {
                LayerSpec::Dense { .. } => {
                    let p = self.slots[i].expect("dense has params");
                    let y = layers::dense_forward(&cur, &self.params[p].value, &self.params[p + 1].value)?;
                    record(LayerCache::Dense { input: cur });
                    y
                }
                LayerSpec::Relu => {
                    let y = layers::relu_forward(&cur);
                    record(LayerCache::Relu { input: cur });
                    y
                }
                LayerSpec::Conv2d { stride, pad, .. } => {
                    let p = self.slots[i].expect("conv has params");
                    let y = layers::conv2d_forward(
                        &cur,
                        &self.params[p].value,
                        &self.params[p + 1].value,
                        stride,
                        pad,
                    )?;
                    record(LayerCache::Conv { input: cur });
                    y
                }
                LayerSpec::MaxPool { window, stride } => {
                    let (y, argmax) = layers::maxpool_forward(&cur, window, stride)?;
                    record(LayerCache::Pool {
                        argmax,
                        input_shape: cur.shape().clone(),
                    });
                    y
                }
                LayerSpec::Dropout { rate } => {
                    let (y, mask) = layers::dropout_forward(&cur, rate, rng, mode)?;
                    record(LayerCache::Dropout { mask });
                    y
                }
                LayerSpec::Flatten => {
                    let input_shape = cur.shape().clone();
                    let flat = input_shape.numel() / batch;
                    let y = cur.into_shape(Shape::new([batch, flat])?)?;
                    record(LayerCache::Flatten { input_shape });
                    y
                }
                LayerSpec::SoftmaxXent => break,
            };
        }
        Ok(cur)
    }

    /// Backpropagates `dlogits` through the cached pass, accumulating into
    /// parameter gradients. Layers below the first parametric layer are
    /// skipped since nothing consumes the input gradient.
    pub fn backward(&mut self, cache: &mut ForwardCache, dlogits: &Tensor) -> Result<()> {
        if cache.consumed {
            return Err(Error::StaleCache("cache already consumed by a backward pass"));
        }
        if cache.network_id != self.id {
            return Err(Error::StaleCache("cache was produced by a different network"));
        }
        if cache.version != self.version {
            return Err(Error::StaleCache("parameters changed since the forward pass"));
        }
        cache.consumed = true;
        let first = self.slots.iter().position(Option::is_some).unwrap_or(self.layers.len());
        let mut grad = dlogits.clone();
        for (i, spec) in self.layers.iter().enumerate().rev() {
            let want_dx = i > first;
            if matches!(spec, LayerSpec::SoftmaxXent) {
                continue;
            }
            let entry = mem::replace(&mut cache.layers[i], LayerCache::Taken);
            grad = match (spec, entry) {
                (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                    let p = self.slots[i].expect("dense has params");
                    let (w, b) = self.params.split_at_mut(p + 1);
                    match layers::dense_backward_into(&input, &w[p].value, &grad, &mut w[p].grad, &mut b[0].grad, want_dx)? {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (LayerSpec::Relu, LayerCache::Relu { input }) => layers::relu_backward(&input, &grad)?,
                (&LayerSpec::Conv2d { stride, pad, .. }, LayerCache::Conv { input }) => {
                    let p = self.slots[i].expect("conv has params");
                    let (w, b) = self.params.split_at_mut(p + 1);
                    match layers::conv2d_backward_into(
                        &input,
                        &w[p].value,
                        &grad,
                        stride,
                        pad,
                        &mut w[p].grad,
                        &mut b[0].grad,
                        want_dx,
                    )? {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (LayerSpec::MaxPool { .. }, LayerCache::Pool { argmax, input_shape }) => {
                    layers::maxpool_backward(&grad, &argmax, &input_shape)?
                }
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    layers::dropout_backward(&grad, mask.as_ref())?
                }
                (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => grad.into_shape(input_shape)?,
                _ => return Err(Error::StaleCache("cache does not match layer stack")),
            };
        }
        Ok(())
    }

    /// Forward, softmax cross-entropy against one-hot `targets`, backward.
    /// Returns the mean loss and the logits.
    pub fn loss_and_backward(
        &mut self,
        x: &Tensor,
        targets: &Tensor,
        rng: &mut RandomSource,
    ) -> Result<(f64, Tensor)> {
        let (logits, mut cache) = self.forward(x, rng)?;
        let (loss, dlogits) = layers::softmax_xent(&logits, targets)?;
        self.backward(&mut cache, &dlogits)?;
        Ok((loss, logits))
    }

    /// Restores parameter values (used by checkpoint loading).
    pub(crate) fn param_slots_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }
}
