//! Feed-forward embedding network with hand-written backpropagation.
//!
//! The network is a stack of dense layers. Hidden layers apply the configured
//! activation; the last layer is linear and its output is optionally projected
//! onto the unit sphere. Parameters live in one flat buffer laid out as
//! `layer0.weight, layer0.bias, layer1.weight, ...` with weights row-major
//! (`out x in`), so the optimizer can treat them as a single slice.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::vector::{dot, format_exact};

/// Below this norm an output is left unnormalized and contributes no
/// normalization Jacobian.
pub const NORM_EPS: f64 = 1e-12;

pub const CHECKPOINT_HEADER: &str = "HETERO-EMBED-NET v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::config(format!(
                "unknown activation '{other}' (expected relu or tanh)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub normalize_output: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64],
            embed_dim: 32,
            activation: Activation::Relu,
            normalize_output: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("net.input_dim must be >= 1"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("net.embed_dim must be >= 1"));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&d| d == 0) {
            return Err(Error::config(format!("net.hidden_dims[{i}] must be >= 1")));
        }
        Ok(())
    }

    /// `(out, in)` for every layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embed_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    out_dim: usize,
    in_dim: usize,
    weight_offset: usize,
    bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    config: NetConfig,
    params: Vec<f64>,
}

/// Per-sample activations recorded during the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (`layers + 1` entries; the last is the raw output).
    activations: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Vec<f64>>,
    /// Final output, normalized when configured.
    pub output: Vec<f64>,
}

impl ForwardTrace {
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }

    /// Last-layer output before normalization.
    pub fn raw_output(&self) -> &[f64] {
        self.activations.last().expect("traced output")
    }
}

impl EmbeddingNet {
    /// Initializes weights with `N(0, 1) / sqrt(fan_in)` and zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (out_dim, in_dim) in config.layer_shapes() {
            let scale = 1.0 / (in_dim as f64).sqrt();
            for _ in 0..out_dim * in_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                params.push(z * scale);
            }
            params.extend(std::iter::repeat_n(0.0, out_dim));
        }
        Ok(Self { config, params })
    }

    /// Builds a net from explicit parameters in the flat layout.
    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = param_count(&config);
        if params.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        if !crate::vector::all_finite(&params) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.config.hidden_dims.len() + 1
    }

    fn layouts(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.config
            .layer_shapes()
            .into_iter()
            .map(|(out_dim, in_dim)| {
                let weight_offset = offset;
                let bias_offset = weight_offset + out_dim * in_dim;
                offset = bias_offset + out_dim;
                LayerLayout {
                    out_dim,
                    in_dim,
                    weight_offset,
                    bias_offset,
                }
            })
            .collect()
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        let l = self.layouts()[layer];
        &self.params[l.weight_offset..l.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = self.layouts()[layer];
        &self.params[l.bias_offset..l.bias_offset + l.out_dim]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.config.input_dim {
            return Err(Error::shape(format!(
                "input has dim {}, network expects {}",
                input.len(),
                self.config.input_dim
            )));
        }
        let layouts = self.layouts();
        let last = layouts.len() - 1;
        let mut activations = Vec::with_capacity(layouts.len() + 1);
        let mut pre_activations = Vec::with_capacity(last);
        activations.push(input.to_vec());
        for (li, l) in layouts.iter().enumerate() {
            let x = &activations[li];
            let w = &self.params[l.weight_offset..l.bias_offset];
            let b = &self.params[l.bias_offset..l.bias_offset + l.out_dim];
            let z: Vec<f64> = (0..l.out_dim)
                .map(|o| dot(&w[o * l.in_dim..(o + 1) * l.in_dim], x) + b[o])
                .collect();
            if li == last {
                activations.push(z);
            } else {
                let a = z.iter().map(|&v| self.config.activation.apply(v)).collect();
                pre_activations.push(z);
                activations.push(a);
            }
        }
        let raw = activations.last().expect("at least one layer");
        let output = if self.config.normalize_output {
            normalize(raw)
        } else {
            raw.clone()
        };
        Ok(ForwardTrace {
            activations,
            pre_activations,
            output,
        })
    }

    /// Gradient of `sum_i <grads[i], g(inputs[i])>` with respect to every
    /// parameter, in the flat parameter layout.
    pub fn backward(&self, inputs: &[&[f64]], grads: &[&[f64]]) -> Result<Vec<f64>> {
        if inputs.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} inputs but {} output gradients",
                inputs.len(),
                grads.len()
            )));
        }
        let mut out = vec![0.0; self.params.len()];
        for (x, g) in inputs.iter().zip(grads) {
            let trace = self.forward_trace(x)?;
            self.accumulate_backward(&trace, g, &mut out)?;
        }
        Ok(out)
    }

    /// Adds the parameter gradient for one traced sample into `out`.
    pub fn accumulate_backward(
        &self,
        trace: &ForwardTrace,
        grad_output: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        if grad_output.len() != self.config.embed_dim {
            return Err(Error::shape(format!(
                "output gradient has dim {}, embedding dim is {}",
                grad_output.len(),
                self.config.embed_dim
            )));
        }
        if out.len() != self.params.len() {
            return Err(Error::shape(
                "gradient buffer does not match parameter count",
            ));
        }
        let layouts = self.layouts();
        let raw = trace.activations.last().expect("traced output");
        let mut delta = if self.config.normalize_output {
            normalize_backward(raw, grad_output)
        } else {
            grad_output.to_vec()
        };
        for li in (0..layouts.len()).rev() {
            let l = layouts[li];
            if li + 1 < layouts.len() {
                let pre = &trace.pre_activations[li];
                for (d, &p) in delta.iter_mut().zip(pre) {
                    *d *= self.config.activation.derivative(p);
                }
            }
            let x = &trace.activations[li];
            for o in 0..l.out_dim {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row =
                    &mut out[l.weight_offset + o * l.in_dim..l.weight_offset + (o + 1) * l.in_dim];
                for (gw, &xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
                out[l.bias_offset + o] += d;
            }
            if li > 0 {
                let w = &self.params[l.weight_offset..l.bias_offset];
                let mut next = vec![0.0; l.in_dim];
                for o in 0..l.out_dim {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (n, &wv) in next.iter_mut().zip(&w[o * l.in_dim..(o + 1) * l.in_dim]) {
                        *n += d * wv;
                    }
                }
                delta = next;
            }
        }
        Ok(())
    }

    /// Serializes to the versioned text checkpoint format.
    pub fn to_checkpoint_string(&self) -> String {
        let c = &self.config;
        let hidden: Vec<String> = c.hidden_dims.iter().map(|d| d.to_string()).collect();
        let mut s = String::new();
        s.push_str(CHECKPOINT_HEADER);
        s.push('\n');
        s.push_str(&format!("input_dim={}\n", c.input_dim));
        s.push_str(&format!("hidden_dims={}\n", hidden.join(",")));
        s.push_str(&format!("embed_dim={}\n", c.embed_dim));
        s.push_str(&format!("activation={}\n", c.activation));
        s.push_str(&format!("normalize_output={}\n", c.normalize_output));
        for (i, l) in self.layouts().iter().enumerate() {
            let w = &self.params[l.weight_offset..l.bias_offset];
            let b = &self.params[l.bias_offset..l.bias_offset + l.out_dim];
            push_tensor(
                &mut s,
                &format!("layer{i}.weight"),
                &format!("{}x{}", l.out_dim, l.in_dim),
                w,
            );
            push_tensor(&mut s, &format!("layer{i}.bias"), &l.out_dim.to_string(), b);
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.trim_end() == CHECKPOINT_HEADER => {}
            _ => {
                return Err(Error::parse(
                    1,
                    format!("expected header '{CHECKPOINT_HEADER}'"),
                ))
            }
        }
        let mut input_dim = None;
        let mut hidden_dims = None;
        let mut embed_dim = None;
        let mut activation = None;
        let mut normalize_output = None;
        let mut tensors: Vec<(usize, String, String, Vec<f64>)> = Vec::new();
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let bad = |what: &str| Error::parse(n, format!("invalid {what} '{value}'"));
                match key {
                    "input_dim" => input_dim = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                    "embed_dim" => embed_dim = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                    "hidden_dims" => {
                        let dims = if value.is_empty() {
                            Vec::new()
                        } else {
                            value
                                .split(',')
                                .map(|d| d.trim().parse::<usize>())
                                .collect::<std::result::Result<Vec<_>, _>>()
                                .map_err(|_| bad(key))?
                        };
                        hidden_dims = Some(dims);
                    }
                    "activation" => {
                        activation = Some(value.parse::<Activation>().map_err(|_| bad(key))?)
                    }
                    "normalize_output" => {
                        normalize_output = Some(value.parse::<bool>().map_err(|_| bad(key))?)
                    }
                    other => {
                        return Err(Error::parse(n, format!("unknown checkpoint key '{other}'")))
                    }
                }
                continue;
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().unwrap_or_default().to_string();
            let shape = fields
                .next()
                .ok_or_else(|| Error::parse(n, "tensor line without shape"))?
                .to_string();
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(n, format!("invalid float '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            tensors.push((n, name, shape, values));
        }
        let missing = |k: &str| Error::parse(0, format!("checkpoint missing '{k}'"));
        let config = NetConfig {
            input_dim: input_dim.ok_or_else(|| missing("input_dim"))?,
            hidden_dims: hidden_dims.ok_or_else(|| missing("hidden_dims"))?,
            embed_dim: embed_dim.ok_or_else(|| missing("embed_dim"))?,
            activation: activation.ok_or_else(|| missing("activation"))?,
            normalize_output: normalize_output.ok_or_else(|| missing("normalize_output"))?,
        };
        config.validate()?;
        let shapes = config.layer_shapes();
        if tensors.len() != 2 * shapes.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, config implies {}",
                tensors.len(),
                2 * shapes.len()
            )));
        }
        let mut params = Vec::with_capacity(param_count(&config));
        for (i, &(out_dim, in_dim)) in shapes.iter().enumerate() {
            let expect = [
                (
                    format!("layer{i}.weight"),
                    format!("{out_dim}x{in_dim}"),
                    out_dim * in_dim,
                ),
                (format!("layer{i}.bias"), out_dim.to_string(), out_dim),
            ];
            for (j, (name, shape, len)) in expect.into_iter().enumerate() {
                let (n, got_name, got_shape, values) = &tensors[2 * i + j];
                if *got_name != name || *got_shape != shape || values.len() != len {
                    return Err(Error::parse(
                        *n,
                        format!("expected tensor {name} of shape {shape} with {len} values"),
                    ));
                }
                params.extend_from_slice(values);
            }
        }
        Self::from_params(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}

pub fn param_count(config: &NetConfig) -> usize {
    config.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
}

fn push_tensor(s: &mut String, name: &str, shape: &str, values: &[f64]) {
    s.push_str(name);
    s.push(' ');
    s.push_str(shape);
    for v in values {
        s.push(' ');
        s.push_str(&format_exact(*v));
    }
    s.push('\n');
}

/// Unit-L2 projection; vectors with norm at most `NORM_EPS` pass through.
pub fn normalize(z: &[f64]) -> Vec<f64> {
    let n = crate::vector::norm(z);
    if n <= NORM_EPS {
        z.to_vec()
    } else {
        z.iter().map(|v| v / n).collect()
    }
}

/// Vector-Jacobian product of [`normalize`]: `(g - y <y, g>) / |z|`.
fn normalize_backward(z: &[f64], g: &[f64]) -> Vec<f64> {
    let n = crate::vector::norm(z);
    if n <= NORM_EPS {
        return vec![0.0; z.len()];
    }
    let y: Vec<f64> = z.iter().map(|v| v / n).collect();
    let yg = dot(&y, g);
    y.iter().zip(g).map(|(yi, gi)| (gi - yi * yg) / n).collect()
}
