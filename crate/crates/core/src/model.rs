//! Classifiers mapping feature vectors (or images) to K logits.
//!
//! Two architectures: an MLP over flat features and a small two-ish-layer
//! CNN over NHWC images. Parameters live in a flat [`ParamVector`] whose
//! layout is `weight, bias` per layer in forward order, so flatten/unflatten
//! round-trips exactly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::seeding;
use crate::tensor::{Gradients, NodeId, Tape, Tensor};

/// Architecture family plus the widths that define it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    /// Fully connected net: input -> hidden widths -> K logits, relu between.
    Mlp { hidden: Vec<usize> },
    /// Conv stack (odd square kernels, stride 1, same padding) -> flatten ->
    /// one dense layer to K logits.
    SmallCnn { channels: Vec<usize>, kernel: usize },
}

/// Everything needed to rebuild a model and its initial parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// `[d]` for an MLP, `[h, w, c]` for the CNN.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize, init_seed: u64) -> Self {
        Self {
            kind: ModelKind::Mlp { hidden },
            input_shape: vec![input_dim],
            num_classes,
            init_seed,
        }
    }

    pub fn small_cnn(
        input_shape: [usize; 3],
        channels: Vec<usize>,
        kernel: usize,
        num_classes: usize,
        init_seed: u64,
    ) -> Self {
        Self {
            kind: ModelKind::SmallCnn { channels, kernel },
            input_shape: input_shape.to_vec(),
            num_classes,
            init_seed,
        }
    }
}

/// One parameterized layer in forward order.
#[derive(Debug, Clone)]
enum Layer {
    Dense {
        in_dim: usize,
        out_dim: usize,
        relu: bool,
    },
    Conv {
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
    },
}

impl Layer {
    fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Layer::Dense {
                in_dim, out_dim, ..
            } => vec![in_dim, out_dim],
            Layer::Conv {
                kernel,
                in_ch,
                out_ch,
            } => vec![kernel, kernel, in_ch, out_ch],
        }
    }

    fn bias_len(&self) -> usize {
        match *self {
            Layer::Dense { out_dim, .. } => out_dim,
            Layer::Conv { out_ch, .. } => out_ch,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { in_dim, .. } => in_dim,
            Layer::Conv { kernel, in_ch, .. } => kernel * kernel * in_ch,
        }
    }

    fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.bias_len()
    }
}

/// One recorded forward pass: the logits node plus the parameter leaves, in
/// parameter-layout order, for pulling a flat gradient out of [`Gradients`].
pub struct ForwardPass {
    pub logits: NodeId,
    param_leaves: Vec<NodeId>,
    param_len: usize,
}

impl ForwardPass {
    /// Flatten the per-leaf gradients back into parameter layout.
    pub fn grad_vector(&self, grads: &Gradients) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_len);
        for &leaf in &self.param_leaves {
            out.extend_from_slice(grads.get(leaf).data());
        }
        ParamVector::from_vec(out)
    }
}

/// A classifier: architecture, derived layer layout, and current parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: ParamVector,
}

impl Model {
    /// Validate the spec, derive the layer layout, and initialize parameters
    /// deterministically (He-scaled normal weights, zero biases).
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.num_classes < 2 {
            return Err(Error::InvalidArgument {
                arg: "num_classes",
                reason: format!("need at least 2 classes, got {}", spec.num_classes),
            });
        }
        let layers = Self::build_layers(&spec)?;
        let params = Self::init_params(&spec, &layers);
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    fn build_layers(spec: &ModelSpec) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        match &spec.kind {
            ModelKind::Mlp { hidden } => {
                if spec.input_shape.len() != 1 || spec.input_shape[0] == 0 {
                    return Err(Error::InvalidArgument {
                        arg: "input_shape",
                        reason: format!("MLP wants [d], got {:?}", spec.input_shape),
                    });
                }
                if hidden.contains(&0) {
                    return Err(Error::InvalidArgument {
                        arg: "hidden",
                        reason: format!("zero-width layer in {hidden:?}"),
                    });
                }
                let mut in_dim = spec.input_shape[0];
                for &h in hidden {
                    layers.push(Layer::Dense {
                        in_dim,
                        out_dim: h,
                        relu: true,
                    });
                    in_dim = h;
                }
                layers.push(Layer::Dense {
                    in_dim,
                    out_dim: spec.num_classes,
                    relu: false,
                });
            }
            ModelKind::SmallCnn { channels, kernel } => {
                if spec.input_shape.len() != 3 || spec.input_shape.contains(&0) {
                    return Err(Error::InvalidArgument {
                        arg: "input_shape",
                        reason: format!("CNN wants [h, w, c], got {:?}", spec.input_shape),
                    });
                }
                if *kernel == 0 || kernel.is_multiple_of(2) {
                    return Err(Error::InvalidArgument {
                        arg: "kernel",
                        reason: format!("kernel must be odd and positive, got {kernel}"),
                    });
                }
                if channels.is_empty() || channels.contains(&0) {
                    return Err(Error::InvalidArgument {
                        arg: "channels",
                        reason: format!("bad channel list {channels:?}"),
                    });
                }
                let (h, w, mut in_ch) = (
                    spec.input_shape[0],
                    spec.input_shape[1],
                    spec.input_shape[2],
                );
                for &out_ch in channels {
                    layers.push(Layer::Conv {
                        kernel: *kernel,
                        in_ch,
                        out_ch,
                    });
                    in_ch = out_ch;
                }
                // Same padding keeps h × w; the dense layer sees the flattened maps.
                layers.push(Layer::Dense {
                    in_dim: h * w * in_ch,
                    out_dim: spec.num_classes,
                    relu: false,
                });
            }
        }
        Ok(layers)
    }

    fn init_params(spec: &ModelSpec, layers: &[Layer]) -> ParamVector {
        let mut rng = seeding::substream(spec.init_seed, "model-init");
        let total: usize = layers.iter().map(Layer::param_count).sum();
        let mut values = Vec::with_capacity(total);
        for layer in layers {
            let fan_in = layer.fan_in() as f64;
            let std = libm::sqrt(2.0 / fan_in);
            let n_weights: usize = layer.weight_shape().iter().product();
            for _ in 0..n_weights {
                values.push(std * standard_normal(&mut rng));
            }
            values.extend(core::iter::repeat_n(0.0, layer.bias_len()));
        }
        ParamVector::from_vec(values)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn get_params(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                op: "set_params",
                left: params.len(),
                right: self.param_count(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Record a forward pass of the stored parameters.
    pub fn forward(&self, tape: &mut Tape, batch: &Tensor) -> Result<ForwardPass> {
        self.forward_with(tape, &self.params, batch)
    }

    /// Record a forward pass at explicit parameters θ (the stored parameters
    /// are untouched; this is what the lookahead step uses).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        theta: &ParamVector,
        batch: &Tensor,
    ) -> Result<ForwardPass> {
        if theta.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                op: "forward_with",
                left: theta.len(),
                right: self.param_count(),
            });
        }
        let expected: Vec<usize> = self.spec.input_shape.clone();
        if batch.shape().len() != expected.len() + 1 || batch.shape()[1..] != expected[..] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("batch {:?} vs input shape {expected:?}", batch.shape()),
            });
        }

        let mut param_leaves = Vec::with_capacity(2 * self.layers.len());
        let mut offset = 0usize;
        let theta = theta.as_slice();
        let mut x = tape.leaf(batch.clone());
        let batch_rows = batch.shape()[0];

        for layer in &self.layers {
            let w_shape = layer.weight_shape();
            let w_len: usize = w_shape.iter().product();
            let b_len = layer.bias_len();
            let w = tape.leaf(Tensor::from_raw(
                w_shape,
                theta[offset..offset + w_len].to_vec(),
            ));
            offset += w_len;
            let b = tape.leaf(Tensor::from_raw(
                vec![b_len],
                theta[offset..offset + b_len].to_vec(),
            ));
            offset += b_len;
            param_leaves.push(w);
            param_leaves.push(b);

            match layer {
                Layer::Dense { in_dim, relu, .. } => {
                    // Flatten anything still spatial before the first dense layer.
                    if tape.value(x).shape().len() != 2 {
                        x = tape.reshape(x, vec![batch_rows, *in_dim])?;
                    }
                    x = tape.matmul(x, w)?;
                    x = tape.add_bias(x, b)?;
                    if *relu {
                        x = tape.relu(x);
                    }
                }
                Layer::Conv { kernel, .. } => {
                    x = tape.conv2d(x, w, kernel / 2)?;
                    x = tape.add_bias(x, b)?;
                    x = tape.relu(x);
                }
            }
        }

        Ok(ForwardPass {
            logits: x,
            param_leaves,
            param_len: self.param_count(),
        })
    }

    /// Logits at explicit parameters, without keeping the tape.
    pub fn logits_with(&self, theta: &ParamVector, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward_with(&mut tape, theta, batch)?;
        Ok(tape.value(pass.logits).clone())
    }
}

/// Standard normal sample via the Box–Muller transform; works without std.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = 1.0 - uniform01(rng); // (0, 1], keeps the log finite
    let u2 = uniform01(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn uniform01(rng: &mut impl RngCore) -> f64 {
    // 53 random bits into [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::mlp(2, vec![4], 3, 7);
        let a = Model::new(spec.clone()).unwrap();
        let b = Model::new(spec).unwrap();
        assert_eq!(a.get_params().as_slice(), b.get_params().as_slice());
    }

    #[test]
    fn mlp_param_count_matches_arithmetic() {
        // d·h + h + h·K + K
        let (d, h, k) = (5, 7, 3);
        let model = Model::new(ModelSpec::mlp(d, vec![h], k, 0)).unwrap();
        assert_eq!(model.param_count(), d * h + h + h * k + k);
    }

    #[test]
    fn cnn_param_count_matches_hand_sum() {
        // 8×8×1 input, channels [4, 8], kernel 3, K=3:
        // conv1 3·3·1·4+4 = 40, conv2 3·3·4·8+8 = 296, dense 8·8·8·3+3 = 1539.
        let model = Model::new(ModelSpec::small_cnn([8, 8, 1], vec![4, 8], 3, 3, 1)).unwrap();
        assert_eq!(model.param_count(), 40 + 296 + 1539);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let model = Model::new(ModelSpec::mlp(3, vec![4], 2, 0)).unwrap();
        let theta = ParamVector::zeros(model.param_count());
        let batch = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let logits = model.logits_with(&theta, &batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_give_identical_logits() {
        let model = Model::new(ModelSpec::mlp(3, vec![5, 4], 3, 11)).unwrap();
        let row = [0.3, -1.0, 2.0];
        let data: Vec<f64> = row.iter().copied().cycle().take(9).collect();
        let batch = Tensor::matrix(3, 3, data).unwrap();
        let logits = model.logits_with(&model.get_params(), &batch).unwrap();
        let k = 3;
        let first = &logits.data()[..k];
        for r in 1..3 {
            assert_eq!(&logits.data()[r * k..(r + 1) * k], first);
        }
    }

    #[test]
    fn permuting_rows_permutes_logits() {
        let model = Model::new(ModelSpec::mlp(2, vec![4], 2, 3)).unwrap();
        let theta = model.get_params();
        let batch = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, -2.0]).unwrap();
        let perm = batch.select_rows(&[2, 0, 1]).unwrap();
        let a = model.logits_with(&theta, &batch).unwrap();
        let b = model.logits_with(&theta, &perm).unwrap();
        assert_eq!(b.select_rows(&[1, 2, 0]).unwrap().data(), a.data());
    }

    #[test]
    fn set_params_swaps_outputs() {
        let mut a = Model::new(ModelSpec::mlp(2, vec![3], 2, 1)).unwrap();
        let mut b = Model::new(ModelSpec::mlp(2, vec![3], 2, 2)).unwrap();
        let batch = Tensor::matrix(1, 2, vec![0.7, -0.3]).unwrap();
        let out_a = a.logits_with(&a.get_params(), &batch).unwrap();
        let out_b = b.logits_with(&b.get_params(), &batch).unwrap();
        let (pa, pb) = (a.get_params(), b.get_params());
        a.set_params(pb.clone()).unwrap();
        b.set_params(pa).unwrap();
        assert_eq!(
            a.logits_with(&a.get_params(), &batch).unwrap().data(),
            out_b.data()
        );
        assert_eq!(
            b.logits_with(&b.get_params(), &batch).unwrap().data(),
            out_a.data()
        );
        // get∘set round-trips
        assert_eq!(a.get_params().as_slice(), pb.as_slice());
    }

    #[test]
    fn set_params_rejects_wrong_length() {
        let mut model = Model::new(ModelSpec::mlp(2, vec![3], 2, 1)).unwrap();
        assert!(model.set_params(ParamVector::zeros(5)).is_err());
    }

    #[test]
    fn forward_rejects_wrong_batch_shape() {
        let model = Model::new(ModelSpec::mlp(3, vec![2], 2, 0)).unwrap();
        let batch = Tensor::matrix(2, 4, vec![0.0; 8]).unwrap();
        assert!(model.logits_with(&model.get_params(), &batch).is_err());
    }

    #[test]
    fn rejects_one_class() {
        assert!(Model::new(ModelSpec::mlp(2, vec![2], 1, 0)).is_err());
    }
}
