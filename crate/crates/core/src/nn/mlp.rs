use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{GradSet, ParamSet};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::rejected(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpArchitecture {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let arch = Self {
            layer_widths,
            activation,
            seed,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::rejected("architecture needs at least two widths"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::rejected("architecture widths must be positive"));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_widths.last().expect("validated widths")
    }

    /// Number of affine layers (hidden plus output).
    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_count() - 1
    }

    /// First, middle and last hidden layers, deduplicated.
    pub fn default_probe_layers(&self) -> Vec<usize> {
        let h = self.hidden_count();
        if h == 0 {
            return Vec::new();
        }
        let mut v = vec![0, h / 2, h - 1];
        v.dedup();
        v
    }

    /// Middle and last hidden layers, deduplicated; the first hidden layer is
    /// skipped unless it is the only one.
    pub fn deep_probe_layers(&self) -> Vec<usize> {
        let h = self.hidden_count();
        if h == 0 {
            return Vec::new();
        }
        let mut v = vec![h / 2, h - 1];
        v.dedup();
        v
    }

    pub fn weight_name(layer: usize) -> String {
        format!("layer{layer}.weight")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("layer{layer}.bias")
    }

    /// Fresh parameters: weights uniform in `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero, drawn from a ChaCha8 stream keyed by `arch.seed`.
    pub fn init_params(&self) -> ParamSet {
        self.init_params_with_seed(self.seed)
    }

    pub fn init_params_with_seed(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(2 * self.layer_count());
        for l in 0..self.layer_count() {
            let (fan_in, fan_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            entries.push((
                Self::weight_name(l),
                Tensor2D::new(fan_in, fan_out, w).expect("shape by construction"),
            ));
            entries.push((Self::bias_name(l), Tensor2D::zeros(1, fan_out)));
        }
        ParamSet::new(entries).expect("unique names by construction")
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        self.validate()?;
        if params.len() != 2 * self.layer_count() {
            return Err(Error::rejected(format!(
                "expected {} parameter tensors, got {}",
                2 * self.layer_count(),
                params.len()
            )));
        }
        for l in 0..self.layer_count() {
            let w = params.tensor(2 * l);
            let b = params.tensor(2 * l + 1);
            let want = (self.layer_widths[l], self.layer_widths[l + 1]);
            if w.shape() != want || b.shape() != (1, want.1) {
                return Err(Error::rejected(format!(
                    "layer {l} shape mismatch: weight {:?}, bias {:?}, expected {:?}",
                    w.shape(),
                    b.shape(),
                    want
                )));
            }
        }
        Ok(())
    }
}

/// Every intermediate needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor2D,
    /// Pre-activation values of each hidden layer.
    pub pre_activations: Vec<Tensor2D>,
    /// `F_l(x; θ)`: post-activation hidden outputs, with the logits last.
    pub per_layer_outputs: Vec<Tensor2D>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor2D {
        self.per_layer_outputs.last().expect("non-empty trace")
    }

    pub fn layer_count(&self) -> usize {
        self.per_layer_outputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

pub fn forward(params: &ParamSet, arch: &MlpArchitecture, batch: &Tensor2D) -> Result<ForwardTrace> {
    arch.check_params(params)?;
    if batch.cols() != arch.input_width() && batch.rows() > 0 {
        return Err(Error::rejected(format!(
            "batch has {} features, architecture expects {}",
            batch.cols(),
            arch.input_width()
        )));
    }
    let layers = arch.layer_count();
    let mut pre_activations = Vec::with_capacity(layers - 1);
    let mut outputs = Vec::with_capacity(layers);
    let mut h = batch.clone();
    if h.rows() == 0 {
        h = Tensor2D::zeros(0, arch.input_width());
    }
    for l in 0..layers {
        let mut z = h.matmul(params.tensor(2 * l));
        z.add_row_broadcast(params.tensor(2 * l + 1));
        if l + 1 < layers {
            let a = z.map(|v| arch.activation.apply(v));
            pre_activations.push(z);
            outputs.push(a.clone());
            h = a;
        } else {
            outputs.push(z);
        }
    }
    Ok(ForwardTrace {
        input: batch.clone(),
        pre_activations,
        per_layer_outputs: outputs,
    })
}

/// Logits only.
pub fn predict_logits(params: &ParamSet, arch: &MlpArchitecture, batch: &Tensor2D) -> Result<Tensor2D> {
    let mut t = forward(params, arch, batch)?;
    Ok(t.per_layer_outputs.pop().expect("non-empty trace"))
}

pub fn backward(
    params: &ParamSet,
    arch: &MlpArchitecture,
    trace: &ForwardTrace,
    grad_logits: &Tensor2D,
) -> Result<GradSet> {
    backward_with_features(params, arch, trace, Some(grad_logits), &[])
}

/// Backpropagates a loss whose gradient arrives at the logits and,
/// optionally, directly at hidden outputs `F_l` (`feature_grads` pairs a
/// hidden-layer index with `∂L/∂F_l`).
pub fn backward_with_features(
    params: &ParamSet,
    arch: &MlpArchitecture,
    trace: &ForwardTrace,
    grad_logits: Option<&Tensor2D>,
    feature_grads: &[(usize, Tensor2D)],
) -> Result<GradSet> {
    arch.check_params(params)?;
    let layers = arch.layer_count();
    let n = trace.batch_size();
    if trace.layer_count() != layers || trace.pre_activations.len() != layers - 1 {
        return Err(Error::Internal(format!(
            "trace has {} layers, architecture has {layers}",
            trace.layer_count()
        )));
    }
    for (l, out) in trace.per_layer_outputs.iter().enumerate() {
        if out.shape() != (n, arch.layer_widths[l + 1]) {
            return Err(Error::Internal(format!("trace layer {l} shape {:?}", out.shape())));
        }
    }
    let classes = arch.class_count();
    let mut delta = match grad_logits {
        Some(g) => {
            if g.shape() != (n, classes) {
                return Err(Error::Internal(format!(
                    "grad_logits shape {:?}, expected {:?}",
                    g.shape(),
                    (n, classes)
                )));
            }
            g.clone()
        }
        None => Tensor2D::zeros(n, classes),
    };
    for (l, g) in feature_grads {
        if *l + 1 >= layers || g.shape() != (n, arch.layer_widths[l + 1]) {
            return Err(Error::Internal(format!("feature gradient for layer {l} does not fit")));
        }
    }

    let mut grads = params.zeros_like();
    for l in (0..layers).rev() {
        let input = if l == 0 { &trace.input } else { &trace.per_layer_outputs[l - 1] };
        *grads.tensor_mut(2 * l) = input.t_matmul(&delta);
        *grads.tensor_mut(2 * l + 1) = delta.sum_rows();
        if l == 0 {
            break;
        }
        // Gradient w.r.t. the post-activation output of hidden layer l-1.
        let mut g_out = delta.matmul_t(params.tensor(2 * l));
        for (fl, fg) in feature_grads {
            if *fl == l - 1 {
                g_out.add_assign(fg);
            }
        }
        let z = &trace.pre_activations[l - 1];
        let y = &trace.per_layer_outputs[l - 1];
        let mut d = g_out;
        for ((dv, &zv), &yv) in d.values_mut().iter_mut().zip(z.values()).zip(y.values()) {
            *dv *= arch.activation.derivative(zv, yv);
        }
        delta = d;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_arch(d: usize) -> MlpArchitecture {
        MlpArchitecture::new(vec![d, d], Activation::Relu, 0).unwrap()
    }

    #[test]
    fn identity_linear_layer() {
        let arch = linear_arch(3);
        let params = ParamSet::new(vec![
            ("layer0.weight".into(), Tensor2D::identity(3)),
            ("layer0.bias".into(), Tensor2D::zeros(1, 3)),
        ])
        .unwrap();
        let x = Tensor2D::from_rows(&[vec![0.5, -2.0, 3.0], vec![1.0, 0.0, -1.0]]).unwrap();
        let t = forward(&params, &arch, &x).unwrap();
        assert_eq!(t.logits(), &x);
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let arch = MlpArchitecture::new(vec![4, 5, 3], Activation::Tanh, 1).unwrap();
        let params = arch.init_params().zeros_like();
        let x = Tensor2D::filled(6, 4, 2.5);
        let t = forward(&params, &arch, &x).unwrap();
        assert!(t.logits().values().iter().all(|&v| v == 0.0));
        assert_eq!(t.per_layer_outputs.len(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let arch = MlpArchitecture::new(vec![4, 3], Activation::Relu, 1).unwrap();
        let params = arch.init_params();
        let x = Tensor2D::zeros(2, 5);
        assert!(matches!(forward(&params, &arch, &x), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn two_three_two_matches_matrix_chain() {
        let arch = MlpArchitecture::new(vec![2, 3, 2], Activation::Relu, 7).unwrap();
        let params = arch.init_params();
        let x = [[0.3, -1.2], [2.0, 0.5]];
        // Independent oracle: explicit loops over the raw entries.
        let w0 = params.tensor(0);
        let b0 = params.tensor(1);
        let w1 = params.tensor(2);
        let b1 = params.tensor(3);
        let batch = Tensor2D::from_rows(&[x[0].to_vec(), x[1].to_vec()]).unwrap();
        let logits = predict_logits(&params, &arch, &batch).unwrap();
        for (r, xr) in x.iter().enumerate() {
            let mut h = [0.0; 3];
            for (j, hj) in h.iter_mut().enumerate() {
                let z = xr[0] * w0.get(0, j) + xr[1] * w0.get(1, j) + b0.get(0, j);
                *hj = if z > 0.0 { z } else { 0.0 };
            }
            for k in 0..2 {
                let o = h[0] * w1.get(0, k) + h[1] * w1.get(1, k) + h[2] * w1.get(2, k) + b1.get(0, k);
                assert!((logits.get(r, k) - o).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let arch = MlpArchitecture::new(vec![3, 4, 2], Activation::Tanh, 3).unwrap();
        let params = arch.init_params();
        let x = Tensor2D::filled(5, 3, 0.7);
        let t = forward(&params, &arch, &x).unwrap();
        let g = backward(&params, &arch, &t, &Tensor2D::zeros(5, 2)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_xt_g() {
        let arch = MlpArchitecture::new(vec![3, 2], Activation::Relu, 4).unwrap();
        let params = arch.init_params();
        let x = Tensor2D::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let gl = Tensor2D::from_rows(&[vec![0.1, -0.2], vec![0.3, 0.4]]).unwrap();
        let t = forward(&params, &arch, &x).unwrap();
        let g = backward(&params, &arch, &t, &gl).unwrap();
        assert_eq!(g.tensor(0), &x.t_matmul(&gl));
        assert_eq!(g.tensor(1).values(), &[0.4, 0.2]);
    }

    #[test]
    fn trace_mismatch_is_internal_error() {
        let arch = MlpArchitecture::new(vec![3, 4, 2], Activation::Tanh, 3).unwrap();
        let other = MlpArchitecture::new(vec![3, 2], Activation::Tanh, 3).unwrap();
        let params = arch.init_params();
        let t = forward(&other.init_params(), &other, &Tensor2D::zeros(1, 3)).unwrap();
        assert!(matches!(
            backward(&params, &arch, &t, &Tensor2D::zeros(1, 2)),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = MlpArchitecture::new(vec![16, 32, 8], Activation::Relu, 11).unwrap();
        let a = arch.init_params();
        assert_eq!(a, arch.init_params());
        let bound = (6.0f64 / 48.0).sqrt();
        assert!(a.tensor(0).values().iter().all(|v| v.abs() <= bound));
        assert_eq!(arch.default_probe_layers(), vec![0]);
        let deep = MlpArchitecture::new(vec![4, 8, 8, 8, 8, 2], Activation::Relu, 0).unwrap();
        assert_eq!(deep.default_probe_layers(), vec![0, 2, 3]);
    }
}
