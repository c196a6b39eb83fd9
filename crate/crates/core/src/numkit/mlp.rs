//! Fully-connected networks with hand-derived gradients.
//!
//! Weights are stored `(out_dim, in_dim)` row-major; batches are row-major
//! `(batch, features)` matrices. Hidden layers use [`Activation::Tanh`] or
//! [`Activation::SmoothRelu`]; the output layer is always the identity.
//! `backward` accumulates into an [`MlpGrads`] so that a network evaluated on
//! several branches of one loss (e.g. an encoder applied to both the prior and
//! the target) sums its gradients naturally.

use super::matrix::{gemm, sgemm_abt, Matrix, MatrixF32, Trans};
use super::rng::Rng64;
use crate::error::{DnkError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// `x * sigmoid(x)`.
    SmoothRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::SmoothRelu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn apply_f32(self, x: f32) -> f32 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::SmoothRelu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `z` and activation output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::SmoothRelu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::SmoothRelu => "smooth_relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "smooth_relu" => Some(Activation::SmoothRelu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// `inputs[l]` is the input batch of layer `l`.
    inputs: Vec<Matrix>,
    /// Pre-activations of every layer.
    pre: Vec<Matrix>,
    param_fingerprint: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zero(&mut self) {
        self.weights
            .iter_mut()
            .for_each(|w| w.data_mut().iter_mut().for_each(|v| *v = 0.0));
        self.biases
            .iter_mut()
            .for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Builds a network from explicit layers. Adjacent widths must chain and
    /// the last layer must use the identity activation.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DnkError::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(DnkError::dim("Mlp bias", l.out_dim(), l.bias.len()));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(DnkError::dim("Mlp layer chain", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(DnkError::InvalidArgument("output layer must be identity".into()));
        }
        Ok(Self { layers })
    }

    /// Random initialisation: weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(widths: &[usize], hidden: Activation, rng: &mut Rng64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(DnkError::InvalidArgument("need input and output widths".into()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let std = (1.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                    bias: vec![0.0; fan_out],
                    activation: if l + 1 == n { Activation::Identity } else { hidden },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(input))?.into_vec())
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = affine(layer, &a)?;
            if layer.activation != Activation::Identity {
                z.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            a = z;
        }
        a.ensure_finite("mlp forward")?;
        Ok(a)
    }

    /// Forward pass that keeps what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = affine(layer, &a)?;
            let mut out = z.clone();
            if layer.activation != Activation::Identity {
                out.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            inputs.push(a);
            pre.push(z);
            a = out;
        }
        a.ensure_finite("mlp forward")?;
        Ok((
            a,
            MlpCache {
                inputs,
                pre,
                param_fingerprint: self.fingerprint(),
            },
        ))
    }

    /// Backpropagates `upstream` (dLoss/dOutput, one row per sample) through
    /// the cached pass, adding parameter gradients into `grads` and returning
    /// dLoss/dInput.
    pub fn backward(&self, cache: &MlpCache, upstream: &Matrix, grads: &mut MlpGrads) -> Result<Matrix> {
        if cache.param_fingerprint != self.fingerprint() || cache.inputs.len() != self.layers.len() {
            return Err(DnkError::InvalidArgument(
                "cache was produced by a different network".into(),
            ));
        }
        let batch = cache.inputs[0].rows();
        if upstream.shape() != (batch, self.output_dim()) {
            return Err(DnkError::dim(
                "Mlp::backward upstream",
                batch * self.output_dim(),
                upstream.rows() * upstream.cols(),
            ));
        }
        if grads.weights.len() != self.layers.len() {
            return Err(DnkError::dim("Mlp::backward grads", self.layers.len(), grads.weights.len()));
        }

        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation != Activation::Identity {
                let pre = &cache.pre[l];
                for (d, &z) in delta.data_mut().iter_mut().zip(pre.data()) {
                    let a = layer.activation.apply(z);
                    *d *= layer.activation.derivative(z, a);
                }
            }
            gemm(1.0, &delta, Trans::Yes, &cache.inputs[l], Trans::No, 1.0, &mut grads.weights[l])?;
            let gb = &mut grads.biases[l];
            for i in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            let mut next = Matrix::zeros(batch, layer.in_dim());
            gemm(1.0, &delta, Trans::No, &layer.weight, Trans::No, 0.0, &mut next)?;
            delta = next;
        }
        if !grads.is_finite() || !delta.is_finite() {
            return Err(DnkError::NonFinite("mlp backward"));
        }
        Ok(delta)
    }

    /// Forward-only single-precision copy.
    pub fn to_f32(&self) -> MlpF32 {
        MlpF32 {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        MatrixF32::from_f64(&l.weight),
                        l.bias.iter().map(|&b| b as f32).collect(),
                        l.activation,
                    )
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(DnkError::dim("Mlp input", self.input_dim(), x.cols()));
        }
        Ok(())
    }

    // Cheap structural identity used to catch caches paired with the wrong network.
    fn fingerprint(&self) -> usize {
        self.layers
            .iter()
            .fold(self.layers.len(), |acc, l| acc.wrapping_mul(31).wrapping_add(l.in_dim() * 7919 + l.out_dim()))
    }
}

fn affine(layer: &Layer, a: &Matrix) -> Result<Matrix> {
    let mut z = Matrix::zeros(a.rows(), layer.out_dim());
    for i in 0..z.rows() {
        z.row_mut(i).copy_from_slice(&layer.bias);
    }
    gemm(1.0, a, Trans::No, &layer.weight, Trans::Yes, 1.0, &mut z)?;
    Ok(z)
}

/// Single-precision forward-only network.
#[derive(Clone, Debug)]
pub struct MlpF32 {
    layers: Vec<(MatrixF32, Vec<f32>, Activation)>,
}

impl MlpF32 {
    pub fn input_dim(&self) -> usize {
        self.layers[0].0.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].0.rows()
    }

    pub fn forward_batch(&self, x: &MatrixF32) -> Result<MatrixF32> {
        if x.cols() != self.input_dim() {
            return Err(DnkError::dim("MlpF32 input", self.input_dim(), x.cols()));
        }
        let mut a = x.clone();
        for (w, b, act) in &self.layers {
            let mut z = MatrixF32::zeros(a.rows(), w.rows());
            sgemm_abt(&a, w, &mut z)?;
            for i in 0..z.rows() {
                for (v, bb) in z.row_mut(i).iter_mut().zip(b) {
                    *v = act.apply_f32(*v + bb);
                }
            }
            a = z;
        }
        if a.data().iter().any(|v| !v.is_finite()) {
            return Err(DnkError::NonFinite("mlp f32 forward"));
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::{flatten, grad_check, unflatten_into};

    fn net(widths: &[usize], act: Activation, seed: u64) -> Mlp {
        let mut rng = Rng64::seeded(seed, 0);
        let mut m = Mlp::init(widths, act, &mut rng).unwrap();
        // non-zero biases so their gradients are exercised
        for l in m.layers_mut() {
            for b in &mut l.bias {
                *b = 0.1 * rng.normal();
            }
        }
        m
    }

    #[test]
    fn zero_network_gives_zero() {
        let mut m = net(&[3, 5, 2], Activation::Tanh, 1);
        for s in m.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = Mlp::new(vec![Layer {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = [0.5, -1.5, 2.0];
        assert_eq!(m.forward(&x).unwrap(), x.to_vec());

        let (_, cache) = m.forward_cached(&Matrix::row_vector(&x)).unwrap();
        let up = Matrix::row_vector(&[1.0, 2.0, 3.0]);
        let mut g = m.zero_grads();
        let dx = m.backward(&cache, &up, &mut g).unwrap();
        assert_eq!(dx.data(), up.data());
    }

    #[test]
    fn scalar_linear_gradients() {
        let w = 1.75;
        let x = -0.6;
        let m = Mlp::new(vec![Layer {
            weight: Matrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let (_, cache) = m.forward_cached(&Matrix::row_vector(&[x])).unwrap();
        let mut g = m.zero_grads();
        let dx = m.backward(&cache, &Matrix::row_vector(&[1.0]), &mut g).unwrap();
        assert_eq!(g.weights[0].data(), &[x]);
        assert_eq!(dx.data(), &[w]);
    }

    // Independent oracle: explicit scalar loops for a 2-2-1 tanh network.
    #[test]
    fn forward_matches_hand_evaluation() {
        let m = net(&[2, 2, 1], Activation::Tanh, 11);
        let l0 = &m.layers()[0];
        let l1 = &m.layers()[1];
        let x = [0.3, -0.8];
        let mut h = [0.0; 2];
        for (j, hj) in h.iter_mut().enumerate() {
            let z = l0.weight[(j, 0)] * x[0] + l0.weight[(j, 1)] * x[1] + l0.bias[j];
            *hj = z.tanh();
        }
        let y = l1.weight[(0, 0)] * h[0] + l1.weight[(0, 1)] * h[1] + l1.bias[0];
        let got = m.forward(&x).unwrap()[0];
        assert!((got - y).abs() < 1e-15, "{got} vs {y}");
    }

    fn check_grads(act: Activation, seed: u64) -> f64 {
        let m = net(&[4, 6, 5, 3], act, seed);
        let mut rng = Rng64::seeded(seed, 1);
        let x = Matrix::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let target = Matrix::from_vec(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();

        // loss = 0.5 * sum (y - t)^2 + 0.5 * sum(x^2 weighted) through the input too
        let loss_of = |m: &Mlp, x: &Matrix| -> f64 {
            let y = m.forward_batch(x).unwrap();
            y.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum()
        };

        let (y, cache) = m.forward_cached(&x).unwrap();
        let mut up = y.clone();
        up.data_mut()
            .iter_mut()
            .zip(target.data())
            .for_each(|(u, t)| *u -= t);
        let mut g = m.zero_grads();
        let dx = m.backward(&cache, &up, &mut g).unwrap();

        let p0 = flatten(&m.param_slices());
        let analytic = flatten(&g.slices());
        let err_p = grad_check(&p0, &analytic, 1e-6, |p| {
            let mut mm = m.clone();
            unflatten_into(&mut mm.param_slices_mut(), p);
            loss_of(&mm, &x)
        })
        .unwrap();

        let err_x = grad_check(x.data(), dx.data(), 1e-6, |xv| {
            let xm = Matrix::from_vec(5, 4, xv.to_vec()).unwrap();
            loss_of(&m, &xm)
        })
        .unwrap();
        err_p.max(err_x)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            for act in [Activation::Tanh, Activation::SmoothRelu] {
                let err = check_grads(act, seed);
                assert!(err < 1e-4, "{act:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let a = net(&[3, 4, 2], Activation::Tanh, 1);
        let b = net(&[3, 5, 2], Activation::Tanh, 1);
        let (_, cache) = a.forward_cached(&Matrix::zeros(2, 3)).unwrap();
        let mut g = b.zero_grads();
        assert!(b.backward(&cache, &Matrix::zeros(2, 2), &mut g).is_err());
    }

    #[test]
    fn forward_dimension_mismatch() {
        let m = net(&[3, 4, 2], Activation::Tanh, 1);
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(DnkError::Dimension { .. })));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut m = net(&[2, 2], Activation::Tanh, 1);
        m.layers_mut()[0].bias[0] = f64::NAN;
        assert!(matches!(m.forward(&[0.0, 0.0]), Err(DnkError::NonFinite(_))));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let m = net(&[7, 16, 16, 3], Activation::SmoothRelu, 5);
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f32_path_tracks_f64() {
        let m = net(&[7, 16, 3], Activation::Tanh, 5);
        let x = Matrix::from_vec(2, 7, (0..14).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let want = m.forward_batch(&x).unwrap();
        let got = m.to_f32().forward_batch(&MatrixF32::from_f64(&x)).unwrap().to_f64();
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-5);
        }
    }
}
