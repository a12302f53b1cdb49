//! Fully connected network with a fixed shape: a stack of activated hidden
//! layers (the feature extractor) topped by one affine output layer.
//!
//! Forward and reverse passes are hand-written for this family; gradients
//! are exact reverse-mode, verified against finite differences in tests.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::rng::Stream;
use crate::{CoreError, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Erf,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Erf => "erf",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "erf" => Ok(Activation::Erf),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown activation {other:?} (expected relu, tanh, or erf)"
            ))),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => math::tanh(x),
            Activation::Erf => erf_approx(x),
        }
    }

    /// Derivative given the pre-activation `pre` and activation value `act`.
    /// ReLU uses subgradient 0 at exactly 0.
    #[inline]
    pub fn derivative(self, pre: f64, act: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - act * act,
            // exact derivative, independent of the forward approximation
            Activation::Erf => core::f64::consts::FRAC_2_SQRT_PI * math::exp(-pre * pre),
        }
    }
}

/// Rational approximation of the Gauss error function with absolute error
/// at most 1.5e-7 everywhere (Abramowitz–Stegun 7.1.26 family).
pub fn erf_approx(x: f64) -> f64 {
    const P: f64 = 0.327_591_1;
    const A1: f64 = 0.254_829_592;
    const A2: f64 = -0.284_496_736;
    const A3: f64 = 1.421_413_741;
    const A4: f64 = -1.453_152_027;
    const A5: f64 = 1.061_405_429;
    let ax = if x < 0.0 { -x } else { x };
    let t = 1.0 / (1.0 + P * ax);
    let poly = ((((A5 * t + A4) * t + A3) * t + A2) * t + A1) * t;
    let y = 1.0 - poly * math::exp(-ax * ax);
    if x < 0.0 {
        -y
    } else {
        y
    }
}

/// Architecture of the network. `hidden_dims` may be empty, in which case
/// the feature extractor is the identity and the network is a single affine
/// map. Biases are always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.iter().any(|&d| d == 0) {
            return Err(CoreError::InvalidArgument(
                "all network dimensions must be at least 1".into(),
            ));
        }
        Ok(MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        })
    }

    /// Width of the feature vector h(x): the last hidden width, or the input
    /// width when there are no hidden layers.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Number of weight layers, hidden plus output.
    pub fn layer_count(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// (fan_in, fan_out) of weight layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 {
            self.input_dim
        } else {
            self.hidden_dims[l - 1]
        };
        let fan_out = if l == self.hidden_dims.len() {
            self.output_dim
        } else {
            self.hidden_dims[l]
        };
        (fan_in, fan_out)
    }

    /// Tensor shapes in parameter order: weights then bias per layer.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(2 * self.layer_count());
        for l in 0..self.layer_count() {
            let (fan_in, fan_out) = self.layer_dims(l);
            shapes.push((fan_out, fan_in));
            shapes.push((fan_out, 1));
        }
        shapes
    }

    pub fn param_len(&self) -> usize {
        self.param_shapes().iter().map(|&(r, c)| r * c).sum()
    }

    /// Seeded uniform fan-in initialization: weights from
    /// U(−√(6/fan_in), √(6/fan_in)), biases zero.
    pub fn init_params(&self, stream: &mut Stream) -> super::ParamVector {
        let mut params = super::ParamVector::zeros(self.param_shapes());
        for l in 0..self.layer_count() {
            let (fan_in, _) = self.layer_dims(l);
            let bound = math::sqrt(6.0 / fan_in as f64);
            for w in params.tensor_mut(2 * l) {
                *w = stream.uniform(-bound, bound);
            }
        }
        params
    }

    pub fn check_params(&self, params: &super::ParamVector) -> Result<()> {
        let expected = self.param_shapes();
        if params.shapes() != expected.as_slice() {
            return Err(CoreError::DimensionMismatch(format!(
                "parameter shapes {:?} do not match network shapes {:?}",
                params.shapes(),
                expected
            )));
        }
        Ok(())
    }
}

/// Intermediate state of a forward pass through the feature extractor.
/// `activations[0]` is the input batch; `activations[l + 1]` is hidden layer
/// `l`'s output; the last entry is the feature batch.
pub struct HiddenTrace {
    pub activations: Vec<Matrix>,
    pub preacts: Vec<Matrix>,
}

impl HiddenTrace {
    #[inline]
    pub fn features(&self) -> &Matrix {
        self.activations.last().expect("trace holds the input batch")
    }
}

fn check_input(spec: &MlpSpec, x: &Matrix) -> Result<()> {
    if x.cols() != spec.input_dim {
        return Err(CoreError::DimensionMismatch(format!(
            "input batch has {} columns, network expects {}",
            x.cols(),
            spec.input_dim
        )));
    }
    Ok(())
}

/// Affine map of one layer: `x · Wᵀ + b`, rows stay batch elements.
fn affine(x: &Matrix, w: &[f64], b: &[f64], fan_in: usize, fan_out: usize) -> Matrix {
    let mut z = Matrix::zeros(x.rows(), fan_out);
    for i in 0..x.rows() {
        let xi = x.row(i);
        let zi = z.row_mut(i);
        for o in 0..fan_out {
            let wrow = &w[o * fan_in..(o + 1) * fan_in];
            zi[o] = crate::linalg::dot(xi, wrow) + b[o];
        }
    }
    z
}

/// Runs the feature extractor, keeping per-layer intermediates for backward.
pub fn hidden_trace(spec: &MlpSpec, params: &super::ParamVector, x: &Matrix) -> Result<HiddenTrace> {
    spec.check_params(params)?;
    check_input(spec, x)?;
    let depth = spec.hidden_dims.len();
    let mut activations = Vec::with_capacity(depth + 1);
    let mut preacts = Vec::with_capacity(depth);
    activations.push(x.clone());
    for l in 0..depth {
        let (fan_in, fan_out) = spec.layer_dims(l);
        let z = affine(
            &activations[l],
            params.tensor(2 * l),
            params.tensor(2 * l + 1),
            fan_in,
            fan_out,
        );
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = spec.activation.apply(*v);
        }
        preacts.push(z);
        activations.push(a);
    }
    Ok(HiddenTrace { activations, preacts })
}

/// Top-layer affine map from a feature batch.
pub fn output_from_features(spec: &MlpSpec, params: &super::ParamVector, features: &Matrix) -> Matrix {
    let l = spec.hidden_dims.len();
    let (fan_in, fan_out) = spec.layer_dims(l);
    debug_assert_eq!(features.cols(), fan_in);
    affine(features, params.tensor(2 * l), params.tensor(2 * l + 1), fan_in, fan_out)
}

/// Full forward pass: returns (features, outputs) for a batch.
pub fn forward(
    spec: &MlpSpec,
    params: &super::ParamVector,
    x: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let trace = hidden_trace(spec, params, x)?;
    let outputs = output_from_features(spec, params, trace.features());
    let features = trace.activations.into_iter().last().expect("nonempty");
    Ok((features, outputs))
}

fn find_nonfinite(m: &Matrix) -> Option<(usize, usize)> {
    for i in 0..m.rows() {
        if let Some(j) = m.row(i).iter().position(|v| !v.is_finite()) {
            return Some((i, j));
        }
    }
    None
}

/// Backpropagates `dfeat` (∂loss/∂features) through the feature extractor,
/// accumulating weight and bias gradients into `grad`. Top-layer gradient
/// entries in `grad` are left untouched so callers with structured output
/// losses can fill them directly.
pub fn backward_hidden(
    spec: &MlpSpec,
    params: &super::ParamVector,
    trace: &HiddenTrace,
    mut dfeat: Matrix,
    grad: &mut super::ParamVector,
) -> Result<()> {
    for l in (0..spec.hidden_dims.len()).rev() {
        let (fan_in, fan_out) = spec.layer_dims(l);
        let pre = &trace.preacts[l];
        let act = &trace.activations[l + 1];
        // dz = dfeat ⊙ act'(pre)
        let mut dz = dfeat;
        for i in 0..dz.rows() {
            let dzi = dz.row_mut(i);
            let pi = pre.row(i);
            let ai = act.row(i);
            for o in 0..fan_out {
                dzi[o] *= spec.activation.derivative(pi[o], ai[o]);
            }
        }
        if let Some((b, _)) = find_nonfinite(&dz) {
            return Err(CoreError::NonFinite(format!(
                "gradient is not finite at hidden layer {l}, batch element {b}"
            )));
        }
        let below = &trace.activations[l];
        let dw = grad.tensor_mut(2 * l);
        for i in 0..dz.rows() {
            let dzi = dz.row(i);
            let xi = below.row(i);
            for o in 0..fan_out {
                let g = dzi[o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &mut dw[o * fan_in..(o + 1) * fan_in];
                for (gw, &xv) in wrow.iter_mut().zip(xi) {
                    *gw += g * xv;
                }
            }
        }
        let db = grad.tensor_mut(2 * l + 1);
        for i in 0..dz.rows() {
            for (gb, &g) in db.iter_mut().zip(dz.row(i)) {
                *gb += g;
            }
        }
        // dfeat for the layer below: dz · W
        let w = params.tensor(2 * l);
        let mut dprev = Matrix::zeros(dz.rows(), fan_in);
        for i in 0..dz.rows() {
            let dzi = dz.row(i);
            let dpi = dprev.row_mut(i);
            for o in 0..fan_out {
                let g = dzi[o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                for (dp, &wv) in dpi.iter_mut().zip(wrow) {
                    *dp += g * wv;
                }
            }
        }
        dfeat = dprev;
    }
    Ok(())
}

/// Full reverse pass: given ∂loss/∂outputs for the batch of `trace`, returns
/// ∂loss/∂θ for every parameter.
pub fn backward(
    spec: &MlpSpec,
    params: &super::ParamVector,
    trace: &HiddenTrace,
    dout: &Matrix,
) -> Result<super::ParamVector> {
    let l = spec.hidden_dims.len();
    let (fan_in, fan_out) = spec.layer_dims(l);
    if dout.cols() != fan_out || dout.rows() != trace.features().rows() {
        return Err(CoreError::DimensionMismatch(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            dout.rows(),
            dout.cols(),
            trace.features().rows(),
            fan_out
        )));
    }
    if let Some((b, _)) = find_nonfinite(dout) {
        return Err(CoreError::NonFinite(format!(
            "gradient is not finite at the output layer, batch element {b}"
        )));
    }
    let mut grad = super::ParamVector::zeros(spec.param_shapes());
    let features = trace.features();
    {
        let dw = grad.tensor_mut(2 * l);
        for i in 0..dout.rows() {
            let di = dout.row(i);
            let fi = features.row(i);
            for o in 0..fan_out {
                let g = di[o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &mut dw[o * fan_in..(o + 1) * fan_in];
                for (gw, &fv) in wrow.iter_mut().zip(fi) {
                    *gw += g * fv;
                }
            }
        }
    }
    {
        let db = grad.tensor_mut(2 * l + 1);
        for i in 0..dout.rows() {
            for (gb, &g) in db.iter_mut().zip(dout.row(i)) {
                *gb += g;
            }
        }
    }
    let w = params.tensor(2 * l);
    let mut dfeat = Matrix::zeros(dout.rows(), fan_in);
    for i in 0..dout.rows() {
        let di = dout.row(i);
        let dfi = dfeat.row_mut(i);
        for o in 0..fan_out {
            let g = di[o];
            if g == 0.0 {
                continue;
            }
            let wrow = &w[o * fan_in..(o + 1) * fan_in];
            for (df, &wv) in dfi.iter_mut().zip(wrow) {
                *df += g * wv;
            }
        }
    }
    backward_hidden(spec, params, trace, dfeat, &mut grad)?;
    Ok(grad)
}
