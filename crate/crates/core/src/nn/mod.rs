//! Dense neural kernels with handwritten gradients.
//!
//! No autodiff: every backward pass is written out and audited against
//! central finite differences (see [`gradcheck`]). Parameters live in flat
//! [`ParamBlock`]s so optimizers, checkpoints, and audits share one layout.

pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod negatives;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, salt};

pub use gradcheck::{audit_matrix_grad, audit_param_grads, AuditConfig, AuditOutcome};
pub use loss::{contrastive_loss, cross_entropy_labeled, softmax_rows, ContrastiveGrads};
pub use mlp::{backward_mlp, forward_mlp, MlpCache};
pub use negatives::sample_negatives;
pub use optim::{adamw_step, AdamW};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
    Tanh,
    Sigmoid,
    None,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::None => x,
        }
    }

    /// Derivative as a function of the pre-activation value.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_derivative(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::None => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GeLU in the exact Gaussian-CDF form `x * Phi(x)`. The tanh shortcut is
/// avoided so gradient audits stay tight.
pub fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_derivative(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

/// Double-precision error function (Cody's rational approximations, as in
/// the netlib SPECFUN routine). Relative error is at the f64 roundoff level,
/// which keeps the analytic GeLU gradient consistent with finite differences.
#[allow(clippy::excessive_precision)]
pub fn erf(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let y = x.abs();
    if y <= 0.46875 {
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        return x * (num + A[3]) / (den + B[3]);
    }
    let ec = erfc_large(y);
    if x < 0.0 {
        ec - 1.0
    } else {
        1.0 - ec
    }
}

/// erfc(y) for y > 0.46875.
#[allow(clippy::excessive_precision)]
fn erfc_large(y: f64) -> f64 {
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const SQRPI: f64 = 5.6418958354775628695e-1;

    let result = if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        (num + C[7]) / (den + D[7])
    } else {
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let r = z * (num + P[4]) / (den + Q[4]);
        (SQRPI - r) / y
    };
    // exp(-y^2) split to preserve precision for large y
    let ysq = (y * 16.0).floor() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * result
}

// ---------------------------------------------------------------------------
// ParamBlock
// ---------------------------------------------------------------------------

/// Flat parameter store with a congruent gradient buffer. Tensors are laid
/// out back to back in declaration order; `shapes[i] = (rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub init_seed: u64,
}

impl ParamBlock {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for &(r, c) in shapes {
            total += r * c;
            offsets.push(total);
        }
        ParamBlock {
            shapes: shapes.to_vec(),
            offsets,
            values: vec![0.0; total],
            grads: vec![0.0; total],
            init_seed: 0,
        }
    }

    /// Glorot-uniform init for weight tensors; single-column tensors are
    /// treated as biases and start at zero.
    pub fn glorot(shapes: &[(usize, usize)], seed: u64) -> Self {
        let mut block = Self::zeros(shapes);
        block.init_seed = seed;
        let mut rng = rng::seeded(seed, salt::PARAM_INIT);
        for (idx, &(r, c)) in shapes.iter().enumerate() {
            if c == 1 {
                continue;
            }
            let bound = (6.0 / (r + c) as f64).sqrt();
            let (lo, hi) = block.tensor_range(idx);
            for v in &mut block.values[lo..hi] {
                *v = rng::uniform(&mut rng, -bound, bound);
            }
        }
        block
    }

    pub fn n_tensors(&self) -> usize {
        self.shapes.len()
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn tensor_range(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.offsets[i + 1])
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        let (lo, hi) = self.tensor_range(i);
        &self.values[lo..hi]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        let (lo, hi) = self.tensor_range(i);
        &mut self.values[lo..hi]
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        let (lo, hi) = self.tensor_range(i);
        &self.grads[lo..hi]
    }

    pub fn grad_mut(&mut self, i: usize) -> &mut [f64] {
        let (lo, hi) = self.tensor_range(i);
        &mut self.grads[lo..hi]
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Checkpoint: one JSON header line (shapes, seed, step) followed by the
    /// value payload as flat little-endian f64.
    pub fn save_checkpoint(&self, path: &std::path::Path, step: u64) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            shapes: &'a [(usize, usize)],
            init_seed: u64,
            step: u64,
        }
        let header = serde_json::to_string(&Header {
            shapes: &self.shapes,
            init_seed: self.init_seed,
            step,
        })?;
        let mut bytes = header.into_bytes();
        bytes.push(b'\n');
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<(Self, u64)> {
        #[derive(Deserialize)]
        struct Header {
            shapes: Vec<(usize, usize)>,
            init_seed: u64,
            step: u64,
        }
        let bytes = std::fs::read(path)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::invalid("checkpoint missing header line"))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])?;
        let payload = &bytes[newline + 1..];
        let mut block = ParamBlock::zeros(&header.shapes);
        if payload.len() != block.len() * 8 {
            return Err(Error::invalid(format!(
                "checkpoint payload is {} bytes, expected {}",
                payload.len(),
                block.len() * 8
            )));
        }
        for (i, chunk) in payload.chunks_exact(8).enumerate() {
            block.values[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        block.init_seed = header.init_seed;
        Ok((block, header.step))
    }
}

// ---------------------------------------------------------------------------
// MLP shape spec
// ---------------------------------------------------------------------------

/// Shared layer spec for every small network in the pipeline.
/// `layer_widths = [in, h_1, ..., out]`; `activations[i]` applies after
/// layer i for all but the last layer, which uses `output_activation`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_activation: Activation,
}

impl MlpSpec {
    /// Uniform hidden activation.
    pub fn new(layer_widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        let hidden_layers = layer_widths.len().saturating_sub(2);
        MlpSpec {
            layer_widths,
            activations: vec![hidden; hidden_layers],
            output_activation: output,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid("MLP needs at least one layer"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("MLP widths must be positive"));
        }
        if self.activations.len() + 1 != self.n_layers() {
            return Err(Error::invalid(format!(
                "expected {} hidden activations, got {}",
                self.n_layers() - 1,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn activation_for_layer(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output_activation
        } else {
            self.activations[layer]
        }
    }

    /// Parameter tensors: per layer a weight (out, in) then a bias (out, 1).
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(2 * self.n_layers());
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
            shapes.push((fan_out, fan_in));
            shapes.push((fan_out, 1));
        }
        shapes
    }

    pub fn init_params(&self, seed: u64) -> ParamBlock {
        ParamBlock::glorot(&self.param_shapes(), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_values() {
        // Values from standard tables.
        assert!((erf(0.0)).abs() < 1e-15);
        assert!((erf(0.5) - 0.520499877813047).abs() < 1e-14);
        assert!((erf(1.0) - 0.842700792949715).abs() < 1e-14);
        assert!((erf(2.0) - 0.995322265018953).abs() < 1e-14);
        assert!((erf(-1.0) + 0.842700792949715).abs() < 1e-14);
        assert!((erf(5.0) - 0.999999999998463).abs() < 1e-14);
    }

    #[test]
    fn gelu_endpoints() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu(-10.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0, -1.0, -0.3, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(
                (gelu_derivative(x) - fd).abs() < 1e-8,
                "x={x}: {} vs {}",
                gelu_derivative(x),
                fd
            );
        }
    }

    #[test]
    fn param_block_layout() {
        let block = ParamBlock::zeros(&[(2, 3), (2, 1)]);
        assert_eq!(block.len(), 8);
        assert_eq!(block.tensor(0).len(), 6);
        assert_eq!(block.tensor(1).len(), 2);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Gelu, Activation::None);
        let block = spec.init_params(9);
        let dir = std::env::temp_dir().join("resprop_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("block.ckpt");
        block.save_checkpoint(&path, 17).unwrap();
        let (loaded, step) = ParamBlock::load_checkpoint(&path).unwrap();
        assert_eq!(step, 17);
        assert_eq!(loaded.values, block.values);
        assert_eq!(loaded.shapes(), block.shapes());
    }
}
