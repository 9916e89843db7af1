//! MLP forward and backward passes over [`ParamBlock`] storage.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParamBlock};

/// Intermediates cached by the forward pass; consumed by the backward pass.
/// Owning a cache is the proof that forward ran, so backward-before-forward
/// is unrepresentable.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (layer_inputs[0] is the network input).
    layer_inputs: Vec<Mat>,
    /// Pre-activation values per layer.
    preacts: Vec<Mat>,
}

/// Affine-then-activation composition: `Z_l = X_l W_l^T + b_l`,
/// `X_{l+1} = act_l(Z_l)`.
pub fn forward_mlp(spec: &MlpSpec, params: &ParamBlock, input: &Mat) -> Result<(Mat, MlpCache)> {
    spec.validate()?;
    if input.cols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input columns", spec.input_dim()),
            got: format!("{}", input.cols()),
            context: "forward_mlp",
        });
    }
    let mut layer_inputs = Vec::with_capacity(spec.n_layers());
    let mut preacts = Vec::with_capacity(spec.n_layers());
    let mut x = input.clone();
    for layer in 0..spec.n_layers() {
        let (out_dim, in_dim) = (spec.layer_widths[layer + 1], spec.layer_widths[layer]);
        let w = params.tensor(2 * layer);
        let b = params.tensor(2 * layer + 1);
        let mut z = Mat::zeros(x.rows(), out_dim);
        for r in 0..x.rows() {
            let xrow = x.row(r);
            let zrow = z.row_mut(r);
            for (o, zv) in zrow.iter_mut().enumerate() {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                *zv = crate::dense::dot(wrow, xrow) + b[o];
            }
        }
        let act = spec.activation_for_layer(layer);
        let mut a = z.clone();
        for v in a.data_mut() {
            *v = act.apply(*v);
        }
        layer_inputs.push(x);
        preacts.push(z);
        x = a;
    }
    Ok((x, MlpCache { layer_inputs, preacts }))
}

/// Backpropagate `upstream` (gradient w.r.t. the MLP output) through the
/// cached forward pass. Parameter gradients are *accumulated* into
/// `params.grads`; the return value is the gradient w.r.t. the input.
pub fn backward_mlp(
    spec: &MlpSpec,
    params: &mut ParamBlock,
    cache: &MlpCache,
    upstream: &Mat,
) -> Result<Mat> {
    if upstream.cols() != spec.output_dim() || upstream.rows() != cache.layer_inputs[0].rows() {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "{}x{} upstream",
                cache.layer_inputs[0].rows(),
                spec.output_dim()
            ),
            got: format!("{}x{}", upstream.rows(), upstream.cols()),
            context: "backward_mlp",
        });
    }
    let mut grad = upstream.clone();
    for layer in (0..spec.n_layers()).rev() {
        let in_dim = spec.layer_widths[layer];
        let act = spec.activation_for_layer(layer);
        let preact = &cache.preacts[layer];
        let x = &cache.layer_inputs[layer];

        // dZ = grad (.) act'(Z)
        let mut dz = grad.clone();
        for (dv, zv) in dz.data_mut().iter_mut().zip(preact.data()) {
            *dv *= act.derivative(*zv);
        }

        {
            let dw = params.grad_mut(2 * layer);
            for r in 0..x.rows() {
                let dzrow = dz.row(r);
                let xrow = x.row(r);
                for (o, dzv) in dzrow.iter_enumerated() {
                    if dzv == 0.0 {
                        continue;
                    }
                    let wrow = &mut dw[o * in_dim..(o + 1) * in_dim];
                    for (wv, xv) in wrow.iter_mut().zip(xrow) {
                        *wv += dzv * xv;
                    }
                }
            }
        }
        {
            let db = params.grad_mut(2 * layer + 1);
            for r in 0..dz.rows() {
                for (o, dzv) in dz.row(r).iter().enumerate() {
                    db[o] += dzv;
                }
            }
        }

        // grad w.r.t. layer input: dX = dZ W
        let w = params.tensor(2 * layer);
        let mut dx = Mat::zeros(x.rows(), in_dim);
        for r in 0..x.rows() {
            let dzrow = dz.row(r);
            let dxrow = dx.row_mut(r);
            for (o, dzv) in dzrow.iter().enumerate() {
                if *dzv == 0.0 {
                    continue;
                }
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for (dxv, wv) in dxrow.iter_mut().zip(wrow) {
                    *dxv += dzv * wv;
                }
            }
        }
        grad = dx;
    }
    Ok(grad)
}

// Small helper so the weight-gradient loop reads naturally.
trait IterEnumerated {
    fn iter_enumerated(&self) -> std::iter::Enumerate<std::iter::Copied<std::slice::Iter<'_, f64>>>;
}

impl IterEnumerated for [f64] {
    fn iter_enumerated(&self) -> std::iter::Enumerate<std::iter::Copied<std::slice::Iter<'_, f64>>> {
        self.iter().copied().enumerate()
    }
}
