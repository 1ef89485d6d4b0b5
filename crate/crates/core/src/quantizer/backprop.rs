//! Losses and hand-written gradients.
//!
//! Stop-gradient semantics: the reconstruction path treats quantization as
//! the identity (the gradient reaching `zhat` is handed to the encoder output
//! unchanged), codebooks are pulled towards the frozen residuals, and the
//! encoder is pulled towards the frozen codevectors with weight `alpha`.
//! Residuals seen by the commitment term are computed with frozen
//! codevectors, so codebooks get no gradient from it.

use super::model::{LinearShape, QuantizeResult, RqVaeModel};
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses<T> {
    pub reconstruction: T,
    pub quantization: T,
    pub total: T,
}

/// Loss values for a single input.
pub fn losses<T: Scalar>(s: &[T], model: &RqVaeModel<T>, alpha: T) -> Losses<T> {
    let q = model.quantize_input(s);
    let reconstruction = squared_distance(s, &model.decode(&q.zhat));
    let quantization = quantization_loss(&q, model, alpha);
    Losses {
        reconstruction,
        quantization,
        total: reconstruction + quantization,
    }
}

/// `sum_l ||r_{l-1} - v_l||^2 + alpha ||r_{l-1} - v_l||^2`; the two terms
/// coincide in value and differ only in where gradients flow.
fn quantization_loss<T: Scalar>(q: &QuantizeResult<T>, model: &RqVaeModel<T>, alpha: T) -> T {
    let books = model.codebooks();
    (0..model.levels())
        .map(|l| {
            let d = squared_distance(&q.residuals[l], books.vector(l, q.indices[l]));
            d + alpha * d
        })
        .sum()
}

/// Forward values and gradients for one input. Gradients are those of the
/// example's own total loss (not batch-averaged).
#[derive(Debug, Clone)]
pub struct ExampleBackward<T> {
    pub latent: Vec<T>,
    pub quantized: QuantizeResult<T>,
    pub reconstruction: Vec<T>,
    pub losses: Losses<T>,
    /// dL_Rec / d zhat.
    pub grad_zhat: Vec<T>,
    /// dL_Rec / d z as routed by the straight-through estimator.
    pub grad_latent_reconstruction: Vec<T>,
    /// dL_RQ / d z (commitment terms only).
    pub grad_latent_commitment: Vec<T>,
    /// Gradient w.r.t. every parameter, in the model's flat order.
    pub grad_params: Vec<T>,
}

/// Backpropagates `grad_out` through a dense stack whose activations are
/// `acts`, accumulating parameter gradients scaled by `scale` into `grads`.
/// Returns the gradient w.r.t. the stack input.
fn backward_stack<T: Scalar>(
    params: &[T],
    layers: &[LinearShape],
    acts: &[Vec<T>],
    grad_out: Vec<T>,
    scale: T,
    grads: &mut [T],
) -> Vec<T> {
    let mut g = grad_out;
    for (i, layer) in layers.iter().enumerate().rev() {
        if i + 1 != layers.len() {
            // ReLU: output is zero exactly when the unit was inactive
            for (gj, &a) in g.iter_mut().zip(&acts[i + 1]) {
                if a <= T::zero() {
                    *gj = T::zero();
                }
            }
        }
        let input = &acts[i];
        let w = &params[layer.weights()];
        let mut g_in = vec![T::zero(); layer.inputs];
        {
            let (gw, gb) = grads[layer.offset..layer.offset + layer.len()].split_at_mut(layer.inputs * layer.outputs);
            for o in 0..layer.outputs {
                let go = g[o];
                if go == T::zero() {
                    continue;
                }
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for j in 0..layer.inputs {
                    grow[j] += scale * go * input[j];
                    g_in[j] += row[j] * go;
                }
                gb[o] += scale * go;
            }
        }
        g = g_in;
    }
    g
}

/// Forward and backward pass for one input, accumulating `scale ×` its
/// parameter gradient into `grads`.
fn accumulate_example<T: Scalar>(
    s: &[T],
    model: &RqVaeModel<T>,
    alpha: T,
    scale: T,
    grads: &mut [T],
) -> ExampleBackward<T> {
    let two = T::from_f64_lossy(2.0);
    let params = model.params();
    let enc_acts = model.forward_stack(model.encoder_layers(), s);
    let latent = enc_acts.last().expect("encoder output").clone();
    let q = super::model::quantize(&latent, &model.codebooks());
    let dec_acts = model.forward_stack(model.decoder_layers(), &q.zhat);
    let recon = dec_acts.last().expect("decoder output").clone();

    let reconstruction = squared_distance(s, &recon);
    let quantization = quantization_loss(&q, model, alpha);

    let grad_recon: Vec<T> = recon.iter().zip(s).map(|(&y, &x)| two * (y - x)).collect();
    let grad_zhat = backward_stack(params, model.decoder_layers(), &dec_acts, grad_recon, scale, grads);
    // straight-through: quantization is the identity on the way back
    let grad_latent_reconstruction = grad_zhat.clone();

    let books = model.codebooks();
    let mut grad_latent_commitment = vec![T::zero(); model.code_dim()];
    for l in 0..model.levels() {
        let c = q.indices[l];
        let v = books.vector(l, c);
        let r = &q.residuals[l];
        let code = model.code_range(l, c);
        for d in 0..model.code_dim() {
            let diff = r[d] - v[d];
            // ||sg[r] - v||^2 pulls the codevector
            grads[code.start + d] -= scale * two * diff;
            // alpha ||r - sg[v]||^2 pulls the encoder
            grad_latent_commitment[d] += alpha * two * diff;
        }
    }

    let grad_latent: Vec<T> = grad_latent_reconstruction
        .iter()
        .zip(&grad_latent_commitment)
        .map(|(&a, &b)| a + b)
        .collect();
    backward_stack(params, model.encoder_layers(), &enc_acts, grad_latent, scale, grads);

    ExampleBackward {
        latent,
        quantized: q,
        reconstruction: recon,
        losses: Losses {
            reconstruction,
            quantization,
            total: reconstruction + quantization,
        },
        grad_zhat,
        grad_latent_reconstruction,
        grad_latent_commitment,
        grad_params: Vec::new(),
    }
}

/// Full forward/backward record for a single input.
pub fn example_backward<T: Scalar>(s: &[T], model: &RqVaeModel<T>, alpha: T) -> ExampleBackward<T> {
    let mut grads = vec![T::zero(); model.num_params()];
    let mut out = accumulate_example(s, model, alpha, T::one(), &mut grads);
    out.grad_params = grads;
    out
}

/// Gradient of the batch-mean total loss, plus per-example forward records
/// (without per-example parameter gradients).
pub fn batch_gradients<T: Scalar>(
    batch: &[&[T]],
    model: &RqVaeModel<T>,
    alpha: T,
) -> (Vec<T>, Vec<ExampleBackward<T>>) {
    let mut grads = vec![T::zero(); model.num_params()];
    let scale = T::one() / T::from_usize(batch.len().max(1)).expect("batch size fits");
    let records = batch
        .iter()
        .map(|s| accumulate_example(s, model, alpha, scale, &mut grads))
        .collect();
    (grads, records)
}
