use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{squared_distance, Scalar};

/// Position of one dense layer inside the flat parameter vector. The weight
/// matrix is stored row-major as `outputs × inputs`, followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearShape {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl LinearShape {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let w = self.weights().end;
        w..w + self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.outputs == 0
    }
}

/// Borrowed `levels × size × dim` codebook tensor, level-major.
#[derive(Debug, Clone, Copy)]
pub struct Codebooks<'a, T> {
    data: &'a [T],
    levels: usize,
    size: usize,
    dim: usize,
}

impl<'a, T: Scalar> Codebooks<'a, T> {
    pub fn new(data: &'a [T], levels: usize, size: usize, dim: usize) -> Self {
        assert_eq!(data.len(), levels * size * dim, "codebook tensor shape");
        Self {
            data,
            levels,
            size,
            dim,
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self, l: usize) -> &'a [T] {
        let n = self.size * self.dim;
        &self.data[l * n..(l + 1) * n]
    }

    pub fn vector(&self, l: usize, i: usize) -> &'a [T] {
        let start = (l * self.size + i) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Index of the nearest codevector at level `l`; ties go to the lowest
    /// index.
    pub fn nearest(&self, l: usize, x: &[T]) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for i in 0..self.size {
            let d = squared_distance(x, self.vector(l, i));
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Outcome of residual quantization of one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeResult<T> {
    /// Chosen code index per level.
    pub indices: Vec<usize>,
    /// Sum of chosen codevectors.
    pub zhat: Vec<T>,
    /// `r_0 ..= r_L`; `r_0` is the input.
    pub residuals: Vec<Vec<T>>,
}

pub fn quantize<T: Scalar>(r0: &[T], codebooks: &Codebooks<'_, T>) -> QuantizeResult<T> {
    assert_eq!(r0.len(), codebooks.dim, "latent length must equal code_dim");
    let mut residuals = Vec::with_capacity(codebooks.levels + 1);
    residuals.push(r0.to_vec());
    let mut indices = Vec::with_capacity(codebooks.levels);
    let mut zhat = vec![T::zero(); r0.len()];
    for l in 0..codebooks.levels {
        let prev = &residuals[l];
        let c = codebooks.nearest(l, prev);
        let v = codebooks.vector(l, c);
        let next: Vec<T> = prev.iter().zip(v).map(|(&r, &x)| r - x).collect();
        for (z, &x) in zhat.iter_mut().zip(v) {
            *z += x;
        }
        indices.push(c);
        residuals.push(next);
    }
    QuantizeResult {
        indices,
        zhat,
        residuals,
    }
}

/// Encoder, decoder and codebooks stored in one flat parameter vector:
/// encoder layers, then decoder layers, then codebooks level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RqVaeModel<T> {
    input_dim: usize,
    code_dim: usize,
    levels: usize,
    codebook_size: usize,
    encoder: Vec<LinearShape>,
    decoder: Vec<LinearShape>,
    codebook_offset: usize,
    params: Vec<T>,
}

fn layer_stack(widths: &[usize], offset: &mut usize) -> Vec<LinearShape> {
    widths
        .windows(2)
        .map(|w| {
            let shape = LinearShape {
                inputs: w[0],
                outputs: w[1],
                offset: *offset,
            };
            *offset += shape.len();
            shape
        })
        .collect()
}

impl<T: Scalar> RqVaeModel<T> {
    /// Zero-initialized model. The decoder mirrors the encoder's hidden
    /// widths in reverse.
    pub fn zeros(
        input_dim: usize,
        encoder_hidden: &[usize],
        code_dim: usize,
        levels: usize,
        codebook_size: usize,
    ) -> Self {
        let mut enc_widths = vec![input_dim];
        enc_widths.extend_from_slice(encoder_hidden);
        enc_widths.push(code_dim);
        let dec_widths: Vec<usize> = enc_widths.iter().rev().copied().collect();
        let mut offset = 0;
        let encoder = layer_stack(&enc_widths, &mut offset);
        let decoder = layer_stack(&dec_widths, &mut offset);
        let codebook_offset = offset;
        let total = offset + levels * codebook_size * code_dim;
        Self {
            input_dim,
            code_dim,
            levels,
            codebook_size,
            encoder,
            decoder,
            codebook_offset,
            params: vec![T::zero(); total],
        }
    }

    /// Fan-in scaled uniform init of all dense layers, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_dense(&mut self, rng: &mut impl Rng) {
        let layers: Vec<LinearShape> = self.encoder.iter().chain(&self.decoder).copied().collect();
        for layer in layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for p in &mut self.params[layer.offset..layer.offset + layer.len()] {
                *p = T::from_f64_lossy(rng.gen_range(-bound..=bound));
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn encoder_layers(&self) -> &[LinearShape] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[LinearShape] {
        &self.decoder
    }

    pub fn codebook_offset(&self) -> usize {
        self.codebook_offset
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces all parameters; `flat` must have [`Self::num_params`] values.
    pub fn set_params(&mut self, flat: Vec<T>) {
        assert_eq!(flat.len(), self.params.len(), "parameter count");
        self.params = flat;
    }

    pub fn decoder_range(&self) -> std::ops::Range<usize> {
        let start = self.decoder.first().map_or(self.codebook_offset, |l| l.offset);
        start..self.codebook_offset
    }

    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        0..self.decoder_range().start
    }

    pub fn codebook_range(&self) -> std::ops::Range<usize> {
        self.codebook_offset..self.params.len()
    }

    /// Parameter range of one codevector.
    pub fn code_range(&self, level: usize, index: usize) -> std::ops::Range<usize> {
        let start = self.codebook_offset + (level * self.codebook_size + index) * self.code_dim;
        start..start + self.code_dim
    }

    pub fn codebooks(&self) -> Codebooks<'_, T> {
        Codebooks::new(
            &self.params[self.codebook_range()],
            self.levels,
            self.codebook_size,
            self.code_dim,
        )
    }

    pub fn set_codevector(&mut self, level: usize, index: usize, v: &[T]) {
        let r = self.code_range(level, index);
        self.params[r].copy_from_slice(v);
    }

    pub fn set_codebook(&mut self, level: usize, data: &[T]) {
        let n = self.codebook_size * self.code_dim;
        let start = self.codebook_offset + level * n;
        self.params[start..start + n].copy_from_slice(data);
    }

    /// Activations of a dense stack: `acts[0]` is the input and `acts[i + 1]`
    /// the output of layer `i` (ReLU on every layer except the last).
    pub(crate) fn forward_stack(&self, layers: &[LinearShape], x: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in layers.iter().enumerate() {
            let input = acts.last().expect("input pushed");
            let w = &self.params[layer.weights()];
            let b = &self.params[layer.bias()];
            let last = i + 1 == layers.len();
            let out: Vec<T> = (0..layer.outputs)
                .map(|o| {
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    let a = crate::scalar::dot(row, input) + b[o];
                    if last || a > T::zero() {
                        a
                    } else {
                        T::zero()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn encode(&self, s: &[T]) -> Vec<T> {
        assert_eq!(s.len(), self.input_dim, "input length");
        self.forward_stack(&self.encoder, s).pop().expect("non-empty stack")
    }

    pub fn decode(&self, code: &[T]) -> Vec<T> {
        assert_eq!(code.len(), self.code_dim, "code length");
        self.forward_stack(&self.decoder, code).pop().expect("non-empty stack")
    }

    /// Encodes then quantizes.
    pub fn quantize_input(&self, s: &[T]) -> QuantizeResult<T> {
        quantize(&self.encode(s), &self.codebooks())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// L2 norms of the encoder, decoder and codebook parameter groups.
    pub fn group_norms(&self) -> [f64; 3] {
        let n = |r: std::ops::Range<usize>| {
            self.params[r]
                .iter()
                .map(|&x| x.to_f64_lossy().powi(2))
                .sum::<f64>()
                .sqrt()
        };
        [
            n(self.encoder_range()),
            n(self.decoder_range()),
            n(self.codebook_range()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_dimensional_worked_example() {
        let data = [-1.0f64, 1.0];
        let books = Codebooks::new(&data, 1, 2, 1);
        let q = quantize(&[0.7], &books);
        assert_eq!(q.indices, [1]);
        assert!((q.residuals[1][0] + 0.3).abs() < 1e-12);
        assert_eq!(q.zhat, [1.0]);

        let data = [-1.0f64, 1.0, -0.3, 0.3];
        let books = Codebooks::new(&data, 2, 2, 1);
        let q = quantize(&[0.7], &books);
        assert_eq!(q.indices, [1, 0]);
        assert!(q.residuals[2][0].abs() < 1e-12);
        assert!((q.zhat[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn duplicate_codes_resolve_to_lower_index() {
        let data = [0.5, 0.5, 0.5, 0.5, -2.0, -2.0];
        let books = Codebooks::new(&data, 1, 3, 2);
        assert_eq!(quantize(&[0.4, 0.6], &books).indices, [0]);
        let data = [3.0, 0.5, 0.5];
        let books = Codebooks::new(&data, 1, 3, 1);
        assert_eq!(quantize(&[0.6], &books).indices, [1]);
    }

    #[test]
    fn layout_is_contiguous() {
        let m = RqVaeModel::<f64>::zeros(8, &[8], 4, 2, 4);
        assert_eq!(m.encoder_layers().len(), 2);
        assert_eq!(m.decoder_layers()[0].inputs, 4);
        assert_eq!(m.decoder_layers()[1].outputs, 8);
        let dense = 8 * 9 + 4 * 9 + 8 * 5 + 8 * 9;
        assert_eq!(m.codebook_offset(), dense);
        assert_eq!(m.num_params(), dense + 2 * 4 * 4);
        assert_eq!(m.code_range(1, 3).end, m.num_params());
    }

    proptest! {
        #[test]
        #[allow(clippy::needless_range_loop)]
        fn residuals_telescope(
            r0 in prop::collection::vec(-3.0f64..3.0, 3),
            books in prop::collection::vec(-2.0f64..2.0, 3 * 5 * 3),
        ) {
            let cb = Codebooks::new(&books, 3, 5, 3);
            let q = quantize(&r0, &cb);
            for l in 0..3 {
                let v = cb.vector(l, q.indices[l]);
                for d in 0..3 {
                    prop_assert!((q.residuals[l][d] - v[d] - q.residuals[l + 1][d]).abs() < 1e-12);
                }
            }
            for d in 0..3 {
                prop_assert!((q.zhat[d] + q.residuals[3][d] - r0[d]).abs() < 1e-6);
            }
        }
    }
}
