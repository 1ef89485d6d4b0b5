//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numerical code; parameters are read straight
//! from the documented flat layout.

#![allow(dead_code)]

/// One dense layer inside a flat parameter vector: row-major weights
/// (`outputs × inputs`) followed by the bias.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Dense {
    pub fn w(&self, p: &[f64], o: usize, i: usize) -> f64 {
        p[self.offset + o * self.inputs + i]
    }

    pub fn b(&self, p: &[f64], o: usize) -> f64 {
        p[self.offset + self.inputs * self.outputs + o]
    }

    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Shape description of an autoencoder with residual codebooks.
#[derive(Clone, Debug)]
pub struct Shape {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    pub codebooks: usize,
    pub levels: usize,
    pub size: usize,
    pub code_dim: usize,
}

impl Shape {
    pub fn new(input: usize, hidden: &[usize], code_dim: usize, levels: usize, size: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(code_dim);
        let mut offset = 0;
        let mut stack = |w: &[usize]| -> Vec<Dense> {
            w.windows(2)
                .map(|p| {
                    let d = Dense {
                        inputs: p[0],
                        outputs: p[1],
                        offset,
                    };
                    offset += d.len();
                    d
                })
                .collect()
        };
        let encoder = stack(&widths);
        let rev: Vec<usize> = widths.iter().rev().copied().collect();
        let decoder = stack(&rev);
        Self {
            encoder,
            decoder,
            codebooks: offset,
            levels,
            size,
            code_dim,
        }
    }

    pub fn total(&self) -> usize {
        self.codebooks + self.levels * self.size * self.code_dim
    }

    pub fn code<'a>(&self, p: &'a [f64], level: usize, idx: usize) -> &'a [f64] {
        let start = self.codebooks + (level * self.size + idx) * self.code_dim;
        &p[start..start + self.code_dim]
    }
}

/// Forward pass; ReLU after every layer but the last.
pub fn mlp(layers: &[Dense], p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (n, l) in layers.iter().enumerate() {
        let mut out = vec![0.0; l.outputs];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = l.b(p, o);
            for (i, &xi) in h.iter().enumerate() {
                acc += l.w(p, o, i) * xi;
            }
            *slot = if n + 1 < layers.len() { acc.max(0.0) } else { acc };
        }
        h = out;
    }
    h
}

/// Gradient of `‖s − mlp(y)‖²` with respect to the network input `y`.
pub fn mlp_input_grad(layers: &[Dense], p: &[f64], y: &[f64], s: &[f64]) -> Vec<f64> {
    let mut acts = vec![y.to_vec()];
    let mut pre = Vec::new();
    for l in layers {
        let h = acts.last().unwrap();
        let z: Vec<f64> = (0..l.outputs)
            .map(|o| l.b(p, o) + h.iter().enumerate().map(|(i, x)| l.w(p, o, i) * x).sum::<f64>())
            .collect();
        pre.push(z.clone());
        let is_last = pre.len() == layers.len();
        acts.push(if is_last {
            z
        } else {
            z.iter().map(|v| v.max(0.0)).collect()
        });
    }
    let out = acts.last().unwrap();
    let mut g: Vec<f64> = out.iter().zip(s).map(|(o, t)| 2.0 * (o - t)).collect();
    for (n, l) in layers.iter().enumerate().rev() {
        if n + 1 < layers.len() {
            for (gi, z) in g.iter_mut().zip(&pre[n]) {
                if *z <= 0.0 {
                    *gi = 0.0;
                }
            }
        }
        g = (0..l.inputs)
            .map(|i| (0..l.outputs).map(|o| l.w(p, o, i) * g[o]).sum())
            .collect();
    }
    g
}

pub fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `rows`, scanning every row; lowest index wins
/// ties.
pub fn brute_nearest(rows: &[&[f64]], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, r) in rows.iter().enumerate() {
        let d = sqdist(r, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Quantities frozen at the expansion point of the gradient check.
pub struct Frozen {
    pub latent: Vec<f64>,
    pub zhat: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
    pub indices: Vec<usize>,
    pub codes: Vec<Vec<f64>>,
}

pub fn freeze(shape: &Shape, p: &[f64], s: &[f64]) -> Frozen {
    let latent = mlp(&shape.encoder, p, s);
    let mut r = latent.clone();
    let mut residuals = vec![r.clone()];
    let mut codes = Vec::new();
    let mut indices = Vec::new();
    let mut zhat = vec![0.0; shape.code_dim];
    for l in 0..shape.levels {
        let rows: Vec<&[f64]> = (0..shape.size).map(|i| shape.code(p, l, i)).collect();
        let c = brute_nearest(&rows, &r);
        let v = rows[c].to_vec();
        for j in 0..shape.code_dim {
            r[j] -= v[j];
            zhat[j] += v[j];
        }
        residuals.push(r.clone());
        indices.push(c);
        codes.push(v);
    }
    Frozen {
        latent,
        zhat,
        residuals,
        indices,
        codes,
    }
}

/// Differentiable surrogate whose gradient at the expansion point is the
/// straight-through, stop-gradient gradient of the total loss:
/// the decoder sees `z(θ) + (ẑ₀ − z₀)`, codevector terms compare live
/// codevectors with frozen residuals, and commitment terms compare live
/// residuals (built from frozen codevectors) with frozen codevectors.
pub fn surrogate(shape: &Shape, p: &[f64], s: &[f64], f: &Frozen, alpha: f64) -> f64 {
    let z = mlp(&shape.encoder, p, s);
    let dec_in: Vec<f64> = (0..shape.code_dim).map(|j| z[j] + f.zhat[j] - f.latent[j]).collect();
    let rec = sqdist(s, &mlp(&shape.decoder, p, &dec_in));
    let mut rq = 0.0;
    let mut r_live = z.clone();
    for l in 0..shape.levels {
        rq += sqdist(&f.residuals[l], shape.code(p, l, f.indices[l]));
        rq += alpha * sqdist(&r_live, &f.codes[l]);
        for (r, c) in r_live.iter_mut().zip(&f.codes[l]) {
            *r -= c;
        }
    }
    rec + rq
}

/// Central finite-difference gradient of the batch-mean surrogate.
pub fn fd_gradient(shape: &Shape, p: &[f64], batch: &[Vec<f64>], alpha: f64, h: f64) -> Vec<f64> {
    let frozen: Vec<Frozen> = batch.iter().map(|s| freeze(shape, p, s)).collect();
    let objective = |q: &[f64]| -> f64 {
        batch
            .iter()
            .zip(&frozen)
            .map(|(s, f)| surrogate(shape, q, s, f, alpha))
            .sum::<f64>()
            / batch.len() as f64
    };
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = q[i];
            q[i] = orig + h;
            let up = objective(&q);
            q[i] = orig - h;
            let down = objective(&q);
            q[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
