//! Small feed-forward networks with flat parameter vectors and a hand-written
//! backward pass, plus the Adam optimizer.

use rand::Rng;

/// Multi-layer perceptron: tanh hidden layers, linear output layer.
///
/// Parameters are stored layer by layer as a row-major weight matrix
/// (`out x in`) followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Trace {
    /// `layers[k]` is the input to layer `k`; the last entry is the output.
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has an output")
    }
}

impl Mlp {
    /// All-zero network with layer widths `sizes` (input first).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
        }
    }

    /// Uniform fan-in initialization for weights, zero biases; the output
    /// layer is scaled by `out_scale`.
    pub fn new(sizes: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes);
        let layers = sizes.len() - 1;
        let mut off = 0;
        for k in 0..layers {
            let (n_in, n_out) = (sizes[k], sizes[k + 1]);
            let bound = (1.0 / n_in as f64).sqrt() * if k + 1 == layers { out_scale } else { 1.0 };
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = rng.random_range(-1.0..1.0) * bound;
            }
            off += n_in * n_out + n_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut cur = x.to_vec();
        let mut off = 0;
        for k in 0..layers {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            cur = self.affine(off, n_in, n_out, &cur, k + 1 < layers);
            off += n_in * n_out + n_out;
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut trace = Vec::with_capacity(layers + 1);
        trace.push(x.to_vec());
        let mut off = 0;
        for k in 0..layers {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let next = self.affine(off, n_in, n_out, &trace[k], k + 1 < layers);
            trace.push(next);
            off += n_in * n_out + n_out;
        }
        Trace { layers: trace }
    }

    fn affine(&self, off: usize, n_in: usize, n_out: usize, x: &[f64], hidden: bool) -> Vec<f64> {
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let s = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                if hidden {
                    s.tanh()
                } else {
                    s
                }
            })
            .collect()
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`,
    /// and returns `d loss / d input`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for k in 0..layers {
            offsets.push(off);
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        let mut delta = grad_out.to_vec();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            if k + 1 < layers {
                // tanh' = 1 - y^2 on the stored post-activation
                for (d, y) in delta.iter_mut().zip(&trace.layers[k + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let off = offsets[k];
            let input = &trace.layers[k];
            let w = &self.params[off..off + n_in * n_out];
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in gw.iter_mut().zip(input) {
                    *g += d * x;
                }
                for (gi, wv) in grad_in.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *gi += d * wv;
                }
                grad[off + n_in * n_out + o] += d;
            }
            delta = grad_in;
        }
        delta
    }
}

/// Intermediate values of one batched forward pass; every layer is stored
/// row-major with one row per sample.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    n: usize,
    layers: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has an output")
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }
}

/// `c = a * b + beta * c` for row-major `c` (`m x n`); `a` (`m x k`) and
/// `b` (`k x n`) are read through the given row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1);
        assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1);
    }
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for k in 0..self.sizes.len() - 1 {
            out.push(off);
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        out
    }

    fn affine_batch(&self, off: usize, n_in: usize, n_out: usize, x: &[f64], n: usize, hidden: bool) -> Vec<f64> {
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        let mut y: Vec<f64> = (0..n).flat_map(|_| b.iter().copied()).collect();
        // y = x * w^T + y
        gemm(n, n_in, n_out, x, (n_in, 1), w, (1, n_in), 1.0, &mut y);
        if hidden {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        y
    }

    /// Forward pass over `n` inputs stored row-major in `x`.
    pub fn forward_batch(&self, x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.input_dim());
        let layers = self.sizes.len() - 1;
        let offsets = self.offsets();
        let mut cur = self.affine_batch(offsets[0], self.sizes[0], self.sizes[1], x, n, layers > 1);
        for k in 1..layers {
            cur = self.affine_batch(offsets[k], self.sizes[k], self.sizes[k + 1], &cur, n, k + 1 < layers);
        }
        cur
    }

    pub fn forward_batch_trace(&self, x: &[f64], n: usize) -> BatchTrace {
        debug_assert_eq!(x.len(), n * self.input_dim());
        let layers = self.sizes.len() - 1;
        let offsets = self.offsets();
        let mut trace = Vec::with_capacity(layers + 1);
        trace.push(x.to_vec());
        for k in 0..layers {
            let next = self.affine_batch(offsets[k], self.sizes[k], self.sizes[k + 1], &trace[k], n, k + 1 < layers);
            trace.push(next);
        }
        BatchTrace { n, layers: trace }
    }

    /// Batched [`Mlp::backward`]: accumulates the parameter gradient summed
    /// over the batch and returns the per-sample input gradients.
    pub fn backward_batch(&self, trace: &BatchTrace, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let n = trace.n;
        let layers = self.sizes.len() - 1;
        let offsets = self.offsets();
        let mut delta = grad_out.to_vec();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            if k + 1 < layers {
                for (d, y) in delta.iter_mut().zip(&trace.layers[k + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let off = offsets[k];
            let input = &trace.layers[k];
            // dW (out x in) += delta^T * input
            gemm(n_out, n, n_in, &delta, (1, n_out), input, (n_in, 1), 1.0, &mut grad[off..off + n_in * n_out]);
            let gb = &mut grad[off + n_in * n_out..off + n_in * n_out + n_out];
            for row in delta.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut grad_in = vec![0.0; n * n_in];
            gemm(n, n_out, n_in, &delta, (n_out, 1), w, (n_in, 1), 0.0, &mut grad_in);
            delta = grad_in;
        }
        delta
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn state(&self) -> (&[f64], &[f64], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, t: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.t = t;
    }
}

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 5, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1];
        // loss = sum(c_k * y_k)
        let c = [0.5, -1.3];
        let trace = net.forward_trace(&x);
        let mut grad = vec![0.0; net.param_count()];
        let gx = net.backward(&trace, &c, &mut grad);
        let loss = |n: &Mlp, x: &[f64]| n.forward(x).iter().zip(&c).map(|(y, c)| y * c).sum::<f64>();
        let h = 1e-6;
        for i in 0..net.param_count() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn batched_passes_match_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 6, 4, 2], 1.0, &mut rng);
        let xs = [[0.3, -0.7, 1.1], [0.0, 0.5, -0.2], [-1.3, 0.2, 0.9]];
        let gs = [[0.5, -1.3], [0.2, 0.7], [-0.4, 0.1]];
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let gflat: Vec<f64> = gs.iter().flatten().copied().collect();
        let tb = net.forward_batch_trace(&flat, 3);
        assert_eq!(tb.output().len(), 6);
        let mut gb = vec![0.0; net.param_count()];
        let gin = net.backward_batch(&tb, &gflat, &mut gb);
        let mut g1 = vec![0.0; net.param_count()];
        for i in 0..3 {
            let t = net.forward_trace(&xs[i]);
            for (a, b) in t.output().iter().zip(&tb.output()[2 * i..2 * i + 2]) {
                assert!((a - b).abs() < 1e-12);
            }
            let gi = net.backward(&t, &gs[i], &mut g1);
            for (a, b) in gi.iter().zip(&gin[3 * i..3 * i + 3]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in g1.iter().zip(&gb) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(net.forward_batch(&flat, 3), tb.output());
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
