//! Recurrent Q-network: two tanh encoder layers, an LSTM core carrying the
//! agent's history, and a linear head over the three actions. Parameters
//! live in one flat vector so cloning targets, checkpointing, Adam, and
//! finite-difference checks all work on plain slices. The backward pass is
//! a single recurrent step: stored hidden states are inputs, not
//! backpropagation targets.

use std::ops::Range;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub obs: usize,
    pub enc1: usize,
    pub enc2: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl Dims {
    pub fn new(obs: usize) -> Self {
        Dims {
            obs,
            enc1: 100,
            enc2: 100,
            hidden: 100,
            actions: 3,
        }
    }

    pub fn small(obs: usize, width: usize) -> Self {
        Dims {
            obs,
            enc1: width,
            enc2: width,
            hidden: width,
            actions: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    /// LSTM input weights, gate-stacked rows (i, f, g, o).
    pub wx: Range<usize>,
    pub wh: Range<usize>,
    pub bg: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(d: &Dims) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w1 = take(d.enc1 * d.obs);
        let b1 = take(d.enc1);
        let w2 = take(d.enc2 * d.enc1);
        let b2 = take(d.enc2);
        let wx = take(4 * d.hidden * d.enc2);
        let wh = take(4 * d.hidden * d.hidden);
        let bg = take(4 * d.hidden);
        let wo = take(d.actions * d.hidden);
        let bo = take(d.actions);
        Layout {
            w1,
            b1,
            w2,
            b2,
            wx,
            wh,
            bg,
            wo,
            bo,
            total: at,
        }
    }
}

/// Recurrent state carried between decisions: LSTM hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Hidden {
    pub fn zero(width: usize) -> Self {
        Hidden {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }
}

#[derive(Debug, Clone)]
pub struct QNetwork {
    pub dims: Dims,
    pub layout: Layout,
    pub theta: Vec<f64>,
}

/// Intermediate activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub obs: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub gate_i: Vec<f64>,
    pub gate_f: Vec<f64>,
    pub gate_g: Vec<f64>,
    pub gate_o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub q: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// y += W x with W stored row-major (rows x cols).
fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *yr += acc;
    }
}

/// y += W^T d (accumulating into the input-gradient).
fn matvec_t_acc(w: &[f64], d: &[f64], y: &mut [f64]) {
    let cols = y.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (yc, wc) in y.iter_mut().zip(row) {
            *yc += dr * wc;
        }
    }
}

/// dW += d x^T
fn outer_acc(d: &[f64], x: &[f64], dw: &mut [f64]) {
    let cols = x.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (wc, xc) in row.iter_mut().zip(x) {
            *wc += dr * xc;
        }
    }
}

impl QNetwork {
    pub fn new(dims: Dims) -> Self {
        let layout = Layout::new(&dims);
        QNetwork {
            theta: vec![0.0; layout.total],
            dims,
            layout,
        }
    }

    pub fn init_xavier<R: Rng>(&mut self, rng: &mut R) {
        let d = self.dims;
        let l = self.layout.clone();
        let mut init = |range: Range<usize>, fan_in: usize, fan_out: usize, theta: &mut [f64]| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut theta[range] {
                *v = rng.gen_range(-limit..limit);
            }
        };
        init(l.w1, d.obs, d.enc1, &mut self.theta);
        init(l.w2, d.enc1, d.enc2, &mut self.theta);
        init(l.wx, d.enc2, d.hidden, &mut self.theta);
        init(l.wh, d.hidden, d.hidden, &mut self.theta);
        init(l.wo, d.hidden, d.actions, &mut self.theta);
        // Biases stay zero.
    }

    pub fn zero_hidden(&self) -> Hidden {
        Hidden::zero(self.dims.hidden)
    }

    /// One recurrent step: Q-values for all actions plus the next hidden
    /// state. Deterministic in (obs, hidden, theta).
    pub fn forward(&self, obs: &[f64], hidden: &Hidden) -> (Vec<f64>, Hidden) {
        let cache = self.forward_cached(obs, hidden);
        (
            cache.q,
            Hidden {
                h: cache.h,
                c: cache.c,
            },
        )
    }

    pub fn forward_cached(&self, obs: &[f64], hidden: &Hidden) -> ForwardCache {
        assert_eq!(
            obs.len(),
            self.dims.obs,
            "observation dimension mismatch: got {}, expected {}",
            obs.len(),
            self.dims.obs
        );
        let d = &self.dims;
        let l = &self.layout;
        let th = &self.theta;

        let mut a1 = th[l.b1.clone()].to_vec();
        matvec_acc(&th[l.w1.clone()], obs, &mut a1);
        a1.iter_mut().for_each(|v| *v = v.tanh());

        let mut a2 = th[l.b2.clone()].to_vec();
        matvec_acc(&th[l.w2.clone()], &a1, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.tanh());

        let mut z = th[l.bg.clone()].to_vec();
        matvec_acc(&th[l.wx.clone()], &a2, &mut z);
        matvec_acc(&th[l.wh.clone()], &hidden.h, &mut z);

        let hw = d.hidden;
        let mut gate_i = vec![0.0; hw];
        let mut gate_f = vec![0.0; hw];
        let mut gate_g = vec![0.0; hw];
        let mut gate_o = vec![0.0; hw];
        for j in 0..hw {
            gate_i[j] = sigmoid(z[j]);
            gate_f[j] = sigmoid(z[hw + j]);
            gate_g[j] = z[2 * hw + j].tanh();
            gate_o[j] = sigmoid(z[3 * hw + j]);
        }
        let mut c = vec![0.0; hw];
        let mut tanh_c = vec![0.0; hw];
        let mut h = vec![0.0; hw];
        for j in 0..hw {
            c[j] = gate_f[j] * hidden.c[j] + gate_i[j] * gate_g[j];
            tanh_c[j] = c[j].tanh();
            h[j] = gate_o[j] * tanh_c[j];
        }

        let mut q = th[l.bo.clone()].to_vec();
        matvec_acc(&th[l.wo.clone()], &h, &mut q);

        ForwardCache {
            obs: obs.to_vec(),
            h_prev: hidden.h.clone(),
            c_prev: hidden.c.clone(),
            a1,
            a2,
            gate_i,
            gate_f,
            gate_g,
            gate_o,
            c,
            tanh_c,
            h,
            q,
        }
    }

    /// Accumulates dL/dtheta into `grad` given dL/dq for one sample.
    pub fn backward(&self, cache: &ForwardCache, dq: &[f64], grad: &mut [f64]) {
        let d = &self.dims;
        let l = &self.layout;
        let th = &self.theta;
        let hw = d.hidden;

        outer_acc(dq, &cache.h, &mut grad[l.wo.clone()]);
        for (g, v) in grad[l.bo.clone()].iter_mut().zip(dq) {
            *g += v;
        }
        let mut dh = vec![0.0; hw];
        matvec_t_acc(&th[l.wo.clone()], dq, &mut dh);

        let mut dz = vec![0.0; 4 * hw];
        for j in 0..hw {
            let do_ = dh[j] * cache.tanh_c[j];
            let dc = dh[j] * cache.gate_o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
            let di = dc * cache.gate_g[j];
            let df = dc * cache.c_prev[j];
            let dg = dc * cache.gate_i[j];
            dz[j] = di * cache.gate_i[j] * (1.0 - cache.gate_i[j]);
            dz[hw + j] = df * cache.gate_f[j] * (1.0 - cache.gate_f[j]);
            dz[2 * hw + j] = dg * (1.0 - cache.gate_g[j] * cache.gate_g[j]);
            dz[3 * hw + j] = do_ * cache.gate_o[j] * (1.0 - cache.gate_o[j]);
        }
        outer_acc(&dz, &cache.a2, &mut grad[l.wx.clone()]);
        outer_acc(&dz, &cache.h_prev, &mut grad[l.wh.clone()]);
        for (g, v) in grad[l.bg.clone()].iter_mut().zip(&dz) {
            *g += v;
        }

        let mut da2 = vec![0.0; d.enc2];
        matvec_t_acc(&th[l.wx.clone()], &dz, &mut da2);
        let dz2: Vec<f64> = da2
            .iter()
            .zip(&cache.a2)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        outer_acc(&dz2, &cache.a1, &mut grad[l.w2.clone()]);
        for (g, v) in grad[l.b2.clone()].iter_mut().zip(&dz2) {
            *g += v;
        }

        let mut da1 = vec![0.0; d.enc1];
        matvec_t_acc(&th[l.w2.clone()], &dz2, &mut da1);
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&cache.a1)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        outer_acc(&dz1, &cache.obs, &mut grad[l.w1.clone()]);
        for (g, v) in grad[l.b1.clone()].iter_mut().zip(&dz1) {
            *g += v;
        }
    }

    /// Value copy of the parameters (target-network clone).
    pub fn clone_target(&self) -> Vec<f64> {
        self.theta.clone()
    }
}
