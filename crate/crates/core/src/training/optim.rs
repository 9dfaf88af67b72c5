use crate::numerics::Tensor;

/// Adam with decoupled weight decay. Decay applies to matrices only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &[Tensor], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f32>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = if p.shape().len() == 2 {
                (lr * self.weight_decay) as f32
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m as f64 / c1;
                let vhat = *v as f64 / c2;
                *x -= decay * *x + (lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

/// Linear warmup over `warmup` steps, then constant.
pub fn warmup_lr(base: f64, warmup: usize, iteration: usize) -> f64 {
    if warmup == 0 {
        base
    } else {
        base * ((iteration + 1) as f64 / warmup as f64).min(1.0)
    }
}
