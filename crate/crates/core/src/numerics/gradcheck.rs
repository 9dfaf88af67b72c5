//! Finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{linear, AttnSegment, MultiHeadAttention, Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step used by [`gradcheck`].
pub const FD_EPS: f32 = 1e-3;

/// Uniform `[-1, 1)` tensor.
pub fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).expect("shape matches")
}

/// Compares tape gradients of the scalar `f(inputs)` with central
/// differences over every input coordinate. Returns the largest absolute
/// deviation divided by the largest gradient magnitude (at least 1e-3).
pub fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| tape.grad(*v).map_or(vec![0.0; x.numel()], |g| g.to_vec()))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item() as f64)
    };
    let mut worst = 0.0f64;
    let mut gmax = 1e-3f64;
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            perturbed[i].data_mut()[j] = orig + FD_EPS;
            let up = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig - FD_EPS;
            let down = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS as f64);
            let a = analytic[i][j] as f64;
            worst = worst.max((numeric - a).abs());
            gmax = gmax.max(numeric.abs()).max(a.abs());
        }
    }
    Ok(worst / gmax)
}

/// Random-weighted sum of every entry of `y`, giving each an O(1) gradient.
pub fn probe(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(random_tensor(shape, &mut rng));
    tape.dot(y, w)
}

fn mha(params: &[Var], heads: usize) -> MultiHeadAttention {
    MultiHeadAttention {
        wq: params[0],
        bq: params[1],
        wk: params[2],
        bk: params[3],
        wv: params[4],
        bv: params[5],
        wo: params[6],
        bo: params[7],
        heads,
    }
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

/// Gradient-check error of every differentiable tape operation on inputs
/// drawn from `seed`.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: Vec<usize>| random_tensor(shape, &mut rng);
    let (a, b) = (r(vec![3, 5]), r(vec![3, 5]));
    let (bias, gain) = (r(vec![5]), r(vec![5]));
    // Keep relu inputs away from the kink at zero.
    let mut kinked = a.clone();
    for v in kinked.data_mut() {
        if v.abs() < 0.1 {
            *v += 0.2f32.copysign(*v);
        }
    }
    let mask: Vec<f32> = (0..15).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
    let d = 8;
    let mut attn: Vec<Tensor> = Vec::new();
    for _ in 0..4 {
        attn.push(r(vec![d, d]));
        attn.push(r(vec![d]));
    }
    attn.push(r(vec![7, d]));
    attn.push(r(vec![3, d]));
    let s = seed;
    let pair = || vec![a.clone(), b.clone()];
    let cases: Vec<Case> = vec![
        (
            "matmul",
            vec![r(vec![3, 4]), r(vec![4, 2])],
            Box::new(move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                probe(t, y, s)
            }),
        ),
        (
            "add",
            pair(),
            Box::new(move |t, v| {
                let y = t.add(v[0], v[1])?;
                probe(t, y, s)
            }),
        ),
        (
            "sub",
            pair(),
            Box::new(move |t, v| {
                let y = t.sub(v[0], v[1])?;
                probe(t, y, s)
            }),
        ),
        (
            "mul",
            pair(),
            Box::new(move |t, v| {
                let y = t.mul(v[0], v[1])?;
                probe(t, y, s)
            }),
        ),
        (
            "add_bias",
            vec![a.clone(), bias.clone()],
            Box::new(move |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                probe(t, y, s)
            }),
        ),
        (
            "affine",
            vec![a.clone()],
            Box::new(move |t, v| {
                let y = t.affine(v[0], -1.5, 0.3);
                probe(t, y, s)
            }),
        ),
        (
            "relu",
            vec![kinked],
            Box::new(move |t, v| {
                let y = t.relu(v[0]);
                probe(t, y, s)
            }),
        ),
        (
            "gelu",
            vec![a.clone()],
            Box::new(move |t, v| {
                let y = t.gelu(v[0]);
                probe(t, y, s)
            }),
        ),
        (
            "softmax",
            vec![a.clone()],
            Box::new(move |t, v| {
                let y = t.softmax(v[0]);
                probe(t, y, s)
            }),
        ),
        (
            "layer_norm",
            vec![a.clone(), gain, bias],
            Box::new(move |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2])?;
                probe(t, y, s)
            }),
        ),
        (
            "embedding+gather_rows+mean_pool",
            vec![r(vec![6, 4])],
            Box::new(move |t, v| {
                let e = t.embedding(v[0], &[1, 3, 1, 5])?;
                let g = t.gather_rows(e, &[3, 0, 2])?;
                let p = t.mean_pool(g, vec![vec![0, 1], vec![2]])?;
                probe(t, p, s)
            }),
        ),
        (
            "l2_normalize",
            vec![a.clone()],
            Box::new(move |t, v| {
                let y = t.l2_normalize(v[0]);
                probe(t, y, s)
            }),
        ),
        (
            "row_dot",
            pair(),
            Box::new(move |t, v| {
                let y = t.row_dot(v[0], v[1])?;
                probe(t, y, s)
            }),
        ),
        (
            "sum+dot",
            pair(),
            Box::new(move |t, v| {
                let y = t.dot(v[0], v[1])?;
                let z = t.mul(v[0], v[0])?;
                let z = t.sum(z);
                t.add(y, z)
            }),
        ),
        (
            "mean",
            pair(),
            Box::new(move |t, v| {
                let y = t.mul(v[0], v[1])?;
                Ok(t.mean(y))
            }),
        ),
        (
            "dropout",
            vec![a.clone()],
            Box::new(move |t, v| {
                let y = t.dropout(v[0], mask.clone())?;
                probe(t, y, s)
            }),
        ),
        (
            "cross_entropy",
            vec![r(vec![4, 7])],
            Box::new(move |t, v| t.cross_entropy(v[0], &[Some(2), None, Some(6), Some(0)])),
        ),
        (
            "attention",
            attn,
            Box::new(move |t, v| {
                let m = mha(v, 2);
                let causal = s.is_multiple_of(2);
                let segs = vec![
                    AttnSegment::self_attention(0, 4, causal),
                    AttnSegment::self_attention(4, 3, causal).with_key_mask(vec![true, true, false]),
                ];
                let y = m.forward(t, v[8], v[8], segs)?;
                let z = m.forward(t, y, v[9], vec![AttnSegment::cross(0, 7, 0, 3)])?;
                probe(t, z, s)
            }),
        ),
        (
            "linear+gelu+cross_entropy",
            vec![r(vec![4, 6]), r(vec![6, 5]), r(vec![5]), r(vec![5, 3]), r(vec![3])],
            Box::new(|t, v| {
                let h = linear(t, v[0], v[1], v[2])?;
                let h = t.gelu(h);
                let y = linear(t, h, v[3], v[4])?;
                t.cross_entropy(y, &[Some(0), Some(2), Some(1), None])
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, gradcheck(&inputs, f)?)))
        .collect()
}
