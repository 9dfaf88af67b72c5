//! Build a tiny two-layer network on the tape, backpropagate, and confirm
//! every primitive against finite differences.

use merchant_resolve::numerics::gradcheck::{gradcheck, primitive_suite, random_tensor};
use merchant_resolve::numerics::{linear, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> merchant_resolve::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(vec![4, 6], &mut rng);
    let w1 = random_tensor(vec![6, 8], &mut rng);
    let b1 = random_tensor(vec![8], &mut rng);
    let w2 = random_tensor(vec![8, 3], &mut rng);
    let b2 = random_tensor(vec![3], &mut rng);
    let targets = [Some(0), Some(2), None, Some(1)];

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let params: Vec<_> = [&w1, &b1, &w2, &b2].iter().map(|t| tape.param((*t).clone())).collect();
    let h = linear(&mut tape, xv, params[0], params[1])?;
    let h = tape.gelu(h);
    let logits = linear(&mut tape, h, params[2], params[3])?;
    let loss = tape.cross_entropy(logits, &targets)?;
    tape.backward(loss)?;
    println!("loss {:.4}", tape.value(loss).item());
    println!("dL/dw2[0..3] = {:?}", &tape.grad(params[2]).unwrap()[..3]);

    let err = gradcheck(&[x, w1, b1, w2, b2], |t, v| {
        let h = linear(t, v[0], v[1], v[2])?;
        let h = t.gelu(h);
        let y = linear(t, h, v[3], v[4])?;
        t.cross_entropy(y, &targets)
    })?;
    println!("network gradient check: {err:.2e}");

    for (name, err) in primitive_suite(0)? {
        println!("{name:<32} {err:.2e}");
    }
    Ok(())
}
