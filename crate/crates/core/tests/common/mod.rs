//! Shared test oracles: seeded tensors and a central finite-difference
//! gradient checker that stays independent of the tape's backward pass.

use derain_core::tape::{Tape, TensorId};
use derain_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [lo, hi).
pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| lo + r.random::<f64>() * (hi - lo)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Graph builder: given a tape and the leaf ids of `inputs`, return the
/// scalar loss node.
pub type BuildFn<'a> = &'a dyn Fn(&mut Tape<f64>, &[TensorId]) -> TensorId;

fn eval_loss(inputs: &[Tensor<f64>], build: BuildFn) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let loss = build(&mut tape, &ids);
    tape.value(loss).item().unwrap()
}

/// Compare the tape's analytic gradients against central finite differences
/// for every input tensor, sampling up to `max_coords` coordinates per
/// tensor. Panics with a diagnostic on the first violation.
pub fn gradcheck(
    name: &str,
    inputs: &[Tensor<f64>],
    build: BuildFn,
    step: f64,
    rel_tol: f64,
    max_coords: usize,
    seed: u64,
) {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .unwrap_or_else(|| panic!("{name}: no gradient for an input leaf"))
                .clone()
        })
        .collect();

    let mut r = rng(seed ^ 0xfd);
    for (ti, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let coords: Vec<usize> = if numel <= max_coords {
            (0..numel).collect()
        } else {
            (0..max_coords).map(|_| (r.random::<u64>() % numel as u64) as usize).collect()
        };
        for &ci in &coords {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[ci] += step;
            let f_plus = eval_loss(&plus, build);
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[ci] -= step;
            let f_minus = eval_loss(&minus, build);
            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = analytic[ti].data()[ci];
            let err = rel_err(an, fd);
            assert!(
                err < rel_tol,
                "{name}: gradient mismatch at input {ti} coord {ci}: \
                 analytic {an:.12e}, finite-diff {fd:.12e}, rel err {err:.3e}"
            );
        }
    }
}

/// Loss used by op-level checks: a fixed random weighting of the output,
/// averaged so the loss value stays O(1) and finite-difference rounding
/// noise stays far below the tolerance.
pub fn weighted_sum(tape: &mut Tape<f64>, out: TensorId, seed: u64) -> TensorId {
    let shape = tape.value(out).shape().to_vec();
    let w = rand_tensor(&shape, 0.5, 1.5, seed);
    let wid = tape.constant(w);
    let prod = tape.mul(out, wid).unwrap();
    tape.mean_all(prod)
}
