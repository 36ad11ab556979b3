#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rul_core::tensor::{Tape, Tensor, Var};

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central finite differences against `backward`. `build` maps the leaf
/// handles to a scalar loss. Returns the largest relative error seen.
pub fn max_fd_error(inputs: &[Tensor<f64>], eps: f64, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (t, grads) in analytic.iter().enumerate() {
        for (i, &g) in grads.iter().enumerate() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let up = eval(&work);
            work[t].data_mut()[i] = orig - eps;
            let down = eval(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(g, numeric));
        }
    }
    worst
}

/// Contracts `out` against fixed pseudo-random weights so every output
/// element contributes a distinct gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let w = random_tensor(&mut rng(seed), &shape, 1.0);
    let w = tape.constant(w);
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

/// Per-leaf comparison of `backward` against central differences.
pub struct LeafCheck {
    /// `max|a - n| / max(max|a|, max|n|, 1e-8)` over the leaf's entries.
    pub tensor_rel: f64,
    /// Worst entry-wise relative error.
    pub entry_rel: f64,
}

pub fn fd_check_leaves(
    inputs: &[Tensor<f64>],
    eps: f64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Vec<LeafCheck> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::new();
    for t in 0..inputs.len() {
        let analytic = tape
            .grad(vars[t])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[t].len()]);
        let (mut diff, mut scale, mut entry) = (0.0f64, 1e-8f64, 0.0f64);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let up = eval(&work);
            work[t].data_mut()[i] = orig - eps;
            let down = eval(&work);
            work[t].data_mut()[i] = orig;
            let n = (up - down) / (2.0 * eps);
            diff = diff.max((a - n).abs());
            scale = scale.max(a.abs()).max(n.abs());
            entry = entry.max(rel_err(a, n));
        }
        out.push(LeafCheck {
            tensor_rel: diff / scale,
            entry_rel: entry,
        });
    }
    out
}
