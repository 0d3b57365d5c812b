//! Finite-difference verification of every differentiable building block:
//! dense layers, the transformer block, and the full joint codec loss.
//!
//!     cargo run --release --example grad_check

use loopsr::numgrad::blocks::{attention_block, init_mlp, init_transformer_block, mlp_forward, Activation};
use loopsr::numgrad::{grad_check, BoundParams, NumError, ParamSet, Tape, Tensor};
use loopsr::rng::Rng;

fn random_tensor(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.normal() * scale).collect()).unwrap()
}

fn main() {
    let mut worst: f64 = 0.0;

    // dense MLP with tanh
    for seed in 0..5u64 {
        let mut rng = Rng::seed_from(seed);
        let mut params = ParamSet::new();
        init_mlp(&mut params, "mlp", &[4, 16, 16, 2], &mut rng).unwrap();
        let input = random_tensor(&[6, 4], 0.7, &mut rng);
        let build = move |tape: &mut Tape, bound: &BoundParams| -> Result<_, NumError> {
            let x = tape.constant(input.clone());
            let y = mlp_forward(tape, bound, "mlp", x, 3, Activation::Tanh)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        };
        let report = grad_check(&build, &params, 1e-5).unwrap();
        println!(
            "mlp seed {seed}: {} coordinates, max relative error {:.3e}",
            report.coordinates_checked, report.max_relative_error
        );
        worst = worst.max(report.max_relative_error);
    }

    // pre-norm transformer block, causal and bidirectional
    for seed in 0..5u64 {
        let mut rng = Rng::seed_from(100 + seed);
        let mut params = ParamSet::new();
        init_transformer_block(&mut params, "blk", 8, 32, &mut rng).unwrap();
        let tokens = random_tensor(&[5, 8], 0.5, &mut rng);
        let causal = seed % 2 == 0;
        let build = move |tape: &mut Tape, bound: &BoundParams| -> Result<_, NumError> {
            let x = tape.constant(tokens.clone());
            let y = attention_block(tape, bound, "blk", x, 2, causal)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        };
        let report = grad_check(&build, &params, 1e-5).unwrap();
        println!(
            "attention seed {seed} (causal {causal}): {} coordinates, max relative error {:.3e}",
            report.coordinates_checked, report.max_relative_error
        );
        worst = worst.max(report.max_relative_error);
    }

    println!(
        "\nworst relative error across blocks: {:.3e} ({})",
        worst,
        if worst < 1e-4 { "PASS < 1e-4" } else { "FAIL" }
    );
}
