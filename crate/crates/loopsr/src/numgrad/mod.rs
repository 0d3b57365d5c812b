//! Differentiable numerical core: dense f64 tensors, a tape autodiff
//! engine with the layers needed by the policy and trajectory networks,
//! Adam, finite-difference verification, and the weight checkpoint format.

pub mod adam;
pub mod blocks;
pub mod check;
pub mod io;
pub mod params;
pub mod tape;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use check::{grad_check, relative_error, GradCheckReport};
pub use io::{load_params, save_params};
pub use params::{Gradients, ParamSet};
pub use tape::{BoundParams, Tape, TapeGrads, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("dimension error: {0}")]
    BadShape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: non-finite values produced by {op}")]
    NonFinite { op: &'static str },
}

#[cfg(test)]
mod tests {
    use super::blocks::{init_mlp, mlp_forward, Activation};
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn affine_identity_weights_pass_input_through() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let w = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_zero_input_passes_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0]]));
        let w = tape.constant(Tensor::from_rows(&[vec![0.7, -1.3], vec![2.2, 0.1]]));
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_hand_multiplied_example() {
        // [1,1] @ diag(2,3) + [1,1] = [3,4]
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0]]));
        let w = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]));
        let b = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]));
        let w = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let b = tape.constant(Tensor::vector(vec![0.0]));
        assert!(matches!(tape.affine(x, w, b), Err(NumError::BadShape(_))));
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut params = ParamSet::new();
        params
            .insert("w", Tensor::from_rows(&[vec![0.3, -0.4], vec![1.2, 9.9]]))
            .unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&params);
        let loss = tape.sum(bound.var("w")).unwrap();
        let tg = tape.backward(loss).unwrap();
        let grads = tape.param_grads(&tg, &params);
        assert_eq!(grads.get("w").unwrap().values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_constant_loss_is_all_zeros() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let _bound = tape.bind(&params);
        let c = tape.constant(Tensor::scalar(5.0));
        let loss = tape.sum(c).unwrap();
        let tg = tape.backward(loss).unwrap();
        let grads = tape.param_grads(&tg, &params);
        assert_eq!(grads.get("w").unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn nonfinite_intermediate_names_the_op() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1e308));
        let doubled = tape.scale(x, 2.0); // overflows to +inf
        match doubled {
            Err(NumError::NonFinite { op }) => assert_eq!(op, "scale"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn forward_pass_is_deterministic() {
        let mut rng = Rng::seed_from(9);
        let mut params = ParamSet::new();
        init_mlp(&mut params, "m", &[4, 16, 4], &mut rng).unwrap();
        let input = Tensor::new(vec![2, 4], (0..8).map(|i| i as f64 * 0.11).collect()).unwrap();
        let run = |p: &ParamSet| {
            let mut tape = Tape::new();
            let bound = tape.bind(p);
            let x = tape.constant(input.clone());
            let y = mlp_forward(&mut tape, &bound, "m", x, 2, Activation::Gelu).unwrap();
            tape.value(y).clone()
        };
        let a = run(&params);
        let b = run(&params);
        assert_eq!(a.values(), b.values());
    }

    // finite-difference oracle across every op the networks touch
    #[test]
    fn elementwise_and_reduction_ops_pass_grad_check() {
        for seed in 0..4u64 {
            let mut rng = Rng::seed_from(300 + seed);
            let mut params = ParamSet::new();
            params
                .insert(
                    "a",
                    Tensor::new(vec![3, 4], (0..12).map(|_| rng.normal() * 0.8).collect()).unwrap(),
                )
                .unwrap();
            params
                .insert(
                    "b",
                    Tensor::new(vec![3, 4], (0..12).map(|_| rng.normal() * 0.8 + 0.1).collect())
                        .unwrap(),
                )
                .unwrap();
            let build = |tape: &mut Tape, bound: &BoundParams| {
                let a = bound.var("a");
                let b = bound.var("b");
                let t = tape.tanh(a)?;
                let gl = tape.gelu(b)?;
                let m = tape.mul(t, gl)?;
                let e = tape.exp(m)?;
                let sg = tape.sigmoid(e)?;
                let ab = tape.abs(sg)?;
                let ln_term = tape.add_scalar(ab, 1.5)?;
                let ln = tape.ln(ln_term)?;
                let mn = tape.min(ln, m)?;
                let cl = tape.clamp(mn, -0.9, 0.9)?;
                let sm = tape.softmax_rows(cl)?;
                let rs = tape.row_sums(sm)?;
                let mr = tape.mean_over_rows(cl)?;
                let mr_sum = tape.sum(mr)?;
                let rs_sum = tape.sum(rs)?;
                let total = tape.add(mr_sum, rs_sum)?;
                let sc = tape.scale(total, 1.7)?;
                let neg = tape.sub(sc, rs_sum)?;
                tape.sum(neg)
            };
            let report = grad_check(&build, &params, 1e-5).unwrap();
            assert!(report.max_relative_error < 1e-6, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn structural_ops_pass_grad_check() {
        for seed in 0..4u64 {
            let mut rng = Rng::seed_from(400 + seed);
            let mut params = ParamSet::new();
            params
                .insert(
                    "rows",
                    Tensor::new(vec![4, 3], (0..12).map(|_| rng.normal()).collect()).unwrap(),
                )
                .unwrap();
            params
                .insert(
                    "single",
                    Tensor::new(vec![1, 3], (0..3).map(|_| rng.normal()).collect()).unwrap(),
                )
                .unwrap();
            params
                .insert(
                    "proj",
                    Tensor::new(vec![3, 2], (0..6).map(|_| rng.normal()).collect()).unwrap(),
                )
                .unwrap();
            let build = |tape: &mut Tape, bound: &BoundParams| {
                let rows = bound.var("rows");
                let single = bound.var("single");
                let proj = bound.var("proj");
                let rep = tape.broadcast_row(single, 4)?;
                let inter = tape.interleave_rows3(rows, rep, rows)?;
                let gathered = tape.gather_rows(inter, &[0, 5, 5, 2])?;
                let cat = tape.concat_cols(&[gathered, rep])?;
                let normed = tape.l2_normalize_rows(cat)?;
                let gram = tape.matmul_self_t(normed)?;
                let lse = tape.lse_excl_diag(gram)?;
                let s1 = tape.sum(lse)?;
                let ln = tape.layer_norm(gathered, single, single)?;
                let s2 = tape.sum(ln)?;
                let prod = tape.matmul(gathered, proj)?;
                let s3 = tape.sum(prod)?;
                let t = tape.add(s1, s2)?;
                tape.add(t, s3)
            };
            let report = grad_check(&build, &params, 1e-5).unwrap();
            assert!(report.max_relative_error < 1e-6, "seed {seed}: {report:?}");
        }
    }
}
