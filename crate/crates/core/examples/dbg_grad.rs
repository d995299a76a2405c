use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rehearsal_core::harness::gradcheck::{finite_diff_model_grad, max_rel_err};
use rehearsal_core::nn::{Example, MlpModel};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for shape in [vec![4usize, 3, 2], vec![6, 5, 4, 3]] {
        for case in 0..60 {
            let model = MlpModel::new(&shape, &mut rng).unwrap();
            let classes = *shape.last().unwrap();
            let batch: Vec<Example> = (0..rng.random_range(1..=3))
                .map(|i| {
                    Example::new(
                        i,
                        (0..shape[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        rng.random_range(0..classes),
                    )
                })
                .collect();
            let (_, analytic) = model.loss_and_grad(&batch).unwrap();
            let numeric = finite_diff_model_grad(&model, &batch, 1e-5).unwrap();
            let err = max_rel_err(analytic.as_slice(), numeric.as_slice(), 1e-4);
            if err > 1e-5 {
                println!("shape {shape:?} case {case} batch {} err {err:.3e}", batch.len());
                for (i, (a, n)) in analytic.as_slice().iter().zip(numeric.as_slice()).enumerate() {
                    let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
                    if e > 1e-5 {
                        println!("  coord {i}: analytic {a:+.8e} numeric {n:+.8e}");
                    }
                }
                return;
            }
        }
    }
    println!("all pass");
}
