//! Compares analytic gradients against central finite differences, first for
//! the lattice loss with respect to its logits and then for every parameter
//! of a tiny model.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnnt_diar::lattice::{loss_and_logit_gradient, LogitLattice};
use rnnt_diar::model::{Model, ModelConfig};
use rnnt_diar::numerics::{check_gradient, Matrix};

fn tiny() -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        conv_filters: 4,
        conv_kernel: 3,
        pool_sizes: vec![2],
        lstm_layers_per_block: 1,
        encoder_lstm_units: 3,
        bidirectional: true,
        embedding_dim: 3,
        pred_lstm_units: 3,
        pred_output_dim: 3,
        joint_dim: 4,
        vocab_size: 5,
    }
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for case in 0..5 {
        let (t, u, v) = (rng.gen_range(1..=4), rng.gen_range(0..=3), rng.gen_range(2..=5));
        let point: Vec<f64> = (0..t * (u + 1) * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<usize> = (0..u).map(|_| rng.gen_range(1..v)).collect();
        let f = |x: &[f64]| {
            let lat = LogitLattice::new(t, u, v, x.to_vec()).expect("sized");
            let r = loss_and_logit_gradient(&lat, &target).expect("valid");
            (r.loss, r.gradient)
        };
        let err = check_gradient(f, &point, 1e-5)?;
        println!("lattice {case}: T'={t} U={u} V={v}  max rel err {err:.2e}");
    }

    let base = Model::<f64>::init(tiny(), 7)?;
    let frames = Matrix::uniform(8, 3, 1.0, &mut rng);
    let target = [2, 4, 1];
    let point: Vec<f64> = base.parameters().iter().flat_map(|p| p.value.data().to_vec()).collect();
    let f = |v: &[f64]| {
        let mut m = base.clone();
        let mut off = 0;
        for p in m.parameters_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        let (loss, grads) = m.loss_and_gradients(&frames, &target).expect("valid");
        (loss, grads.iter().flat_map(|g| g.data().to_vec()).collect())
    };
    let err = check_gradient(f, &point, 1e-5)?;
    println!("model: {} parameters  max rel err {err:.2e}", point.len());
    Ok(())
}
