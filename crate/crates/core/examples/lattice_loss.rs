//! Transducer likelihood on a small random lattice: forward and backward
//! recursions, exhaustive alignment enumeration, and the per-label cut
//! identity.
//!
//! ```text
//! cargo run --release --example lattice_loss -- [T] [U] [V] [seed]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnnt_diar::lattice::{
    backward_log_likelihood, brute_force_log_likelihood, build_loss_grid, forward_log_likelihood, LogitLattice,
};
use rnnt_diar::numerics::log_sum_exp;

fn arg(i: usize, default: u64) -> u64 {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> anyhow::Result<()> {
    let (t, u, v, seed) = (arg(1, 4) as usize, arg(2, 3) as usize, arg(3, 5) as usize, arg(4, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits: Vec<f64> = (0..t * (u + 1) * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let target: Vec<usize> = (0..u).map(|_| rng.gen_range(1..v)).collect();
    let lattice = LogitLattice::new(t, u, v, logits)?;

    let mut grid = build_loss_grid(&lattice, &target)?;
    grid.compute_tables();
    let forward = forward_log_likelihood(&grid)?;
    let backward = backward_log_likelihood(&grid)?;
    println!("target {target:?} over {t} frames, {v} symbols");
    println!("forward  log P = {forward:.12}");
    println!("backward log P = {backward:.12}");

    if t <= 6 && u <= 4 {
        let e = brute_force_log_likelihood(&lattice, &target)?;
        println!("brute    log P = {:.12} over {} alignments", e.log_likelihood, e.alignments);
    }

    let alpha = grid.alpha.as_ref().expect("computed");
    let beta = grid.beta.as_ref().expect("computed");
    for k in 0..u {
        let cut: Vec<f64> = (0..t)
            .map(|s| alpha.get(s, k) + grid.label_logprob(s, k) + beta.get(s, k + 1))
            .collect();
        println!("cut at label {k}: {:.12}", log_sum_exp(&cut)?);
    }
    Ok(())
}
