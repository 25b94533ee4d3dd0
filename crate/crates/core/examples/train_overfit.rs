//! Overfits a small model to ten synthetic segments and decodes them back.
//!
//! ```text
//! cargo run --release --example train_overfit -- [steps]
//! ```

use rnnt_diar::harness::{overfit, smoothed_losses, OverfitConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut config = OverfitConfig::default();
    if let Some(steps) = std::env::args().nth(1) {
        config.train.max_steps = steps.parse()?;
    }
    let r = overfit(&config)?;
    let smooth = smoothed_losses(&r.curve, 100);
    println!(
        "smoothed loss by 100 steps: {}",
        smooth.iter().map(|l| format!("{l:.2}")).collect::<Vec<_>>().join(" ")
    );
    println!(
        "loss {:.3} -> {:.4} ({:.2}% of initial)",
        r.initial_loss,
        r.final_loss,
        100.0 * r.final_loss / r.initial_loss
    );
    println!("{}/{} segments decoded exactly; WER {:?}, WDER {:?}", r.exact, r.total, r.wer, r.wder);
    Ok(())
}
