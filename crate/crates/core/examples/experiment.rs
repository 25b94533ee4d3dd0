//! End-to-end comparison of the joint model against the diarization
//! baseline.
//!
//! ```text
//! cargo run --release --example experiment -- [smoke|default|ablation|<config.toml>] [out_dir]
//! ```

use std::path::PathBuf;

use rnnt_diar::harness::{run_experiment, write_timing, ExperimentConfig};

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{:.1}%", 100.0 * x))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut config = match args.next().as_deref() {
        None | Some("smoke") => ExperimentConfig::smoke(),
        Some("default") => ExperimentConfig::default(),
        Some("ablation") => {
            let mut c = ExperimentConfig::default();
            c.generator.offset_scale = 0.0;
            c
        }
        Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
    };
    if let Some(dir) = args.next() {
        config.output_dir = Some(PathBuf::from(dir));
    }
    let out = run_experiment(&config)?;
    if let Some(dir) = &config.output_dir {
        write_timing(dir, &out.timing)?;
    }
    let r = &out.report;
    println!("{:<10} {:>8} {:>8}", "", "joint", "baseline");
    println!("{:<10} {:>8} {:>8}", "WER", pct(r.joint.wer), pct(r.baseline.wer));
    println!("{:<10} {:>8} {:>8}", "  del", pct(r.joint.del), pct(r.baseline.del));
    println!("{:<10} {:>8} {:>8}", "  ins", pct(r.joint.ins), pct(r.baseline.ins));
    println!("{:<10} {:>8} {:>8}", "  sub", pct(r.joint.sub), pct(r.baseline.sub));
    println!("{:<10} {:>8} {:>8}", "WDER", pct(r.joint.wder), pct(r.baseline.wder));
    println!("eval conversations: {}", r.corpus.eval_conversations.len());
    println!("total time: {:.0}s", out.timing.total_seconds);
    Ok(())
}
