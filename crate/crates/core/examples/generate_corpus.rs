//! Generates synthetic conversations, cuts them into capped segments and
//! reports turn statistics. With an output directory it also writes a
//! physician-disjoint train/dev/eval corpus.
//!
//! ```text
//! cargo run --release --example generate_corpus -- [conversations] [out_dir]
//! ```

use std::path::PathBuf;

use rnnt_diar::corpus::{segment_conversation, FrameStorage, Generator, GeneratorConfig};
use rnnt_diar::harness::{prepare_data, DataConfig};
use rnnt_diar::vocab::Role;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let out = args.next().map(PathBuf::from);

    let config = GeneratorConfig::default();
    let generator = Generator::new(config.clone())?;
    println!("physician words: {}", generator.role_lexicon(&Role::physician()).join(" "));
    println!("patient words:   {}", generator.role_lexicon(&Role::patient()).join(" "));

    let (mut segments, mut turns, mut fallbacks, mut longest) = (0, 0, 0, 0);
    for conv in generator.corpus("demo", count, 1) {
        for u in segment_conversation(&conv, config.max_segment_frames)? {
            segments += 1;
            turns += u.turns.len();
            fallbacks += usize::from(u.fallback_split);
            longest = longest.max(u.num_frames());
        }
    }
    println!(
        "{count} conversations -> {segments} segments, {:.2} turns per segment, longest {longest} frames (cap {}), {fallbacks} fallback splits",
        turns as f64 / segments as f64,
        config.max_segment_frames
    );

    if let Some(dir) = out {
        let data = DataConfig {
            conversations: count,
            ..DataConfig::default()
        };
        let prepared = prepare_data(&GeneratorConfig::compact(), &data)?;
        prepared.save(&dir, FrameStorage::Blob)?;
        println!(
            "wrote {} / {} / {} segments and {} tokens to {}",
            prepared.split.train.len(),
            prepared.split.dev.len(),
            prepared.split.eval.len(),
            prepared.vocab.len(),
            dir.display()
        );
    }
    Ok(())
}
