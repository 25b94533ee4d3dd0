//! The acoustic diarization baseline on one synthetic conversation: speech
//! detection, window embeddings, change detection, clustering, overlap
//! reconciliation and label→role mapping. Reference words with their true
//! timings stand in for recognizer output, so every role error comes from
//! the diarization.
//!
//! ```text
//! cargo run --release --example baseline_pipeline -- [threshold] [seed]
//! ```

use rnnt_diar::baseline::{
    diarize, embed_conversation, label_words, speech_energy_percentile, BaselineConfig, Embedder,
};
use rnnt_diar::corpus::{Generator, GeneratorConfig};
use rnnt_diar::metrics::wder;
use rnnt_diar::vocab::{default_roles, DecoratedTranscript, DecoratedWord, Role};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let threshold: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.02);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);

    let config = GeneratorConfig::compact();
    let generator = Generator::new(config.clone())?;
    let calibration = generator.corpus("cal", 5, 100);
    let conv = generator.conversation("demo", seed);

    let reference = DecoratedTranscript {
        words: conv
            .turns
            .iter()
            .flat_map(|t| {
                t.words.iter().zip(&t.word_spans).map(|(w, &span)| DecoratedWord {
                    word: w.clone(),
                    role: t.role.clone(),
                    span: Some(span),
                })
            })
            .collect(),
    };
    let words = reference.map_roles(|_| Role::unknown());

    let baseline = BaselineConfig::default();
    let (window, stride) = baseline.window_frames(config.frame_ms);
    let mut vad = baseline.vad.clone();
    vad.threshold = speech_energy_percentile(calibration.iter().map(|c| (&c.frames, c.speech_mask.clone())), 1.0)?;

    let embedded = embed_conversation(&conv.frames, &Embedder::WindowMean, &vad, window, stride);
    let d = diarize(&embedded, threshold, baseline.clusters, baseline.kmeans_iters, baseline.seed);
    println!(
        "{} turns, {} frames; detector threshold {:.2}, window {window} stride {stride}",
        conv.turns.len(),
        conv.frames.rows(),
        vad.threshold
    );
    println!("{} speech regions, {} change points, {} segments", d.speech.len(), d.change_points.len(), d.segments.len());

    let result = label_words(&words, d, &reference, &default_roles());
    let (rate, counts) = wder(&reference, &result.mapped);
    println!("WDER {:.1}% ({} of {} words on the wrong role)", 100.0 * rate.unwrap_or(0.0), counts.errors(), reference.len());
    for (r, h) in reference.words.iter().zip(&result.mapped.words).take(20) {
        println!("  {:<12} ref {:<9} hyp {}", r.word, r.role.to_string(), h.role);
    }
    Ok(())
}
