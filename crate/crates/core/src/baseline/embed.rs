use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SpeechSegment;
use crate::error::{Error, Result};
use crate::numerics::{fan_in_bound, lstm_sequence_graph, Graph, LstmNodes, Matrix};
use crate::optim::{Adam, AdamConfig};

/// Unit-norm window embeddings of one stretch of audio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTrack {
    pub embeddings: Vec<Vec<f64>>,
    /// Center frame of each window.
    pub centers: Vec<usize>,
    pub window: usize,
    pub stride: usize,
    /// Frames `[start, end)` the track describes.
    pub extent: (usize, usize),
}

pub fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        for x in v.iter_mut() {
            *x /= n;
        }
    } else {
        let u = 1.0 / (v.len() as f64).sqrt();
        v.iter_mut().for_each(|x| *x = u);
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Normalized mean frame of the window.
    #[default]
    WindowMean,
    /// Final hidden state of an LSTM trained to classify speakers.
    Lstm,
}

/// Maps a run of frames to a unit-norm vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedder {
    WindowMean,
    Lstm(SpeakerEncoder),
}

impl Embedder {
    pub fn embed(&self, frames: &Matrix<f32>, start: usize, end: usize) -> Vec<f64> {
        let mut v = match self {
            Embedder::WindowMean => {
                let mut acc = vec![0.0; frames.cols()];
                for t in start..end {
                    for (a, &x) in acc.iter_mut().zip(frames.row(t)) {
                        *a += f64::from(x);
                    }
                }
                acc
            }
            Embedder::Lstm(enc) => enc.hidden(frames, start, end),
        };
        normalize(&mut v);
        v
    }
}

/// `embed_windows`: windows of `window` frames every `stride` frames.
pub fn embed_windows(frames: &Matrix<f32>, embedder: &Embedder, window: usize, stride: usize) -> Result<EmbeddingTrack> {
    if window == 0 || stride == 0 {
        return Err(Error::usage("window and stride must be positive"));
    }
    if frames.rows() < window {
        return Err(Error::usage(format!(
            "{} frames are fewer than one {window}-frame window",
            frames.rows()
        )));
    }
    Ok(windows_over(frames, embedder, SpeechSegment { start: 0, end: frames.rows() }, window, stride))
}

/// Windows inside one speech segment; a segment shorter than the window gets
/// a single embedding over all of it.
pub fn embed_segment(frames: &Matrix<f32>, embedder: &Embedder, seg: SpeechSegment, window: usize, stride: usize) -> EmbeddingTrack {
    windows_over(frames, embedder, seg, window.max(1), stride.max(1))
}

fn windows_over(frames: &Matrix<f32>, embedder: &Embedder, seg: SpeechSegment, window: usize, stride: usize) -> EmbeddingTrack {
    let mut embeddings = Vec::new();
    let mut centers = Vec::new();
    if seg.len() < window {
        embeddings.push(embedder.embed(frames, seg.start, seg.end));
        centers.push(seg.start + seg.len() / 2);
    } else {
        let n = (seg.len() - window) / stride + 1;
        for i in 0..n {
            let s = seg.start + i * stride;
            embeddings.push(embedder.embed(frames, s, s + window));
            centers.push(s + window / 2);
        }
    }
    EmbeddingTrack {
        embeddings,
        centers,
        window,
        stride,
        extent: (seg.start, seg.end),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeakerEncoderConfig {
    pub units: usize,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for SpeakerEncoderConfig {
    fn default() -> Self {
        Self {
            units: 32,
            steps: 300,
            batch: 16,
            learning_rate: 3e-3,
        }
    }
}

/// LSTM speaker encoder with the classification head kept for training.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEncoder {
    params: Vec<Matrix<f64>>,
}

const IW: usize = 0;
const HW: usize = 1;
const B: usize = 2;
const CW: usize = 3;
const CB: usize = 4;

impl SpeakerEncoder {
    fn init(input: usize, units: usize, speakers: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = fan_in_bound(input + units);
        let kc = fan_in_bound(units);
        Self {
            params: vec![
                Matrix::uniform(input, 4 * units, k, rng),
                Matrix::uniform(units, 4 * units, k, rng),
                Matrix::uniform(1, 4 * units, k, rng),
                Matrix::uniform(units, speakers, kc, rng),
                Matrix::uniform(1, speakers, kc, rng),
            ],
        }
    }

    fn forward(&self, g: &mut Graph<f64>, frames: &Matrix<f32>, start: usize, end: usize) -> Result<(Vec<crate::numerics::NodeId>, crate::numerics::NodeId)> {
        let ids: Vec<_> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let cols = frames.cols();
        let x = Matrix::from_vec(
            end - start,
            cols,
            frames.data()[start * cols..end * cols].iter().map(|&v| f64::from(v)).collect(),
        )?;
        let x = g.leaf(x);
        let nodes = LstmNodes {
            input_weights: ids[IW],
            hidden_weights: ids[HW],
            bias: ids[B],
        };
        let seq = lstm_sequence_graph(g, &nodes, x, false)?;
        let last = g.slice_rows(seq, end - start - 1, end - start)?;
        Ok((ids, last))
    }

    fn hidden(&self, frames: &Matrix<f32>, start: usize, end: usize) -> Vec<f64> {
        let mut g = Graph::new();
        match self.forward(&mut g, frames, start, end) {
            Ok((_, last)) => g.value(last).data().to_vec(),
            Err(_) => vec![0.0; self.params[HW].rows()],
        }
    }

    /// Trains on `(frames, [start, end), speaker index)` windows.
    pub fn train(
        windows: &[(&Matrix<f32>, usize, usize, usize)],
        speakers: usize,
        config: &SpeakerEncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::usage("no speaker windows to train on"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Self::init(first.0.cols(), config.units, speakers, &mut rng);
        let mut opt = Adam::new(AdamConfig::default(), enc.params.iter().map(Matrix::shape));
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        let mut cursor = 0;
        for _ in 0..config.steps {
            let mut grads: Vec<Matrix<f64>> = enc.params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            for _ in 0..config.batch {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let (frames, s, e, label) = windows[order[cursor]];
                cursor += 1;
                let mut g = Graph::new();
                let (ids, last) = enc.forward(&mut g, frames, s, e)?;
                let logits = g.matmul(last, ids[CW])?;
                let logits = g.add_row(logits, ids[CB])?;
                let lp = g.log_softmax(logits);
                let mut seed_grad = Matrix::zeros(1, speakers);
                seed_grad.set(0, label, -1.0 / config.batch as f64);
                let gr = g.backward(vec![(lp, seed_grad)])?;
                for (acc, &id) in grads.iter_mut().zip(&ids) {
                    acc.add_assign(&gr.get(id));
                }
            }
            crate::optim::clip_global_norm(&mut grads, 5.0);
            opt.step(enc.params.iter_mut(), &grads, config.learning_rate);
        }
        Ok(enc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn window_count() {
        let m = Matrix::filled(300, 3, 1.0f32);
        let t = embed_windows(&m, &Embedder::WindowMean, 100, 10).unwrap();
        assert_eq!(t.embeddings.len(), 21);
        assert!(t.centers.windows(2).all(|w| w[0] < w[1]));
        assert!(embed_windows(&m, &Embedder::WindowMean, 301, 10).is_err());
    }

    #[test]
    fn constant_input_gives_identical_unit_embeddings() {
        let m = Matrix::filled(50, 4, 0.7f32);
        let t = embed_windows(&m, &Embedder::WindowMean, 10, 3).unwrap();
        for e in &t.embeddings {
            assert_eq!(e, &t.embeddings[0]);
            assert!((e.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn short_segment_single_window() {
        let m = Matrix::filled(50, 2, 1.0f32);
        let t = embed_segment(&m, &Embedder::WindowMean, SpeechSegment { start: 5, end: 9 }, 10, 2);
        assert_eq!(t.embeddings.len(), 1);
        assert_eq!(t.extent, (5, 9));
    }

    #[test]
    fn lstm_encoder_separates_speakers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let offsets = [[2.0f32, 0.0, -1.0], [-1.0, 2.0, 0.5]];
        let mut data = Vec::new();
        for spk in 0..2 {
            for _ in 0..40 {
                for o in offsets[spk] {
                    data.push(o + rng.gen_range(-0.5f32..0.5));
                }
            }
        }
        let m = Matrix::from_vec(80, 3, data).unwrap();
        let windows: Vec<_> = (0..8).map(|i| (&m, i * 10, i * 10 + 8, i / 4)).collect();
        let cfg = SpeakerEncoderConfig {
            units: 6,
            steps: 60,
            batch: 4,
            learning_rate: 1e-2,
        };
        let enc = Embedder::Lstm(SpeakerEncoder::train(&windows, 2, &cfg, 1).unwrap());
        let a = enc.embed(&m, 0, 8);
        let b = enc.embed(&m, 12, 20);
        let c = enc.embed(&m, 50, 58);
        assert!(cosine_distance(&a, &b) < cosine_distance(&a, &c));
    }
}
