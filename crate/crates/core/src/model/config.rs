use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the transcription, prediction and joint networks.
///
/// Defaults are desk scale. The widths reported for the original system
/// (512-filter convolutions, 512-unit bidirectional LSTMs, a 1024-unit
/// prediction LSTM, three blocks of three LSTM layers, 80-dim features)
/// are all expressible here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    /// Max-pool size of each encoder block; the number of blocks is its length.
    pub pool_sizes: Vec<usize>,
    pub lstm_layers_per_block: usize,
    pub encoder_lstm_units: usize,
    pub bidirectional: bool,
    pub embedding_dim: usize,
    pub pred_lstm_units: usize,
    /// Width of the fully connected layer after the prediction LSTM.
    pub pred_output_dim: usize,
    pub joint_dim: usize,
    /// Output symbols including blank.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            conv_filters: 64,
            conv_kernel: 5,
            pool_sizes: vec![2, 2],
            lstm_layers_per_block: 1,
            encoder_lstm_units: 64,
            bidirectional: true,
            embedding_dim: 32,
            pred_lstm_units: 64,
            pred_output_dim: 64,
            joint_dim: 64,
            vocab_size: 40,
        }
    }
}

impl ModelConfig {
    /// Production-size widths over 80-dim features with three pooling blocks.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            feature_dim: 80,
            conv_filters: 512,
            conv_kernel: 5,
            pool_sizes: vec![2, 2, 2],
            lstm_layers_per_block: 3,
            encoder_lstm_units: 512,
            bidirectional: true,
            embedding_dim: 512,
            pred_lstm_units: 1024,
            pred_output_dim: 512,
            joint_dim: 512,
            vocab_size,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.pool_sizes.len()
    }

    /// Input frames per encoder state.
    pub fn time_reduction(&self) -> usize {
        self.pool_sizes.iter().product()
    }

    pub fn encoder_output_dim(&self) -> usize {
        self.encoder_lstm_units * self.directions()
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Number of encoder states produced for `frames` input frames.
    pub fn encoded_len(&self, frames: usize) -> usize {
        self.pool_sizes.iter().fold(frames, |t, &p| t / p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("lstm_layers_per_block", self.lstm_layers_per_block),
            ("encoder_lstm_units", self.encoder_lstm_units),
            ("embedding_dim", self.embedding_dim),
            ("pred_lstm_units", self.pred_lstm_units),
            ("pred_output_dim", self.pred_output_dim),
            ("joint_dim", self.joint_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.pool_sizes.is_empty() {
            return Err(Error::Config("model.pool_sizes needs at least one block".into()));
        }
        if self.pool_sizes.contains(&0) {
            return Err(Error::Config("model.pool_sizes entries must be positive".into()));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config(format!(
                "model.vocab_size is {}; need blank plus at least one word unit and one role",
                self.vocab_size
            )));
        }
        Ok(())
    }
}
