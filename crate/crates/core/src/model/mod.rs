//! Transcription (encoder), prediction and joint networks.
//!
//! Encoder blocks are `conv (same padding) → ReLU → max-pool → LSTM stack`.
//! The prediction network embeds the previous non-blank symbol, runs one
//! LSTM and a linear projection; its start state is the projection of an
//! all-zero LSTM state. The joint network is
//! `W_out · tanh(P_enc·h_enc + P_pred·h_pred + b) + b_out`.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::{LogitLattice, BLANK};
use crate::numerics::{
    accumulate_row, apply_gates, fan_in_bound, lstm_sequence_graph, Graph, LstmNodes, LstmState,
    Matrix, NodeId, Real,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LstmSlots {
    input_weights: usize,
    hidden_weights: usize,
    bias: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct BlockSlots {
    conv_kernel: usize,
    conv_bias: usize,
    /// `[layer][direction]`
    lstm: Vec<Vec<LstmSlots>>,
}

/// Parameter indices, derived from the config alone.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    blocks: Vec<BlockSlots>,
    embedding: usize,
    pred_lstm: LstmSlots,
    pred_proj_weights: usize,
    pred_proj_bias: usize,
    joint_enc: usize,
    joint_pred: usize,
    joint_bias: usize,
    out_weights: usize,
    out_bias: usize,
    /// Name, shape and fan-in of every tensor in declaration order.
    specs: Vec<(String, (usize, usize), usize)>,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut specs: Vec<(String, (usize, usize), usize)> = Vec::new();
        let mut add = |name: String, shape: (usize, usize), fan_in: usize| {
            specs.push((name, shape, fan_in));
            specs.len() - 1
        };
        let lstm = |add: &mut dyn FnMut(String, (usize, usize), usize) -> usize,
                    prefix: &str,
                    input: usize,
                    units: usize| {
            let fan = input + units;
            LstmSlots {
                input_weights: add(format!("{prefix}.input_weights"), (input, 4 * units), fan),
                hidden_weights: add(format!("{prefix}.hidden_weights"), (units, 4 * units), fan),
                bias: add(format!("{prefix}.bias"), (1, 4 * units), fan),
            }
        };
        let mut blocks = Vec::new();
        let mut width = c.feature_dim;
        for b in 0..c.num_blocks() {
            let fan = c.conv_kernel * width;
            let conv_kernel = add(format!("encoder.{b}.conv.kernel"), (fan, c.conv_filters), fan);
            let conv_bias = add(format!("encoder.{b}.conv.bias"), (1, c.conv_filters), fan);
            width = c.conv_filters;
            let mut layers = Vec::new();
            for l in 0..c.lstm_layers_per_block {
                let dirs = ["forward", "backward"][..c.directions()]
                    .iter()
                    .map(|d| {
                        lstm(
                            &mut add,
                            &format!("encoder.{b}.lstm.{l}.{d}"),
                            width,
                            c.encoder_lstm_units,
                        )
                    })
                    .collect();
                layers.push(dirs);
                width = c.encoder_output_dim();
            }
            blocks.push(BlockSlots {
                conv_kernel,
                conv_bias,
                lstm: layers,
            });
        }
        let embedding = add(
            "prediction.embedding".into(),
            (c.vocab_size, c.embedding_dim),
            c.embedding_dim,
        );
        let pred_lstm = lstm(&mut add, "prediction.lstm", c.embedding_dim, c.pred_lstm_units);
        let pred_proj_weights = add(
            "prediction.projection.weights".into(),
            (c.pred_lstm_units, c.pred_output_dim),
            c.pred_lstm_units,
        );
        let pred_proj_bias = add(
            "prediction.projection.bias".into(),
            (1, c.pred_output_dim),
            c.pred_lstm_units,
        );
        let enc = c.encoder_output_dim();
        let joint_fan = enc + c.pred_output_dim;
        let joint_enc = add("joint.encoder_projection".into(), (enc, c.joint_dim), joint_fan);
        let joint_pred = add(
            "joint.prediction_projection".into(),
            (c.pred_output_dim, c.joint_dim),
            joint_fan,
        );
        let joint_bias = add("joint.bias".into(), (1, c.joint_dim), joint_fan);
        let out_weights = add(
            "joint.output.weights".into(),
            (c.joint_dim, c.vocab_size),
            c.joint_dim,
        );
        let out_bias = add("joint.output.bias".into(), (1, c.vocab_size), c.joint_dim);
        Self {
            blocks,
            embedding,
            pred_lstm,
            pred_proj_weights,
            pred_proj_bias,
            joint_enc,
            joint_pred,
            joint_bias,
            out_weights,
            out_bias,
            specs,
        }
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Matrix<F>,
}

/// Model parameters plus the configuration that fixes their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    config: ModelConfig,
    seed: u64,
    params: Vec<Parameter<F>>,
    layout: Layout,
}

/// Prediction-network state after consuming a non-blank prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionState<F> {
    pub lstm: LstmState<F>,
    /// `h_pred`, the projected LSTM output.
    pub output: Vec<F>,
    /// `P_pred · h_pred`, cached for the joint network.
    pub joint_input: Vec<F>,
}

/// Per-parameter gradients in declaration order.
pub type ParamGrads<F> = Vec<Matrix<F>>;

/// `init_parameters`: uniform `[-k, k]`, `k = 1/√fan_in`, from a seeded generator.
pub fn init_parameters<F: Real>(config: &ModelConfig, seed: u64) -> Result<Model<F>> {
    Model::init(config.clone(), seed)
}

impl<F: Real> Model<F> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .specs
            .iter()
            .map(|(name, (r, c), fan)| Parameter {
                name: name.clone(),
                value: Matrix::uniform(*r, *c, fan_in_bound(*fan), &mut rng),
            })
            .collect();
        Ok(Self {
            config,
            seed,
            params,
            layout,
        })
    }

    /// Rebuilds a model from tensors, checking names and shapes against the config.
    pub fn from_parameters(config: ModelConfig, seed: u64, params: Vec<Parameter<F>>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.specs.len() {
            return Err(Error::usage(format!(
                "expected {} parameter tensors, found {}",
                layout.specs.len(),
                params.len()
            )));
        }
        for (p, (name, shape, _)) in params.iter().zip(&layout.specs) {
            if &p.name != name || p.value.shape() != *shape {
                return Err(Error::usage(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Self {
            config,
            seed,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameters(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zero-valued gradient buffers shaped like the parameters.
    pub fn zero_grads(&self) -> ParamGrads<F> {
        self.params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect()
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.convert(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    fn p(&self, slot: usize) -> &Matrix<F> {
        &self.params[slot].value
    }

    fn check_frames(&self, frames: &Matrix<F>) -> Result<()> {
        let r = self.config.time_reduction();
        if frames.cols() != self.config.feature_dim {
            return Err(Error::usage(format!(
                "frames have {} features, model expects {}",
                frames.cols(),
                self.config.feature_dim
            )));
        }
        if frames.rows() < r {
            return Err(Error::usage(format!(
                "segment of {} frames is shorter than the time reduction {r}",
                frames.rows()
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        for (i, &t) in tokens.iter().enumerate() {
            if t == BLANK {
                return Err(Error::usage(format!("blank at prefix position {i}")));
            }
            if t >= self.config.vocab_size {
                return Err(Error::usage(format!(
                    "token {t} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    fn register(&self, g: &mut Graph<F>) -> Vec<NodeId> {
        self.params.iter().map(|p| g.leaf(p.value.clone())).collect()
    }

    fn lstm_nodes(nodes: &[NodeId], s: LstmSlots) -> LstmNodes {
        LstmNodes {
            input_weights: nodes[s.input_weights],
            hidden_weights: nodes[s.hidden_weights],
            bias: nodes[s.bias],
        }
    }

    fn encode_graph(&self, g: &mut Graph<F>, nodes: &[NodeId], frames: NodeId) -> Result<NodeId> {
        let mut x = frames;
        for (block, &pool) in self.layout.blocks.iter().zip(&self.config.pool_sizes) {
            let cols = g.im2col(x, self.config.conv_kernel)?;
            let conv = g.matmul(cols, nodes[block.conv_kernel])?;
            let conv = g.add_row(conv, nodes[block.conv_bias])?;
            let act = g.relu(conv);
            x = g.max_pool(act, pool)?;
            for layer in &block.lstm {
                let fwd = lstm_sequence_graph(g, &Self::lstm_nodes(nodes, layer[0]), x, false)?;
                x = if let Some(&bwd_slots) = layer.get(1) {
                    let bwd = lstm_sequence_graph(g, &Self::lstm_nodes(nodes, bwd_slots), x, true)?;
                    g.concat_cols(&[fwd, bwd])?
                } else {
                    fwd
                };
            }
        }
        Ok(x)
    }

    /// (U+1)×P prediction outputs for every prefix of `target`.
    fn predict_graph(&self, g: &mut Graph<F>, nodes: &[NodeId], target: &[usize]) -> Result<NodeId> {
        let l = &self.layout;
        let units = self.config.pred_lstm_units;
        let start = g.leaf(Matrix::zeros(1, units));
        let hidden = if target.is_empty() {
            start
        } else {
            let emb = g.gather(nodes[l.embedding], target)?;
            let seq = lstm_sequence_graph(g, &Self::lstm_nodes(nodes, l.pred_lstm), emb, false)?;
            g.concat_rows(&[start, seq])?
        };
        let proj = g.matmul(hidden, nodes[l.pred_proj_weights])?;
        g.add_row(proj, nodes[l.pred_proj_bias])
    }

    fn lattice_graph(
        &self,
        g: &mut Graph<F>,
        nodes: &[NodeId],
        frames: &Matrix<F>,
        target: &[usize],
    ) -> Result<NodeId> {
        self.check_frames(frames)?;
        self.check_tokens(target)?;
        let l = &self.layout;
        let x = g.leaf(frames.clone());
        let enc = self.encode_graph(g, nodes, x)?;
        let pred = self.predict_graph(g, nodes, target)?;
        let enc_p = g.matmul(enc, nodes[l.joint_enc])?;
        let pred_p = g.matmul(pred, nodes[l.joint_pred])?;
        let sum = g.outer_add(enc_p, pred_p)?;
        let sum = g.add_row(sum, nodes[l.joint_bias])?;
        let hidden = g.tanh(sum);
        let out = g.matmul(hidden, nodes[l.out_weights])?;
        g.add_row(out, nodes[l.out_bias])
    }

    /// `encode`: T×d frames → T′×H encoder states.
    pub fn encode(&self, frames: &Matrix<F>) -> Result<Matrix<F>> {
        self.check_frames(frames)?;
        let mut g = Graph::new();
        let nodes = self.register(&mut g);
        let x = g.leaf(frames.clone());
        let enc = self.encode_graph(&mut g, &nodes, x)?;
        Ok(g.value(enc).clone())
    }

    /// Prediction state for the empty prefix.
    pub fn prediction_start(&self) -> PredictionState<F> {
        self.prediction_output(LstmState::zeros(self.config.pred_lstm_units))
    }

    fn prediction_output(&self, lstm: LstmState<F>) -> PredictionState<F> {
        let l = &self.layout;
        let mut output = self.p(l.pred_proj_bias).row(0).to_vec();
        accumulate_row(&mut output, &lstm.hidden, self.p(l.pred_proj_weights));
        let mut joint_input = vec![F::zero(); self.config.joint_dim];
        accumulate_row(&mut joint_input, &output, self.p(l.joint_pred));
        PredictionState {
            lstm,
            output,
            joint_input,
        }
    }

    /// Advances the prediction network by one non-blank token.
    pub fn prediction_step(&self, state: &PredictionState<F>, token: usize) -> Result<PredictionState<F>> {
        self.check_tokens(&[token])?;
        let l = &self.layout;
        let s = l.pred_lstm;
        let mut gates = self.p(s.bias).row(0).to_vec();
        accumulate_row(&mut gates, self.p(l.embedding).row(token), self.p(s.input_weights));
        accumulate_row(&mut gates, &state.lstm.hidden, self.p(s.hidden_weights));
        Ok(self.prediction_output(apply_gates(&gates, &state.lstm.cell)))
    }

    /// `predict`: `h_pred` for a non-blank prefix.
    pub fn predict(&self, prefix: &[usize]) -> Result<Vec<F>> {
        self.check_tokens(prefix)?;
        let mut state = self.prediction_start();
        for &t in prefix {
            state = self.prediction_step(&state, t)?;
        }
        Ok(state.output)
    }

    /// `P_enc · h_enc` for every encoder state.
    pub fn project_encoder(&self, enc: &Matrix<F>) -> Result<Matrix<F>> {
        enc.matmul(self.p(self.layout.joint_enc))
    }

    /// Logits from a projected encoder row and a prediction state.
    pub fn join_projected(&self, enc_proj: &[F], pred: &PredictionState<F>) -> Vec<F> {
        let l = &self.layout;
        let hidden: Vec<F> = enc_proj
            .iter()
            .zip(&pred.joint_input)
            .zip(self.p(l.joint_bias).row(0))
            .map(|((&a, &b), &c)| (a + b + c).tanh())
            .collect();
        let mut out = self.p(l.out_bias).row(0).to_vec();
        accumulate_row(&mut out, &hidden, self.p(l.out_weights));
        out
    }

    /// `join`: logits of length |Ȳ| for one encoder and one prediction vector.
    pub fn join(&self, h_enc: &[F], h_pred: &[F]) -> Result<Vec<F>> {
        let l = &self.layout;
        if h_enc.len() != self.config.encoder_output_dim() || h_pred.len() != self.config.pred_output_dim {
            return Err(Error::usage(format!(
                "join expects {}+{} inputs, got {}+{}",
                self.config.encoder_output_dim(),
                self.config.pred_output_dim,
                h_enc.len(),
                h_pred.len()
            )));
        }
        let mut enc_proj = vec![F::zero(); self.config.joint_dim];
        accumulate_row(&mut enc_proj, h_enc, self.p(l.joint_enc));
        let mut joint_input = vec![F::zero(); self.config.joint_dim];
        accumulate_row(&mut joint_input, h_pred, self.p(l.joint_pred));
        let state = PredictionState {
            lstm: LstmState::zeros(0),
            output: h_pred.to_vec(),
            joint_input,
        };
        Ok(self.join_projected(&enc_proj, &state))
    }

    /// Logits for every (t, u) node.
    pub fn forward_logit_lattice(&self, frames: &Matrix<F>, target: &[usize]) -> Result<LogitLattice> {
        let mut g = Graph::new();
        let nodes = self.register(&mut g);
        let out = self.lattice_graph(&mut g, &nodes, frames, target)?;
        let t_enc = self.config.encoded_len(frames.rows());
        let logits = g.value(out).data().iter().map(|x| x.as_f64()).collect();
        LogitLattice::new(t_enc, target.len(), self.config.vocab_size, logits)
    }

    /// Transducer loss for one utterance and its gradient for every parameter.
    pub fn loss_and_gradients(&self, frames: &Matrix<F>, target: &[usize]) -> Result<(f64, ParamGrads<F>)> {
        let mut g = Graph::new();
        let nodes = self.register(&mut g);
        let out = self.lattice_graph(&mut g, &nodes, frames, target)?;
        let t_enc = self.config.encoded_len(frames.rows());
        let (rows, cols) = g.shape(out);
        let logits = g.value(out).data().iter().map(|x| x.as_f64()).collect();
        let lattice = LogitLattice::new(t_enc, target.len(), self.config.vocab_size, logits)?;
        let lg = crate::lattice::loss_and_logit_gradient(&lattice, target)?;
        let seed = Matrix::from_vec(rows, cols, lg.gradient.iter().map(|&x| F::lit_flushed(x)).collect())?;
        let mut grads = g.backward(vec![(out, seed)])?;
        let param_grads = nodes
            .iter()
            .zip(&self.params)
            .map(|(&id, p)| {
                grads
                    .take(id)
                    .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
            })
            .collect();
        Ok((lg.loss, param_grads))
    }

    /// Loss only.
    pub fn loss(&self, frames: &Matrix<F>, target: &[usize]) -> Result<f64> {
        let lattice = self.forward_logit_lattice(frames, target)?;
        let grid = crate::lattice::build_loss_grid(&lattice, target)?;
        Ok(-crate::lattice::forward_log_likelihood(&grid)?)
    }
}

/// Numeric precision of a stored or running model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (f32 or f64)"))),
        }
    }
}

/// A model at either precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl AnyModel {
    pub fn init(config: ModelConfig, seed: u64, precision: Precision) -> Result<Self> {
        Ok(match precision {
            Precision::F32 => AnyModel::F32(Model::init(config, seed)?),
            Precision::F64 => AnyModel::F64(Model::init(config, seed)?),
        })
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyModel::F32(_) => Precision::F32,
            AnyModel::F64(_) => Precision::F64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::F32(m) => m.config(),
            AnyModel::F64(m) => m.config(),
        }
    }

    pub fn to_f64(&self) -> Model<f64> {
        match self {
            AnyModel::F32(m) => m.cast(),
            AnyModel::F64(m) => m.clone(),
        }
    }
}
