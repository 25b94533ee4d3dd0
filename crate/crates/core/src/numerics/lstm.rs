//! LSTM cell with input, forget, output and candidate gates (in that
//! column order inside the packed weight matrices).

use rand::Rng;

use super::graph::{sigmoid, Graph, NodeId};
use super::{fan_in_bound, Matrix, Real};
use crate::error::{Error, Result};

/// Packed gate weights: `input_weights` is in×4H, `hidden_weights` H×4H, `bias` 1×4H.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<F> {
    pub input_weights: Matrix<F>,
    pub hidden_weights: Matrix<F>,
    pub bias: Matrix<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<F> {
    pub hidden: Vec<F>,
    pub cell: Vec<F>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros(units: usize) -> Self {
        Self {
            hidden: vec![F::zero(); units],
            cell: vec![F::zero(); units],
        }
    }
}

impl<F: Real> LstmParams<F> {
    pub fn zeros(input: usize, units: usize) -> Self {
        Self {
            input_weights: Matrix::zeros(input, 4 * units),
            hidden_weights: Matrix::zeros(units, 4 * units),
            bias: Matrix::zeros(1, 4 * units),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, units: usize, rng: &mut R) -> Self {
        let k = fan_in_bound(input + units);
        Self {
            input_weights: Matrix::uniform(input, 4 * units, k, rng),
            hidden_weights: Matrix::uniform(units, 4 * units, k, rng),
            bias: Matrix::uniform(1, 4 * units, k, rng),
        }
    }

    pub fn units(&self) -> usize {
        self.hidden_weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.rows()
    }

    fn validate(&self) -> Result<()> {
        let h = self.units();
        if self.hidden_weights.cols() != 4 * h
            || self.input_weights.cols() != 4 * h
            || self.bias.shape() != (1, 4 * h)
        {
            return Err(Error::usage("inconsistent LSTM parameter shapes"));
        }
        Ok(())
    }
}

/// One LSTM step as a pure function.
pub fn lstm_step<F: Real>(
    params: &LstmParams<F>,
    input: &[F],
    state: &LstmState<F>,
) -> Result<LstmState<F>> {
    params.validate()?;
    let h = params.units();
    if input.len() != params.input_dim() || state.hidden.len() != h || state.cell.len() != h {
        return Err(Error::usage(format!(
            "lstm_step dimension mismatch: input {} (want {}), state {}/{} (want {h})",
            input.len(),
            params.input_dim(),
            state.hidden.len(),
            state.cell.len()
        )));
    }
    let mut gates = params.bias.row(0).to_vec();
    accumulate_row(&mut gates, input, &params.input_weights);
    accumulate_row(&mut gates, &state.hidden, &params.hidden_weights);
    Ok(apply_gates(&gates, &state.cell))
}

/// `out += v · W` for a row vector `v`.
pub(crate) fn accumulate_row<F: Real>(out: &mut [F], v: &[F], w: &Matrix<F>) {
    for (p, &x) in v.iter().enumerate() {
        if x == F::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(p)) {
            *o += x * wv;
        }
    }
}

pub(crate) fn apply_gates<F: Real>(gates: &[F], cell: &[F]) -> LstmState<F> {
    let h = cell.len();
    let mut next = LstmState::zeros(h);
    for j in 0..h {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[h + j]);
        let o = sigmoid(gates[2 * h + j]);
        let g = gates[3 * h + j].tanh();
        let c = f * cell[j] + i * g;
        next.cell[j] = c;
        next.hidden[j] = o * c.tanh();
    }
    next
}

/// Parameter nodes of an LSTM registered in a graph.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub input_weights: NodeId,
    pub hidden_weights: NodeId,
    pub bias: NodeId,
}

/// One differentiable step. `gate_input` is the 1×4H row `x·Wx + b`;
/// `prev` is `None` for the zero initial state.
pub fn lstm_step_graph<F: Real>(
    g: &mut Graph<F>,
    nodes: &LstmNodes,
    gate_input: NodeId,
    prev: Option<(NodeId, NodeId)>,
) -> Result<(NodeId, NodeId)> {
    let h = g.shape(nodes.hidden_weights).0;
    let gates = match prev {
        Some((hidden, _)) => {
            let rec = g.matmul(hidden, nodes.hidden_weights)?;
            g.add(gate_input, rec)?
        }
        None => gate_input,
    };
    let i_pre = g.slice_cols(gates, 0, h)?;
    let i = g.sigmoid(i_pre);
    let o_pre = g.slice_cols(gates, 2 * h, 3 * h)?;
    let o = g.sigmoid(o_pre);
    let c_pre = g.slice_cols(gates, 3 * h, 4 * h)?;
    let cand = g.tanh(c_pre);
    let ic = g.mul(i, cand)?;
    let cell = match prev {
        Some((_, c_prev)) => {
            let f_pre = g.slice_cols(gates, h, 2 * h)?;
            let f = g.sigmoid(f_pre);
            let fc = g.mul(f, c_prev)?;
            g.add(fc, ic)?
        }
        None => ic,
    };
    let ct = g.tanh(cell);
    let hidden = g.mul(o, ct)?;
    Ok((hidden, cell))
}

/// Runs an LSTM over the rows of `inputs` (T×in), returning the T×H hidden
/// sequence in input order. `reverse` processes time backwards.
pub fn lstm_sequence_graph<F: Real>(
    g: &mut Graph<F>,
    nodes: &LstmNodes,
    inputs: NodeId,
    reverse: bool,
) -> Result<NodeId> {
    let t_len = g.shape(inputs).0;
    if t_len == 0 {
        return Err(Error::usage("LSTM over an empty sequence"));
    }
    let projected = g.matmul(inputs, nodes.input_weights)?;
    let gate_inputs = g.add_row(projected, nodes.bias)?;
    let mut outputs = vec![None; t_len];
    let mut prev = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let row = g.slice_rows(gate_inputs, t, t + 1)?;
        let state = lstm_step_graph(g, nodes, row, prev)?;
        outputs[t] = Some(state.0);
        prev = Some(state);
    }
    let outputs: Vec<NodeId> = outputs.into_iter().map(|o| o.expect("filled")).collect();
    g.concat_rows(&outputs)
}
