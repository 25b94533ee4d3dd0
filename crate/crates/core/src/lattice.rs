//! Transducer likelihood over the T′×(U+1) alignment lattice.
//!
//! Node `(t, u)` means `t` encoder frames have been consumed and `u` target
//! labels emitted. From a node an alignment either emits blank (moving to
//! `t + 1`) or the next label (moving to `u + 1`). Every alignment ends with
//! the blank emitted at `(T′-1, U)`.

use crate::error::{Error, Result};
use crate::numerics::{log_add, log_softmax_in_place, log_sum_exp_unchecked};

/// Blank occupies a fixed index in every output distribution.
pub const BLANK: usize = 0;

/// Logits for every lattice node, laid out `[t][u][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitLattice {
    time_steps: usize,
    target_len: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

impl LogitLattice {
    pub fn new(
        time_steps: usize,
        target_len: usize,
        vocab_size: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        if time_steps == 0 {
            return Err(Error::usage("lattice needs at least one time step"));
        }
        if vocab_size < 2 {
            return Err(Error::usage("vocabulary must hold blank and one label"));
        }
        if logits.len() != time_steps * (target_len + 1) * vocab_size {
            return Err(Error::usage(format!(
                "logit buffer has {} entries, expected {}x{}x{}",
                logits.len(),
                time_steps,
                target_len + 1,
                vocab_size
            )));
        }
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("logit entry {i}")));
        }
        Ok(Self {
            time_steps,
            target_len,
            vocab_size,
            logits,
        })
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn node(&self, t: usize, u: usize) -> &[f64] {
        let off = (t * (self.target_len + 1) + u) * self.vocab_size;
        &self.logits[off..off + self.vocab_size]
    }

    fn validate_target(&self, target: &[usize]) -> Result<()> {
        if target.len() != self.target_len {
            return Err(Error::usage(format!(
                "target has {} labels but the lattice was built for {}",
                target.len(),
                self.target_len
            )));
        }
        for (i, &y) in target.iter().enumerate() {
            if y == BLANK {
                return Err(Error::usage(format!("blank at target position {i}")));
            }
            if y >= self.vocab_size {
                return Err(Error::usage(format!(
                    "target id {y} at position {i} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// A `T′ × (U+1)` table of log-domain values.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeTable {
    time_steps: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatticeTable {
    fn filled(time_steps: usize, width: usize, v: f64) -> Self {
        Self {
            time_steps,
            width,
            values: vec![v; time_steps * width],
        }
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> f64 {
        self.values[t * self.width + u]
    }

    #[inline]
    fn set(&mut self, t: usize, u: usize, v: f64) {
        self.values[t * self.width + u] = v;
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Label and blank log-probabilities per node plus, once computed, the
/// forward (α) and backward (β) tables.
#[derive(Clone, Debug)]
pub struct LossGrid {
    time_steps: usize,
    target_len: usize,
    /// `log P(target[u] | t, u)`; `-inf` in the `u = U` column.
    label: LatticeTable,
    /// `log P(blank | t, u)`.
    blank: LatticeTable,
    pub alpha: Option<LatticeTable>,
    pub beta: Option<LatticeTable>,
}

impl LossGrid {
    /// Builds a grid directly from per-node log-probabilities, laid out
    /// `[t][u]`; `label` must have `U` columns and `blank` `U + 1`.
    pub fn from_log_probs(
        time_steps: usize,
        target_len: usize,
        label: Vec<f64>,
        blank: Vec<f64>,
    ) -> Result<Self> {
        if time_steps == 0 {
            return Err(Error::usage("lattice needs at least one time step"));
        }
        if label.len() != time_steps * target_len || blank.len() != time_steps * (target_len + 1) {
            return Err(Error::usage("log-probability table sizes do not match the lattice"));
        }
        let w = target_len + 1;
        let mut label_t = LatticeTable::filled(time_steps, w, f64::NEG_INFINITY);
        for t in 0..time_steps {
            for u in 0..target_len {
                label_t.set(t, u, label[t * target_len + u]);
            }
        }
        Ok(Self {
            time_steps,
            target_len,
            label: label_t,
            blank: LatticeTable {
                time_steps,
                width: w,
                values: blank,
            },
            alpha: None,
            beta: None,
        })
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    #[inline]
    pub fn label_logprob(&self, t: usize, u: usize) -> f64 {
        self.label.get(t, u)
    }

    #[inline]
    pub fn blank_logprob(&self, t: usize, u: usize) -> f64 {
        self.blank.get(t, u)
    }

    /// Fills `alpha` and `beta`.
    pub fn compute_tables(&mut self) {
        self.alpha = Some(alpha_table(self));
        self.beta = Some(beta_table(self));
    }
}

/// Log-softmax every node and pick out blank and next-label entries.
pub fn build_loss_grid(logits: &LogitLattice, target: &[usize]) -> Result<LossGrid> {
    logits.validate_target(target)?;
    let (tn, un) = (logits.time_steps, logits.target_len);
    let w = un + 1;
    let mut label = LatticeTable::filled(tn, w, f64::NEG_INFINITY);
    let mut blank = LatticeTable::filled(tn, w, f64::NEG_INFINITY);
    let mut buf = vec![0.0; logits.vocab_size];
    for t in 0..tn {
        for u in 0..w {
            buf.copy_from_slice(logits.node(t, u));
            log_softmax_in_place(&mut buf);
            blank.set(t, u, buf[BLANK]);
            if u < un {
                label.set(t, u, buf[target[u]]);
            }
        }
    }
    Ok(LossGrid {
        time_steps: tn,
        target_len: un,
        label,
        blank,
        alpha: None,
        beta: None,
    })
}

/// α(t,u): log-probability of reaching node (t,u). Evaluated one
/// anti-diagonal `t + u = d` at a time; every entry on a diagonal depends
/// only on the previous one.
pub fn alpha_table(grid: &LossGrid) -> LatticeTable {
    let (tn, un) = (grid.time_steps, grid.target_len);
    let mut alpha = LatticeTable::filled(tn, un + 1, f64::NEG_INFINITY);
    alpha.set(0, 0, 0.0);
    for d in 1..(tn + un) {
        let t_lo = d.saturating_sub(un);
        let t_hi = d.min(tn - 1);
        for t in t_lo..=t_hi {
            let u = d - t;
            let from_time = if t > 0 {
                alpha.get(t - 1, u) + grid.blank.get(t - 1, u)
            } else {
                f64::NEG_INFINITY
            };
            let from_label = if u > 0 {
                alpha.get(t, u - 1) + grid.label.get(t, u - 1)
            } else {
                f64::NEG_INFINITY
            };
            alpha.set(t, u, log_add(from_time, from_label));
        }
    }
    alpha
}

/// β(t,u): log-probability of completing the alignment from node (t,u),
/// including the final blank.
pub fn beta_table(grid: &LossGrid) -> LatticeTable {
    let (tn, un) = (grid.time_steps, grid.target_len);
    let mut beta = LatticeTable::filled(tn, un + 1, f64::NEG_INFINITY);
    beta.set(tn - 1, un, grid.blank.get(tn - 1, un));
    for d in (0..(tn + un - 1)).rev() {
        let t_lo = d.saturating_sub(un);
        let t_hi = d.min(tn - 1);
        for t in t_lo..=t_hi {
            let u = d - t;
            let via_blank = if t + 1 < tn {
                beta.get(t + 1, u) + grid.blank.get(t, u)
            } else {
                f64::NEG_INFINITY
            };
            let via_label = if u < un {
                beta.get(t, u + 1) + grid.label.get(t, u)
            } else {
                f64::NEG_INFINITY
            };
            beta.set(t, u, log_add(via_blank, via_label));
        }
    }
    beta
}

fn ensure_nonempty(grid: &LossGrid) -> Result<()> {
    if grid.time_steps == 0 {
        return Err(Error::usage("lattice has no time steps"));
    }
    Ok(())
}

/// `log P(Y|X)` from the α recursion.
pub fn forward_log_likelihood(grid: &LossGrid) -> Result<f64> {
    ensure_nonempty(grid)?;
    let alpha = match &grid.alpha {
        Some(a) => a.clone(),
        None => alpha_table(grid),
    };
    let (t, u) = (grid.time_steps - 1, grid.target_len);
    Ok(alpha.get(t, u) + grid.blank.get(t, u))
}

/// `log P(Y|X)` from the β recursion.
pub fn backward_log_likelihood(grid: &LossGrid) -> Result<f64> {
    ensure_nonempty(grid)?;
    let beta = match &grid.beta {
        Some(b) => b.clone(),
        None => beta_table(grid),
    };
    Ok(beta.get(0, 0))
}

/// Log-magnitudes below this contribute exactly zero to the gradient.
const NEGLIGIBLE: f64 = -700.0;

/// `exp` that returns 0 instead of a subnormal.
#[inline]
fn flushed_exp(x: f64) -> f64 {
    if x < NEGLIGIBLE {
        0.0
    } else {
        x.exp()
    }
}

/// Result of [`loss_and_logit_gradient`].
#[derive(Clone, Debug)]
pub struct LossAndGradient {
    /// `-log P(Y|X)`.
    pub loss: f64,
    /// `∂loss/∂logits`, same layout as the lattice.
    pub gradient: Vec<f64>,
}

/// Negative log-likelihood and its exact gradient with respect to every logit.
///
/// For node (t,u) with softmax `p`, occupancy `γ = exp(α + β − log P)` and
/// the posterior mass `γ_k` flowing through output `k`, the gradient is
/// `p_k · γ − γ_k`. Nodes whose occupancy is below `e^-700` get a zero row.
pub fn loss_and_logit_gradient(logits: &LogitLattice, target: &[usize]) -> Result<LossAndGradient> {
    let mut grid = build_loss_grid(logits, target)?;
    grid.compute_tables();
    let alpha = grid.alpha.as_ref().expect("computed");
    let beta = grid.beta.as_ref().expect("computed");
    let (tn, un, v) = (grid.time_steps, grid.target_len, logits.vocab_size);
    let log_p = alpha.get(tn - 1, un) + grid.blank.get(tn - 1, un);
    if !log_p.is_finite() {
        return Err(Error::NonFinite(format!(
            "log-likelihood is {log_p}; target unreachable"
        )));
    }
    let mut gradient = vec![0.0; logits.logits.len()];
    let mut probs = vec![0.0; v];
    for t in 0..tn {
        for u in 0..=un {
            let a = alpha.get(t, u);
            let b = beta.get(t, u);
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                continue;
            }
            let log_occupancy = a + b - log_p;
            if log_occupancy < NEGLIGIBLE {
                continue;
            }
            probs.copy_from_slice(logits.node(t, u));
            log_softmax_in_place(&mut probs);
            let off = (t * (un + 1) + u) * v;
            let row = &mut gradient[off..off + v];
            for (g, &lp) in row.iter_mut().zip(&probs) {
                *g = flushed_exp(lp + log_occupancy);
            }
            let blank_next = if t + 1 < tn {
                beta.get(t + 1, u)
            } else if u == un {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            row[BLANK] -= flushed_exp(a + grid.blank.get(t, u) + blank_next - log_p);
            if u < un {
                let k = target[u];
                row[k] -= flushed_exp(a + grid.label.get(t, u) + beta.get(t, u + 1) - log_p);
            }
        }
    }
    Ok(LossAndGradient {
        loss: -log_p,
        gradient,
    })
}

/// Largest lattice accepted by the enumeration oracle.
pub const BRUTE_FORCE_MAX_TIME: usize = 6;
pub const BRUTE_FORCE_MAX_LABELS: usize = 4;

/// Result of the exhaustive alignment enumeration.
#[derive(Clone, Copy, Debug)]
pub struct Enumeration {
    pub log_likelihood: f64,
    pub alignments: usize,
}

/// Sums the probability of every alignment explicitly. Exponential cost;
/// guarded to `T′ ≤ 6`, `U ≤ 4`.
pub fn brute_force_log_likelihood(logits: &LogitLattice, target: &[usize]) -> Result<Enumeration> {
    logits.validate_target(target)?;
    let (tn, un) = (logits.time_steps, logits.target_len);
    if tn > BRUTE_FORCE_MAX_TIME || un > BRUTE_FORCE_MAX_LABELS {
        return Err(Error::usage(format!(
            "enumeration limited to T' <= {BRUTE_FORCE_MAX_TIME} and U <= {BRUTE_FORCE_MAX_LABELS}, got {tn}x{un}"
        )));
    }
    let node_logprobs: Vec<Vec<f64>> = (0..tn * (un + 1))
        .map(|i| {
            let (t, u) = (i / (un + 1), i % (un + 1));
            let mut lp = logits.node(t, u).to_vec();
            log_softmax_in_place(&mut lp);
            lp
        })
        .collect();
    let mut path_scores = Vec::new();
    let mut path = Vec::with_capacity(tn + un);
    enumerate(
        &node_logprobs,
        target,
        (tn, un),
        (0, 0),
        0.0,
        &mut path,
        &mut path_scores,
    );
    Ok(Enumeration {
        log_likelihood: log_sum_exp_unchecked(&path_scores),
        alignments: path_scores.len(),
    })
}

/// Depth-first walk over symbol sequences. `path` holds the symbols chosen
/// so far; a sequence is complete after `T′` blanks.
fn enumerate(
    lp: &[Vec<f64>],
    target: &[usize],
    dims: (usize, usize),
    at: (usize, usize),
    score: f64,
    path: &mut Vec<usize>,
    out: &mut Vec<f64>,
) {
    let (tn, un) = dims;
    let (t, u) = at;
    if t == tn {
        if u == un {
            out.push(score);
        }
        return;
    }
    let node = &lp[t * (un + 1) + u];
    // The last symbol must be blank, so labels are only allowed while labels remain.
    if u < un {
        path.push(target[u]);
        enumerate(lp, target, dims, (t, u + 1), score + node[target[u]], path, out);
        path.pop();
    }
    // A blank at the final frame must come after every label.
    if t + 1 < tn || u == un {
        path.push(BLANK);
        enumerate(lp, target, dims, (t + 1, u), score + node[BLANK], path, out);
        path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(tn: usize, un: usize, v: usize) -> LogitLattice {
        LogitLattice::new(tn, un, v, vec![0.0; tn * (un + 1) * v]).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, tn: usize, un: usize, v: usize) -> (LogitLattice, Vec<usize>) {
        let logits = (0..tn * (un + 1) * v).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let target = (0..un).map(|_| rng.gen_range(1..v)).collect();
        (LogitLattice::new(tn, un, v, logits).unwrap(), target)
    }

    #[test]
    fn uniform_grid_entries() {
        let g = build_loss_grid(&uniform(3, 2, 3), &[1, 2]).unwrap();
        for t in 0..3 {
            for u in 0..3 {
                assert!((g.blank_logprob(t, u) + 3f64.ln()).abs() < 1e-12);
                if u < 2 {
                    assert!((g.label_logprob(t, u) + 3f64.ln()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn saturated_blank() {
        let (tn, un, v) = (2, 1, 3);
        let mut logits = vec![0.0; tn * (un + 1) * v];
        for node in logits.chunks_mut(v) {
            node[BLANK] = 800.0;
        }
        let lat = LogitLattice::new(tn, un, v, logits).unwrap();
        let g = build_loss_grid(&lat, &[2]).unwrap();
        assert!(g.blank_logprob(0, 0).abs() < 1e-12);
        assert!(g.label_logprob(0, 0) < -700.0);
    }

    #[test]
    fn random_grid_mass_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (lat, target) = random(&mut rng, 3, 2, 5);
            let g = build_loss_grid(&lat, &target).unwrap();
            for t in 0..3 {
                for u in 0..2 {
                    let mass = g.label_logprob(t, u).exp() + g.blank_logprob(t, u).exp();
                    assert!(mass <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn target_validation() {
        let lat = uniform(2, 2, 4);
        assert!(matches!(build_loss_grid(&lat, &[1, 0]), Err(Error::Usage(_))));
        assert!(matches!(build_loss_grid(&lat, &[1]), Err(Error::Usage(_))));
        assert!(matches!(build_loss_grid(&lat, &[1, 4]), Err(Error::Usage(_))));
        assert!(LogitLattice::new(0, 0, 3, vec![]).is_err());
    }

    #[test]
    fn single_frame_no_labels() {
        let g = build_loss_grid(&uniform(1, 0, 3), &[]).unwrap();
        let expected = -(3f64.ln());
        assert!((forward_log_likelihood(&g).unwrap() - expected).abs() < 1e-12);
        assert!((backward_log_likelihood(&g).unwrap() - expected).abs() < 1e-12);
        assert!((expected - -1.098612).abs() < 1e-6);
    }

    #[test]
    fn two_frames_one_label() {
        let g = build_loss_grid(&uniform(2, 1, 3), &[1]).unwrap();
        let expected = (2.0f64 / 27.0).ln();
        assert!((forward_log_likelihood(&g).unwrap() - expected).abs() < 1e-12);
        assert!((expected - -2.602690).abs() < 1e-6);
    }

    #[test]
    fn certain_blank_path() {
        for tn in 1..5 {
            let grid = LossGrid::from_log_probs(tn, 0, vec![], vec![0.0; tn]).unwrap();
            assert_eq!(forward_log_likelihood(&grid).unwrap(), 0.0);
            assert_eq!(backward_log_likelihood(&grid).unwrap(), 0.0);
        }
    }

    #[test]
    fn unreachable_target() {
        let (tn, un) = (3, 2);
        let grid = LossGrid::from_log_probs(
            tn,
            un,
            vec![f64::NEG_INFINITY; tn * un],
            vec![-0.5; tn * (un + 1)],
        )
        .unwrap();
        assert_eq!(backward_log_likelihood(&grid).unwrap(), f64::NEG_INFINITY);
        assert_eq!(forward_log_likelihood(&grid).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn alpha_starts_at_zero_and_ends_at_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lat, target) = random(&mut rng, 4, 3, 5);
        let mut g = build_loss_grid(&lat, &target).unwrap();
        g.compute_tables();
        let a = g.alpha.as_ref().unwrap();
        let b = g.beta.as_ref().unwrap();
        assert_eq!(a.get(0, 0), 0.0);
        assert!((a.get(3, 3) + g.blank_logprob(3, 3) - b.get(0, 0)).abs() < 1e-9);
    }

    #[test]
    fn alignment_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lat, t) = random(&mut rng, 2, 1, 3);
        assert_eq!(brute_force_log_likelihood(&lat, &t).unwrap().alignments, 2);
        let (lat, t) = random(&mut rng, 3, 2, 4);
        assert_eq!(brute_force_log_likelihood(&lat, &t).unwrap().alignments, 6);
    }

    #[test]
    fn brute_force_guard() {
        let lat = uniform(7, 1, 3);
        assert!(matches!(brute_force_log_likelihood(&lat, &[1]), Err(Error::Usage(_))));
        let lat = uniform(2, 5, 3);
        assert!(matches!(
            brute_force_log_likelihood(&lat, &[1; 5]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn unreachable_target_is_reported() {
        let (tn, un) = (2, 1);
        let mut grid = LossGrid::from_log_probs(tn, un, vec![f64::NEG_INFINITY; 2], vec![-0.1; 4]).unwrap();
        grid.compute_tables();
        assert_eq!(forward_log_likelihood(&grid).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn gradient_vanishes_at_confident_path() {
        // T' = 2, U = 1: path label at (0,0), blank at (0,1), blank at (1,1).
        let (tn, un, v) = (2, 1, 3);
        let mut logits = vec![0.0; tn * (un + 1) * v];
        let big = 40.0;
        let set = |l: &mut Vec<f64>, t: usize, u: usize, k: usize| {
            l[(t * (un + 1) + u) * v + k] = big;
        };
        set(&mut logits, 0, 0, 2);
        set(&mut logits, 0, 1, BLANK);
        set(&mut logits, 1, 1, BLANK);
        set(&mut logits, 1, 0, 2);
        let lat = LogitLattice::new(tn, un, v, logits).unwrap();
        let r = loss_and_logit_gradient(&lat, &[2]).unwrap();
        assert!(r.loss < 1e-15 + 4.0 * (-big).exp() * 3.0);
        let norm: f64 = r.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-15, "{norm}");
    }

    #[test]
    fn symmetric_uniform_gradient() {
        // Uniform logits with T' = 2, U = 1: the two alignments are
        // (label, blank, blank) and (blank, label, blank). Both have
        // probability 1/27, so nodes (0,1) and (1,0) carry equal occupancy.
        let lat = uniform(2, 1, 3);
        let r = loss_and_logit_gradient(&lat, &[1]).unwrap();
        let row = |t: usize, u: usize| &r.gradient[(t * 2 + u) * 3..(t * 2 + u) * 3 + 3];
        let a = row(0, 1);
        let b = row(1, 0);
        let na: f64 = a.iter().map(|x| x * x).sum();
        let nb: f64 = b.iter().map(|x| x * x).sum();
        assert!((na - nb).abs() < 1e-12);
    }

    fn lattice_strategy() -> impl Strategy<Value = (LogitLattice, Vec<usize>)> {
        (1usize..5, 0usize..4, 2usize..6).prop_flat_map(|(tn, un, v)| {
            (
                prop::collection::vec(-4.0f64..4.0, tn * (un + 1) * v),
                prop::collection::vec(1..v, un),
            )
                .prop_map(move |(l, target)| (LogitLattice::new(tn, un, v, l).unwrap(), target))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn recursions_agree_with_enumeration((lat, target) in lattice_strategy()) {
            let mut g = build_loss_grid(&lat, &target).unwrap();
            let fwd = forward_log_likelihood(&g).unwrap();
            let bwd = backward_log_likelihood(&g).unwrap();
            let brute = brute_force_log_likelihood(&lat, &target).unwrap().log_likelihood;
            prop_assert!((fwd - brute).abs() < 1e-9);
            prop_assert!((fwd - bwd).abs() < 1e-9);
            prop_assert!(fwd <= 1e-12);
            g.compute_tables();
            let (a, b) = (g.alpha.as_ref().unwrap(), g.beta.as_ref().unwrap());
            for u in 0..target.len() {
                let cut = (0..lat.time_steps())
                    .map(|t| a.get(t, u) + g.label_logprob(t, u) + b.get(t, u + 1))
                    .fold(f64::NEG_INFINITY, log_add);
                prop_assert!((cut - fwd).abs() < 1e-8);
            }
        }

        #[test]
        fn gradient_rows_sum_to_zero((lat, target) in lattice_strategy()) {
            let r = loss_and_logit_gradient(&lat, &target).unwrap();
            prop_assert!(r.loss >= -1e-12);
            for row in r.gradient.chunks(lat.vocab_size()) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
                prop_assert!(row.iter().all(|g| g.abs() <= 1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn loss_shift_invariant_per_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (lat, target) = random(&mut rng, 3, 2, 4);
        let base = loss_and_logit_gradient(&lat, &target).unwrap().loss;
        let mut shifted = lat.logits().to_vec();
        for (i, node) in shifted.chunks_mut(4).enumerate() {
            let c = i as f64 * 1.7 - 3.0;
            node.iter_mut().for_each(|x| *x += c);
        }
        let lat2 = LogitLattice::new(3, 2, 4, shifted).unwrap();
        let moved = loss_and_logit_gradient(&lat2, &target).unwrap().loss;
        assert!((base - moved).abs() < 1e-10);
    }
}
