//! Gated recurrent cell built from tape primitives, so it differentiates
//! through time without a dedicated backward rule.

use super::{Scalar, Tape, Tensor, TensorError, Var};

/// Parameters of one LSTM layer; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[4H, D]`
    pub w_ih: Var,
    /// `[4H, H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

impl LstmWeights {
    fn hidden<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.w_hh)[1]
    }
}

/// One time step: returns `(h_next, c_next)`, both `[N, H]`.
pub fn lstm_cell<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    h: Var,
    c: Var,
    w: &LstmWeights,
) -> Result<(Var, Var), TensorError> {
    let hid = w.hidden(tape);
    if tape.shape(w.w_ih)[0] != 4 * hid || tape.shape(w.w_hh)[0] != 4 * hid {
        return Err(TensorError::shape(
            "lstm_cell",
            format!("gate weights with {} rows", 4 * hid),
            (tape.shape(w.w_ih).to_vec(), tape.shape(w.w_hh).to_vec()),
        ));
    }
    let from_input = tape.linear(x, w.w_ih, Some(w.bias))?;
    let from_hidden = tape.linear(h, w.w_hh, None)?;
    let gates = tape.add(from_input, from_hidden)?;
    let i = tape.narrow(gates, 1, 0, hid)?;
    let f = tape.narrow(gates, 1, hid, hid)?;
    let g = tape.narrow(gates, 1, 2 * hid, hid)?;
    let o = tape.narrow(gates, 1, 3 * hid, hid)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Run one layer over `x[N,T,D]` from zero state; returns the hidden sequence `[N,T,H]`.
pub fn lstm_layer<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &LstmWeights) -> Result<Var, TensorError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(TensorError::shape("lstm_layer", "[N, T, D]", s));
    }
    let (n, steps, d) = (s[0], s[1], s[2]);
    if steps == 0 {
        return Err(TensorError::param("lstm_layer", "zero-length sequence"));
    }
    if tape.shape(w.w_ih)[1] != d {
        return Err(TensorError::shape(
            "lstm_layer",
            format!("input weights with {d} columns"),
            tape.shape(w.w_ih),
        ));
    }
    let hid = w.hidden(tape);
    let mut h = tape.constant(Tensor::zeros(&[n, hid]));
    let mut c = tape.constant(Tensor::zeros(&[n, hid]));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = tape.narrow(x, 1, t, 1)?;
        let xt = tape.reshape(xt, &[n, d])?;
        let (h_next, c_next) = lstm_cell(tape, xt, h, c, w)?;
        h = h_next;
        c = c_next;
        outputs.push(tape.reshape(h, &[n, 1, hid])?);
    }
    tape.concat(&outputs, 1)
}

/// Stacked layers; each consumes the previous layer's full hidden sequence.
pub fn lstm_stack<T: Scalar>(tape: &mut Tape<T>, x: Var, layers: &[LstmWeights]) -> Result<Var, TensorError> {
    layers.iter().try_fold(x, |seq, w| lstm_layer(tape, seq, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(tape: &mut Tape<f64>, d: usize, h: usize, fill: f64) -> LstmWeights {
        LstmWeights {
            w_ih: tape.leaf(Tensor::full(&[4 * h, d], fill), true),
            w_hh: tape.leaf(Tensor::full(&[4 * h, h], fill), true),
            bias: tape.leaf(Tensor::full(&[4 * h], fill), true),
        }
    }

    #[test]
    fn zero_weights_and_inputs_give_zero_states() {
        let mut tape = Tape::<f64>::new();
        let w = weights(&mut tape, 3, 2, 0.0);
        let x = tape.constant(Tensor::zeros(&[2, 4, 3]));
        let y = lstm_layer(&mut tape, x, &w).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sequence_shape_contract() {
        let mut tape = Tape::<f32>::new();
        let layers: Vec<LstmWeights> = [124usize, 100]
            .iter()
            .map(|&d| LstmWeights {
                w_ih: tape.leaf(Tensor::zeros(&[400, d]), true),
                w_hh: tape.leaf(Tensor::zeros(&[400, 100]), true),
                bias: tape.leaf(Tensor::zeros(&[400]), true),
            })
            .collect();
        let x = tape.constant(Tensor::zeros(&[2, 32, 124]));
        let y = lstm_stack(&mut tape, x, &layers).unwrap();
        assert_eq!(tape.shape(y), &[2, 32, 100]);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let w = weights(&mut tape, 3, 2, 0.1);
        let x = tape.constant(Tensor::zeros(&[2, 0, 3]));
        assert!(matches!(
            lstm_layer(&mut tape, x, &w),
            Err(TensorError::Parameter { .. })
        ));
    }
}
