use super::{Graph, Scalar, Var};
use crate::error::{Error, Result};

/// Graph handles for one LSTM cell: input weights `[in, 4h]`, recurrent
/// weights `[h, 4h]` and bias `[4h]`, gates packed as (input, forget,
/// candidate, output).
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// One LSTM step on a batch: returns `(h, c)`.
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: LstmWeights,
) -> Result<(Var, Var)> {
    let hidden = g.value(h_prev).rows_cols().1;
    let (_, four_h) = g.value(w.wh).rows_cols();
    if four_h != 4 * hidden || g.value(c_prev).shape() != g.value(h_prev).shape() {
        return Err(Error::Shape {
            op: "lstm_cell",
            lhs: g.value(h_prev).shape().to_vec(),
            rhs: g.value(w.wh).shape().to_vec(),
        });
    }
    let zx = g.matmul(x, w.wx)?;
    let zh = g.matmul(h_prev, w.wh)?;
    let z = g.add(zx, zh)?;
    let z = g.bias_add(z, w.b)?;
    let gate = |g: &mut Graph<'_, T>, k: usize| g.slice_cols(z, k * hidden, (k + 1) * hidden);
    let i = gate(g, 0)?;
    let f = gate(g, 1)?;
    let cand = gate(g, 2)?;
    let o = gate(g, 3)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}
