use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

/// Parameters of one LSTM direction: a fused gate matrix `[d + h, 4h]` over
/// `[x, h_prev]` and a bias `[1, 4h]`, gate order input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Uniform(−1/√h, 1/√h) weights, zero bias except +1 on the forget gate.
    pub fn init<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = ps.insert(
            format!("{prefix}.w"),
            Tensor::uniform(&[input + hidden, 4 * hidden], bound, rng),
            true,
        );
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = ps.insert(format!("{prefix}.b"), Tensor::row(bias), true);
        LstmParams {
            w,
            b,
            input,
            hidden,
        }
    }

    /// Looks up an already-initialized direction by name prefix.
    pub fn lookup(ps: &ParamSet, prefix: &str) -> Result<Self> {
        let w = ps
            .id(&format!("{prefix}.w"))
            .ok_or_else(|| Error::Format(format!("missing {prefix}.w")))?;
        let b = ps
            .id(&format!("{prefix}.b"))
            .ok_or_else(|| Error::Format(format!("missing {prefix}.b")))?;
        let shape = ps.get(w).shape();
        let hidden = shape[1] / 4;
        Ok(LstmParams {
            w,
            b,
            input: shape[0] - hidden,
            hidden,
        })
    }
}

/// One LSTM step. Inputs and states are `[1, ·]` rows.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: Var,
    b: Var,
    step: usize,
) -> Result<(Var, Var)> {
    let hidden = g.value(h_prev).cols();
    let xh = g.concat_cols(&[x, h_prev])?;
    let z = g.matmul(xh, w)?;
    let z = g.add(z, b)?;
    let i = g.slice_cols(z, 0, hidden)?;
    let f = g.slice_cols(z, hidden, 2 * hidden)?;
    let cand = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let o = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    if !g.value(h).is_finite() || !g.value(c).is_finite() {
        return Err(Error::NonFinite {
            what: "lstm state".into(),
            step,
        });
    }
    Ok((h, c))
}

/// Runs one direction over `xs` from a zero state; returns the hidden states
/// in input order.
pub fn lstm_sequence(
    g: &mut Graph,
    bound: &Bound,
    p: &LstmParams,
    xs: &[Var],
    reverse: bool,
) -> Result<Vec<Var>> {
    let w = bound.get(p.w);
    let b = bound.get(p.b);
    let mut h = g.constant(Tensor::zeros(&[1, p.hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, p.hidden]));
    let mut out = vec![h; xs.len()];
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for (step, &t) in order.iter().enumerate() {
        let (nh, nc) = lstm_cell(g, xs[t], h, c, w, b, step)?;
        h = nh;
        c = nc;
        out[t] = h;
    }
    Ok(out)
}

/// Bidirectional LSTM with concatenated `[forward, backward]` states.
#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

/// Output of a [`BiLstm`] pass.
pub struct BiLstmOutput {
    /// `[n, 2h]` state matrix.
    pub states: Var,
    /// Per-position `[1, 2h]` rows.
    pub rows: Vec<Var>,
    /// `[1, 2h]`: last forward state joined with the first backward state.
    pub last: Var,
}

impl BiLstm {
    pub fn init<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiLstm {
            fwd: LstmParams::init(ps, &format!("{prefix}.fwd"), input, hidden, rng),
            bwd: LstmParams::init(ps, &format!("{prefix}.bwd"), input, hidden, rng),
        }
    }

    pub fn lookup(ps: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(BiLstm {
            fwd: LstmParams::lookup(ps, &format!("{prefix}.fwd"))?,
            bwd: LstmParams::lookup(ps, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// Encodes an `[n, d]` input matrix, `n ≥ 1`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, inputs: Var) -> Result<BiLstmOutput> {
        let n = g.value(inputs).rows();
        if n == 0 {
            return Err(Error::EmptyInput("bilstm sequence"));
        }
        let xs: Vec<Var> = (0..n)
            .map(|i| g.gather_rows(inputs, &[i]))
            .collect::<Result<_>>()?;
        let f = lstm_sequence(g, bound, &self.fwd, &xs, false)?;
        let b = lstm_sequence(g, bound, &self.bwd, &xs, true)?;
        let rows: Vec<Var> = f
            .iter()
            .zip(&b)
            .map(|(&hf, &hb)| g.concat_cols(&[hf, hb]))
            .collect::<Result<_>>()?;
        let states = g.stack_rows(&rows)?;
        let last = g.concat_cols(&[f[n - 1], b[0]])?;
        Ok(BiLstmOutput { states, rows, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut ps = ParamSet::new();
        let w = ps.insert("w", Tensor::zeros(&[3 + 2, 8]), true);
        let b = ps.insert("b", Tensor::zeros(&[1, 8]), true);
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let h0 = g.constant(Tensor::zeros(&[1, 2]));
        let c0 = g.constant(Tensor::zeros(&[1, 2]));
        let (h, c) = lstm_cell(&mut g, x, h0, c0, bound.get(w), bound.get(b), 0).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
        assert_eq!(g.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::init(&mut ps, "l", 3, 2, &mut rng);
        assert_eq!(
            ps.get(p.b).data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
        let bound = 1.0 / 2f64.sqrt();
        assert!(ps.get(p.w).data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn non_finite_state_reports_step() {
        let mut ps = ParamSet::new();
        let w = ps.insert("w", Tensor::zeros(&[1 + 1, 4]), true);
        let b = ps.insert("b", Tensor::zeros(&[1, 4]), true);
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[1, 1]));
        let h0 = g.constant(Tensor::zeros(&[1, 1]));
        let c0 = g.constant(Tensor::row(vec![f64::NAN]));
        let err = lstm_cell(&mut g, x, h0, c0, bound.get(w), bound.get(b), 7).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 7, .. }));
    }
}
