use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::Var;

/// Gated recurrent unit weights; gate rows are stacked in the order
/// reset, update, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights<'t, T: Real> {
    /// `[3H, I]`
    pub w_ih: Var<'t, T>,
    /// `[3H, H]`
    pub w_hh: Var<'t, T>,
    /// `[3H]`
    pub b_ih: Var<'t, T>,
    /// `[3H]`
    pub b_hh: Var<'t, T>,
}

/// One GRU step on `x: [B, I]` and `h: [B, H]`:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell<'t, T: Real>(x: Var<'t, T>, h: Var<'t, T>, w: &GruWeights<'t, T>) -> Result<Var<'t, T>> {
    let hs = h.shape();
    let hidden = *hs.last().expect("non-empty shape");
    if w.w_hh.shape() != [3 * hidden, hidden] {
        return Err(Error::shapes("gru_cell", &hs, &w.w_hh.shape()));
    }
    let gi = x.linear(w.w_ih, Some(w.b_ih))?;
    let gh = h.linear(w.w_hh, Some(w.b_hh))?;
    let axis = hs.len() - 1;
    let range = |k: usize| (k * hidden..(k + 1) * hidden).collect::<Vec<_>>();
    let (r_idx, z_idx, n_idx) = (range(0), range(1), range(2));
    let r = gi.gather(axis, &r_idx)?.add(gh.gather(axis, &r_idx)?)?.sigmoid()?;
    let z = gi.gather(axis, &z_idx)?.add(gh.gather(axis, &z_idx)?)?.sigmoid()?;
    let n = gi
        .gather(axis, &n_idx)?
        .add(r.mul(gh.gather(axis, &n_idx)?)?)?
        .tanh()?;
    // (1 − z) ⊙ n + z ⊙ h  =  n + z ⊙ (h − n)
    n.add(z.mul(h.sub(n)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Mode, Tape};
    use crate::tensor::Tensor;

    #[test]
    fn scalar_step_matches_formula() {
        let tape = Tape::new(Mode::Eval);
        let c = |v: &[f64]| Tensor::<f64>::from_f64(&[v.len()], v).unwrap();
        let w = GruWeights {
            w_ih: tape.leaf(c(&[0.5, -0.3, 0.8]).reshape(&[3, 1]).unwrap()),
            w_hh: tape.leaf(c(&[0.2, 0.4, -0.6]).reshape(&[3, 1]).unwrap()),
            b_ih: tape.leaf(c(&[0.1, 0.0, -0.1])),
            b_hh: tape.leaf(c(&[0.0, 0.2, 0.3])),
        };
        let (x, h) = (1.5f64, -0.7f64);
        let out = gru_cell(
            tape.leaf(Tensor::full(&[1, 1], x)),
            tape.leaf(Tensor::full(&[1, 1], h)),
            &w,
        )
        .unwrap()
        .item();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let r = sig(0.5 * x + 0.1 + 0.2 * h);
        let z = sig(-0.3 * x + 0.4 * h + 0.2);
        let n = (0.8 * x - 0.1 + r * (-0.6 * h + 0.3)).tanh();
        assert!((out - ((1.0 - z) * n + z * h)).abs() < 1e-14);
    }
}
