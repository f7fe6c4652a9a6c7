//! LSTM and GRU recurrences, batched over agents.
//!
//! One parameter set serves every agent (weight sharing); inputs are
//! `[agents, features]` per frame and states start at zero.

use autodiff::{Tensor, Var};

use super::{Binder, ParamId, ParamSet};
use crate::error::Result;
use crate::nn::uniform_init;
use rand_chacha::ChaCha8Rng;

/// One LSTM layer: `w_ih [in, 4h]`, `w_hh [h, 4h]`, two bias vectors.
/// Gate order along the 4h axis is input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl LstmLayerParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            w_ih: ps.register(format!("{name}.w_ih"), uniform_init(rng, vec![in_dim, 4 * hidden], in_dim)),
            w_hh: ps.register(format!("{name}.w_hh"), uniform_init(rng, vec![hidden, 4 * hidden], hidden)),
            b_ih: ps.register(format!("{name}.b_ih"), Tensor::zeros(vec![4 * hidden])),
            b_hh: ps.register(format!("{name}.b_hh"), Tensor::zeros(vec![4 * hidden])),
            hidden,
        }
    }

    /// One step: returns (h, c).
    pub fn step(&self, bind: &Binder, x: &Var, h: &Var, c: &Var) -> Result<(Var, Var)> {
        let tape = bind.tape();
        let hd = self.hidden;
        let gi = tape.add(&tape.matmul(x, &bind.get(self.w_ih))?, &bind.get(self.b_ih))?;
        let gh = tape.add(&tape.matmul(h, &bind.get(self.w_hh))?, &bind.get(self.b_hh))?;
        let gates = tape.add(&gi, &gh)?;
        let i_gate = tape.sigmoid(&tape.slice(&gates, 1, 0, hd)?)?;
        let f_gate = tape.sigmoid(&tape.slice(&gates, 1, hd, hd)?)?;
        let g_gate = tape.tanh(&tape.slice(&gates, 1, 2 * hd, hd)?)?;
        let o_gate = tape.sigmoid(&tape.slice(&gates, 1, 3 * hd, hd)?)?;
        let c_next = tape.add(
            &tape.elementwise_mul(&f_gate, c)?,
            &tape.elementwise_mul(&i_gate, &g_gate)?,
        )?;
        let h_next = tape.elementwise_mul(&o_gate, &tape.tanh(&c_next)?)?;
        Ok((h_next, c_next))
    }
}

/// Stacked LSTM encoder (two layers by default in this model).
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub layers: Vec<LstmLayerParams>,
}

impl LstmParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let d_in = if l == 0 { in_dim } else { hidden };
                LstmLayerParams::new(ps, rng, &format!("{name}.{l}"), d_in, hidden)
            })
            .collect();
        Self { layers }
    }
}

/// Runs the stack over a frame sequence of `[agents, features]` inputs;
/// returns the top layer's hidden state per frame.
pub fn lstm_encode(bind: &Binder, params: &LstmParams, inputs: &[Var]) -> Result<Vec<Var>> {
    let tape = bind.tape();
    let rows = inputs[0].shape()[0];
    let mut sequence: Vec<Var> = inputs.to_vec();
    for layer in &params.layers {
        let zeros = Tensor::zeros(vec![rows, layer.hidden]);
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        let mut next = Vec::with_capacity(sequence.len());
        for x in &sequence {
            let (h2, c2) = layer.step(bind, x, &h, &c)?;
            h = h2;
            c = c2;
            next.push(h.clone());
        }
        sequence = next;
    }
    Ok(sequence)
}

/// GRU cell: `w_ih [in, 3h]`, `w_hh [h, 3h]`; gate order reset, update,
/// candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruCellParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruCellParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            w_ih: ps.register(format!("{name}.w_ih"), uniform_init(rng, vec![in_dim, 3 * hidden], in_dim)),
            w_hh: ps.register(format!("{name}.w_hh"), uniform_init(rng, vec![hidden, 3 * hidden], hidden)),
            b_ih: ps.register(format!("{name}.b_ih"), Tensor::zeros(vec![3 * hidden])),
            b_hh: ps.register(format!("{name}.b_hh"), Tensor::zeros(vec![3 * hidden])),
            hidden,
        }
    }

    pub fn step(&self, bind: &Binder, x: &Var, h: &Var) -> Result<Var> {
        let tape = bind.tape();
        let hd = self.hidden;
        let gi = tape.add(&tape.matmul(x, &bind.get(self.w_ih))?, &bind.get(self.b_ih))?;
        let gh = tape.add(&tape.matmul(h, &bind.get(self.w_hh))?, &bind.get(self.b_hh))?;
        let r = tape.sigmoid(&tape.add(
            &tape.slice(&gi, 1, 0, hd)?,
            &tape.slice(&gh, 1, 0, hd)?,
        )?)?;
        let z = tape.sigmoid(&tape.add(
            &tape.slice(&gi, 1, hd, hd)?,
            &tape.slice(&gh, 1, hd, hd)?,
        )?)?;
        let n = tape.tanh(&tape.add(
            &tape.slice(&gi, 1, 2 * hd, hd)?,
            &tape.elementwise_mul(&r, &tape.slice(&gh, 1, 2 * hd, hd)?)?,
        )?)?;
        // h' = (1 - z) * n + z * h = n - z*n + z*h
        let zn = tape.elementwise_mul(&z, &n)?;
        let zh = tape.elementwise_mul(&z, h)?;
        Ok(tape.add(&tape.sub(&n, &zn)?, &zh)?)
    }
}

/// Runs a GRU over a frame sequence; returns the hidden state per frame.
pub fn gru_encode(bind: &Binder, cell: &GruCellParams, inputs: &[Var]) -> Result<Vec<Var>> {
    let tape = bind.tape();
    let rows = inputs[0].shape()[0];
    let mut h = tape.constant(Tensor::zeros(vec![rows, cell.hidden]));
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        h = cell.step(bind, x, &h)?;
        out.push(h.clone());
    }
    Ok(out)
}
