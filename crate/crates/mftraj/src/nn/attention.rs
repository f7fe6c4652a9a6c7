//! Low-rank (Linformer-style) multi-head attention over agents.
//!
//! Keys and values are projected along the agent axis to a fixed
//! `proj_dim` rows through learned matrices E and F, so attention cost
//! grows linearly in the agent count. E and F are sized for `n_max`
//! agents; scenes with fewer agents use the leading columns. Row 0 of
//! the output is the target's contextual feature.

use autodiff::Var;
use rand_chacha::ChaCha8Rng;

use super::{Binder, LinearParams, ParamId, ParamSet};
use crate::error::{MftrajError, Result};
use crate::nn::uniform_init;

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: LinearParams,
    pub wk: LinearParams,
    pub wv: LinearParams,
    pub wo: LinearParams,
    /// Agent-axis key projection `[proj_dim, n_max]`.
    pub e_proj: ParamId,
    /// Agent-axis value projection `[proj_dim, n_max]`.
    pub f_proj: ParamId,
    pub heads: usize,
    pub proj_dim: usize,
    pub n_max: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        proj_dim: usize,
        n_max: usize,
    ) -> Result<Self> {
        if proj_dim < 1 {
            return Err(MftrajError::Config(format!(
                "attention proj_dim must be at least 1, got {}",
                proj_dim
            )));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(MftrajError::Config(format!(
                "attention width {} not divisible by {} heads",
                dim, heads
            )));
        }
        Ok(Self {
            wq: LinearParams::new(ps, rng, &format!("{name}.wq"), dim, dim),
            wk: LinearParams::new(ps, rng, &format!("{name}.wk"), dim, dim),
            wv: LinearParams::new(ps, rng, &format!("{name}.wv"), dim, dim),
            wo: LinearParams::new(ps, rng, &format!("{name}.wo"), dim, dim),
            e_proj: ps.register(
                format!("{name}.e_proj"),
                uniform_init(rng, vec![proj_dim, n_max], n_max),
            ),
            f_proj: ps.register(
                format!("{name}.f_proj"),
                uniform_init(rng, vec![proj_dim, n_max], n_max),
            ),
            heads,
            proj_dim,
            n_max,
            dim,
        })
    }
}

/// Multi-head linear attention over `x` `[N, dim]`, N <= n_max.
pub fn linear_attention(bind: &Binder, p: &AttentionParams, x: &Var) -> Result<Var> {
    let tape = bind.tape();
    let n = x.shape()[0];
    if n > p.n_max {
        return Err(MftrajError::Config(format!(
            "{} agents exceed the attention projection cap of {}",
            n, p.n_max
        )));
    }
    let d_head = p.dim / p.heads;

    let q = p.wq.forward(bind, x)?;
    let k = p.wk.forward(bind, x)?;
    let v = p.wv.forward(bind, x)?;

    let e_n = tape.slice(&bind.get(p.e_proj), 1, 0, n)?;
    let f_n = tape.slice(&bind.get(p.f_proj), 1, 0, n)?;

    let mut head_outputs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = tape.slice(&q, 1, h * d_head, d_head)?;
        let kh = tape.slice(&k, 1, h * d_head, d_head)?;
        let vh = tape.slice(&v, 1, h * d_head, d_head)?;
        // project keys/values along the agent axis: [proj_dim, d_head]
        let k_low = tape.matmul(&e_n, &kh)?;
        let v_low = tape.matmul(&f_n, &vh)?;
        let scores = tape.scale(
            &tape.matmul(&qh, &tape.transpose(&k_low)?)?,
            1.0 / (d_head as f64).sqrt(),
        )?;
        let attn = tape.softmax(&scores, 1)?;
        head_outputs.push(tape.matmul(&attn, &v_low)?);
    }
    let head_refs: Vec<&Var> = head_outputs.iter().collect();
    let merged = tape.concat(&head_refs, 1)?;
    p.wo.forward(bind, &merged)
}
