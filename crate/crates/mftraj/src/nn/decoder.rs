//! Residual decoder: two Linear -> GroupNorm -> ReLU blocks and a final
//! projection to the prediction horizon.
//!
//! The projection emits one displacement step per future frame;
//! accumulating them from the last observed position happens in the
//! model, keeping the network fully relative.

use autodiff::{Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::{Binder, LinearParams, ParamId, ParamSet};
use crate::error::{MftrajError, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct ResidualBlockParams {
    pub linear: LinearParams,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl ResidualBlockParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || dim % groups != 0 {
            return Err(MftrajError::Config(format!(
                "decoder width {} not divisible by {} normalization groups",
                dim, groups
            )));
        }
        Ok(Self {
            linear: LinearParams::new(ps, rng, &format!("{name}.linear"), dim, dim),
            gamma: ps.register(format!("{name}.gn.gamma"), Tensor::filled(vec![dim], 1.0)),
            beta: ps.register(format!("{name}.gn.beta"), Tensor::zeros(vec![dim])),
            groups,
        })
    }
}

/// `relu(group_norm(linear(x)))` over `[rows, dim]`.
pub fn residual_block(bind: &Binder, p: &ResidualBlockParams, x: &Var) -> Result<Var> {
    let tape = bind.tape();
    let lin = p.linear.forward(bind, x)?;
    let normed = tape.group_norm(&lin, &bind.get(p.gamma), &bind.get(p.beta), p.groups, GROUP_NORM_EPS)?;
    Ok(tape.relu(&normed)?)
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub block1: ResidualBlockParams,
    pub block2: ResidualBlockParams,
    pub out: LinearParams,
    pub future_frames: usize,
}

impl DecoderParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        groups: usize,
        future_frames: usize,
    ) -> Result<Self> {
        Ok(Self {
            block1: ResidualBlockParams::new(ps, rng, &format!("{name}.block1"), dim, groups)?,
            block2: ResidualBlockParams::new(ps, rng, &format!("{name}.block2"), dim, groups)?,
            out: LinearParams::new(ps, rng, &format!("{name}.out"), dim, future_frames * 2),
            future_frames,
        })
    }
}

/// Maps the target's contextual feature `[1, dim]` to per-step
/// displacements `[future_frames, 2]`.
pub fn decode_displacements(bind: &Binder, p: &DecoderParams, x: &Var) -> Result<Var> {
    let tape = bind.tape();
    let h = residual_block(bind, &p.block1, x)?;
    let h = residual_block(bind, &p.block2, &h)?;
    let flat = p.out.forward(bind, &h)?;
    Ok(tape.reshape(&flat, vec![p.future_frames, 2])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use autodiff::Tape;

    #[test]
    fn constant_input_zeros_out() {
        // linear with zero weight and constant bias feeds a constant row
        // into group norm: normalized to zero, relu keeps zero
        let mut ps = ParamSet::new();
        let mut rng = rng_for(0, "init");
        let block = ResidualBlockParams::new(&mut ps, &mut rng, "blk", 8, 4).unwrap();
        *ps.value_mut(block.linear.w) = Tensor::zeros(vec![8, 8]);
        *ps.value_mut(block.linear.b) = Tensor::filled(vec![8], 3.0);

        let tape = Tape::new();
        let bind = Binder::new(&tape, &ps, false);
        let x = tape.constant(Tensor::filled(vec![1, 8], 5.0));
        let out = residual_block(&bind, &block, &x).unwrap();
        assert!(tape.value(&out).data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_final_projection_gives_zero_displacements() {
        let mut ps = ParamSet::new();
        let mut rng = rng_for(1, "init");
        let dec = DecoderParams::new(&mut ps, &mut rng, "dec", 8, 4, 5).unwrap();
        *ps.value_mut(dec.out.w) = Tensor::zeros(vec![8, 10]);
        *ps.value_mut(dec.out.b) = Tensor::zeros(vec![10]);

        let tape = Tape::new();
        let bind = Binder::new(&tape, &ps, false);
        let x = tape.constant(Tensor::filled(vec![1, 8], 0.7));
        let out = decode_displacements(&bind, &dec, &x).unwrap();
        assert_eq!(out.shape(), &[5, 2]);
        assert!(tape.value(&out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_groups_is_config_error() {
        let mut ps = ParamSet::new();
        let mut rng = rng_for(2, "init");
        assert!(matches!(
            ResidualBlockParams::new(&mut ps, &mut rng, "blk", 10, 4),
            Err(MftrajError::Config(_))
        ));
    }
}
