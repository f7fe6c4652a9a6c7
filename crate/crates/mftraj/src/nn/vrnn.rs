//! Variational recurrent cell with per-step Gaussian latent.
//!
//! Each step builds a prior from the running state, a posterior from the
//! state plus the current input, draws the latent by reparameterization
//! (noise supplied explicitly, so evaluation with zero noise is the
//! posterior mean), decodes a feature vector, and advances a GRU cell.
//! The step also returns the closed-form per-dimension KL between
//! posterior and prior for optional loss regularization.

use autodiff::{Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::rnn::GruCellParams;
use super::{Binder, LinearParams, ParamSet};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct VrnnParams {
    phi_x: LinearParams,
    phi_z: LinearParams,
    prior: LinearParams,
    prior_mu: LinearParams,
    prior_logvar: LinearParams,
    enc: LinearParams,
    enc_mu: LinearParams,
    enc_logvar: LinearParams,
    dec: LinearParams,
    gru: GruCellParams,
    pub hidden: usize,
    pub latent: usize,
}

impl VrnnParams {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
        latent: usize,
    ) -> Self {
        Self {
            phi_x: LinearParams::new(ps, rng, &format!("{name}.phi_x"), input, hidden),
            phi_z: LinearParams::new(ps, rng, &format!("{name}.phi_z"), latent, hidden),
            prior: LinearParams::new(ps, rng, &format!("{name}.prior"), hidden, hidden),
            prior_mu: LinearParams::new(ps, rng, &format!("{name}.prior_mu"), hidden, latent),
            prior_logvar: LinearParams::new(ps, rng, &format!("{name}.prior_logvar"), hidden, latent),
            enc: LinearParams::new(ps, rng, &format!("{name}.enc"), 2 * hidden, hidden),
            enc_mu: LinearParams::new(ps, rng, &format!("{name}.enc_mu"), hidden, latent),
            enc_logvar: LinearParams::new(ps, rng, &format!("{name}.enc_logvar"), hidden, latent),
            dec: LinearParams::new(ps, rng, &format!("{name}.dec"), 2 * hidden, hidden),
            gru: GruCellParams::new(ps, rng, &format!("{name}.gru"), 2 * hidden, hidden),
            hidden,
            latent,
        }
    }
}

pub struct VrnnStep {
    /// Decoded per-agent features `[agents, hidden]`.
    pub features: Var,
    /// Next recurrent state `[agents, hidden]`.
    pub h_next: Var,
    /// Per-dimension KL(posterior || prior), `[agents, latent]`.
    pub kl: Var,
}

/// One VRNN step over a batch of agents.
///
/// `x_t` is `[agents, input]`, `h_prev` is `[agents, hidden]`, and
/// `noise` must be `[agents, latent]` (zeros in eval mode).
pub fn vrnn_step(
    bind: &Binder,
    p: &VrnnParams,
    x_t: &Var,
    h_prev: &Var,
    noise: &Tensor,
) -> Result<VrnnStep> {
    let tape = bind.tape();

    let x_feat = tape.relu(&p.phi_x.forward(bind, x_t)?)?;

    let prior_h = tape.relu(&p.prior.forward(bind, h_prev)?)?;
    let mu_p = p.prior_mu.forward(bind, &prior_h)?;
    let logvar_p = p.prior_logvar.forward(bind, &prior_h)?;

    let enc_in = tape.concat(&[&x_feat, h_prev], 1)?;
    let enc_h = tape.relu(&p.enc.forward(bind, &enc_in)?)?;
    let mu_q = p.enc_mu.forward(bind, &enc_h)?;
    let logvar_q = p.enc_logvar.forward(bind, &enc_h)?;

    let noise = tape.constant(noise.clone());
    let z = tape.gaussian_sample(&mu_q, &logvar_q, &noise)?;
    let z_feat = tape.relu(&p.phi_z.forward(bind, &z)?)?;

    let dec_in = tape.concat(&[&z_feat, h_prev], 1)?;
    let features = tape.relu(&p.dec.forward(bind, &dec_in)?)?;

    let gru_in = tape.concat(&[&x_feat, &z_feat], 1)?;
    let h_next = p.gru.step(bind, &gru_in, h_prev)?;

    let kl = gaussian_kl(bind, &mu_q, &logvar_q, &mu_p, &logvar_p)?;

    Ok(VrnnStep { features, h_next, kl })
}

/// Closed-form per-dimension KL between diagonal Gaussians:
/// `0.5 (logvar_p - logvar_q + exp(logvar_q - logvar_p)
///       + (mu_q - mu_p)^2 exp(-logvar_p) - 1)`.
fn gaussian_kl(
    bind: &Binder,
    mu_q: &Var,
    logvar_q: &Var,
    mu_p: &Var,
    logvar_p: &Var,
) -> Result<Var> {
    let tape = bind.tape();
    let dlv = tape.sub(logvar_p, logvar_q)?;
    let ratio = tape.exp(&tape.sub(logvar_q, logvar_p)?)?;
    let dmu = tape.sub(mu_q, mu_p)?;
    let dmu2 = tape.elementwise_mul(&dmu, &dmu)?;
    let inv_var_p = tape.exp(&tape.scale(logvar_p, -1.0)?)?;
    let maha = tape.elementwise_mul(&dmu2, &inv_var_p)?;
    let ones = tape.constant(Tensor::filled(dlv.shape().to_vec(), 1.0));
    let total = tape.add(&tape.add(&dlv, &ratio)?, &maha)?;
    let shifted = tape.sub(&total, &ones)?;
    Ok(tape.scale(&shifted, 0.5)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use autodiff::Tape;

    fn build(seed: u64) -> (ParamSet, VrnnParams) {
        let mut ps = ParamSet::new();
        let mut rng = rng_for(seed, "init");
        let p = VrnnParams::new(&mut ps, &mut rng, "vrnn", 5, 8, 4);
        (ps, p)
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let tape = Tape::new();
        let ps = ParamSet::new();
        let bind = Binder::new(&tape, &ps, false);
        let mu = tape.constant(Tensor::from_vec(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap());
        let lv = tape.constant(Tensor::from_vec(vec![1, 3], vec![0.1, -0.5, 1.3]).unwrap());
        let kl = gaussian_kl(&bind, &mu, &lv, &mu, &lv).unwrap();
        for &v in tape.value(&kl).data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn kl_unit_mean_offset_is_half_per_dim() {
        let tape = Tape::new();
        let ps = ParamSet::new();
        let bind = Binder::new(&tape, &ps, false);
        let mu_q = tape.constant(Tensor::filled(vec![1, 4], 1.0));
        let mu_p = tape.constant(Tensor::zeros(vec![1, 4]));
        let lv = tape.constant(Tensor::zeros(vec![1, 4]));
        let kl = gaussian_kl(&bind, &mu_q, &lv, &mu_p, &lv).unwrap();
        for &v in tape.value(&kl).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (ps, p) = build(7);
        let run = || {
            let tape = Tape::new();
            let bind = Binder::new(&tape, &ps, false);
            let x = tape.constant(Tensor::filled(vec![2, 5], 0.3));
            let h = tape.constant(Tensor::zeros(vec![2, 8]));
            let noise = Tensor::zeros(vec![2, 4]);
            let step = vrnn_step(&bind, &p, &x, &h, &noise).unwrap();
            tape.value(&step.features)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_noise_uses_posterior_mean() {
        // two runs with different noise disagree; zero noise twice agrees
        let (ps, p) = build(8);
        let with_noise = |scale: f64| {
            let tape = Tape::new();
            let bind = Binder::new(&tape, &ps, false);
            let x = tape.constant(Tensor::filled(vec![1, 5], 0.5));
            let h = tape.constant(Tensor::zeros(vec![1, 8]));
            let noise = Tensor::filled(vec![1, 4], scale);
            let step = vrnn_step(&bind, &p, &x, &h, &noise).unwrap();
            tape.value(&step.features)
        };
        assert_eq!(with_noise(0.0), with_noise(0.0));
        assert_ne!(with_noise(0.0), with_noise(1.0));
    }
}
