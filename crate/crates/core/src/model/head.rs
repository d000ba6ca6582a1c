//! Bivariate Gaussian output head and its negative log-likelihood.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::nn::{Embedding, ParamBinding};
use crate::Result;
use rand::Rng;
use rand_distr::StandardNormal;

/// Tape handles of one predicted distribution.
#[derive(Clone, Copy, Debug)]
pub struct GaussianIds {
    /// Mean, length 2.
    pub mean: ValueId,
    /// Standard deviations, length 2, positive by construction.
    pub sigma: ValueId,
    /// Correlation, length 1, in (-1, 1) by construction.
    pub rho: ValueId,
}

/// Plain-number snapshot of a predicted distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianValues {
    pub mean: [f64; 2],
    pub sigma: [f64; 2],
    pub rho: f64,
}

/// Affine map to a raw 5-vector, then squashing: the first two entries are
/// the mean, the next two pass through `exp` to give positive deviations,
/// and the last through `tanh` to keep the correlation inside (-1, 1).
pub fn gaussian_head(
    tape: &mut Tape,
    binding: &ParamBinding,
    head: &Embedding,
    hidden: ValueId,
) -> Result<GaussianIds> {
    let raw = head.linear(tape, binding, hidden)?;
    let mean = tape.slice(raw, 0, 2)?;
    let log_sigma = tape.slice(raw, 2, 2)?;
    let sigma = tape.exp(log_sigma)?;
    let rho_raw = tape.slice(raw, 4, 1)?;
    let rho = tape.tanh(rho_raw)?;
    Ok(GaussianIds { mean, sigma, rho })
}

pub fn gaussian_values(tape: &Tape, g: &GaussianIds) -> GaussianValues {
    let mean = tape.value(g.mean).data();
    let sigma = tape.value(g.sigma).data();
    GaussianValues {
        mean: [mean[0], mean[1]],
        sigma: [sigma[0], sigma[1]],
        rho: tape.value(g.rho).data()[0],
    }
}

/// Negative log-density of `target` under the distribution, as a length-1
/// tensor on the tape.
pub fn nll(tape: &mut Tape, g: &GaussianIds, target: (f64, f64)) -> Result<ValueId> {
    let t = tape.leaf(Tensor::vector(vec![target.0, target.1]));
    let diff = tape.sub(t, g.mean)?;
    let z = tape.div(diff, g.sigma)?;
    let zx = tape.slice(z, 0, 1)?;
    let zy = tape.slice(z, 1, 1)?;

    let zx2 = tape.mul(zx, zx)?;
    let zy2 = tape.mul(zy, zy)?;
    let zxzy = tape.mul(zx, zy)?;
    let cross = tape.mul(g.rho, zxzy)?;
    let cross2 = tape.scale(-2.0, cross)?;
    let quad_sum = tape.add(zx2, zy2)?;
    let quad = tape.add(quad_sum, cross2)?;

    let rho2 = tape.mul(g.rho, g.rho)?;
    let one = tape.leaf(Tensor::vector(vec![1.0]));
    let one_minus = tape.sub(one, rho2)?;

    let sx = tape.slice(g.sigma, 0, 1)?;
    let sy = tape.slice(g.sigma, 1, 1)?;
    let log_sx = tape.log(sx)?;
    let log_sy = tape.log(sy)?;
    let log_om = tape.log(one_minus)?;

    let two_pi = tape.leaf(Tensor::vector(vec![(2.0 * std::f64::consts::PI).ln()]));
    let denom = tape.scale(2.0, one_minus)?;
    let quad_term = tape.div(quad, denom)?;
    let half_log_om = tape.scale(0.5, log_om)?;

    let a = tape.add(two_pi, log_sx)?;
    let b = tape.add(a, log_sy)?;
    let c = tape.add(b, half_log_om)?;
    tape.add(c, quad_term)
}

/// Draws a position from the distribution (used only when prediction is
/// asked to sample instead of following the mean).
pub fn sample_position<R: Rng>(g: &GaussianValues, rng: &mut R) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let x = g.mean[0] + g.sigma[0] * z1;
    let y = g.mean[1] + g.sigma[1] * (g.rho * z1 + (1.0 - g.rho * g.rho).sqrt() * z2);
    (x, y)
}
