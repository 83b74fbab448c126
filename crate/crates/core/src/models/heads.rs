//! Log-density graphs for the three network heads, in standardized space.
//!
//! Each function takes the trunk output `out` (`[m, p]`) and targets `y`
//! (`[m, d]`) and returns the per-row log-density as an `[m, 1]` variable.

use crate::distributions::LN_SQRT_2PI;
use crate::error::Result;
use crate::numcore::{softplus, Tape, Var};

/// Added to `softplus(raw)` for every MDN standard deviation.
pub const MDN_STD_FLOOR: f64 = 1e-3;

pub fn mdn_output_dim(k: usize, d: usize) -> usize {
    k + 2 * k * d
}

pub fn kmn_output_dim(k: usize, m: usize) -> usize {
    k * m
}

pub fn nfn_output_dim(n_radial: usize, d: usize) -> usize {
    2 * d + n_radial * (d + 2)
}

pub fn mdn_log_density(tape: &mut Tape, out: Var, y: Var, k: usize, d: usize) -> Result<Var> {
    let logits = tape.columns(out, 0, k)?;
    let mu = tape.columns(out, k, k * d)?;
    let raw = tape.columns(out, k + k * d, k * d)?;
    let sigma = tape.softplus(raw);
    let sigma = tape.shift(sigma, MDN_STD_FLOOR);
    let ty = tape.tile(y, k)?;
    let diff = tape.sub(ty, mu)?;
    let u = tape.div(diff, sigma)?;
    let u2 = tape.square(u);
    let quad = tape.sum_groups(u2, d)?;
    let quad = tape.scale(quad, -0.5);
    let log_sigma = tape.ln(sigma);
    let log_sigma = tape.sum_groups(log_sigma, d)?;
    let comp = tape.sub(quad, log_sigma)?;
    let comp = tape.shift(comp, -(d as f64) * LN_SQRT_2PI);
    let log_w = tape.log_softmax(logits);
    let joint = tape.add(log_w, comp)?;
    Ok(tape.logsumexp(joint))
}

/// `centers` is a `[1, k*d]` row, `scale_raw` a `[1, m]` row of pre-softplus
/// scales shared by every center.
#[allow(clippy::too_many_arguments)]
pub fn kmn_log_density(
    tape: &mut Tape,
    out: Var,
    y: Var,
    neg_centers: Var,
    scale_raw: Var,
    k: usize,
    m: usize,
    d: usize,
) -> Result<Var> {
    let ty = tape.tile(y, k)?;
    let diff = tape.add_row(ty, neg_centers)?;
    let sq = tape.square(diff);
    let sqd = tape.sum_groups(sq, d)?;
    let sqd = tape.repeat_each(sqd, m)?;
    let sigma = tape.softplus(scale_raw);
    let var = tape.square(sigma);
    let inv_var = tape.recip(var);
    let inv_var = tape.tile(inv_var, k)?;
    let quad = tape.mul_row(sqd, inv_var)?;
    let quad = tape.scale(quad, -0.5);
    let log_sigma = tape.ln(sigma);
    let log_norm = tape.scale(log_sigma, -(d as f64));
    let log_norm = tape.tile(log_norm, k)?;
    let comp = tape.add_row(quad, log_norm)?;
    let comp = tape.shift(comp, -(d as f64) * LN_SQRT_2PI);
    let log_w = tape.log_softmax(out);
    let joint = tape.add(log_w, comp)?;
    Ok(tape.logsumexp(joint))
}

/// Data-to-base flow: `u = (y - b) e^{-a}` followed by `n_radial` radial
/// maps, scored against a standard normal base.
pub fn nfn_log_density(
    tape: &mut Tape,
    out: Var,
    y: Var,
    n_radial: usize,
    d: usize,
) -> Result<Var> {
    let a = tape.columns(out, 0, d)?;
    let b = tape.columns(out, d, d)?;
    let centred = tape.sub(y, b)?;
    let neg_a = tape.neg(a);
    let inv_scale = tape.exp(neg_a);
    let mut z = tape.mul(centred, inv_scale)?;
    let sum_a = tape.sum_cols(a);
    let mut log_det = tape.neg(sum_a);
    let mut offset = 2 * d;
    for _ in 0..n_radial {
        let alpha_raw = tape.columns(out, offset, 1)?;
        let beta_raw = tape.columns(out, offset + 1, 1)?;
        let z0 = tape.columns(out, offset + 2, d)?;
        offset += d + 2;
        let alpha = tape.softplus(alpha_raw);
        let beta = tape.softplus(beta_raw);
        let beta = tape.sub(beta, alpha)?;
        let diff = tape.sub(z, z0)?;
        let sq = tape.square(diff);
        let r2 = tape.sum_cols(sq);
        let r = tape.sqrt(r2);
        let denom = tape.add(alpha, r)?;
        let h = tape.recip(denom);
        let bh = tape.mul(beta, h)?;
        let bh_wide = tape.tile(bh, d)?;
        let step = tape.mul(bh_wide, diff)?;
        z = tape.add(z, step)?;
        let h2 = tape.square(h);
        let ba = tape.mul(beta, alpha)?;
        let t = tape.mul(ba, h2)?;
        let t = tape.shift(t, 1.0);
        let t = tape.ln(t);
        log_det = tape.add(log_det, t)?;
        if d > 1 {
            let s = tape.shift(bh, 1.0);
            let s = tape.ln(s);
            let s = tape.scale(s, (d - 1) as f64);
            log_det = tape.add(log_det, s)?;
        }
    }
    let z2 = tape.square(z);
    let base = tape.sum_cols(z2);
    let base = tape.scale(base, -0.5);
    let base = tape.shift(base, -(d as f64) * LN_SQRT_2PI);
    tape.add(base, log_det)
}

/// Plain-float version of the NFN map for a single point: returns the base
/// coordinates and the log-abs-determinant of the Jacobian.
pub fn nfn_transform(row: &[f64], y: &[f64], n_radial: usize) -> (Vec<f64>, f64) {
    let d = y.len();
    let mut z: Vec<f64> = (0..d).map(|j| (y[j] - row[d + j]) * (-row[j]).exp()).collect();
    let mut log_det = -row[..d].iter().sum::<f64>();
    let mut offset = 2 * d;
    for _ in 0..n_radial {
        let alpha = softplus(row[offset]);
        let beta = softplus(row[offset + 1]) - alpha;
        let z0 = &row[offset + 2..offset + 2 + d];
        offset += d + 2;
        let r = z.iter().zip(z0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let h = 1.0 / (alpha + r);
        for (zj, cj) in z.iter_mut().zip(z0) {
            *zj += beta * h * (*zj - cj);
        }
        log_det += (d as f64 - 1.0) * (beta * h).ln_1p() + (beta * alpha * h * h).ln_1p();
    }
    (z, log_det)
}
