//! Layer norm (over channels) and group norm, with affine parameters.
//!
//! Every variant normalizes some group of elements to zero mean / unit
//! variance with `eps = 1e-5` inside the square root, then applies a
//! per-channel scale and shift.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

impl<E: Float> Tape<E> {
    /// Layer norm across the feature axis of a token matrix `[N, C]`.
    pub fn layer_norm_tokens(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let (n, c) = xv.shape().rc()?;
        check_affine(self.value(gamma), self.value(beta), c)?;
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();

        let eps = Self::eps();
        let mut out = vec![E::ZERO; n * c];
        for (orow, xrow) in out.chunks_exact_mut(c).zip(xv.data().chunks_exact(c)) {
            let (mu, inv_std) = moments(xrow, eps);
            for i in 0..c {
                let xhat = (xrow[i] - mu) * inv_std;
                orow[i] = xhat * gv.data()[i] + bv.data()[i];
            }
        }
        Ok(self.push(
            Tensor::from_vec([n, c], out),
            vec![x, gamma, beta],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let gd = ctx.inputs[1].data();
                let g = ctx.grad.data();
                let mut dx = vec![E::ZERO; n * c];
                let mut dgamma = vec![E::ZERO; c];
                let mut dbeta = vec![E::ZERO; c];
                for row in 0..n {
                    let xrow = &xd[row * c..(row + 1) * c];
                    let grow = &g[row * c..(row + 1) * c];
                    let (mu, inv_std) = moments(xrow, eps);
                    let xhat: Vec<E> = xrow.iter().map(|&v| (v - mu) * inv_std).collect();
                    let dxh: Vec<E> = grow.iter().zip(gd).map(|(&gv, &ga)| gv * ga).collect();
                    for i in 0..c {
                        dgamma[i] += grow[i] * xhat[i];
                        dbeta[i] += grow[i];
                    }
                    norm_input_grad(&xhat, &dxh, inv_std, &mut dx[row * c..(row + 1) * c]);
                }
                vec![
                    Tensor::from_vec([n, c], dx),
                    Tensor::from_vec([c], dgamma),
                    Tensor::from_vec([c], dbeta),
                ]
            }),
        ))
    }

    /// Group norm over a `CxHxW` map: channels split into `groups` groups,
    /// statistics taken over each group's channels and all spatial positions.
    pub fn group_norm_chw(&mut self, x: Var, groups: usize, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let (c, h, w) = xv.shape().chw()?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!(
                "group norm: groups={groups} must be positive and divide channels={c}"
            )));
        }
        check_affine(self.value(gamma), self.value(beta), c)?;
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();

        let eps = Self::eps();
        let hw = h * w;
        let cg = c / groups;
        let glen = cg * hw;
        let mut out = vec![E::ZERO; c * hw];
        for gi in 0..groups {
            let xs = &xv.data()[gi * glen..(gi + 1) * glen];
            let (mu, inv_std) = moments(xs, eps);
            let os = &mut out[gi * glen..(gi + 1) * glen];
            for cl in 0..cg {
                let ch = gi * cg + cl;
                let (ga, be) = (gv.data()[ch], bv.data()[ch]);
                for s in 0..hw {
                    let xhat = (xs[cl * hw + s] - mu) * inv_std;
                    os[cl * hw + s] = xhat * ga + be;
                }
            }
        }
        Ok(self.push(
            Tensor::from_vec([c, h, w], out),
            vec![x, gamma, beta],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let gd = ctx.inputs[1].data();
                let g = ctx.grad.data();
                let mut dx = vec![E::ZERO; c * hw];
                let mut dgamma = vec![E::ZERO; c];
                let mut dbeta = vec![E::ZERO; c];
                for gi in 0..groups {
                    let xs = &xd[gi * glen..(gi + 1) * glen];
                    let gs = &g[gi * glen..(gi + 1) * glen];
                    let (mu, inv_std) = moments(xs, eps);
                    let xhat: Vec<E> = xs.iter().map(|&v| (v - mu) * inv_std).collect();
                    let mut dxh = vec![E::ZERO; glen];
                    for cl in 0..cg {
                        let ch = gi * cg + cl;
                        let ga = gd[ch];
                        for s in 0..hw {
                            let idx = cl * hw + s;
                            dgamma[ch] += gs[idx] * xhat[idx];
                            dbeta[ch] += gs[idx];
                            dxh[idx] = gs[idx] * ga;
                        }
                    }
                    norm_input_grad(&xhat, &dxh, inv_std, &mut dx[gi * glen..(gi + 1) * glen]);
                }
                vec![
                    Tensor::from_vec([c, h, w], dx),
                    Tensor::from_vec([c], dgamma),
                    Tensor::from_vec([c], dbeta),
                ]
            }),
        ))
    }

    /// Layer norm over channels at each spatial position of a `CxHxW` map.
    /// Composite of the token permutes and [`Tape::layer_norm_tokens`].
    pub fn layer_norm_chw(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (_, h, w) = self.value(x).shape().chw()?;
        let tok = self.tokens_from_chw(x)?;
        let normed = self.layer_norm_tokens(tok, gamma, beta)?;
        self.chw_from_tokens(normed, h, w)
    }
}

fn check_affine<E: Float>(gamma: &Tensor<E>, beta: &Tensor<E>, c: usize) -> Result<()> {
    if gamma.shape().dims() != [c] || beta.shape().dims() != [c] {
        return Err(Error::internal(format!(
            "norm affine shapes {} / {} do not match channels {c}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Mean and 1/sqrt(var + eps) over a slice (biased variance).
fn moments<E: Float>(xs: &[E], eps: E) -> (E, E) {
    let n = E::from_f64(xs.len() as f64);
    let mut sum = E::ZERO;
    for &v in xs {
        sum += v;
    }
    let mu = sum / n;
    let mut var = E::ZERO;
    for &v in xs {
        let d = v - mu;
        var += d * d;
    }
    var = var / n;
    (mu, E::ONE / (var + eps).sqrt())
}

/// dx = inv_std * (dxh - mean(dxh) - xhat * mean(dxh . xhat))
fn norm_input_grad<E: Float>(xhat: &[E], dxh: &[E], inv_std: E, dx: &mut [E]) {
    let n = E::from_f64(xhat.len() as f64);
    let mut mean_dxh = E::ZERO;
    let mut mean_dxh_xhat = E::ZERO;
    for i in 0..xhat.len() {
        mean_dxh += dxh[i];
        mean_dxh_xhat += dxh[i] * xhat[i];
    }
    mean_dxh = mean_dxh / n;
    mean_dxh_xhat = mean_dxh_xhat / n;
    for i in 0..xhat.len() {
        dx[i] = inv_std * (dxh[i] - mean_dxh - xhat[i] * mean_dxh_xhat);
    }
}
