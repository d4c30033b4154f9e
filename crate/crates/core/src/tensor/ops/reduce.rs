//! Channel softmax and the fused pixelwise cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

impl<E: Float> Tape<E> {
    /// Softmax over the channel axis at every pixel of a `CxHxW` map,
    /// computed with max subtraction.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let (c, h, w) = xv.shape().chw()?;
        let hw = h * w;
        let xd = xv.data();
        let mut out = vec![E::ZERO; c * hw];
        for s in 0..hw {
            let mut m = xd[s];
            for ci in 1..c {
                m = m.maximum(xd[ci * hw + s]);
            }
            let mut sum = E::ZERO;
            for ci in 0..c {
                let e = (xd[ci * hw + s] - m).exp();
                out[ci * hw + s] = e;
                sum += e;
            }
            for ci in 0..c {
                out[ci * hw + s] = out[ci * hw + s] / sum;
            }
        }
        Ok(self.push(
            Tensor::from_vec([c, h, w], out),
            vec![x],
            Box::new(move |ctx| {
                let y = ctx.out.data();
                let g = ctx.grad.data();
                let mut dx = vec![E::ZERO; c * hw];
                for s in 0..hw {
                    let mut dot = E::ZERO;
                    for ci in 0..c {
                        dot += g[ci * hw + s] * y[ci * hw + s];
                    }
                    for ci in 0..c {
                        let idx = ci * hw + s;
                        dx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
                vec![Tensor::from_vec([c, h, w], dx)]
            }),
        ))
    }

    /// Mean over pixels of `-log softmax(logits)[target]` for a `CxHxW`
    /// logit map and a row-major `HxW` class-index target.
    pub fn cross_entropy(&mut self, logits: Var, target: &[u8]) -> Result<Var> {
        let xv = self.value(logits).clone();
        let (c, h, w) = xv.shape().chw()?;
        let hw = h * w;
        if target.len() != hw {
            return Err(Error::data(format!(
                "cross_entropy: target has {} pixels, logits are {h}x{w}",
                target.len()
            )));
        }
        for (s, &t) in target.iter().enumerate() {
            if t as usize >= c {
                return Err(Error::data(format!(
                    "cross_entropy: class index {t} out of range [0,{c}) at pixel ({}, {})",
                    s / w,
                    s % w
                )));
            }
        }

        let xd = xv.data();
        let mut total = E::ZERO;
        for (s, &t) in target.iter().enumerate() {
            let mut m = xd[s];
            for ci in 1..c {
                m = m.maximum(xd[ci * hw + s]);
            }
            let mut sum = E::ZERO;
            for ci in 0..c {
                sum += (xd[ci * hw + s] - m).exp();
            }
            let lse = m + sum.ln();
            total += lse - xd[t as usize * hw + s];
        }
        let loss = total / E::from_f64(hw as f64);

        let target: Vec<u8> = target.to_vec();
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let go = ctx.grad.item() / E::from_f64(hw as f64);
                let mut dx = vec![E::ZERO; c * hw];
                for (s, &t) in target.iter().enumerate() {
                    let mut m = xd[s];
                    for ci in 1..c {
                        m = m.maximum(xd[ci * hw + s]);
                    }
                    let mut sum = E::ZERO;
                    for ci in 0..c {
                        sum += (xd[ci * hw + s] - m).exp();
                    }
                    for ci in 0..c {
                        let p = (xd[ci * hw + s] - m).exp() / sum;
                        let ind = if ci == t as usize { E::ONE } else { E::ZERO };
                        dx[ci * hw + s] = (p - ind) * go;
                    }
                }
                vec![Tensor::from_vec([c, h, w], dx)]
            }),
        ))
    }
}
