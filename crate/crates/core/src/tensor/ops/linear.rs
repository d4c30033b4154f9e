//! Fully connected op over token matrices, plus CHW <-> token layout moves.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

// Below this many multiply-accumulates a rayon dispatch costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 18;

impl<E: Float> Tape<E> {
    /// `y[n,o] = sum_i x[n,i] * w[o,i] (+ b[o])` with `x: [N,Ci]`, `w: [Co,Ci]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let (n, ci) = xv.shape().rc()?;
        let (co, ciw) = wv.shape().rc()?;
        if ci != ciw {
            return Err(Error::internal(format!(
                "linear: input width {ci} does not match weight width {ciw}"
            )));
        }
        let bv = match b {
            Some(bvar) => {
                let t = self.value(bvar).clone();
                if t.shape().dims() != [co] {
                    return Err(Error::internal(format!(
                        "linear: bias shape {} does not match out features {co}",
                        t.shape()
                    )));
                }
                Some(t)
            }
            None => None,
        };

        let out = linear_fwd(&xv, &wv, bv.as_ref(), n, ci, co);
        let mut parents = vec![x, w];
        if let Some(bvar) = b {
            parents.push(bvar);
        }
        Ok(self.push(
            out,
            parents,
            Box::new(move |ctx| {
                let g = ctx.grad;
                let xv = ctx.inputs[0];
                let wv = ctx.inputs[1];
                let mut grads = vec![
                    linear_bwd_input(g, wv, n, ci, co),
                    linear_bwd_weight(g, xv, n, ci, co),
                ];
                if ctx.inputs.len() == 3 {
                    let mut db = vec![E::ZERO; co];
                    for row in g.data().chunks_exact(co) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    grads.push(Tensor::from_vec([co], db));
                }
                grads
            }),
        ))
    }

    /// `CxHxW -> [H*W, C]` token matrix (row = spatial position).
    pub fn tokens_from_chw(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let (c, h, w) = xv.shape().chw()?;
        let hw = h * w;
        let mut data = vec![E::ZERO; hw * c];
        let src = xv.data();
        for ci in 0..c {
            for s in 0..hw {
                data[s * c + ci] = src[ci * hw + s];
            }
        }
        Ok(self.push(
            Tensor::from_vec([hw, c], data),
            vec![x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut out = vec![E::ZERO; c * hw];
                for ci in 0..c {
                    for s in 0..hw {
                        out[ci * hw + s] = g[s * c + ci];
                    }
                }
                vec![Tensor::from_vec([c, h, w], out)]
            }),
        ))
    }

    /// `[H*W, C] -> CxHxW`, inverse of [`Tape::tokens_from_chw`].
    pub fn chw_from_tokens(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        let (nt, c) = xv.shape().rc()?;
        if nt != h * w {
            return Err(Error::internal(format!(
                "chw_from_tokens: {nt} tokens cannot fill {h}x{w}"
            )));
        }
        let hw = h * w;
        let mut data = vec![E::ZERO; c * hw];
        let src = xv.data();
        for s in 0..hw {
            for ci in 0..c {
                data[ci * hw + s] = src[s * c + ci];
            }
        }
        Ok(self.push(
            Tensor::from_vec([c, h, w], data),
            vec![x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut out = vec![E::ZERO; hw * c];
                for s in 0..hw {
                    for ci in 0..c {
                        out[s * c + ci] = g[ci * hw + s];
                    }
                }
                vec![Tensor::from_vec([hw, c], out)]
            }),
        ))
    }
}

fn linear_fwd<E: Float>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    n: usize,
    ci: usize,
    co: usize,
) -> Tensor<E> {
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![E::ZERO; n * co];
    let work = n * ci * co;
    let row = |yrow: &mut [E], xrow: &[E]| {
        for (o, y) in yrow.iter_mut().enumerate() {
            let wrow = &wd[o * ci..(o + 1) * ci];
            let mut acc = E::ZERO;
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += *xv * *wv;
            }
            *y = acc;
        }
        if let Some(b) = b {
            for (y, &bv) in yrow.iter_mut().zip(b.data()) {
                *y += bv;
            }
        }
    };
    if work >= PAR_THRESHOLD {
        out.par_chunks_exact_mut(co)
            .zip(xd.par_chunks_exact(ci))
            .for_each(|(yrow, xrow)| row(yrow, xrow));
    } else {
        for (yrow, xrow) in out.chunks_exact_mut(co).zip(xd.chunks_exact(ci)) {
            row(yrow, xrow);
        }
    }
    Tensor::from_vec([n, co], out)
}

/// dX[n,i] = sum_o g[n,o] w[o,i]
fn linear_bwd_input<E: Float>(
    g: &Tensor<E>,
    w: &Tensor<E>,
    n: usize,
    ci: usize,
    co: usize,
) -> Tensor<E> {
    let gd = g.data();
    let wd = w.data();
    let mut dx = vec![E::ZERO; n * ci];
    let row = |dxrow: &mut [E], grow: &[E]| {
        for (o, &gv) in grow.iter().enumerate() {
            let wrow = &wd[o * ci..(o + 1) * ci];
            for (d, &wv) in dxrow.iter_mut().zip(wrow) {
                *d += gv * wv;
            }
        }
    };
    if n * ci * co >= PAR_THRESHOLD {
        dx.par_chunks_exact_mut(ci)
            .zip(gd.par_chunks_exact(co))
            .for_each(|(dxrow, grow)| row(dxrow, grow));
    } else {
        for (dxrow, grow) in dx.chunks_exact_mut(ci).zip(gd.chunks_exact(co)) {
            row(dxrow, grow);
        }
    }
    Tensor::from_vec([n, ci], dx)
}

/// dW[o,i] = sum_n g[n,o] x[n,i]
fn linear_bwd_weight<E: Float>(
    g: &Tensor<E>,
    x: &Tensor<E>,
    n: usize,
    ci: usize,
    co: usize,
) -> Tensor<E> {
    let gd = g.data();
    let xd = x.data();
    let mut dw = vec![E::ZERO; co * ci];
    let row = |o: usize, dwrow: &mut [E]| {
        for nn in 0..n {
            let gv = gd[nn * co + o];
            let xrow = &xd[nn * ci..(nn + 1) * ci];
            for (d, &xv) in dwrow.iter_mut().zip(xrow) {
                *d += gv * xv;
            }
        }
    };
    if n * ci * co >= PAR_THRESHOLD {
        dw.par_chunks_exact_mut(ci)
            .enumerate()
            .for_each(|(o, dwrow)| row(o, dwrow));
    } else {
        for (o, dwrow) in dw.chunks_exact_mut(ci).enumerate() {
            row(o, dwrow);
        }
    }
    Tensor::from_vec([co, ci], dw)
}
