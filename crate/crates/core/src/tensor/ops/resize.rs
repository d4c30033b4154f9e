//! Spatial resampling: bilinear resize, nearest-neighbor resize, average pool.
//!
//! Bilinear uses half-pixel centers: source coordinate of output pixel `o`
//! along an axis of input length `L_in` and output length `L_out` is
//! `(o + 0.5) * L_in / L_out - 0.5`, clamped to the valid range. With equal
//! sizes this is the identity, and the map is linear in the input.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

const PAR_THRESHOLD: usize = 1 << 18;

/// Per-output-pixel interpolation taps along one axis.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn bilinear_taps(len_in: usize, len_out: usize) -> Vec<Tap> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let floor = s.floor();
            let t = s - floor;
            let i0 = floor.max(0.0) as usize;
            let i1 = ((floor + 1.0).max(0.0) as usize).min(len_in - 1);
            let i0 = i0.min(len_in - 1);
            Tap { i0, i1, w0: 1.0 - t, w1: t }
        })
        .collect()
}

impl<E: Float> Tape<E> {
    /// Bilinear resize of a `CxHxW` map to `oh x ow` (half-pixel centers).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        let (c, h, w) = xv.shape().chw()?;
        if oh == 0 || ow == 0 {
            return Err(Error::config("resize_bilinear: output size must be positive".to_string()));
        }
        let ys = bilinear_taps(h, oh);
        let xs = bilinear_taps(w, ow);

        let mut out = vec![E::ZERO; c * oh * ow];
        let plane = |ci: usize, dst: &mut [E]| {
            let src = &xv.data()[ci * h * w..(ci + 1) * h * w];
            for (oy, ty) in ys.iter().enumerate() {
                for (ox, tx) in xs.iter().enumerate() {
                    let v = ty.w0 * tx.w0 * src[ty.i0 * w + tx.i0].to_f64()
                        + ty.w0 * tx.w1 * src[ty.i0 * w + tx.i1].to_f64()
                        + ty.w1 * tx.w0 * src[ty.i1 * w + tx.i0].to_f64()
                        + ty.w1 * tx.w1 * src[ty.i1 * w + tx.i1].to_f64();
                    dst[oy * ow + ox] = E::from_f64(v);
                }
            }
        };
        if c * oh * ow >= PAR_THRESHOLD {
            out.par_chunks_exact_mut(oh * ow).enumerate().for_each(|(ci, dst)| plane(ci, dst));
        } else {
            for (ci, dst) in out.chunks_exact_mut(oh * ow).enumerate() {
                plane(ci, dst);
            }
        }

        let (ys_b, xs_b) = (ys, xs);
        Ok(self.push(
            Tensor::from_vec([c, oh, ow], out),
            vec![x],
            Box::new(move |ctx| {
                let mut dx = vec![E::ZERO; c * h * w];
                let g = ctx.grad.data();
                let plane = |ci: usize, dst: &mut [E]| {
                    let grow = &g[ci * oh * ow..(ci + 1) * oh * ow];
                    for (oy, ty) in ys_b.iter().enumerate() {
                        for (ox, tx) in xs_b.iter().enumerate() {
                            let gv = grow[oy * ow + ox].to_f64();
                            dst[ty.i0 * w + tx.i0] += E::from_f64(ty.w0 * tx.w0 * gv);
                            dst[ty.i0 * w + tx.i1] += E::from_f64(ty.w0 * tx.w1 * gv);
                            dst[ty.i1 * w + tx.i0] += E::from_f64(ty.w1 * tx.w0 * gv);
                            dst[ty.i1 * w + tx.i1] += E::from_f64(ty.w1 * tx.w1 * gv);
                        }
                    }
                };
                if c * oh * ow >= PAR_THRESHOLD {
                    dx.par_chunks_exact_mut(h * w).enumerate().for_each(|(ci, dst)| plane(ci, dst));
                } else {
                    for (ci, dst) in dx.chunks_exact_mut(h * w).enumerate() {
                        plane(ci, dst);
                    }
                }
                vec![Tensor::from_vec([c, h, w], dx)]
            }),
        ))
    }

    /// Nearest-neighbor resize: source index is `floor(o * L_in / L_out)`.
    pub fn resize_nearest(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        let (c, h, w) = xv.shape().chw()?;
        if oh == 0 || ow == 0 {
            return Err(Error::config("resize_nearest: output size must be positive".to_string()));
        }
        let sy: Vec<usize> = (0..oh).map(|o| o * h / oh).collect();
        let sx: Vec<usize> = (0..ow).map(|o| o * w / ow).collect();
        let mut out = vec![E::ZERO; c * oh * ow];
        for ci in 0..c {
            let src = &xv.data()[ci * h * w..(ci + 1) * h * w];
            let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[sy[oy] * w + sx[ox]];
                }
            }
        }
        Ok(self.push(
            Tensor::from_vec([c, oh, ow], out),
            vec![x],
            Box::new(move |ctx| {
                let sy: Vec<usize> = (0..oh).map(|o| o * h / oh).collect();
                let sx: Vec<usize> = (0..ow).map(|o| o * w / ow).collect();
                let g = ctx.grad.data();
                let mut dx = vec![E::ZERO; c * h * w];
                for ci in 0..c {
                    let grow = &g[ci * oh * ow..(ci + 1) * oh * ow];
                    let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dst[sy[oy] * w + sx[ox]] += grow[oy * ow + ox];
                        }
                    }
                }
                vec![Tensor::from_vec([c, h, w], dx)]
            }),
        ))
    }

    /// Non-overlapping average pooling with window = stride = `factor`.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        let (c, h, w) = xv.shape().chw()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::internal(format!(
                "avg_pool: factor {factor} must divide spatial dims {h}x{w}"
            )));
        }
        let (oh, ow) = (h / factor, w / factor);
        let inv = E::from_f64(1.0 / (factor * factor) as f64);
        let mut out = vec![E::ZERO; c * oh * ow];
        for ci in 0..c {
            let src = &xv.data()[ci * h * w..(ci + 1) * h * w];
            let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = E::ZERO;
                    for fy in 0..factor {
                        for fx in 0..factor {
                            acc += src[(oy * factor + fy) * w + ox * factor + fx];
                        }
                    }
                    dst[oy * ow + ox] = acc * inv;
                }
            }
        }
        Ok(self.push(
            Tensor::from_vec([c, oh, ow], out),
            vec![x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut dx = vec![E::ZERO; c * h * w];
                for ci in 0..c {
                    let grow = &g[ci * oh * ow..(ci + 1) * oh * ow];
                    let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = grow[oy * ow + ox] * inv;
                            for fy in 0..factor {
                                for fx in 0..factor {
                                    dst[(oy * factor + fy) * w + ox * factor + fx] += gv;
                                }
                            }
                        }
                    }
                }
                vec![Tensor::from_vec([c, h, w], dx)]
            }),
        ))
    }
}
