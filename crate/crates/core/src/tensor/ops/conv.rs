//! 2-D convolution with groups.
//!
//! The tape op runs an im2col layout plus a row-wise GEMM. The plain
//! sliding-window implementation, [`conv2d_reference`], stays in the crate as
//! the independent oracle; both paths accumulate in the same (channel, ky,
//! kx) order, so they agree to the last bit on identical inputs.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

const PAR_THRESHOLD: usize = 1 << 18;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv_dims<E: Float>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<ConvDims> {
    let (ci, h, wid) = x.shape().chw().map_err(|_| {
        Error::config(format!("conv2d expects CxHxW input, got {}", x.shape()))
    })?;
    let wd = w.shape().dims();
    if wd.len() != 4 || wd[2] != wd[3] {
        return Err(Error::config(format!(
            "conv2d weight must be Co x Ci/g x k x k, got {}",
            w.shape()
        )));
    }
    let (co, ci_g, k) = (wd[0], wd[1], wd[2]);
    if groups == 0 || ci % groups != 0 || co % groups != 0 {
        return Err(Error::config(format!(
            "conv2d groups={groups} must divide in_channels={ci} and out_channels={co}"
        )));
    }
    if ci_g != ci / groups {
        return Err(Error::config(format!(
            "conv2d weight in-channels {ci_g} != in_channels/groups = {}/{groups}",
            ci
        )));
    }
    if let Some(b) = b {
        if b.shape().dims() != [co] {
            return Err(Error::config(format!(
                "conv2d bias shape {} != out_channels {co}",
                b.shape()
            )));
        }
    }
    if stride == 0 {
        return Err(Error::config("conv2d stride must be positive".to_string()));
    }
    if h + 2 * padding < k || wid + 2 * padding < k {
        return Err(Error::config(format!(
            "conv2d kernel {k} exceeds padded input {}x{} (padding {padding})",
            h, wid
        )));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (wid + 2 * padding - k) / stride + 1;
    Ok(ConvDims { ci, co, h, w: wid, k, stride, padding, groups, oh, ow })
}

impl<E: Float> Tape<E> {
    /// Grouped 2-D convolution. Output spatial size is
    /// `floor((H + 2*padding - k) / stride) + 1` per axis.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = b.map(|bb| self.value(bb).clone());
        let d = conv_dims(&xv, &wv, bv.as_ref(), stride, padding, groups)?;

        let out = conv_fwd(&xv, &wv, bv.as_ref(), d);
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
                let mut grads = vec![conv_bwd_input(g, wv, d), conv_bwd_weight(g, xv, d)];
                if ctx.inputs.len() == 3 {
                    let s = d.oh * d.ow;
                    let mut db = vec![E::ZERO; d.co];
                    for (oc, dbv) in db.iter_mut().enumerate() {
                        let mut acc = E::ZERO;
                        for &gv in &g.data()[oc * s..(oc + 1) * s] {
                            acc += gv;
                        }
                        *dbv = acc;
                    }
                    grads.push(Tensor::from_vec([d.co], db));
                }
                grads
            }),
        ))
    }
}

/// im2col for one group: rows indexed by q = (ci_local*k + ky)*k + kx,
/// columns by output position.
fn im2col<E: Float>(x: &[E], d: ConvDims, group: usize) -> Vec<E> {
    let cig = d.ci / d.groups;
    let s = d.oh * d.ow;
    let mut cols = vec![E::ZERO; cig * d.k * d.k * s];
    let fill_row = |q: usize, row: &mut [E]| {
        let ci_local = q / (d.k * d.k);
        let ky = (q / d.k) % d.k;
        let kx = q % d.k;
        let ci = group * cig + ci_local;
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for oy in 0..d.oh {
            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
            if iy < 0 || iy >= d.h as isize {
                continue;
            }
            for ox in 0..d.ow {
                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                if ix < 0 || ix >= d.w as isize {
                    continue;
                }
                row[oy * d.ow + ox] = plane[iy as usize * d.w + ix as usize];
            }
        }
    };
    if cols.len() >= PAR_THRESHOLD {
        cols.par_chunks_exact_mut(s).enumerate().for_each(|(q, row)| fill_row(q, row));
    } else {
        for (q, row) in cols.chunks_exact_mut(s).enumerate() {
            fill_row(q, row);
        }
    }
    cols
}

fn conv_fwd<E: Float>(x: &Tensor<E>, w: &Tensor<E>, b: Option<&Tensor<E>>, d: ConvDims) -> Tensor<E> {
    let s = d.oh * d.ow;
    let cig = d.ci / d.groups;
    let cog = d.co / d.groups;
    let kk = cig * d.k * d.k;
    let wd = w.data();
    let mut out = vec![E::ZERO; d.co * s];

    for group in 0..d.groups {
        let cols = im2col(x.data(), d, group);
        let out_rows = &mut out[group * cog * s..(group + 1) * cog * s];
        let run_row = |oc_local: usize, orow: &mut [E]| {
            let oc = group * cog + oc_local;
            let wrow = &wd[oc * kk..(oc + 1) * kk];
            for (q, &wv) in wrow.iter().enumerate() {
                let crow = &cols[q * s..(q + 1) * s];
                for (o, &cv) in orow.iter_mut().zip(crow) {
                    *o += wv * cv;
                }
            }
            if let Some(b) = b {
                let bv = b.data()[oc];
                for o in orow.iter_mut() {
                    *o += bv;
                }
            }
        };
        if cog * kk * s >= PAR_THRESHOLD {
            out_rows
                .par_chunks_exact_mut(s)
                .enumerate()
                .for_each(|(oc_local, orow)| run_row(oc_local, orow));
        } else {
            for (oc_local, orow) in out_rows.chunks_exact_mut(s).enumerate() {
                run_row(oc_local, orow);
            }
        }
    }
    Tensor::from_vec([d.co, d.oh, d.ow], out)
}

/// dW[oc,q] = sum_s g[oc,s] * cols[q,s]
fn conv_bwd_weight<E: Float>(g: &Tensor<E>, x: &Tensor<E>, d: ConvDims) -> Tensor<E> {
    let s = d.oh * d.ow;
    let cig = d.ci / d.groups;
    let cog = d.co / d.groups;
    let kk = cig * d.k * d.k;
    let gd = g.data();
    let mut dw = vec![E::ZERO; d.co * kk];

    for group in 0..d.groups {
        let cols = im2col(x.data(), d, group);
        let dw_rows = &mut dw[group * cog * kk..(group + 1) * cog * kk];
        let run_row = |oc_local: usize, dwrow: &mut [E]| {
            let oc = group * cog + oc_local;
            let grow = &gd[oc * s..(oc + 1) * s];
            for (q, dwv) in dwrow.iter_mut().enumerate() {
                let crow = &cols[q * s..(q + 1) * s];
                let mut acc = E::ZERO;
                for (&gv, &cv) in grow.iter().zip(crow) {
                    acc += gv * cv;
                }
                *dwv = acc;
            }
        };
        if cog * kk * s >= PAR_THRESHOLD {
            dw_rows
                .par_chunks_exact_mut(kk)
                .enumerate()
                .for_each(|(oc_local, dwrow)| run_row(oc_local, dwrow));
        } else {
            for (oc_local, dwrow) in dw_rows.chunks_exact_mut(kk).enumerate() {
                run_row(oc_local, dwrow);
            }
        }
    }
    Tensor::from_vec([d.co, cig, d.k, d.k], dw)
}

/// dX via dcols[q,s] = sum_oc w[oc,q] g[oc,s], then col2im scatter-add.
fn conv_bwd_input<E: Float>(g: &Tensor<E>, w: &Tensor<E>, d: ConvDims) -> Tensor<E> {
    let s = d.oh * d.ow;
    let cig = d.ci / d.groups;
    let cog = d.co / d.groups;
    let kk = cig * d.k * d.k;
    let gd = g.data();
    let wd = w.data();
    let mut dx = vec![E::ZERO; d.ci * d.h * d.w];

    for group in 0..d.groups {
        let mut dcols = vec![E::ZERO; kk * s];
        let run_row = |q: usize, dcrow: &mut [E]| {
            for oc_local in 0..cog {
                let oc = group * cog + oc_local;
                let wv = wd[oc * kk + q];
                let grow = &gd[oc * s..(oc + 1) * s];
                for (dc, &gv) in dcrow.iter_mut().zip(grow) {
                    *dc += wv * gv;
                }
            }
        };
        if cog * kk * s >= PAR_THRESHOLD {
            dcols.par_chunks_exact_mut(s).enumerate().for_each(|(q, row)| run_row(q, row));
        } else {
            for (q, row) in dcols.chunks_exact_mut(s).enumerate() {
                run_row(q, row);
            }
        }
        // col2im: scatter kept sequential per group for reproducibility.
        for q in 0..kk {
            let ci_local = q / (d.k * d.k);
            let ky = (q / d.k) % d.k;
            let kx = q % d.k;
            let ci = group * cig + ci_local;
            let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            let dcrow = &dcols[q * s..(q + 1) * s];
            for oy in 0..d.oh {
                let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                if iy < 0 || iy >= d.h as isize {
                    continue;
                }
                for ox in 0..d.ow {
                    let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                    if ix < 0 || ix >= d.w as isize {
                        continue;
                    }
                    plane[iy as usize * d.w + ix as usize] += dcrow[oy * d.ow + ox];
                }
            }
        }
    }
    Tensor::from_vec([d.ci, d.h, d.w], dx)
}

/// Plain sliding-window convolution, the in-repo oracle for the im2col path.
pub fn conv2d_reference<E: Float>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<E>> {
    let d = conv_dims(x, w, b, stride, padding, groups)?;
    let cig = d.ci / d.groups;
    let cog = d.co / d.groups;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![E::ZERO; d.co * d.oh * d.ow];
    for oc in 0..d.co {
        let group = oc / cog;
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut acc = E::ZERO;
                for ci_local in 0..cig {
                    let ci = group * cig + ci_local;
                    for ky in 0..d.k {
                        let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        for kx in 0..d.k {
                            let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            let xv = xd[ci * d.h * d.w + iy as usize * d.w + ix as usize];
                            let wv = wd[((oc * cig + ci_local) * d.k + ky) * d.k + kx];
                            acc += xv * wv;
                        }
                    }
                }
                if let Some(b) = b {
                    acc += b.data()[oc];
                }
                out[(oc * d.oh + oy) * d.ow + ox] = acc;
            }
        }
    }
    Ok(Tensor::from_vec([d.co, d.oh, d.ow], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::Rng;

    fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn identity_one_by_one_kernel() {
        // 1x1 kernel with identity channel mixing leaves the input unchanged.
        let mut rng = Rng::new(1);
        let x = random_tensor(&mut rng, &[3, 5, 4]);
        let mut wd = vec![0.0; 9];
        for c in 0..3 {
            wd[c * 3 + c] = 1.0;
        }
        let w = Tensor::from_vec([3, 3, 1, 1], wd);
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w);
        let y = tape.conv2d(xv, wv, None, 1, 0, 1).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn stride4_k7_pad2_downsamples_256_to_64() {
        let x = Tensor::<f64>::zeros([3, 256, 256]);
        let w = Tensor::<f64>::zeros([8, 3, 7, 7]);
        let d = conv_dims(&x, &w, None, 4, 2, 1).unwrap();
        assert_eq!((d.oh, d.ow), (64, 64));
    }

    #[test]
    fn fast_path_matches_reference_with_groups() {
        let mut rng = Rng::new(7);
        let x = random_tensor(&mut rng, &[2, 5, 5]);
        let w = random_tensor(&mut rng, &[4, 1, 3, 3]);
        let b = random_tensor(&mut rng, &[4]);
        let oracle = conv2d_reference(&x, &w, Some(&b), 1, 1, 2).unwrap();

        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let wv = tape.constant(w);
        let bv = tape.constant(b);
        let y = tape.conv2d(xv, wv, Some(bv), 1, 1, 2).unwrap();
        assert!(tape.value(y).max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn group_mismatch_is_config_error() {
        let x = Tensor::<f64>::zeros([3, 8, 8]);
        let w = Tensor::<f64>::zeros([4, 1, 3, 3]);
        let err = conv_dims(&x, &w, None, 1, 1, 2).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
        let msg = err.to_string();
        assert!(msg.contains("groups=2") && msg.contains("3"), "unhelpful message: {msg}");
    }

    #[test]
    fn kernel_larger_than_padded_input_rejected() {
        let x = Tensor::<f64>::zeros([1, 2, 2]);
        let w = Tensor::<f64>::zeros([1, 1, 7, 7]);
        assert!(conv_dims(&x, &w, None, 1, 1, 1).is_err());
    }
}
