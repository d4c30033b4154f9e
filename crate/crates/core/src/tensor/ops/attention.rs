//! Fused multi-head scaled dot-product attention over token matrices.
//!
//! Forward never materializes the full probability matrix on the tape; the
//! backward pass recomputes softmax rows from the saved q/k inputs, keeping
//! peak memory at one score row per thread.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

const PAR_THRESHOLD: usize = 1 << 18;

fn head_dims<E: Float>(q: &Tensor<E>, k: &Tensor<E>, v: &Tensor<E>, heads: usize) -> Result<(usize, usize, usize)> {
    let (n, d) = q.shape().rc()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::internal(format!(
            "attention: q/k/v shapes differ: {} {} {}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "attention: heads={heads} must divide feature dim {d}"
        )));
    }
    Ok((n, d, d / heads))
}

/// Softmax with max subtraction, in place over one score row.
fn softmax_row<E: Float>(row: &mut [E]) {
    let mut m = row[0];
    for &v in row.iter() {
        m = m.maximum(v);
    }
    let mut sum = E::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Gather one head's columns into a contiguous `[N, dh]` buffer.
fn gather_head<E: Float>(x: &[E], n: usize, d: usize, h: usize, dh: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; n * dh];
    for i in 0..n {
        out[i * dh..(i + 1) * dh].copy_from_slice(&x[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}

fn scatter_head<E: Float>(dst: &mut [E], src: &[E], n: usize, d: usize, h: usize, dh: usize) {
    for i in 0..n {
        dst[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
    }
}

impl<E: Float> Tape<E> {
    /// `softmax(q kT / sqrt(d/heads)) v`, per head, over `[N, d]` matrices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let qv = self.value(q).clone();
        let kv = self.value(k).clone();
        let vv = self.value(v).clone();
        let (n, d, dh) = head_dims(&qv, &kv, &vv, heads)?;

        let out = attention_fwd(&qv, &kv, &vv, n, d, heads, dh);
        Ok(self.push(
            out,
            vec![q, k, v],
            Box::new(move |ctx| attention_bwd(ctx.grad, ctx.inputs[0], ctx.inputs[1], ctx.inputs[2], n, d, heads, dh)),
        ))
    }
}

fn attention_fwd<E: Float>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    n: usize,
    d: usize,
    heads: usize,
    dh: usize,
) -> Tensor<E> {
    let inv = E::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![E::ZERO; n * d];
    for h in 0..heads {
        let qh = gather_head(q.data(), n, d, h, dh);
        let kh = gather_head(k.data(), n, d, h, dh);
        let vh = gather_head(v.data(), n, d, h, dh);
        let mut oh = vec![E::ZERO; n * dh];
        let run_row = |i: usize, orow: &mut [E]| {
            let qrow = &qh[i * dh..(i + 1) * dh];
            let mut scores = vec![E::ZERO; n];
            for (j, s) in scores.iter_mut().enumerate() {
                let krow = &kh[j * dh..(j + 1) * dh];
                let mut acc = E::ZERO;
                for (qv, kv) in qrow.iter().zip(krow) {
                    acc += *qv * *kv;
                }
                *s = acc * inv;
            }
            softmax_row(&mut scores);
            for (j, &p) in scores.iter().enumerate() {
                let vrow = &vh[j * dh..(j + 1) * dh];
                for (o, &vv) in orow.iter_mut().zip(vrow) {
                    *o += p * vv;
                }
            }
        };
        if n * n * dh >= PAR_THRESHOLD {
            oh.par_chunks_exact_mut(dh).enumerate().for_each(|(i, orow)| run_row(i, orow));
        } else {
            for (i, orow) in oh.chunks_exact_mut(dh).enumerate() {
                run_row(i, orow);
            }
        }
        scatter_head(&mut out, &oh, n, d, h, dh);
    }
    Tensor::from_vec([n, d], out)
}

#[allow(clippy::too_many_arguments)]
fn attention_bwd<E: Float>(
    grad: &Tensor<E>,
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    n: usize,
    d: usize,
    heads: usize,
    dh: usize,
) -> Vec<Tensor<E>> {
    let inv = E::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = vec![E::ZERO; n * d];
    let mut dk = vec![E::ZERO; n * d];
    let mut dv = vec![E::ZERO; n * d];
    for h in 0..heads {
        let qh = gather_head(q.data(), n, d, h, dh);
        let kh = gather_head(k.data(), n, d, h, dh);
        let vh = gather_head(v.data(), n, d, h, dh);
        let gh = gather_head(grad.data(), n, d, h, dh);
        let mut dqh = vec![E::ZERO; n * dh];
        let mut dkh = vec![E::ZERO; n * dh];
        let mut dvh = vec![E::ZERO; n * dh];

        let mut probs = vec![E::ZERO; n];
        let mut dscores = vec![E::ZERO; n];
        for i in 0..n {
            // Recompute softmax row i.
            let qrow = &qh[i * dh..(i + 1) * dh];
            for (j, s) in probs.iter_mut().enumerate() {
                let krow = &kh[j * dh..(j + 1) * dh];
                let mut acc = E::ZERO;
                for (qv, kv) in qrow.iter().zip(krow) {
                    acc += *qv * *kv;
                }
                *s = acc * inv;
            }
            softmax_row(&mut probs);

            let grow = &gh[i * dh..(i + 1) * dh];
            // dp[j] = g_i . v_j ; softmax jacobian: ds = p * (dp - sum_j dp[j] p[j])
            let mut dot_sum = E::ZERO;
            for (j, ds) in dscores.iter_mut().enumerate() {
                let vrow = &vh[j * dh..(j + 1) * dh];
                let mut acc = E::ZERO;
                for (gv, vv) in grow.iter().zip(vrow) {
                    acc += *gv * *vv;
                }
                *ds = acc;
                dot_sum += acc * probs[j];
            }
            for j in 0..n {
                dscores[j] = probs[j] * (dscores[j] - dot_sum);
            }

            // dv_j += p[j] * g_i ; dk_j += ds[j] * q_i * inv ; dq_i = sum_j ds[j] * k_j * inv
            let dqrow = &mut dqh[i * dh..(i + 1) * dh];
            for j in 0..n {
                let p = probs[j];
                let ds = dscores[j] * inv;
                let vdst = &mut dvh[j * dh..(j + 1) * dh];
                for (dst, &gv) in vdst.iter_mut().zip(grow) {
                    *dst += p * gv;
                }
                let kdst = &mut dkh[j * dh..(j + 1) * dh];
                for (dst, &qv) in kdst.iter_mut().zip(qrow) {
                    *dst += ds * qv;
                }
                let krow = &kh[j * dh..(j + 1) * dh];
                for (dst, &kv) in dqrow.iter_mut().zip(krow) {
                    *dst += ds * kv;
                }
            }
        }
        scatter_head(&mut dq, &dqh, n, d, h, dh);
        scatter_head(&mut dk, &dkh, n, d, h, dh);
        scatter_head(&mut dv, &dvh, n, d, h, dh);
    }
    vec![
        Tensor::from_vec([n, d], dq),
        Tensor::from_vec([n, d], dk),
        Tensor::from_vec([n, d], dv),
    ]
}

/// Per-head attention probability matrices, for inspection and tests.
pub fn attention_probs<E: Float>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    heads: usize,
) -> Result<Vec<Tensor<E>>> {
    let (n, d) = q.shape().rc()?;
    if k.shape() != q.shape() {
        return Err(Error::internal("attention_probs: q/k shape mismatch".to_string()));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "attention: heads={heads} must divide feature dim {d}"
        )));
    }
    let dh = d / heads;
    let inv = E::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = gather_head(q.data(), n, d, h, dh);
        let kh = gather_head(k.data(), n, d, h, dh);
        let mut probs = vec![E::ZERO; n * n];
        for i in 0..n {
            let row = &mut probs[i * n..(i + 1) * n];
            let qrow = &qh[i * dh..(i + 1) * dh];
            for (j, s) in row.iter_mut().enumerate() {
                let krow = &kh[j * dh..(j + 1) * dh];
                let mut acc = E::ZERO;
                for (qv, kv) in qrow.iter().zip(krow) {
                    acc += *qv * *kv;
                }
                *s = acc * inv;
            }
            softmax_row(row);
        }
        out.push(Tensor::from_vec([n, n], probs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::Rng;

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn single_token_output_equals_v() {
        let mut rng = Rng::new(2);
        let q = random(&mut rng, &[1, 6]);
        let k = random(&mut rng, &[1, 6]);
        let v = random(&mut rng, &[1, 6]);
        let mut tape = Tape::<f64>::new();
        let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v.clone()));
        let y = tape.attention(qv, kv, vv, 2).unwrap();
        assert!(tape.value(y).max_abs_diff(&v) < 1e-12);
    }

    #[test]
    fn equal_keys_give_uniform_rows() {
        let mut rng = Rng::new(5);
        let q = random(&mut rng, &[4, 4]);
        let krow: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut kd = Vec::new();
        for _ in 0..4 {
            kd.extend_from_slice(&krow);
        }
        let k = Tensor::from_vec([4, 4], kd);
        let probs = attention_probs(&q, &k, 2).unwrap();
        for head in probs {
            for &p in head.data() {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_oracle() {
        // Naive O(N^2) attention with explicit per-head slicing.
        let (n, d, heads) = (4, 8, 2);
        let dh = d / heads;
        let mut rng = Rng::new(77);
        let q = random(&mut rng, &[n, d]);
        let k = random(&mut rng, &[n, d]);
        let v = random(&mut rng, &[n, d]);

        let mut expect = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                let mut scores = vec![0.0; n];
                for j in 0..n {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += q.data()[i * d + h * dh + c] * k.data()[j * d + h * dh + c];
                    }
                    scores[j] = acc / (dh as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..n {
                    let p = exps[j] / z;
                    for c in 0..dh {
                        expect[i * d + h * dh + c] += p * v.data()[j * d + h * dh + c];
                    }
                }
            }
        }

        let mut tape = Tape::<f64>::new();
        let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let y = tape.attention(qv, kv, vv, heads).unwrap();
        let expect = Tensor::from_vec([n, d], expect);
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn rejects_heads_not_dividing_dim() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros([2, 6]));
        assert!(tape.attention(q, q, q, 4).is_err());
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = Rng::new(8);
        let q = random(&mut rng, &[5, 4]);
        let k = random(&mut rng, &[5, 4]);
        for head in attention_probs(&q, &k, 2).unwrap() {
            for row in head.data().chunks_exact(5) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
