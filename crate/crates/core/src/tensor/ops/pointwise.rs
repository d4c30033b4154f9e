//! Elementwise arithmetic, activations, concatenation, and plain reductions.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

/// How a binary op pairs its operands: same shapes, or one side is a
/// one-element tensor broadcast over the other.
#[derive(Clone, Copy, PartialEq)]
enum Pairing {
    Same,
    ScalarLhs,
    ScalarRhs,
}

fn pairing<E: Float>(a: &Tensor<E>, b: &Tensor<E>, op: &str) -> Result<Pairing> {
    if a.shape() == b.shape() {
        Ok(Pairing::Same)
    } else if a.numel() == 1 {
        Ok(Pairing::ScalarLhs)
    } else if b.numel() == 1 {
        Ok(Pairing::ScalarRhs)
    } else {
        Err(Error::internal(format!(
            "{op}: incompatible shapes {} vs {}",
            a.shape(),
            b.shape()
        )))
    }
}

fn zip<E: Float>(a: &Tensor<E>, b: &Tensor<E>, p: Pairing, f: impl Fn(E, E) -> E) -> Tensor<E> {
    match p {
        Pairing::Same => Tensor::from_vec(
            a.shape().clone(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Pairing::ScalarLhs => {
            let s = a.item();
            b.map(|y| f(s, y))
        }
        Pairing::ScalarRhs => {
            let s = b.item();
            a.map(|x| f(x, s))
        }
    }
}

/// Reduce an elementwise gradient back to a scalar operand.
fn reduce_to_scalar<E: Float>(g: Tensor<E>) -> Tensor<E> {
    let mut acc = E::ZERO;
    for &x in g.data() {
        acc += x;
    }
    Tensor::scalar(acc)
}

impl<E: Float> Tape<E> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let p = pairing(&av, &bv, "add")?;
        let out = zip(&av, &bv, p, |x, y| x + y);
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let ga = match p {
                    Pairing::ScalarLhs => reduce_to_scalar(ctx.grad.clone()),
                    _ => ctx.grad.clone(),
                };
                let gb = match p {
                    Pairing::ScalarRhs => reduce_to_scalar(ctx.grad.clone()),
                    _ => ctx.grad.clone(),
                };
                vec![ga, gb]
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let p = pairing(&av, &bv, "sub")?;
        let out = zip(&av, &bv, p, |x, y| x - y);
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let ga = match p {
                    Pairing::ScalarLhs => reduce_to_scalar(ctx.grad.clone()),
                    _ => ctx.grad.clone(),
                };
                let neg = ctx.grad.map(|g| -g);
                let gb = match p {
                    Pairing::ScalarRhs => reduce_to_scalar(neg),
                    _ => neg,
                };
                vec![ga, gb]
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let p = pairing(&av, &bv, "mul")?;
        let out = zip(&av, &bv, p, |x, y| x * y);
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let pa = pairing(ctx.grad, ctx.inputs[1], "mul-bwd").unwrap();
                let ga = zip(ctx.grad, ctx.inputs[1], pa, |g, y| g * y);
                let ga = if p == Pairing::ScalarLhs { reduce_to_scalar(ga) } else { ga };
                let pb = pairing(ctx.grad, ctx.inputs[0], "mul-bwd").unwrap();
                let gb = zip(ctx.grad, ctx.inputs[0], pb, |g, x| g * x);
                let gb = if p == Pairing::ScalarRhs { reduce_to_scalar(gb) } else { gb };
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let p = pairing(&av, &bv, "div")?;
        let out = zip(&av, &bv, p, |x, y| x / y);
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let pa = pairing(ctx.grad, ctx.inputs[1], "div-bwd").unwrap();
                let ga = zip(ctx.grad, ctx.inputs[1], pa, |g, y| g / y);
                let ga = if p == Pairing::ScalarLhs { reduce_to_scalar(ga) } else { ga };
                // d(a/b)/db = -a / b^2
                let pn = pairing(ctx.grad, ctx.inputs[0], "div-bwd").unwrap();
                let num = zip(ctx.grad, ctx.inputs[0], pn, |g, x| g * x);
                let pd = pairing(&num, ctx.inputs[1], "div-bwd").unwrap();
                let gb = zip(&num, ctx.inputs[1], pd, |n, y| -n / (y * y));
                let gb = if p == Pairing::ScalarRhs { reduce_to_scalar(gb) } else { gb };
                vec![ga, gb]
            }),
        ))
    }

    /// `c * x` with a compile-time constant factor.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cf = E::from_f64(c);
        let out = self.value(x).map(|v| v * cf);
        self.push(out, vec![x], Box::new(move |ctx| vec![ctx.grad.map(|g| g * cf)]))
    }

    /// `a*x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let (af, bf) = (E::from_f64(a), E::from_f64(b));
        let out = self.value(x).map(|v| af * v + bf);
        self.push(out, vec![x], Box::new(move |ctx| vec![ctx.grad.map(|g| g * af)]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.maximum(E::ZERO));
        self.push(
            out,
            vec![x],
            Box::new(|ctx| {
                let g = Tensor::from_vec(
                    ctx.grad.shape().clone(),
                    ctx.grad
                        .data()
                        .iter()
                        .zip(ctx.inputs[0].data())
                        .map(|(&g, &x)| if x > E::ZERO { g } else { E::ZERO })
                        .collect(),
                );
                vec![g]
            }),
        )
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu_fwd(v));
        self.push(
            out,
            vec![x],
            Box::new(|ctx| {
                let g = Tensor::from_vec(
                    ctx.grad.shape().clone(),
                    ctx.grad
                        .data()
                        .iter()
                        .zip(ctx.inputs[0].data())
                        .map(|(&g, &x)| g * gelu_grad(x))
                        .collect(),
                );
                vec![g]
            }),
        )
    }

    /// Concatenate rank-3 tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let (ca, ha, wa) = av.shape().chw()?;
        let (cb, hb, wb) = bv.shape().chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::internal(format!(
                "concat_channels: spatial mismatch {} vs {}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let out = Tensor::from_vec([ca + cb, ha, wa], data);
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let split = ca * ha * wa;
                let ga = Tensor::from_vec([ca, ha, wa], ctx.grad.data()[..split].to_vec());
                let gb = Tensor::from_vec([cb, ha, wa], ctx.grad.data()[split..].to_vec());
                vec![ga, gb]
            }),
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = E::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        self.push(
            Tensor::scalar(acc),
            vec![x],
            Box::new(|ctx| {
                let g = ctx.grad.item();
                vec![Tensor::full(ctx.inputs[0].shape().clone(), g)]
            }),
        )
    }

    /// Mean of all elements.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-channel spatial sum: `CxHxW -> [C]`.
    pub fn sum_per_channel(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let (c, h, w) = xv.shape().chw()?;
        let hw = h * w;
        let mut out = vec![E::ZERO; c];
        for ci in 0..c {
            let mut acc = E::ZERO;
            for &v in &xv.data()[ci * hw..(ci + 1) * hw] {
                acc += v;
            }
            out[ci] = acc;
        }
        Ok(self.push(
            Tensor::from_vec([c], out),
            vec![x],
            Box::new(move |ctx| {
                let mut g = vec![E::ZERO; c * hw];
                for ci in 0..c {
                    let gc = ctx.grad.data()[ci];
                    for v in &mut g[ci * hw..(ci + 1) * hw] {
                        *v = gc;
                    }
                }
                vec![Tensor::from_vec([c, h, w], g)]
            }),
        ))
    }
}

fn gelu_fwd<E: Float>(x: E) -> E {
    let half = E::from_f64(0.5);
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = E::from_f64(0.044_715);
    let u = c * (x + k * x * x * x);
    half * x * (E::ONE + u.tanh())
}

fn gelu_grad<E: Float>(x: E) -> E {
    let half = E::from_f64(0.5);
    let c = E::from_f64(0.797_884_560_802_865_4);
    let k = E::from_f64(0.044_715);
    let three_k = E::from_f64(3.0 * 0.044_715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = E::ONE - t * t;
    half * (E::ONE + t) + half * x * sech2 * c * (E::ONE + three_k * x * x)
}
