use super::{Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

// GELU, tanh approximation.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of_f64(GELU_C);
    let a = T::of_f64(GELU_A);
    let half = T::of_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of_f64(GELU_C);
    let a = T::of_f64(GELU_A);
    let half = T::of_f64(0.5);
    let three = T::of_f64(3.0);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * a * x * x)
}

impl<'t, T: Scalar> Var<'t, T> {
    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands live on different tapes".into()))
        }
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Self> {
        self.same_tape(&other)?;
        let v = self.value().add(&other.value())?;
        Ok(self.tape.push(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Self> {
        self.same_tape(&other)?;
        let v = self.value().sub(&other.value())?;
        Ok(self.tape.push(v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Self> {
        self.same_tape(&other)?;
        let v = self.value().mul(&other.value())?;
        Ok(self.tape.push(v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: T) -> Self {
        let v = self.value().scale(c);
        self.tape.push(v, Op::Scale(self.id, c))
    }

    pub fn gelu(self) -> Self {
        let v = self.value().map(gelu);
        self.tape.push(v, Op::Gelu(self.id))
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Self> {
        self.same_tape(&other)?;
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id)))
    }

    /// Normalise over the last axis, then apply `gamma * x̂ + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Self> {
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        let x = self.value();
        let (g, b) = (gamma.value(), beta.value());
        let d = *x.shape().last().ok_or_else(|| Error::dim("layer_norm", x.shape(), g.shape()))?;
        if g.shape() != [d] {
            return Err(Error::dim("layer_norm", x.shape(), g.shape()));
        }
        if b.shape() != [d] {
            return Err(Error::dim("layer_norm", x.shape(), b.shape()));
        }
        if eps < T::zero() {
            return Err(Error::Contract("layer_norm eps must be non-negative".into()));
        }
        let rows = x.numel() / d.max(1);
        let dn = T::from_usize(d).expect("extent fits in float");
        let mut xhat = Vec::with_capacity(x.numel());
        let mut out = Vec::with_capacity(x.numel());
        let mut rstd = Vec::with_capacity(rows);
        for row in x.data().chunks(d) {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / dn;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(g.data()[j] * h + b.data()[j]);
            }
        }
        let xhat = Tensor::new(x.shape().to_vec(), xhat)?;
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
        ))
    }

    pub fn softmax(self, axis: usize) -> Result<Self> {
        let v = self.value().softmax(axis)?;
        Ok(self.tape.push(v, Op::Softmax { x: self.id, axis }))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(self) -> Self {
        let v = Tensor::scalar(self.value().sum());
        self.tape.push(v, Op::Sum(self.id))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self> {
        let v = self.value().mean_axis(axis)?;
        Ok(self.tape.push(v, Op::MeanAxis { x: self.id, axis }))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id)))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Self> {
        let v = self.value().permute(perm)?;
        Ok(self.tape.push(
            v,
            Op::Permute {
                x: self.id,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self> {
        let v = self.value().slice(axis, start, end)?;
        Ok(self.tape.push(
            v,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
        ))
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        for p in parts {
            first.same_tape(p)?;
        }
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let v = Tensor::concat(&refs, axis)?;
        Ok(first.tape.push(
            v,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }

    pub fn zero_pad_assign(self, axis: usize, offset: usize, len: usize) -> Result<Self> {
        let v = self.value().zero_pad_assign(axis, offset, len)?;
        Ok(self.tape.push(
            v,
            Op::ZeroPadAssign {
                x: self.id,
                axis,
                offset,
            },
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, evaluated with
    /// log-sum-exp. `self` must be `[B, C]`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Self> {
        let logits = self.value();
        let &[b, c] = logits.shape() else {
            return Err(Error::Contract(format!(
                "cross_entropy expects [B, C] logits, got {:?}",
                logits.shape()
            )));
        };
        if labels.len() != b || b == 0 {
            return Err(Error::Contract(format!(
                "cross_entropy: {} labels for batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Contract(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let probs = logits.softmax(1)?;
        let mut total = T::zero();
        for (row, &y) in logits.data().chunks(c).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln();
            total = total + (lse - row[y]);
        }
        let loss = total / T::from_usize(b).expect("batch fits in float");
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}
