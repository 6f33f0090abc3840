//! Parameterized building blocks: affine maps, layer norm, feed-forward,
//! dropout, and parameter initialization.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYERNORM_EPS: f64 = 1e-5;

pub fn uniform_tensor<S: Scalar>(rng: &mut Rng, shape: Vec<usize>, bound: f64) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

pub fn normal_tensor<S: Scalar>(rng: &mut Rng, shape: Vec<usize>, std: f64) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::of(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// Evaluation-vs-training switch plus the dropout random stream.
#[derive(Debug)]
pub struct ForwardCtx {
    pub training: bool,
    pub rng: Rng,
}

impl ForwardCtx {
    pub fn train(rng: Rng) -> Self {
        Self { training: true, rng }
    }

    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self {
            training: false,
            rng: Rng::seed_from_u64(0),
        }
    }

    /// Inverted dropout; the identity in evaluation mode or when `p == 0`.
    pub fn dropout<S: Scalar>(&mut self, x: &Tensor<S>, p: f64) -> Result<Tensor<S>> {
        if !self.training || p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = S::of(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..x.numel())
            .map(|_| {
                if self.rng.random::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        x.mul(&Tensor::new(x.shape().to_vec(), mask)?)
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut Rng,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.register(
            format!("{name}.w"),
            uniform_tensor::<S>(rng, vec![d_in, d_out], bound).with_requires_grad(true),
        )?;
        let bias = if bias {
            Some(store.register(
                format!("{name}.b"),
                Tensor::zeros(vec![d_out]).with_requires_grad(true),
            )?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// Weights and bias set to zero (used for soft-start gates).
    pub fn zeroed(store: &mut ParamStore<S>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let weight = store.register(
            format!("{name}.w"),
            Tensor::zeros(vec![d_in, d_out]).with_requires_grad(true),
        )?;
        let bias = Some(store.register(
            format!("{name}.b"),
            Tensor::zeros(vec![d_out]).with_requires_grad(true),
        )?);
        Ok(Self { weight, bias })
    }

    pub fn param_count(d_in: usize, d_out: usize, bias: bool) -> usize {
        d_in * d_out + if bias { d_out } else { 0 }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<S: Scalar> {
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
    pub eps: f64,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.register(format!("{name}.g"), Tensor::ones(vec![d]).with_requires_grad(true))?,
            bias: store.register(format!("{name}.b"), Tensor::zeros(vec![d]).with_requires_grad(true))?,
            eps: LAYERNORM_EPS,
        })
    }

    pub fn param_count(d: usize) -> usize {
        2 * d
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.layernorm(&self.gain, &self.bias, self.eps)
    }
}

/// Position-wise two-layer ReLU network.
#[derive(Debug, Clone)]
pub struct FeedForward<S: Scalar> {
    pub inner: Linear<S>,
    pub outer: Linear<S>,
}

impl<S: Scalar> FeedForward<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, rng: &mut Rng, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            inner: Linear::new(store, &format!("{name}.l1"), rng, d, hidden, true)?,
            outer: Linear::new(store, &format!("{name}.l2"), rng, hidden, d, true)?,
        })
    }

    pub fn param_count(d: usize, hidden: usize) -> usize {
        Linear::<S>::param_count(d, hidden, true) + Linear::<S>::param_count(hidden, d, true)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.outer.forward(&self.inner.forward(x)?.relu())
    }
}
