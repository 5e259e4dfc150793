//! Stateful layers: parameters plus the forward cache their backward needs.

use rand::Rng;

use super::ops::{self, BatchNormCache};
use super::{Parameter, Tensor};
use crate::{Error, Real, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn kaiming_uniform<T: Real>(t: &mut Tensor<T>, fan_in: usize, rng: &mut impl Rng) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = T::from_f64_lossy(rng.random_range(-bound..bound));
    }
}

/// Odd-kernel "same" convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(&[cout, cin, k, k]), true),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout]), true),
            cache: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        let s = self.weight.value.shape();
        s[1] * s[2] * s[3]
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.fan_in();
        kaiming_uniform(&mut self.weight.value, fan_in, rng);
        self.bias.value.fill(T::zero());
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = ops::conv2d_forward(x, &self.weight.value, &self.bias.value)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_forward(x, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::BackwardWithoutForward)?;
        let (dx, dw, db) = ops::conv2d_backward(&x, &self.weight.value, dy)?;
        accumulate(&mut self.weight, &dw);
        accumulate(&mut self.bias, &db);
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }
}

fn accumulate<T: Real>(p: &mut Parameter<T>, g: &Tensor<T>) {
    if !p.trainable {
        return;
    }
    for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
        *a = *a + b;
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, c: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(&[c], T::one()), true),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[c]), true),
            running_mean: Parameter::new(format!("{name}.running_mean"), Tensor::zeros(&[c]), false),
            running_var: Parameter::new(format!("{name}.running_var"), Tensor::filled(&[c], T::one()), false),
            cache: None,
        }
    }

    pub fn init(&mut self) {
        self.gamma.value.fill(T::one());
        self.beta.value.fill(T::zero());
        self.running_mean.value.fill(T::zero());
        self.running_var.value.fill(T::one());
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, cache) = ops::batchnorm_forward(
            x,
            &self.gamma.value,
            &self.beta.value,
            &mut self.running_mean.value,
            &mut self.running_var.value,
            mode == Mode::Train,
            T::from_f64_lossy(BN_EPS),
            T::from_f64_lossy(BN_MOMENTUM),
        )?;
        self.cache = (mode == Mode::Train).then_some(cache);
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rm = self.running_mean.value.clone();
        let mut rv = self.running_var.value.clone();
        let (y, _) = ops::batchnorm_forward(
            x,
            &self.gamma.value,
            &self.beta.value,
            &mut rm,
            &mut rv,
            false,
            T::from_f64_lossy(BN_EPS),
            T::from_f64_lossy(BN_MOMENTUM),
        )?;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::BackwardWithoutForward)?;
        let (dx, dg, db) = ops::batchnorm_backward(&cache, &self.gamma.value, dy)?;
        accumulate(&mut self.gamma, &dg);
        accumulate(&mut self.beta, &db);
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 4] {
        [&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }

    pub fn params(&self) -> [&Parameter<T>; 4] {
        [&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }
}

/// conv3×3 → BN → ReLU, twice.
#[derive(Debug, Clone)]
pub struct DoubleConv<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    relu_out: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> DoubleConv<T> {
    pub fn new(name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), cout),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), cout),
            relu_out: None,
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.conv1.init(rng);
        self.bn1.init();
        self.conv2.init(rng);
        self.bn2.init();
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.conv1.forward(x, mode)?;
        let h = ops::relu_forward(&self.bn1.forward(&h, mode)?);
        let y = self.conv2.forward(&h, mode)?;
        let y = ops::relu_forward(&self.bn2.forward(&y, mode)?);
        self.relu_out = (mode == Mode::Train).then(|| (h, y.clone()));
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = ops::relu_forward(&self.bn1.infer(&self.conv1.infer(x)?)?);
        Ok(ops::relu_forward(&self.bn2.infer(&self.conv2.infer(&h)?)?))
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, y) = self.relu_out.take().ok_or(Error::BackwardWithoutForward)?;
        let d = self.bn2.backward(&ops::relu_backward(&y, dy))?;
        let d = self.conv2.backward(&d)?;
        let d = self.bn1.backward(&ops::relu_backward(&h, &d))?;
        self.conv1.backward(&d)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> = Vec::with_capacity(12);
        v.extend(self.conv1.params_mut());
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = Vec::with_capacity(12);
        v.extend(self.conv1.params());
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        v
    }
}

/// 2×2 stride-2 transposed convolution with bias.
#[derive(Debug, Clone)]
pub struct ConvTranspose2x2<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose2x2<T> {
    pub fn new(name: &str, cin: usize, cout: usize) -> Self {
        Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(&[cin, cout, 2, 2]), true),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout]), true),
            cache: None,
        }
    }

    /// Each output pixel sees one tap per input channel.
    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.fan_in();
        kaiming_uniform(&mut self.weight.value, fan_in, rng);
        self.bias.value.fill(T::zero());
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = ops::conv_transpose2x2_forward(x, &self.weight.value, &self.bias.value)?;
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv_transpose2x2_forward(x, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::BackwardWithoutForward)?;
        let (dx, dw, db) = ops::conv_transpose2x2_backward(&x, &self.weight.value, dy)?;
        accumulate(&mut self.weight, &dw);
        accumulate(&mut self.bias, &db);
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2x2 {
    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, arg) = ops::maxpool2x2_forward(x)?;
        self.cache = (mode == Mode::Train).then(|| (x.dims4().expect("checked"), arg));
        Ok(y)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::maxpool2x2_forward(x)?.0)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, arg) = self.cache.take().ok_or(Error::BackwardWithoutForward)?;
        Ok(ops::maxpool2x2_backward(shape, &arg, dy))
    }
}
