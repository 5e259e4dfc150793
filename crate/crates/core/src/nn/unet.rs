//! Early-fusion U-Net: `depth` encoder stages, a bottleneck, a symmetric
//! decoder with skip concatenation, and a 1×1 convolution + sigmoid head.

use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, ConvTranspose2x2, DoubleConv, MaxPool2x2, Mode};
use super::ops;
use super::{Parameter, Tensor};
use crate::{rng, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub input_size: usize,
}

impl UNetConfig {
    /// Four down stages, 64 base channels, 224² inputs.
    pub fn paper() -> Self {
        Self { in_channels: 2, out_channels: 1, depth: 4, base_channels: 64, input_size: 224 }
    }

    /// CPU-sized variant: two down stages, 8 base channels, 64² inputs.
    pub fn desk() -> Self {
        Self { in_channels: 2, out_channels: 1, depth: 2, base_channels: 8, input_size: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidConfig("model.depth must be at least 1".into()));
        }
        if self.in_channels < 1 || self.out_channels < 1 || self.base_channels < 1 {
            return Err(Error::InvalidConfig("model channel counts must be positive".into()));
        }
        let f = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % f != 0 {
            return Err(Error::InvalidConfig(format!(
                "model.input_size {} is not divisible by 2^depth = {f}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Channels of encoder stage `i`; `i == depth` is the bottleneck.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }
}

#[derive(Debug, Clone)]
pub struct UNetModel<T> {
    config: UNetConfig,
    encoders: Vec<DoubleConv<T>>,
    pools: Vec<MaxPool2x2>,
    bottleneck: DoubleConv<T>,
    ups: Vec<ConvTranspose2x2<T>>,
    decoders: Vec<DoubleConv<T>>,
    head: Conv2d<T>,
    mode: Mode,
    output: Option<Tensor<T>>,
}

impl<T: Real> UNetModel<T> {
    /// Builds the architecture with zeroed weights; call [`Self::init_parameters`].
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let d = config.depth;
        let encoders = (0..d)
            .map(|i| {
                let cin = if i == 0 { config.in_channels } else { config.stage_channels(i - 1) };
                DoubleConv::new(&format!("enc{i}"), cin, config.stage_channels(i))
            })
            .collect();
        let ups = (0..d)
            .map(|i| ConvTranspose2x2::new(&format!("up{i}"), config.stage_channels(i + 1), config.stage_channels(i)))
            .collect();
        let decoders = (0..d)
            .map(|i| DoubleConv::new(&format!("dec{i}"), 2 * config.stage_channels(i), config.stage_channels(i)))
            .collect();
        Ok(Self {
            config,
            encoders,
            pools: vec![MaxPool2x2::default(); d],
            bottleneck: DoubleConv::new("bottleneck", config.stage_channels(d - 1), config.stage_channels(d)),
            ups,
            decoders,
            head: Conv2d::new("head", config.base_channels, config.out_channels, 1),
            mode: Mode::Train,
            output: None,
        })
    }

    pub fn with_seed(config: UNetConfig, seed: u64) -> Result<Self> {
        let mut m = Self::new(config)?;
        m.init_parameters(seed);
        Ok(m)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Kaiming-uniform conv weights (±√(6/fan_in)), zero biases, γ = 1, β = 0,
    /// fresh running statistics. Deterministic per seed.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut r = rng::stream(seed, &[0x494E_4954]);
        for e in &mut self.encoders {
            e.init(&mut r);
        }
        self.bottleneck.init(&mut r);
        for i in (0..self.config.depth).rev() {
            self.ups[i].init(&mut r);
            self.decoders[i].init(&mut r);
        }
        self.head.init(&mut r);
        self.output = None;
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.dims4()?;
        let s = self.config.input_size;
        if c != self.config.in_channels || h != s || w != s {
            return Err(Error::ShapeMismatch(format!(
                "model expects N×{}×{s}×{s}, got {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass in the current mode. Train mode records what
    /// [`Self::backward`] needs and updates batch-norm running statistics.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mode = self.mode;
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x.clone();
        for i in 0..d {
            let s = self.encoders[i].forward(&h, mode)?;
            h = self.pools[i].forward(&s, mode)?;
            skips.push(s);
        }
        h = self.bottleneck.forward(&h, mode)?;
        for i in (0..d).rev() {
            let u = self.ups[i].forward(&h, mode)?;
            h = self.decoders[i].forward(&ops::concat_channels(&skips[i], &u)?, mode)?;
        }
        let y = ops::sigmoid_forward(&self.head.forward(&h, mode)?);
        self.output = (mode == Mode::Train).then(|| y.clone());
        Ok(y)
    }

    /// Eval-mode forward on a shared reference; records nothing.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x.clone();
        for i in 0..d {
            let s = self.encoders[i].infer(&h)?;
            h = self.pools[i].infer(&s)?;
            skips.push(s);
        }
        h = self.bottleneck.infer(&h)?;
        for i in (0..d).rev() {
            let u = self.ups[i].infer(&h)?;
            h = self.decoders[i].infer(&ops::concat_channels(&skips[i], &u)?)?;
        }
        Ok(ops::sigmoid_forward(&self.head.infer(&h)?))
    }

    /// Back-propagates `d loss / d output` through the recorded forward pass,
    /// accumulating into every trainable parameter's gradient. Returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, d_output: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.take().ok_or(Error::BackwardWithoutForward)?;
        if y.shape() != d_output.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                d_output.shape(),
                y.shape()
            )));
        }
        let d = self.config.depth;
        let mut g = self.head.backward(&ops::sigmoid_backward(&y, d_output))?;
        let mut d_skips = Vec::with_capacity(d);
        for i in 0..d {
            g = self.decoders[i].backward(&g)?;
            let (ds, du) = ops::split_channels(&g, self.config.stage_channels(i))?;
            d_skips.push(ds);
            g = self.ups[i].backward(&du)?;
        }
        g = self.bottleneck.backward(&g)?;
        for i in (0..d).rev() {
            g = self.pools[i].backward(&g)?;
            for (a, &b) in g.data_mut().iter_mut().zip(d_skips[i].data()) {
                *a = *a + b;
            }
            g = self.encoders[i].backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// All parameters, trainable and running statistics, in a fixed order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v = Vec::new();
        for e in &self.encoders {
            v.extend(e.params());
        }
        v.extend(self.bottleneck.params());
        for i in (0..self.config.depth).rev() {
            v.extend(self.ups[i].params());
            v.extend(self.decoders[i].params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = Vec::new();
        for e in &mut self.encoders {
            v.extend(e.params_mut());
        }
        v.extend(self.bottleneck.params_mut());
        for (u, dcd) in self.ups.iter_mut().zip(self.decoders.iter_mut()).rev() {
            v.extend(u.params_mut());
            v.extend(dcd.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn trainable_count(&self) -> usize {
        self.parameters().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn head_mut(&mut self) -> &mut Conv2d<T> {
        &mut self.head
    }

    /// Copies values (not gradients) from another precision.
    pub fn cast<U: Real>(&self) -> UNetModel<U> {
        let mut out = UNetModel::<U>::new(self.config).expect("valid config");
        for (dst, src) in out.parameters_mut().into_iter().zip(self.parameters()) {
            dst.value = src.value.cast();
        }
        out.mode = self.mode;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_count(cfg: &UNetConfig) -> usize {
        // conv k×k cin→cout: cout·cin·k² + cout; batch-norm: 2·c trainable
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let double = |cin: usize, cout: usize| conv(cin, cout, 3) + 2 * cout + conv(cout, cout, 3) + 2 * cout;
        let b = cfg.base_channels;
        let mut total = 0;
        let mut cin = cfg.in_channels;
        for i in 0..cfg.depth {
            total += double(cin, b << i);
            cin = b << i;
        }
        total += double(cin, b << cfg.depth);
        for i in 0..cfg.depth {
            let (hi, lo) = (b << (i + 1), b << i);
            total += hi * lo * 4 + lo; // transposed conv
            total += double(2 * lo, lo);
        }
        total + conv(b, cfg.out_channels, 1)
    }

    #[test]
    fn desk_parameter_inventory() {
        let cfg = UNetConfig::desk();
        let m = UNetModel::<f32>::new(cfg).unwrap();
        assert_eq!(hand_count(&cfg), 29_713);
        assert_eq!(m.trainable_count(), 29_713);
        assert_eq!(cfg.stage_channels(0), 8);
        assert_eq!(cfg.stage_channels(1), 16);
        assert_eq!(cfg.stage_channels(2), 32);
    }

    #[test]
    fn names_are_unique() {
        let m = UNetModel::<f32>::new(UNetConfig { depth: 3, ..UNetConfig::desk() }).unwrap();
        let names: std::collections::BTreeSet<_> = m.parameters().iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), m.parameters().len());
    }

    #[test]
    fn output_size_matches_input_across_configs() {
        for depth in 1..=3 {
            for size in [16, 32, 64] {
                let cfg = UNetConfig { depth, base_channels: 2, input_size: size, ..UNetConfig::desk() };
                let mut m = UNetModel::<f32>::with_seed(cfg, 1).unwrap();
                let x = Tensor::filled(&[2, 2, size, size], 0.3f32);
                let y = m.forward(&x).unwrap();
                assert_eq!(y.shape(), &[2, 1, size, size]);
                assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(UNetModel::<f32>::new(UNetConfig { input_size: 30, ..UNetConfig::desk() }).is_err());
        assert!(UNetModel::<f32>::new(UNetConfig { depth: 0, ..UNetConfig::desk() }).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = UNetConfig::desk();
        let a = UNetModel::<f32>::with_seed(cfg, 5).unwrap();
        let b = UNetModel::<f32>::with_seed(cfg, 5).unwrap();
        let c = UNetModel::<f32>::with_seed(cfg, 6).unwrap();
        let vals = |m: &UNetModel<f32>| m.parameters().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
        let bound = (6.0f32 / 18.0).sqrt();
        let w = &a.parameters()[0];
        assert_eq!(w.name, "enc0.conv1.weight");
        assert!(w.value.data().iter().all(|v| v.abs() <= bound));
        assert!(w.value.data().iter().any(|v| v.abs() > 0.8 * bound));
    }

    #[test]
    fn zero_head_gives_half_everywhere() {
        let mut m = UNetModel::<f64>::with_seed(UNetConfig { input_size: 16, ..UNetConfig::desk() }, 3).unwrap();
        m.head_mut().weight.value.fill(0.0);
        m.head_mut().bias.value.fill(0.0);
        let y = m.infer(&Tensor::filled(&[1, 2, 16, 16], 0.7)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn eval_forward_is_deterministic_and_matches_infer() {
        let cfg = UNetConfig { input_size: 16, ..UNetConfig::desk() };
        let mut m = UNetModel::<f32>::with_seed(cfg, 9).unwrap();
        let x = Tensor::from_vec(&[1, 2, 16, 16], (0..512).map(|i| (i % 17) as f32 / 17.0).collect()).unwrap();
        m.set_mode(Mode::Eval);
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.infer(&x).unwrap());
    }

    #[test]
    fn backward_requires_forward() {
        let mut m = UNetModel::<f32>::with_seed(UNetConfig { input_size: 16, ..UNetConfig::desk() }, 1).unwrap();
        let g = Tensor::zeros(&[1, 1, 16, 16]);
        assert!(matches!(m.backward(&g), Err(Error::BackwardWithoutForward)));
        m.set_mode(Mode::Eval);
        m.forward(&Tensor::zeros(&[1, 2, 16, 16])).unwrap();
        assert!(matches!(m.backward(&g), Err(Error::BackwardWithoutForward)));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut m = UNetModel::<f64>::with_seed(UNetConfig { input_size: 16, ..UNetConfig::desk() }, 1).unwrap();
        let x = Tensor::from_vec(&[2, 2, 16, 16], (0..1024).map(|i| (i % 13) as f64 / 13.0).collect()).unwrap();
        m.forward(&x).unwrap();
        m.backward(&Tensor::zeros(&[2, 1, 16, 16])).unwrap();
        assert!(m.parameters().iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn running_stats_are_never_given_gradients() {
        let mut m = UNetModel::<f64>::with_seed(UNetConfig { input_size: 16, ..UNetConfig::desk() }, 1).unwrap();
        let x = Tensor::from_vec(&[2, 2, 16, 16], (0..1024).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        m.forward(&x).unwrap();
        m.backward(&Tensor::filled(&[2, 1, 16, 16], 1.0)).unwrap();
        for p in m.parameters() {
            if !p.trainable {
                assert!(p.grad.data().iter().all(|&g| g == 0.0), "{}", p.name);
            }
        }
        assert!(m.parameters().iter().filter(|p| p.trainable).any(|p| p.grad.data().iter().any(|&g| g != 0.0)));
    }
}
