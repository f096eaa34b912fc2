//! U-Net with strided downsampling, transposed-conv upsampling and additive skips.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu, relu_backward, sigmoid, Conv2d, ConvTranspose2d, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub input_size: usize,
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_size: 128,
            depth: 4,
            base_channels: 32,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.input_size == 0 {
            return Err(Error::Config(format!("U-Net sizes must be positive: {self:?}")));
        }
        if self.depth > 8 || !self.input_size.is_multiple_of(1 << self.depth) {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^{}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    /// Channels at encoder/decoder stage `i` (0-based).
    pub fn channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Parameter count of the same topology with concatenated skips, where
    /// each decoder 3x3 conv reads `2 * c_i` channels.
    pub fn concat_param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let mut n = 0;
        for i in 0..self.depth {
            let (cprev, c) = (if i == 0 { 3 } else { self.channels(i - 1) }, self.channels(i));
            let below = if i + 1 == self.depth { c } else { self.channels(i + 1) };
            n += conv(cprev, c, 3) + conv(c, c, 3);
            n += conv(below, c, 2) + conv(2 * c, c, 3);
        }
        n + conv(self.channels(0), 3, 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage<T> {
    pub conv: Conv2d<T>,
    pub down: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage<T> {
    pub up: ConvTranspose2d<T>,
    pub conv: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T> {
    pub cfg: UNetConfig,
    pub encoder: Vec<EncoderStage<T>>,
    /// Indexed by resolution like the encoder; run deepest first.
    pub decoder: Vec<DecoderStage<T>>,
    pub head: Conv2d<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Trace<T> {
    /// Input to each encoder stage; entry 0 is the network input.
    enc_in: Vec<Vec<T>>,
    skips: Vec<Vec<T>>,
    /// Input to each decoder stage's transposed conv.
    dec_in: Vec<Vec<T>>,
    /// Rectified upsampled map of each decoder stage.
    dec_up: Vec<Vec<T>>,
    /// Skip-added map feeding each decoder conv.
    dec_sum: Vec<Vec<T>>,
    /// Rectified output of each decoder stage.
    dec_out: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Real> UNet<T> {
    pub fn new(cfg: UNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::new();
        for i in 0..cfg.depth {
            let cin = if i == 0 { 3 } else { cfg.channels(i - 1) };
            let c = cfg.channels(i);
            encoder.push(EncoderStage {
                conv: Conv2d::new(cin, c, 3, 1, 1, &mut rng),
                down: Conv2d::new(c, c, 3, 2, 1, &mut rng),
            });
        }
        let mut decoder = Vec::new();
        for i in 0..cfg.depth {
            let c = cfg.channels(i);
            let below = if i + 1 == cfg.depth { c } else { cfg.channels(i + 1) };
            decoder.push(DecoderStage {
                up: ConvTranspose2d::new(below, c, &mut rng),
                conv: Conv2d::new(c, c, 3, 1, 1, &mut rng),
            });
        }
        let head = Conv2d::new(cfg.channels(0), 3, 1, 1, 0, &mut rng);
        Ok(UNet { cfg, encoder, decoder, head })
    }

    /// Same shapes, all parameters zero; used as a gradient accumulator.
    pub fn zeroed(&self) -> Self {
        UNet {
            cfg: self.cfg,
            encoder: self
                .encoder
                .iter()
                .map(|s| EncoderStage { conv: s.conv.zeroed(), down: s.down.zeroed() })
                .collect(),
            decoder: self
                .decoder
                .iter()
                .map(|s| DecoderStage { up: s.up.zeroed(), conv: s.conv.zeroed() })
                .collect(),
            head: self.head.zeroed(),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (i, s) in self.encoder.iter().enumerate() {
            out.push((format!("enc{i}.conv.weight"), &s.conv.weight));
            out.push((format!("enc{i}.conv.bias"), &s.conv.bias));
            out.push((format!("enc{i}.down.weight"), &s.down.weight));
            out.push((format!("enc{i}.down.bias"), &s.down.bias));
        }
        for (i, s) in self.decoder.iter().enumerate() {
            out.push((format!("dec{i}.up.weight"), &s.up.weight));
            out.push((format!("dec{i}.up.bias"), &s.up.bias));
            out.push((format!("dec{i}.conv.weight"), &s.conv.weight));
            out.push((format!("dec{i}.conv.bias"), &s.conv.bias));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Mutable tensors in the order of [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for s in &mut self.encoder {
            out.extend([&mut s.conv.weight, &mut s.conv.bias, &mut s.down.weight, &mut s.down.bias]);
        }
        for s in &mut self.decoder {
            out.extend([&mut s.up.weight, &mut s.up.bias, &mut s.conv.weight, &mut s.conv.bias]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Forward pass on one `[3][s][s]` input.
    pub fn forward(&self, input: &[T]) -> Vec<T> {
        self.forward_trace(input).output
    }

    pub fn forward_trace(&self, input: &[T]) -> Trace<T> {
        let s = self.cfg.input_size;
        assert_eq!(input.len(), 3 * s * s, "input must be 3 x {s} x {s}");
        let depth = self.cfg.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut enc_in = Vec::with_capacity(depth);
        let mut a = input.to_vec();
        let mut size = s;
        for stage in &self.encoder {
            let (mut z, _, _) = stage.conv.forward(&a, size, size);
            relu(&mut z);
            let (down, h, _) = stage.down.forward(&z, size, size);
            skips.push(z);
            enc_in.push(std::mem::replace(&mut a, down));
            size = h;
        }
        let mut dec_in = vec![Vec::new(); depth];
        let mut dec_up = vec![Vec::new(); depth];
        let mut dec_sum = vec![Vec::new(); depth];
        let mut dec_out = vec![Vec::new(); depth];
        for i in (0..depth).rev() {
            let stage = &self.decoder[i];
            let mut u = stage.up.forward(&a, size, size);
            size *= 2;
            relu(&mut u);
            let sum: Vec<T> = u.iter().zip(&skips[i]).map(|(x, y)| *x + *y).collect();
            let (mut z, _, _) = stage.conv.forward(&sum, size, size);
            relu(&mut z);
            dec_in[i] = std::mem::replace(&mut a, z.clone());
            dec_up[i] = u;
            dec_sum[i] = sum;
            dec_out[i] = z;
        }
        let (mut output, _, _) = self.head.forward(&a, size, size);
        for v in &mut output {
            *v = sigmoid(*v);
        }
        Trace {
            enc_in,
            skips,
            dec_in,
            dec_up,
            dec_sum,
            dec_out,
            output,
        }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the sigmoid output) into `grad`.
    pub fn backward(&self, trace: &Trace<T>, d_out: &[T], grad: &mut UNet<T>) {
        let depth = self.cfg.depth;
        let s = self.cfg.input_size;
        let d_logit: Vec<T> = d_out
            .iter()
            .zip(&trace.output)
            .map(|(g, y)| *g * *y * (T::one() - *y))
            .collect();
        let mut da = self
            .head
            .backward(&trace.dec_out[0], s, s, &d_logit, &mut grad.head, true)
            .expect("dx requested");
        let mut d_skip = vec![Vec::new(); depth];
        for i in 0..depth {
            let size = s >> i;
            let stage = &self.decoder[i];
            relu_backward(&trace.dec_out[i], &mut da);
            let mut dsum = stage
                .conv
                .backward(&trace.dec_sum[i], size, size, &da, &mut grad.decoder[i].conv, true)
                .expect("dx requested");
            d_skip[i] = dsum.clone();
            relu_backward(&trace.dec_up[i], &mut dsum);
            da = stage.up.backward(&trace.dec_in[i], size / 2, size / 2, &dsum, &mut grad.decoder[i].up);
        }
        for i in (0..depth).rev() {
            let size = s >> i;
            let stage = &self.encoder[i];
            let mut dz = stage
                .down
                .backward(&trace.skips[i], size, size, &da, &mut grad.encoder[i].down, true)
                .expect("dx requested");
            for (g, k) in dz.iter_mut().zip(&d_skip[i]) {
                *g = *g + *k;
            }
            relu_backward(&trace.skips[i], &mut dz);
            let x = &trace.enc_in[i];
            if let Some(dx) = stage.conv.backward(x, size, size, &dz, &mut grad.encoder[i].conv, i > 0) {
                da = dx;
            }
        }
    }

    /// Mean squared error over all output values.
    pub fn mse(output: &[T], target: &[T]) -> T {
        let n = T::from_f64(output.len() as f64);
        output.iter().zip(target).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_preserved_for_depths_2_to_4() {
        for depth in 2..=4 {
            let cfg = UNetConfig { input_size: 32, depth, base_channels: 4 };
            let net = UNet::<f32>::new(cfg, 1).unwrap();
            let out = net.forward(&vec![0.0; 3 * 32 * 32]);
            assert_eq!(out.len(), 3 * 32 * 32);
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = UNetConfig { input_size: 30, depth: 2, base_channels: 4 };
        assert!(matches!(UNet::<f32>::new(cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn additive_skips_use_fewer_parameters() {
        for depth in 1..=4 {
            let cfg = UNetConfig { input_size: 64, depth, base_channels: 8 };
            let net = UNet::<f32>::new(cfg, 0).unwrap();
            assert!(net.param_count() < cfg.concat_param_count());
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = UNetConfig { input_size: 16, depth: 2, base_channels: 4 };
        assert_eq!(UNet::<f32>::new(cfg, 9).unwrap(), UNet::<f32>::new(cfg, 9).unwrap());
        assert_ne!(UNet::<f32>::new(cfg, 9).unwrap(), UNet::<f32>::new(cfg, 10).unwrap());
    }
}
