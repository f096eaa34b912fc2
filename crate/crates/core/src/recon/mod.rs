//! Occlusion reconstruction: a compact U-Net, its training loop, checkpoints,
//! and the closed-form inverse of a partial-opacity blend.

pub mod checkpoint;
pub mod layers;
pub mod unet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize, warp_asset, Image, Placement};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::Real;
pub use unet::{UNet, UNetConfig};

/// A trained or freshly initialised reconstruction model.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstructor {
    pub net: UNet<f32>,
    pub seed: u64,
    /// Corpus ids of the training pairs, set by the caller; the experiment
    /// runner refuses to apply the model to any of them.
    pub trained_on: Vec<String>,
}

pub fn build_model(cfg: UNetConfig, seed: u64) -> Result<Reconstructor> {
    Ok(Reconstructor {
        net: UNet::new(cfg, seed)?,
        seed,
        trained_on: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            batch: 64,
            lr: 2e-3,
            epochs: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    /// Mean MSE on the validation pairs after the last epoch; `None` without any.
    pub validation_loss: Option<f64>,
    pub steps: usize,
    pub seed: u64,
}

/// Planar `[3][h][w]` copy of an image resized to `size x size`.
pub fn to_planar(img: &Image, size: usize) -> Result<Vec<f32>> {
    let img = if img.dims() == (size, size) { img.clone() } else { resize(img, size, size)? };
    let n = size * size;
    let mut out = vec![0.0; 3 * n];
    for (i, px) in img.as_slice().chunks_exact(3).enumerate() {
        for k in 0..3 {
            out[k * n + i] = px[k];
        }
    }
    Ok(out)
}

pub fn from_planar(data: &[f32], size: usize) -> Image {
    let n = size * size;
    Image::from_fn(size, size, |x, y| [0, 1, 2].map(|k| data[k * n + y * size + x]))
}

struct Adam<T> {
    m: UNet<T>,
    v: UNet<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &UNet<T>) -> Self {
        Adam { m: net.zeroed(), v: net.zeroed(), t: 0 }
    }

    fn step(&mut self, net: &mut UNet<T>, grad: &UNet<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::from_f64(Self::B1), T::from_f64(Self::B2));
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let step = T::from_f64(lr * c2.sqrt() / c1);
        let eps = T::from_f64(Self::EPS);
        let one = T::one();
        let grads = grad.tensors();
        for (((p, m), v), (_, g)) in net
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] = p[i] - step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Loss and parameter gradient of the mean squared error over a batch.
pub fn batch_gradient<T: Real>(net: &UNet<T>, batch: &[(&[T], &[T])]) -> (f64, UNet<T>) {
    let mut grad = net.zeroed();
    let per = batch.first().map_or(1, |(x, _)| x.len());
    let scale = T::from_f64(2.0 / (per * batch.len()) as f64);
    let mut loss = 0.0;
    for (x, target) in batch {
        let trace = net.forward_trace(x);
        let d: Vec<T> = trace.output.iter().zip(*target).map(|(y, t)| (*y - *t) * scale).collect();
        loss += UNet::mse(&trace.output, target).to_f64().unwrap_or(f64::NAN);
        net.backward(&trace, &d, &mut grad);
    }
    (loss / batch.len().max(1) as f64, grad)
}

fn planar_pairs(pairs: &[(Image, Image)], size: usize) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
    pairs
        .iter()
        .map(|(x, y)| Ok((to_planar(x, size)?, to_planar(y, size)?)))
        .collect()
}

impl Reconstructor {
    pub fn config(&self) -> UNetConfig {
        self.net.cfg
    }

    /// Minimises MSE between `forward(occluded)` and `clean` with Adam.
    ///
    /// Batch order is drawn from `hyper.seed`. A non-finite batch loss aborts
    /// with the step index.
    pub fn train(&mut self, train: &[(Image, Image)], val: &[(Image, Image)], hyper: &TrainHyper) -> Result<TrainReport> {
        if hyper.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let size = self.net.cfg.input_size;
        let data = planar_pairs(train, size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut adam = Adam::new(&self.net);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epoch_loss = Vec::with_capacity(hyper.epochs);
        let mut steps = 0;
        for _ in 0..hyper.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(hyper.batch) {
                let batch: Vec<(&[f32], &[f32])> =
                    chunk.iter().map(|&i| (data[i].0.as_slice(), data[i].1.as_slice())).collect();
                let (loss, grad) = batch_gradient(&self.net, &batch);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step: steps, loss });
                }
                adam.step(&mut self.net, &grad, hyper.lr);
                steps += 1;
                total += loss * chunk.len() as f64;
            }
            epoch_loss.push(total / data.len().max(1) as f64);
        }
        let validation_loss = if val.is_empty() { None } else { Some(self.evaluate(val)?) };
        Ok(TrainReport {
            epoch_loss,
            validation_loss,
            steps,
            seed: hyper.seed,
        })
    }

    /// Mean MSE of the model output against the clean image, at model resolution.
    pub fn evaluate(&self, pairs: &[(Image, Image)]) -> Result<f64> {
        let size = self.net.cfg.input_size;
        let mut total = 0.0;
        for (x, y) in pairs {
            let out = self.net.forward(&to_planar(x, size)?);
            total += UNet::mse(&out, &to_planar(y, size)?) as f64;
        }
        Ok(total / pairs.len().max(1) as f64)
    }

    /// Resize to the model input, run the network, resize back.
    pub fn reconstruct(&self, img: &Image) -> Result<Image> {
        let size = self.net.cfg.input_size;
        let out = from_planar(&self.net.forward(&to_planar(img, size)?), size);
        if out.dims() == img.dims() {
            Ok(out)
        } else {
            resize(&out, img.width(), img.height())
        }
    }
}

/// Mean MSE of leaving the occluded input untouched.
pub fn identity_baseline(pairs: &[(Image, Image)], size: usize) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in pairs {
        total += UNet::mse(&to_planar(x, size)?, &to_planar(y, size)?) as f64;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Inverts `out = alpha * asset' + (1 - alpha) * src` on full-coverage pixels.
pub fn analytic_deblend(img: &Image, asset: &Image, placement: &Placement, alpha: f32) -> Result<Image> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::contract(format!("alpha {alpha} is not invertible (must be in [0, 1))")));
    }
    if placement.dims() != img.dims() {
        return Err(Error::contract(format!(
            "placement mask is {:?} but image is {:?}",
            placement.dims(),
            img.dims()
        )));
    }
    let warped = warp_asset(asset, placement)?;
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if placement.coverage(x, y) < 1.0 {
                continue;
            }
            let (o, a) = (img.get(x, y), warped.get(x, y));
            out.set(x, y, [0, 1, 2].map(|k| (o[k] - alpha * a[k]) / (1.0 - alpha)));
        }
    }
    Ok(out)
}
