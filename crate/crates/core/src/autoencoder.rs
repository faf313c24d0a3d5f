//! Convolutional patch autoencoder and featurization.
//!
//! Encoder: three blocks of `conv3x3 → ReLU → 2×2 average pool`, then a
//! dense layer to the latent vector. Decoder: dense → ReLU → reshape, then
//! three blocks of `2× upsample → conv3x3` with ReLU between blocks and a
//! sigmoid on the output so reconstructions live in `[0, 1]`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::optim::{uniform_init, OptimizerKind, ParamSet};
use crate::par::Exec;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::tiling::Patch;
use crate::train::{fit, StepOutput, TrainConfig, TrainLog};

pub const CHECKPOINT_KIND: &str = "autoencoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub latent_dim: usize,
    /// Output channels of the three encoder blocks.
    pub channels: [usize; 3],
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Random subset of patches used for training; `None` uses all.
    pub max_train_patches: Option<usize>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_size: crate::tiling::DEFAULT_PATCH_SIZE,
            latent_dim: 64,
            channels: [8, 16, 16],
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::adam(),
            max_train_patches: Some(512),
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!(
                "autoencoder needs a patch size divisible by 8, got {}",
                self.patch_size
            )));
        }
        if self.latent_dim == 0 || self.channels.contains(&0) {
            return Err(Error::InvalidArgument(
                "latent size and channel widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Side length of the feature map entering the dense layer.
    fn bottleneck_side(&self) -> usize {
        self.patch_size / 8
    }

    fn bottleneck_len(&self) -> usize {
        self.channels[2] * self.bottleneck_side().pow(2)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
            clip_norm: None,
            schedule: Default::default(),
            weight_decay: 0.0,
        }
    }
}

// parameter order, shared by `init` and the forward functions
const ENC_CONV: usize = 0;
const ENC_FC: usize = 6;
const DEC_FC: usize = 8;
const DEC_CONV: usize = 10;

/// Encoder plus decoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoEncoder<T> {
    config: EncoderConfig,
    params: ParamSet<T>,
}

impl<T: Real> AutoEncoder<T> {
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let [c1, c2, c3] = config.channels;
        let mut params = ParamSet::new();
        for (i, (cin, cout)) in [(3, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
            params.push(
                format!("enc.conv{i}.w"),
                uniform_init(&mut rng, &[cout, cin * 9], cin * 9),
            );
            params.push(format!("enc.conv{i}.b"), Tensor::zeros(&[cout]));
        }
        let flat = config.bottleneck_len();
        let latent = config.latent_dim;
        params.push("enc.fc.w", uniform_init(&mut rng, &[flat, latent], flat));
        params.push("enc.fc.b", Tensor::zeros(&[latent]));
        params.push("dec.fc.w", uniform_init(&mut rng, &[latent, flat], latent));
        params.push("dec.fc.b", Tensor::zeros(&[flat]));
        for (i, (cin, cout)) in [(c3, c2), (c2, c1), (c1, 3)].into_iter().enumerate() {
            params.push(
                format!("dec.conv{i}.w"),
                uniform_init(&mut rng, &[cout, cin * 9], cin * 9),
            );
            params.push(format!("dec.conv{i}.b"), Tensor::zeros(&[cout]));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn cast<U: Real>(&self) -> AutoEncoder<U> {
        AutoEncoder {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Latent code `[1, latent_dim]` of a `[3, N, N]` input.
    pub fn encode(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        encode(&self.config, tape, vars, x)
    }

    /// Reconstruction `[3, N, N]` of a latent code.
    pub fn decode(&self, tape: &mut Tape<T>, vars: &[Var], z: Var) -> Result<Var> {
        decode(&self.config, tape, vars, z)
    }

    pub fn reconstruct(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let z = self.encode(&mut tape, &vars, x)?;
        let y = self.decode(&mut tape, &vars, z)?;
        Ok(tape.value(y).clone())
    }

    pub fn embed(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let z = self.encode(&mut tape, &vars, x)?;
        Ok(tape.value(z).data().to_vec())
    }
}

fn encode<T: Real>(cfg: &EncoderConfig, tape: &mut Tape<T>, v: &[Var], x: Var) -> Result<Var> {
    let mut h = x;
    for block in 0..3 {
        let (w, b) = (v[ENC_CONV + 2 * block], v[ENC_CONV + 2 * block + 1]);
        h = tape.conv3x3(h, w, b)?;
        h = tape.relu(h);
        h = tape.avg_pool2(h)?;
    }
    let flat = tape.reshape(h, &[1, cfg.bottleneck_len()])?;
    let z = tape.matmul(flat, v[ENC_FC])?;
    tape.add_row(z, v[ENC_FC + 1])
}

fn decode<T: Real>(cfg: &EncoderConfig, tape: &mut Tape<T>, v: &[Var], z: Var) -> Result<Var> {
    let s = cfg.bottleneck_side();
    let h = tape.matmul(z, v[DEC_FC])?;
    let h = tape.add_row(h, v[DEC_FC + 1])?;
    let h = tape.relu(h);
    let mut h = tape.reshape(h, &[cfg.channels[2], s, s])?;
    for block in 0..3 {
        let (w, b) = (v[DEC_CONV + 2 * block], v[DEC_CONV + 2 * block + 1]);
        h = tape.upsample2(h)?;
        h = tape.conv3x3(h, w, b)?;
        h = if block < 2 {
            tape.relu(h)
        } else {
            tape.sigmoid(h)
        };
    }
    Ok(h)
}

/// Channel-planar `[3, N, N]` tensor with values scaled to `[0, 1]`.
pub fn patch_tensor<T: Real>(pixels: &[u8], size: usize) -> Result<Tensor<T>> {
    if pixels.len() != size * size * 3 {
        return Err(Error::shape(
            "patch_tensor",
            format!("{} bytes for a {size}x{size} RGB patch", pixels.len()),
        ));
    }
    let plane = size * size;
    let scale = T::lit(1.0 / 255.0);
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::lit(f64::from(px[c])) * scale;
        }
    }
    Tensor::new(vec![3, size, size], data)
}

fn check_patch_size(patches: &[Patch], cfg: &EncoderConfig) -> Result<()> {
    if let Some(p) = patches.iter().find(|p| p.size != cfg.patch_size) {
        return Err(Error::InvalidArgument(format!(
            "patch {}:{},{} is {}px but the encoder expects {}px",
            p.slide_id, p.row, p.col, p.size, cfg.patch_size
        )));
    }
    Ok(())
}

/// Trains by minimising per-pixel MSE between patches and reconstructions.
pub fn train_autoencoder(
    patches: &[Patch],
    config: &EncoderConfig,
    exec: Exec,
) -> Result<(AutoEncoder<f32>, TrainLog)> {
    let mut ae = AutoEncoder::<f32>::init(config.clone())?;
    if patches.is_empty() {
        return Err(Error::Dataset("autoencoder: no patches to train on".into()));
    }
    check_patch_size(patches, config)?;
    let chosen: Vec<usize> = match config.max_train_patches {
        Some(cap) if cap < patches.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_a11c);
            let mut idx = sample(&mut rng, patches.len(), cap.max(1)).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..patches.len()).collect(),
    };
    let inputs: Vec<Tensor<f32>> = chosen
        .iter()
        .map(|&i| patch_tensor(&patches[i].pixels, config.patch_size))
        .collect::<Result<_>>()?;
    log::info!(
        "autoencoder: training on {} of {} patches",
        inputs.len(),
        patches.len()
    );
    let cfg = config.clone();
    let log = fit(
        "autoencoder",
        &mut ae.params,
        &inputs,
        &config.train_config(),
        exec,
        |tape, vars, input| {
            let x = tape.constant(input.clone());
            let z = encode(&cfg, tape, vars, x)?;
            let y = decode(&cfg, tape, vars, z)?;
            Ok(StepOutput {
                loss: tape.mse(y, x)?,
                correct: None,
            })
        },
    )?;
    Ok((ae, log))
}

/// Latent matrix `[M, latent_dim]`, one row per patch in input order.
pub fn featurize(patches: &[Patch], ae: &AutoEncoder<f32>, exec: Exec) -> Result<Tensor<f32>> {
    check_patch_size(patches, &ae.config)?;
    let rows = exec.try_map(patches, |p| ae.embed(&patch_tensor(&p.pixels, p.size)?))?;
    let d = ae.config.latent_dim;
    Tensor::new(vec![patches.len(), d], rows.concat())
}

/// Mean reconstruction MSE over the given patches.
pub fn reconstruction_mse(patches: &[Patch], ae: &AutoEncoder<f32>, exec: Exec) -> Result<f64> {
    check_patch_size(patches, &ae.config)?;
    if patches.is_empty() {
        return Ok(0.0);
    }
    let errs = exec.try_map(patches, |p| -> Result<f64> {
        let x = patch_tensor::<f32>(&p.pixels, p.size)?;
        let y = ae.reconstruct(&x)?;
        let se: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| f64::from(a - b).powi(2))
            .sum();
        Ok(se / x.len() as f64)
    })?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

impl AutoEncoder<f32> {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::to_value(&self.config)?,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, origin: &std::path::Path) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, origin)?;
        let config: EncoderConfig = serde_json::from_value(ck.meta.clone())?;
        let template = Self::init(config.clone())?;
        for (name, t) in template
            .params
            .names()
            .iter()
            .zip(template.params.tensors())
        {
            ck.params.require(name, t.shape())?;
        }
        Ok(Self {
            config,
            params: ck.params.clone(),
        })
    }
}
