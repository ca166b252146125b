//! Dual-encoder U-net for pixel-wise LAI regression.
//!
//! ```text
//!  S1 stack ─┐                                   ┌─ head ─> LAI (enc1)
//!  masks ─ 1x1 conv ─┼─ concat ─ U-net (enc1) ─ F1 ┤
//!  season ─ MLP ─ broadcast ┘                    └──┐
//!                                                  concat ─ U-net (dec) ─> LAI
//!  past LAI ─┐                                   ┌──┘
//!  masks ─ 1x1 conv ─┼─ concat ─ U-net (enc2) ─ F2 ┤
//!  season ─ MLP ─ broadcast ┘                    └─ head ─> LAI (enc2)
//! ```
//!
//! Both encoders share structure but not weights. Encoder features stay at
//! input resolution so the pixel-wise heads and the decoder see per-pixel
//! features.

mod batch;
mod params;
mod unet;

pub use batch::{Batch, BatchVars, InputAblation};
pub use params::{load_params, save_params, Bound, Checkpoint, ParamStore, CHECKPOINT_VERSION};
pub use unet::UNetConfig;

use serde::{Deserialize, Serialize};

use crate::dataio::{MASK_CHANNELS, PAST_FRAMES, S1_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};
use params::{Initializer, WeightInit};
use unet::conv;

/// Output channels of the pointwise mask reduction.
pub const MASK_EMBED: usize = 4;
pub const SEASON_HIDDEN: usize = 8;
pub const SEASON_EMBED: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_depth: usize,
    pub encoder_base: usize,
    pub decoder_depth: usize,
    pub decoder_base: usize,
    /// Channels of each encoder's full-resolution feature map.
    pub features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_depth: 3,
            encoder_base: 16,
            decoder_depth: 2,
            decoder_base: 16,
            features: 16,
        }
    }
}

impl ModelConfig {
    pub fn encoder_unet(&self, kind: EncoderKind) -> UNetConfig {
        UNetConfig {
            depth: self.encoder_depth,
            base_channels: self.encoder_base,
            in_channels: kind.primary_channels() + MASK_EMBED + SEASON_EMBED,
            out_channels: self.features,
        }
    }

    pub fn decoder_unet(&self) -> UNetConfig {
        UNetConfig {
            depth: self.decoder_depth,
            base_channels: self.decoder_base,
            in_channels: 2 * self.features,
            out_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_base == 0 || self.decoder_base == 0 || self.features == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Radar branch.
    Enc1,
    /// Past-LAI branch.
    Enc2,
}

impl EncoderKind {
    pub fn prefix(self) -> &'static str {
        match self {
            EncoderKind::Enc1 => "enc1",
            EncoderKind::Enc2 => "enc2",
        }
    }

    pub fn primary_channels(self) -> usize {
        match self {
            EncoderKind::Enc1 => S1_CHANNELS,
            EncoderKind::Enc2 => PAST_FRAMES,
        }
    }

    pub fn primary_input(self, vars: &BatchVars) -> Var {
        match self {
            EncoderKind::Enc1 => vars.s1,
            EncoderKind::Enc2 => vars.lai_past,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One encoder with its pixel-wise head.
    Encoder(EncoderKind),
    /// Both encoders, their heads, and the decoder.
    Full,
}

pub(crate) fn init_encoder<T: Scalar>(
    cfg: &ModelConfig,
    kind: EncoderKind,
    init: &mut Initializer,
    store: &mut ParamStore<T>,
) -> Result<()> {
    let p = kind.prefix();
    init.conv(
        store,
        &format!("{p}.mask_pw"),
        MASK_EMBED,
        MASK_CHANNELS,
        1,
        WeightInit::Linear,
    )?;
    init.linear(
        store,
        &format!("{p}.season.fc1"),
        SEASON_HIDDEN,
        2,
        WeightInit::Relu,
    )?;
    init.linear(
        store,
        &format!("{p}.season.fc2"),
        SEASON_EMBED,
        SEASON_HIDDEN,
        WeightInit::Linear,
    )?;
    cfg.encoder_unet(kind)
        .init(init, store, &format!("{p}.unet"), WeightInit::Linear)?;
    init.conv(
        store,
        &format!("{p}.head"),
        1,
        cfg.features,
        1,
        WeightInit::Zero,
    )
}

/// Fresh parameters for `arch`, deterministic in `seed`.
pub fn init_params<T: Scalar>(
    cfg: &ModelConfig,
    arch: Architecture,
    seed: u64,
) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut init = Initializer::new(seed);
    let mut store = ParamStore::new();
    match arch {
        Architecture::Encoder(kind) => init_encoder(cfg, kind, &mut init, &mut store)?,
        Architecture::Full => {
            init_encoder(cfg, EncoderKind::Enc1, &mut init, &mut store)?;
            init_encoder(cfg, EncoderKind::Enc2, &mut init, &mut store)?;
            cfg.decoder_unet()
                .init(&mut init, &mut store, "dec.unet", WeightInit::Zero)?;
        }
    }
    Ok(store)
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[N, F, H, W]`
    pub features: Var,
    /// `[N, 1, H, W]`
    pub head: Var,
}

pub fn encoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    kind: EncoderKind,
    primary: Var,
    masks_onehot: Var,
    season: Var,
) -> Result<EncoderOutput> {
    let prefix = kind.prefix();
    let (n, cp, h, w) = tape.value(primary).dims4()?;
    if cp != kind.primary_channels() {
        return Err(Error::Contract(format!(
            "{prefix}: primary input has {cp} channels, expected {}",
            kind.primary_channels()
        )));
    }
    let unet = cfg.encoder_unet(kind);
    unet.check_tile(h, w)?;
    if tape.value(season).shape() != [n, 2] {
        return Err(Error::Contract(format!(
            "{prefix}: season features {:?} for a batch of {n}",
            tape.value(season).shape()
        )));
    }

    let m = conv(tape, p, &format!("{prefix}.mask_pw"), masks_onehot, 0)?;
    let s = tape.linear(
        season,
        p.get(&format!("{prefix}.season.fc1.w"))?,
        p.get(&format!("{prefix}.season.fc1.b"))?,
    )?;
    let s = tape.relu(s);
    let s = tape.linear(
        s,
        p.get(&format!("{prefix}.season.fc2.w"))?,
        p.get(&format!("{prefix}.season.fc2.b"))?,
    )?;
    let s = tape.broadcast_spatial(s, h, w)?;
    let x = tape.concat_channels(&[primary, m, s])?;
    let features = unet.forward(tape, p, &format!("{prefix}.unet"), x)?;
    let head = conv(tape, p, &format!("{prefix}.head"), features, 0)?;
    Ok(EncoderOutput { features, head })
}

pub fn decoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    f1: Var,
    f2: Var,
) -> Result<Var> {
    if tape.value(f1).shape() != tape.value(f2).shape() {
        return Err(Error::Contract(format!(
            "decoder: encoder features {:?} and {:?} are not aligned",
            tape.value(f1).shape(),
            tape.value(f2).shape()
        )));
    }
    let x = tape.concat_channels(&[f1, f2])?;
    cfg.decoder_unet().forward(tape, p, "dec.unet", x)
}

/// The three LAI maps of the intermediate-supervision loss. Encoder-only
/// architectures populate only their own head.
#[derive(Clone, Copy, Debug, Default)]
pub struct Predictions {
    pub dec: Option<Var>,
    pub enc1: Option<Var>,
    pub enc2: Option<Var>,
}

impl Predictions {
    /// The map a model is evaluated on: the decoder output when present,
    /// otherwise the single encoder head.
    pub fn primary(&self) -> Var {
        self.dec
            .or(self.enc1)
            .or(self.enc2)
            .expect("at least one prediction")
    }
}

pub fn full_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    inputs: &BatchVars,
) -> Result<Predictions> {
    let e1 = encoder_forward(
        tape,
        p,
        cfg,
        EncoderKind::Enc1,
        inputs.s1,
        inputs.masks,
        inputs.season,
    )?;
    let e2 = encoder_forward(
        tape,
        p,
        cfg,
        EncoderKind::Enc2,
        inputs.lai_past,
        inputs.masks,
        inputs.season,
    )?;
    let dec = decoder_forward(tape, p, cfg, e1.features, e2.features)?;
    Ok(Predictions {
        dec: Some(dec),
        enc1: Some(e1.head),
        enc2: Some(e2.head),
    })
}

pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    arch: Architecture,
    inputs: &BatchVars,
) -> Result<Predictions> {
    match arch {
        Architecture::Full => full_forward(tape, p, cfg, inputs),
        Architecture::Encoder(kind) => {
            let out = encoder_forward(
                tape,
                p,
                cfg,
                kind,
                kind.primary_input(inputs),
                inputs.masks,
                inputs.season,
            )?;
            Ok(match kind {
                EncoderKind::Enc1 => Predictions {
                    enc1: Some(out.head),
                    ..Default::default()
                },
                EncoderKind::Enc2 => Predictions {
                    enc2: Some(out.head),
                    ..Default::default()
                },
            })
        }
    }
}

/// Primary LAI map for each sample, one `H*W` vector per sample, in native
/// units. Runs in chunks without recording gradients.
pub fn predict(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    arch: Architecture,
    ablation: InputAblation,
    stats: &crate::dataio::NormStats,
    samples: &[&crate::dataio::SceneSample],
) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let batch = Batch::<f32>::from_samples(chunk, stats, ablation)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let vars = batch.bind(&mut tape);
        let pred = forward(&mut tape, &bound, cfg, arch, &vars)?.primary();
        let px = batch.target.len() / chunk.len();
        out.extend(tape.value(pred).data().chunks(px).map(<[f32]>::to_vec));
    }
    Ok(out)
}

const PREDICT_CHUNK: usize = 16;

impl Checkpoint {
    pub fn predict(&self, samples: &[&crate::dataio::SceneSample]) -> Result<Vec<Vec<f32>>> {
        predict(
            &self.params,
            &self.config,
            self.architecture,
            self.ablation,
            &self.stats,
            samples,
        )
    }
}
