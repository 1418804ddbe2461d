//! Parameter layout and storage.
//!
//! All parameters live in one flat `Vec<f64>`; a [`Layout`] records where
//! each named tensor sits. Gradients and Adam moments reuse the same layout,
//! so optimizer updates and finite-difference probes are plain slice loops.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Affine map `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, Copy)]
pub struct LinearSlots {
    pub w: Slot,
    pub b: Slot,
}

#[derive(Debug, Clone, Copy)]
pub struct NormSlots {
    pub gain: Slot,
    pub bias: Slot,
}

/// Query/key/value/output projections, each `d_model × d_model`. Head `h`
/// owns columns `h·d_head .. (h+1)·d_head` of the q/k/v outputs.
#[derive(Debug, Clone, Copy)]
pub struct AttnSlots {
    pub q: LinearSlots,
    pub k: LinearSlots,
    pub v: LinearSlots,
    pub o: LinearSlots,
}

#[derive(Debug, Clone, Copy)]
pub struct FfSlots {
    pub up: LinearSlots,
    pub down: LinearSlots,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerSlots {
    pub attn_norm: NormSlots,
    pub attn: AttnSlots,
    pub ff_norm: NormSlots,
    pub ff: FfSlots,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerSlots {
    pub self_norm: NormSlots,
    pub self_attn: AttnSlots,
    pub cross_norm: NormSlots,
    pub cross_attn: AttnSlots,
    pub ff_norm: NormSlots,
    pub ff: FfSlots,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: Slot,
    pub encoder: Vec<EncoderLayerSlots>,
    pub encoder_norm: NormSlots,
    pub decoder: Vec<DecoderLayerSlots>,
    pub decoder_norm: NormSlots,
    /// Output logits reuse the embedding table; only the bias is separate.
    pub output_bias: Slot,
    named: Vec<(String, Slot)>,
    len: usize,
}

struct LayoutBuilder {
    named: Vec<(String, Slot)>,
    len: usize,
}

impl LayoutBuilder {
    fn slot(&mut self, name: String, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        self.len += slot.len();
        self.named.push((name, slot));
        slot
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearSlots {
        LinearSlots {
            w: self.slot(format!("{prefix}.weight"), fan_in, fan_out),
            b: self.slot(format!("{prefix}.bias"), 1, fan_out),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormSlots {
        NormSlots {
            gain: self.slot(format!("{prefix}.gain"), 1, d),
            bias: self.slot(format!("{prefix}.bias"), 1, d),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnSlots {
        AttnSlots {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfSlots {
        FfSlots {
            up: self.linear(&format!("{prefix}.up"), d, d_ff),
            down: self.linear(&format!("{prefix}.down"), d_ff, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = LayoutBuilder {
            named: Vec::new(),
            len: 0,
        };
        let embed = b.slot("embed".into(), cfg.vocab_size, d);
        let encoder = (0..cfg.n_enc_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerSlots {
                    attn_norm: b.norm(&format!("{p}.attn_norm"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ff_norm: b.norm(&format!("{p}.ff_norm"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.d_ff),
                }
            })
            .collect();
        let encoder_norm = b.norm("encoder.norm", d);
        let decoder = (0..cfg.n_dec_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerSlots {
                    self_norm: b.norm(&format!("{p}.self_norm"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    cross_norm: b.norm(&format!("{p}.cross_norm"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                    ff_norm: b.norm(&format!("{p}.ff_norm"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.d_ff),
                }
            })
            .collect();
        let decoder_norm = b.norm("decoder.norm", d);
        let output_bias = b.slot("output.bias".into(), 1, cfg.vocab_size);
        Layout {
            embed,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            output_bias,
            named: b.named,
            len: b.len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Every tensor in storage order.
    pub fn named(&self) -> &[(String, Slot)] {
        &self.named
    }

    pub fn find(&self, name: &str) -> Option<Slot> {
        self.named.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    /// Flat index range covered by the encoder (embedding included).
    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        self.embed.offset..self.encoder_norm.bias.range().end
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl ModelParams {
    /// Random initialization: scaled normal weights, unit norm gains, zero
    /// biases. Residual output projections are shrunk by the depth.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(&config));
        let mut data = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = (2 * (config.n_enc_layers + config.n_dec_layers)) as f64;

        let mut fill = |slot: Slot, std: f64, data: &mut [f64]| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut data[slot.range()] {
                *v = normal.sample(&mut rng);
            }
        };
        fill(layout.embed, 1.0 / (config.d_model as f64).sqrt(), &mut data);
        let fan_in_std = |s: Slot| 1.0 / (s.rows as f64).sqrt();
        let init_attn = |a: &AttnSlots, data: &mut [f64], fill: &mut dyn FnMut(Slot, f64, &mut [f64])| {
            for l in [a.q, a.k, a.v] {
                fill(l.w, fan_in_std(l.w), data);
            }
            fill(a.o.w, fan_in_std(a.o.w) / depth.sqrt(), data);
        };
        let init_ff = |f: &FfSlots, data: &mut [f64], fill: &mut dyn FnMut(Slot, f64, &mut [f64])| {
            fill(f.up.w, fan_in_std(f.up.w), data);
            fill(f.down.w, fan_in_std(f.down.w) / depth.sqrt(), data);
        };
        let unit = |n: &NormSlots, data: &mut [f64]| data[n.gain.range()].fill(1.0);

        for layer in &layout.encoder {
            unit(&layer.attn_norm, &mut data);
            unit(&layer.ff_norm, &mut data);
            init_attn(&layer.attn, &mut data, &mut fill);
            init_ff(&layer.ff, &mut data, &mut fill);
        }
        unit(&layout.encoder_norm, &mut data);
        for layer in &layout.decoder {
            unit(&layer.self_norm, &mut data);
            unit(&layer.cross_norm, &mut data);
            unit(&layer.ff_norm, &mut data);
            init_attn(&layer.self_attn, &mut data, &mut fill);
            init_attn(&layer.cross_attn, &mut data, &mut fill);
            init_ff(&layer.ff, &mut data, &mut fill);
        }
        unit(&layout.decoder_norm, &mut data);

        Ok(ModelParams { config, layout, data })
    }

    pub fn from_parts(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(&config));
        if data.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, layout needs {}",
                data.len(),
                layout.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite parameter".into()));
        }
        Ok(ModelParams { config, layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice(&self, slot: Slot) -> &[f64] {
        &self.data[slot.range()]
    }

    pub fn slice_mut(&mut self, slot: Slot) -> &mut [f64] {
        &mut self.data[slot.range()]
    }

    pub fn tensor(&self, name: &str) -> Option<Matrix> {
        let slot = self.layout.find(name)?;
        Some(Matrix::from_vec(slot.rows, slot.cols, self.slice(slot).to_vec()).expect("slot shape"))
    }

    /// SHA-256 over config and raw parameter bytes.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
