//! Versioned binary checkpoints plus a JSON summary sidecar.
//!
//! Layout (little-endian): `ARIDNET` + version byte, payload length (u64),
//! payload, SHA-256 of the payload. The payload holds the network config,
//! standardizer, basis fingerprint and knots, parameters, optional Adam
//! state and the loss history.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::basis::{BandwidthRule, BasisConfig, SpatialKnots, TemporalKnots};
use crate::error::{Error, Result};
use crate::grid::Reader;
use crate::nn::{AdamHyper, AdamState, EpochStats, LayerParams, Network, NetworkConfig, Standardizer};

pub const MAGIC: &[u8; 7] = b"ARIDNET";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub adam: Option<AdamState>,
    pub basis: BasisConfig,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn epochs_completed(&self) -> usize {
        self.history.last().map_or(0, |h| h.epoch)
    }

    /// Rejects a checkpoint whose input layer does not fit `width` features.
    pub fn check_input_width(&self, width: usize) -> Result<()> {
        let have = self.network.input_width();
        if have != width {
            return Err(Error::Shape(format!("checkpoint input width {have} does not match feature width {width}")));
        }
        Ok(())
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|v| self.f64(*v));
    }
    fn params(&mut self, layers: &[LayerParams]) {
        for l in layers {
            self.f64s(&l.weights);
            self.f64s(&l.biases);
        }
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.network;
    let mut w = Writer(Vec::new());
    w.u32(net.config.layer_widths.len());
    for width in &net.config.layer_widths {
        w.u32(*width);
    }
    w.f64(net.config.dropout_rate);
    w.u64(net.config.seed);
    match &net.standardizer {
        Some(s) => {
            w.u8(1);
            w.u32(s.mean.len());
            w.f64s(&s.mean);
            w.f64s(&s.sd);
        }
        None => w.u8(0),
    }
    w.0.extend_from_slice(&ckpt.basis.fingerprint());
    let b = &ckpt.basis;
    w.u32(b.spatial.knots.len());
    for (lon, lat) in &b.spatial.knots {
        w.f64(*lon);
        w.f64(*lat);
    }
    w.f64(b.spatial.theta);
    w.u8(b.spatial.rule as u8);
    w.u32(b.temporal.knots.len());
    w.f64s(&b.temporal.knots);
    w.f64(b.temporal.kappa);
    match b.pr_clamp {
        Some((lo, hi)) => {
            w.u8(1);
            w.f64(lo);
            w.f64(hi);
        }
        None => w.u8(0),
    }
    w.params(&net.layers);
    match &ckpt.adam {
        Some(a) => {
            w.u8(1);
            w.u64(a.step);
            w.f64s(&[a.hyper.learning_rate, a.hyper.beta1, a.hyper.beta2, a.hyper.epsilon]);
            w.params(&a.first);
            w.params(&a.second);
        }
        None => w.u8(0),
    }
    w.u32(ckpt.history.len());
    for h in &ckpt.history {
        w.u32(h.epoch);
        w.f64(h.train_loss);
        match h.val_loss {
            Some(v) => {
                w.u8(1);
                w.f64(v);
            }
            None => w.u8(0),
        }
    }
    let payload = w.0;
    let mut out = Vec::with_capacity(payload.len() + 48);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest: [u8; 32] = Sha256::digest(&payload).into();
    out.extend_from_slice(&digest);
    out
}

fn read_params(r: &mut Reader, widths: &[usize]) -> Result<Vec<LayerParams>> {
    widths
        .windows(2)
        .map(|w| {
            let (rows, cols) = (w[1], w[0]);
            let weights = (0..rows * cols).map(|_| r.f64()).collect::<Result<_>>()?;
            let biases = (0..rows).map(|_| r.f64()).collect::<Result<_>>()?;
            Ok(LayerParams { rows, cols, weights, biases })
        })
        .collect()
}

fn bounded(n: u32, limit: usize, what: &str) -> Result<usize> {
    let n = n as usize;
    if n > limit {
        return Err(Error::Integrity(format!("{what} count {n} exceeds file size")));
    }
    Ok(n)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(7)? != MAGIC {
        return Err(Error::Integrity("missing ARIDNET magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let len = r.u64()? as usize;
    if r.remaining() != len.saturating_add(32) {
        return Err(Error::Integrity(format!(
            "payload length {len} disagrees with file size ({} bytes follow)",
            r.remaining()
        )));
    }
    let payload = r.take(len)?;
    let digest = r.take(32)?;
    let expect: [u8; 32] = Sha256::digest(payload).into();
    if digest != expect {
        return Err(Error::Integrity("checksum mismatch".into()));
    }

    let mut r = Reader::new(payload);
    let limit = payload.len();
    let n_widths = bounded(r.u32()?, limit, "layer")?;
    let widths = (0..n_widths).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let config = NetworkConfig { layer_widths: widths.clone(), dropout_rate: r.f64()?, seed: r.u64()? };
    config.validate().map_err(|e| Error::Integrity(format!("bad network config: {e}")))?;
    let standardizer = match r.u8()? {
        0 => None,
        1 => {
            let n = bounded(r.u32()?, limit, "covariate")?;
            let mean = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            let sd = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            Some(Standardizer { mean, sd })
        }
        f => return Err(Error::Integrity(format!("bad standardizer flag {f}"))),
    };
    let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
    let n_spatial = bounded(r.u32()?, limit, "spatial knot")?;
    let knots = (0..n_spatial).map(|_| Ok((r.f64()?, r.f64()?))).collect::<Result<Vec<_>>>()?;
    let theta = r.f64()?;
    let rule = match r.u8()? {
        0 => BandwidthRule::MaxDistance,
        1 => BandwidthRule::KnotSpacing,
        f => return Err(Error::Integrity(format!("bad bandwidth rule {f}"))),
    };
    let n_temporal = bounded(r.u32()?, limit, "temporal knot")?;
    let tknots = (0..n_temporal).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let kappa = r.f64()?;
    let pr_clamp = match r.u8()? {
        0 => None,
        1 => Some((r.f64()?, r.f64()?)),
        f => return Err(Error::Integrity(format!("bad clamp flag {f}"))),
    };
    let basis = BasisConfig {
        spatial: SpatialKnots::new(knots, theta, rule)?,
        temporal: TemporalKnots::new(tknots, kappa)?,
        pr_clamp,
    };
    if basis.fingerprint() != fingerprint {
        return Err(Error::Integrity("basis configuration does not match its fingerprint".into()));
    }
    let layers = read_params(&mut r, &widths)?;
    let network = Network::from_parts(config, layers, standardizer)?;
    if basis.n_features() != network.input_width() {
        return Err(Error::Shape(format!(
            "basis yields {} features but the network expects {}",
            basis.n_features(),
            network.input_width()
        )));
    }
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let hyper = AdamHyper { learning_rate: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, epsilon: r.f64()? };
            let first = read_params(&mut r, &widths)?;
            let second = read_params(&mut r, &widths)?;
            Some(AdamState { step, first, second, hyper })
        }
        f => return Err(Error::Integrity(format!("bad optimizer flag {f}"))),
    };
    let n_hist = bounded(r.u32()?, limit, "history")?;
    let history = (0..n_hist)
        .map(|_| {
            let epoch = r.u32()? as usize;
            let train_loss = r.f64()?;
            let val_loss = match r.u8()? {
                0 => None,
                1 => Some(r.f64()?),
                f => return Err(Error::Integrity(format!("bad val-loss flag {f}"))),
            };
            Ok(EpochStats { epoch, train_loss, val_loss })
        })
        .collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::Integrity(format!("{} unread payload bytes", r.remaining())));
    }
    Ok(Checkpoint { network, adam, basis, history })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    version: u8,
    layer_widths: &'a [usize],
    dropout_rate: f64,
    seed: u64,
    n_params: usize,
    spatial_knots: usize,
    spatial_bandwidth: f64,
    bandwidth_rule: BandwidthRule,
    temporal_knots: &'a [f64],
    temporal_kappa: f64,
    pr_clamp: Option<(f64, f64)>,
    basis_fingerprint: String,
    standardizer: Option<&'a Standardizer>,
    optimizer_steps: Option<u64>,
    optimizer: Option<AdamHyper>,
    history: &'a [EpochStats],
}

/// Human-readable architecture and training summary.
pub fn sidecar_json(ckpt: &Checkpoint) -> String {
    let net = &ckpt.network;
    let fp: String = ckpt.basis.fingerprint().iter().map(|b| format!("{b:02x}")).collect();
    let s = Sidecar {
        format: "ARIDNET",
        version: VERSION,
        layer_widths: &net.config.layer_widths,
        dropout_rate: net.config.dropout_rate,
        seed: net.config.seed,
        n_params: net.n_params(),
        spatial_knots: ckpt.basis.spatial.len(),
        spatial_bandwidth: ckpt.basis.spatial.theta,
        bandwidth_rule: ckpt.basis.spatial.rule,
        temporal_knots: &ckpt.basis.temporal.knots,
        temporal_kappa: ckpt.basis.temporal.kappa,
        pr_clamp: ckpt.basis.pr_clamp,
        basis_fingerprint: fp,
        standardizer: net.standardizer.as_ref(),
        optimizer_steps: ckpt.adam.as_ref().map(|a| a.step),
        optimizer: ckpt.adam.as_ref().map(|a| a.hyper),
        history: &ckpt.history,
    };
    serde_json::to_string_pretty(&s).expect("sidecar serializes")
}
