//! Reproducible interference-network generator.
//!
//! Transmitters sit on a square grid with fixed pitch; each receiver is
//! dropped at a uniform random bearing and a uniform random distance from its
//! own transmitter. The CSI from transmitter `j` to receiver `i` on channel `m`
//! is `sqrt(G_ij) * |r_ij^m|` with `G_ij = 1 / (1 + d_ij^α)` and
//! `r ~ CN(0, 1)`.
//!
//! All randomness comes from ChaCha8 streams. Instance `k` of a dataset is drawn
//! from its own stream seeded with [`substream_seed`]`(cfg.seed, k)`, so any
//! instance can be regenerated without replaying the others.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkInstance;

pub type SimRng = ChaCha8Rng;

const MAX_DRAW_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub num_pairs: usize,
    pub num_channels: usize,
    /// Transmitter grid pitch, meters.
    pub tx_spacing: f64,
    pub rx_dist_min: f64,
    pub rx_dist_max: f64,
    pub path_loss_exponent: f64,
    /// Bounds of the uniform per-pair minimum rate draw, bits/s/Hz.
    pub r_min_low: f64,
    pub r_min_high: f64,
    pub p_max: f64,
    pub noise_power: f64,
    pub seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            num_pairs: 6,
            num_channels: 2,
            tx_spacing: 50.0,
            rx_dist_min: 2.0,
            rx_dist_max: 10.0,
            path_loss_exponent: 2.0,
            r_min_low: 1.0,
            r_min_high: 2.0,
            p_max: 1.0,
            noise_power: 1e-3,
            seed: 1,
        }
    }
}

impl TopologyConfig {
    pub fn with_size(num_pairs: usize, num_channels: usize) -> Self {
        TopologyConfig {
            num_pairs,
            num_channels,
            ..Default::default()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.num_pairs == 0 || self.num_channels == 0 {
            return Err(Error::InvalidArgument(
                "num_pairs and num_channels must be positive".into(),
            ));
        }
        if !(self.rx_dist_min > 0.0 && self.rx_dist_min <= self.rx_dist_max) {
            return Err(Error::InvalidArgument("need 0 < rx_dist_min <= rx_dist_max".into()));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::InvalidArgument("path loss exponent must be positive".into()));
        }
        if !(self.r_min_low >= 0.0 && self.r_min_low <= self.r_min_high) {
            return Err(Error::InvalidArgument("need 0 <= r_min_low <= r_min_high".into()));
        }
        if !(self.p_max > 0.0 && self.noise_power > 0.0 && self.tx_spacing > 0.0) {
            return Err(Error::InvalidArgument(
                "p_max, noise_power and tx_spacing must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split '{other}' (expected train|test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: TopologyConfig,
    pub split: Split,
    pub instances: Vec<NetworkInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub tx: Vec<[f64; 2]>,
    pub rx: Vec<[f64; 2]>,
    /// `d[i * D + j]`: distance from transmitter `j` to receiver `i`.
    pub dist: Vec<f64>,
}

impl Topology {
    pub fn distance(&self, rx: usize, tx: usize) -> f64 {
        self.dist[rx * self.tx.len() + tx]
    }
}

/// Large-scale fading `1 / (1 + d^α)`.
pub fn large_scale_gain(distance: f64, exponent: f64) -> f64 {
    1.0 / (1.0 + distance.powf(exponent))
}

/// SplitMix64 finalizer applied to `(seed, index)`; the per-instance seed.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn place_topology(cfg: &TopologyConfig, rng: &mut impl Rng) -> Topology {
    let d = cfg.num_pairs;
    let cols = (d as f64).sqrt().ceil().max(1.0) as usize;
    let tx: Vec<[f64; 2]> = (0..d)
        .map(|k| [(k % cols) as f64 * cfg.tx_spacing, (k / cols) as f64 * cfg.tx_spacing])
        .collect();
    let rx: Vec<[f64; 2]> = tx
        .iter()
        .map(|t| {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let r = cfg.rx_dist_min + rng.random::<f64>() * (cfg.rx_dist_max - cfg.rx_dist_min);
            [t[0] + r * theta.cos(), t[1] + r * theta.sin()]
        })
        .collect();
    let mut dist = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let dx = rx[i][0] - tx[j][0];
            let dy = rx[i][1] - tx[j][1];
            dist[i * d + j] = dx.hypot(dy);
        }
    }
    Topology { tx, rx, dist }
}

/// Magnitude of a CN(0, 1) draw (unit mean power Rayleigh).
fn rayleigh(rng: &mut impl Rng) -> f64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    (0.5 * (re * re + im * im)).sqrt()
}

pub fn draw_instance(cfg: &TopologyConfig, rng: &mut impl Rng) -> Result<NetworkInstance> {
    cfg.validate()?;
    let (d, m) = (cfg.num_pairs, cfg.num_channels);
    for _ in 0..MAX_DRAW_ATTEMPTS {
        let topo = place_topology(cfg, rng);
        let mut gains = vec![0.0; d * d * m];
        for i in 0..d {
            for j in 0..d {
                let large = large_scale_gain(topo.distance(i, j), cfg.path_loss_exponent).sqrt();
                for c in 0..m {
                    gains[(i * d + j) * m + c] = large * rayleigh(rng);
                }
            }
        }
        let r_min_bits = (0..d)
            .map(|_| cfg.r_min_low + rng.random::<f64>() * (cfg.r_min_high - cfg.r_min_low))
            .collect();
        let inst = NetworkInstance {
            num_pairs: d,
            num_channels: m,
            gains,
            noise: vec![cfg.noise_power; d],
            p_max: cfg.p_max,
            weights: vec![1.0; d],
            r_min_bits,
            seed: 0,
        };
        if inst.has_live_links() {
            inst.validate()?;
            return Ok(inst);
        }
    }
    Err(Error::Degenerate {
        attempts: MAX_DRAW_ATTEMPTS,
    })
}

/// Instance `index` of the dataset described by `cfg`.
pub fn draw_indexed(cfg: &TopologyConfig, index: usize) -> Result<NetworkInstance> {
    let seed = substream_seed(cfg.seed, index as u64);
    let mut rng = rng_from_seed(seed);
    let mut inst = draw_instance(cfg, &mut rng).map_err(|e| e.at_instance(index))?;
    inst.seed = seed;
    Ok(inst)
}

pub fn gen_dataset(cfg: &TopologyConfig, count: usize, split: Split) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset count must be at least 1".into()));
    }
    cfg.validate()?;
    let instances = (0..count).map(|k| draw_indexed(cfg, k)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        split,
        instances,
    })
}

/// Zeroes a uniformly random subset of `round(fraction * D(D-1)M)` interference
/// gains. Direct gains are never touched.
pub fn mask_csi(inst: &NetworkInstance, fraction: f64, rng: &mut impl Rng) -> Result<NetworkInstance> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "mask fraction {fraction} outside [0, 0.5]"
        )));
    }
    let (d, m) = (inst.num_pairs, inst.num_channels);
    let off_diag: Vec<usize> = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .flat_map(|(i, j)| (0..m).map(move |c| (i * d + j) * m + c))
        .collect();
    let k = (fraction * off_diag.len() as f64).round() as usize;
    let mut out = inst.clone();
    if k == 0 {
        return Ok(out);
    }
    for pos in sample(rng, off_diag.len(), k) {
        out.gains[off_diag[pos]] = 0.0;
    }
    Ok(out)
}

const DATASET_MAGIC: &[u8; 8] = b"QOSADSET";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    config: TopologyConfig,
    split: Split,
    count: usize,
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn take_f64s(bytes: &[u8], offset: &mut usize, n: usize) -> Result<Vec<f64>> {
    let end = *offset + n * 8;
    if end > bytes.len() {
        return Err(Error::Format("record shorter than declared".into()));
    }
    let out = bytes[*offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *offset = end;
    Ok(out)
}

fn encode_instance(inst: &NetworkInstance) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + 8 * (inst.gains.len() + 3 * inst.num_pairs));
    buf.extend_from_slice(&(inst.num_pairs as u32).to_le_bytes());
    buf.extend_from_slice(&(inst.num_channels as u32).to_le_bytes());
    buf.extend_from_slice(&inst.seed.to_le_bytes());
    buf.extend_from_slice(&inst.p_max.to_le_bytes());
    for v in inst
        .gains
        .iter()
        .chain(&inst.noise)
        .chain(&inst.weights)
        .chain(&inst.r_min_bits)
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn decode_instance(bytes: &[u8]) -> Result<NetworkInstance> {
    if bytes.len() < 24 {
        return Err(Error::Format("instance record too short".into()));
    }
    let d = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let p_max = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let mut off = 24;
    let expected = 24 + 8 * (d * d * m + 3 * d);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "instance record is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let gains = take_f64s(bytes, &mut off, d * d * m)?;
    let noise = take_f64s(bytes, &mut off, d)?;
    let weights = take_f64s(bytes, &mut off, d)?;
    let r_min_bits = take_f64s(bytes, &mut off, d)?;
    let inst = NetworkInstance {
        num_pairs: d,
        num_channels: m,
        gains,
        noise,
        p_max,
        weights,
        r_min_bits,
        seed,
    };
    inst.validate()
        .map_err(|e| Error::Format(format!("invalid instance record: {e}")))?;
    Ok(inst)
}

/// Layout: magic, u32 version, u64 header length, JSON header, then per
/// instance a u64 length prefix and a record of little-endian fields
/// (`u32 D, u32 M, u64 seed, f64 p_max`, gains in `(i, j, m)` order, noise,
/// weights, r_min).
pub fn write_dataset(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    let header = serde_json::to_vec(&DatasetHeader {
        config: ds.config.clone(),
        split: ds.split,
        count: ds.instances.len(),
    })?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for inst in &ds.instances {
        let rec = encode_instance(inst);
        w.write_all(&(rec.len() as u64).to_le_bytes())?;
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    let mut magic = [0u8; 8];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let mut word = [0u8; 4];
    read_exact_or_format(r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let mut len = [0u8; 8];
    read_exact_or_format(r, &mut len, "header length")?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    read_exact_or_format(r, &mut header, "header")?;
    let header: DatasetHeader = serde_json::from_slice(&header)?;
    let mut instances = Vec::with_capacity(header.count);
    for k in 0..header.count {
        read_exact_or_format(r, &mut len, "record length")?;
        let mut rec = vec![0u8; u64::from_le_bytes(len) as usize];
        read_exact_or_format(r, &mut rec, "instance record")?;
        instances.push(decode_instance(&rec).map_err(|e| e.at_instance(k))?);
    }
    Ok(Dataset {
        config: header.config,
        split: header.split,
        instances,
    })
}

pub fn store(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_scale_values() {
        assert_eq!(large_scale_gain(0.0, 2.0), 1.0);
        assert_eq!(large_scale_gain(1.0, 2.0), 0.5);
        assert!((large_scale_gain(3.0, 2.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_pair_distance_in_range() {
        let cfg = TopologyConfig::with_size(1, 1);
        for s in 0..200 {
            let topo = place_topology(&cfg, &mut rng_from_seed(s));
            let d = topo.distance(0, 0);
            assert!((2.0..=10.0).contains(&d), "{d}");
        }
    }

    #[test]
    fn grid_pitch() {
        let cfg = TopologyConfig::with_size(4, 1);
        let topo = place_topology(&cfg, &mut rng_from_seed(3));
        let sep = |a: usize, b: usize| (topo.tx[a][0] - topo.tx[b][0]).hypot(topo.tx[a][1] - topo.tx[b][1]);
        assert_eq!(sep(0, 1), 50.0);
        assert_eq!(sep(0, 2), 50.0);
        assert_eq!(sep(2, 3), 50.0);
        for i in 0..4 {
            assert!((2.0..=10.0).contains(&topo.distance(i, i)));
        }
    }

    #[test]
    fn placement_deterministic() {
        let cfg = TopologyConfig::with_size(9, 2);
        let a = place_topology(&cfg, &mut rng_from_seed(11));
        let b = place_topology(&cfg, &mut rng_from_seed(11));
        assert_eq!(a, b);
    }

    #[test]
    fn r_min_within_bounds() {
        let cfg = TopologyConfig::with_size(9, 3);
        let inst = draw_indexed(&cfg, 0).unwrap();
        assert!(inst.r_min_bits.iter().all(|r| (1.0..=2.0).contains(r)));
        assert!(inst.has_live_links());
    }

    #[test]
    fn gen_dataset_contract() {
        let cfg = TopologyConfig::with_size(4, 2);
        let ds = gen_dataset(&cfg, 1000, Split::Test).unwrap();
        assert_eq!(ds.instances.len(), 1000);
        let again = gen_dataset(&cfg, 1000, Split::Test).unwrap();
        assert_eq!(ds, again);
        assert_eq!(ds.instances[17], draw_indexed(&cfg, 17).unwrap());
        assert!(gen_dataset(&cfg, 0, Split::Train).is_err());
    }

    #[test]
    fn mask_counts() {
        let cfg = TopologyConfig::with_size(16, 6);
        let inst = draw_indexed(&cfg, 0).unwrap();
        let same = mask_csi(&inst, 0.0, &mut rng_from_seed(1)).unwrap();
        assert_eq!(same, inst);

        let masked = mask_csi(&inst, 0.5, &mut rng_from_seed(1)).unwrap();
        let mut zeroed = 0;
        for i in 0..16 {
            for j in 0..16 {
                for m in 0..6 {
                    let was = inst.gain(i, j, m);
                    let now = masked.gain(i, j, m);
                    if i == j {
                        assert_eq!(was, now);
                    } else if now == 0.0 && was != 0.0 {
                        zeroed += 1;
                    } else {
                        assert_eq!(was, now);
                    }
                }
            }
        }
        assert_eq!(zeroed, (0.5f64 * (16 * 15 * 6) as f64).round() as usize);
        assert_eq!(masked, mask_csi(&inst, 0.5, &mut rng_from_seed(1)).unwrap());
        assert!(mask_csi(&inst, 0.6, &mut rng_from_seed(1)).is_err());
        assert!(mask_csi(&inst, -0.1, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn truncated_and_versioned_files() {
        let cfg = TopologyConfig::with_size(3, 2);
        let ds = gen_dataset(&cfg, 4, Split::Train).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(&mut buf.as_slice()).unwrap(), ds);

        let cut = &buf[..buf.len() - 5];
        assert!(matches!(read_dataset(&mut &cut[..]), Err(Error::Format(_))));

        let mut bad = buf.clone();
        bad[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            read_dataset(&mut bad.as_slice()),
            Err(Error::Version { found: 7, .. })
        ));
    }
}
