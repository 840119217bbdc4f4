//! Channel datasets and their binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "LEOSATDS"
//! version    u32
//! kind       u8       1 = channel dataset, 2 = error set
//! provenance u8       see `Provenance`
//! reserved   u16
//! cfg hash   32 bytes SHA-256 of the canonical config JSON
//! seed       u64
//! M, K       u32, u32
//! count      u64      episodes (channel) or vectors (error set)
//! slots      u64      slots per episode (1 for error sets)
//! cfg len    u64, followed by the config JSON
//! payload    f64 pairs (re, im)
//! ```
//!
//! Channel payload: error variance (one f64), ξ (M×M, row-major), then for
//! each episode and slot the true H and the estimate Ĥ (M×K, row-major).
//! Error-set payload: `count` vectors of M complex values.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::generate_episodes;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::estimation::{empirical_autocorrelation, MmseEstimator, PilotConfig};
use crate::linalg::{crandn_vec, CMat, CVec, C64};
use crate::rng::{derive_seed, stream};

pub const MAGIC: &[u8; 8] = b"LEOSATDS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Channel = 1,
    ErrorSet = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    None = 0,
    Vae = 1,
    Gaussian = 2,
    Estimation = 3,
    Composed = 4,
    Prediction = 5,
}

impl Provenance {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Self::None,
            1 => Self::Vae,
            2 => Self::Gaussian,
            3 => Self::Estimation,
            4 => Self::Composed,
            5 => Self::Prediction,
            _ => return Err(Error::Format(format!("unknown provenance tag {v}"))),
        })
    }
}

/// True and estimated channels of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCsi {
    pub h: Vec<CMat>,
    pub h_hat: Vec<CMat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub config: SystemConfig,
    pub seed: u64,
    pub n_slots: usize,
    /// ξ shared by every slot (one pooled correlation matrix per dataset).
    pub xi: CMat,
    pub error_var: f64,
    pub episodes: Vec<EpisodeCsi>,
}

impl ChannelDataset {
    pub fn antennas(&self) -> usize {
        self.config.antennas
    }

    pub fn devices(&self) -> usize {
        self.config.devices
    }

    /// Generate episodes, pool their correlation, and estimate every slot.
    pub fn generate(cfg: &SystemConfig, n_episodes: usize, n_slots: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_episodes == 0 {
            return Err(Error::Empty("episodes"));
        }
        let episodes = generate_episodes(cfg, n_episodes, n_slots, seed)?;
        let columns: Vec<CVec> = episodes
            .iter()
            .flat_map(|e| e.slots.iter().flat_map(|h| h.column_iter().map(|c| c.into_owned())))
            .collect();
        let r = empirical_autocorrelation(&columns)?;
        let pilot = PilotConfig::dft(cfg.pilot_len, cfg.antennas, cfg.pilot_power())?;
        let noise = cfg.noise_var();
        let est = MmseEstimator::new(&r, pilot.error_var(noise))?;
        // ĥ = F·y with F = R(R+vI)⁻¹·(XᴴX)⁻¹Xᴴ / sqrt(P_1 M L)
        let ls = crate::linalg::inverse(&(pilot.x.adjoint() * &pilot.x))? * pilot.x.adjoint()
            / C64::new(pilot.amplitude(), 0.0);
        let f = &est.filter * ls;
        let amp = C64::new(pilot.amplitude(), 0.0);
        let data: Vec<EpisodeCsi> = episodes
            .into_par_iter()
            .enumerate()
            .map(|(e, ep)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::PILOT_NOISE, e as u64));
                let h_hat = ep
                    .slots
                    .iter()
                    .map(|h| {
                        let mut out = CMat::zeros(h.nrows(), h.ncols());
                        for k in 0..h.ncols() {
                            let y = &pilot.x * h.column(k) * amp + crandn_vec(&mut rng, pilot.len, noise);
                            out.set_column(k, &(&f * y));
                        }
                        out
                    })
                    .collect();
                EpisodeCsi { h: ep.slots, h_hat }
            })
            .collect();
        Ok(Self { config: cfg.clone(), seed, n_slots, xi: est.xi, error_var: est.error_var, episodes: data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let (m, k) = (self.antennas(), self.devices());
        write_header(&mut w, FileKind::Channel, Provenance::Estimation, &self.config, self.seed, m, k, self.episodes.len(), self.n_slots)?;
        write_f64(&mut w, self.error_var)?;
        write_mat(&mut w, &self.xi)?;
        for ep in &self.episodes {
            for (h, hh) in ep.h.iter().zip(&ep.h_hat) {
                write_mat(&mut w, h)?;
                write_mat(&mut w, hh)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let hdr = read_header(&mut r)?;
        if hdr.kind != FileKind::Channel {
            return Err(Error::Format("file holds an error set, not a channel dataset".into()));
        }
        let config = hdr.config;
        let (m, k) = (hdr.m, hdr.k);
        if config.antennas != m || config.devices != k {
            return Err(Error::Format("header dims disagree with embedded config".into()));
        }
        let error_var = read_f64(&mut r)?;
        let xi = read_mat(&mut r, m, m)?;
        let mut episodes = Vec::with_capacity(hdr.count);
        for _ in 0..hdr.count {
            let mut h = Vec::with_capacity(hdr.slots);
            let mut h_hat = Vec::with_capacity(hdr.slots);
            for _ in 0..hdr.slots {
                h.push(read_mat(&mut r, m, k)?);
                h_hat.push(read_mat(&mut r, m, k)?);
            }
            episodes.push(EpisodeCsi { h, h_hat });
        }
        expect_eof(&mut r)?;
        Ok(Self { config, seed: hdr.seed, n_slots: hdr.slots, xi, error_var, episodes })
    }

    /// One row per (episode, slot, device, antenna).
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["episode", "slot", "device", "antenna", "h_re", "h_im", "h_hat_re", "h_hat_im"])?;
        for (e, ep) in self.episodes.iter().enumerate() {
            for (s, (h, hh)) in ep.h.iter().zip(&ep.h_hat).enumerate() {
                for k in 0..h.ncols() {
                    for m in 0..h.nrows() {
                        let (a, b) = (h[(m, k)], hh[(m, k)]);
                        w.write_record(&[
                            e.to_string(),
                            s.to_string(),
                            k.to_string(),
                            m.to_string(),
                            a.re.to_string(),
                            a.im.to_string(),
                            b.re.to_string(),
                            b.im.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) struct Header {
    pub kind: FileKind,
    pub provenance: Provenance,
    pub config: SystemConfig,
    pub seed: u64,
    pub m: usize,
    pub k: usize,
    pub count: usize,
    pub slots: usize,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn write_header<W: Write>(
    w: &mut W,
    kind: FileKind,
    provenance: Provenance,
    cfg: &SystemConfig,
    seed: u64,
    m: usize,
    k: usize,
    count: usize,
    slots: usize,
) -> Result<()> {
    let json = serde_json::to_string(cfg)?;
    let hash = Sha256::digest(crate::config::config_hash(cfg).as_bytes());
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[kind as u8, provenance as u8, 0, 0])?;
    w.write_all(&hash)?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&(m as u32).to_le_bytes())?;
    w.write_all(&(k as u32).to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())?;
    w.write_all(&(slots as u64).to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(json.as_bytes())?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic; not a leosat data file".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported data format version {version}")));
    }
    let mut tags = [0u8; 4];
    r.read_exact(&mut tags)?;
    let kind = match tags[0] {
        1 => FileKind::Channel,
        2 => FileKind::ErrorSet,
        t => return Err(Error::Format(format!("unknown file kind {t}"))),
    };
    let provenance = Provenance::from_u8(tags[1])?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    let seed = read_u64(r)?;
    let m = read_u32(r)? as usize;
    let k = read_u32(r)? as usize;
    let count = read_u64(r)? as usize;
    let slots = read_u64(r)? as usize;
    let len = read_u64(r)? as usize;
    if len > 1 << 24 {
        return Err(Error::Format("embedded config is implausibly large".into()));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let config: SystemConfig = serde_json::from_slice(&json)?;
    let expect = Sha256::digest(crate::config::config_hash(&config).as_bytes());
    if expect.as_slice() != hash {
        return Err(Error::Format("config hash mismatch; header is corrupt".into()));
    }
    Ok(Header { kind, provenance, config, seed, m, k, count, slots })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn write_c64<W: Write>(w: &mut W, z: C64) -> Result<()> {
    write_f64(w, z.re)?;
    write_f64(w, z.im)
}

pub(crate) fn read_c64<R: Read>(r: &mut R) -> Result<C64> {
    Ok(C64::new(read_f64(r)?, read_f64(r)?))
}

fn write_mat<W: Write>(w: &mut W, m: &CMat) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            write_c64(w, m[(i, j)])?;
        }
    }
    Ok(())
}

fn read_mat<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<CMat> {
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = read_c64(r)?;
        }
    }
    Ok(m)
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SystemConfig {
        SystemConfig { antennas: 4, devices: 2, pilot_len: 4, ..SystemConfig::default() }
    }

    #[test]
    fn save_load_round_trip() {
        let ds = ChannelDataset::generate(&small_cfg(), 3, 5, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        ds.save(&p).unwrap();
        let back = ChannelDataset::load(&p).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ChannelDataset::generate(&small_cfg(), 2, 4, 5).unwrap();
        let b = ChannelDataset::generate(&small_cfg(), 2, 4, 5).unwrap();
        assert_eq!(a, b);
        let c = ChannelDataset::generate(&small_cfg(), 2, 4, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let ds = ChannelDataset::generate(&small_cfg(), 1, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        ds.save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(ChannelDataset::load(&p), Err(Error::Format(_))));
    }

    #[test]
    fn estimation_residual_is_small() {
        let ds = ChannelDataset::generate(&small_cfg(), 20, 3, 2).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for ep in &ds.episodes {
            for (h, hh) in ep.h.iter().zip(&ep.h_hat) {
                num += crate::linalg::frob_sq(&(h - hh));
                den += crate::linalg::frob_sq(h);
            }
        }
        assert!(num / den < 0.5, "nmse {}", num / den);
    }
}
