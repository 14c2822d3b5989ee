//! Labeled training windows and the `OUTAGEDS` dataset file.
//!
//! Layout (little-endian): magic `OUTAGEDS`, version `u32`, record count
//! `u64`, `k` `u32`, `l` `u32`, capacity mode `u8` (0 = sum, 1 = mean),
//! `gamma_th` `f64`, then per record `2k` `f64` input (re/im interleaved),
//! `2l` `f64` future, and the label byte.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{label, simulate, CapacityMode, ChannelMode, SimConfig};
use crate::error::{argument, Error, Result};
use crate::rng::StreamKey;

pub const DATASET_MAGIC: &[u8; 8] = b"OUTAGEDS";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 4 + 4 + 1 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    pub input: Vec<Complex64>,
    pub future: Vec<Complex64>,
    /// `true` when the future window is in outage.
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub l: usize,
    pub capacity_mode: CapacityMode,
    pub gamma_th: f64,
    pub windows: Vec<LabeledWindow>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Fraction of windows labeled as outage.
    pub fn label_rate(&self) -> f64 {
        if self.windows.is_empty() {
            return 0.0;
        }
        self.windows.iter().filter(|w| w.label).count() as f64 / self.windows.len() as f64
    }

    pub fn encode(&self) -> Vec<u8> {
        let rec = 16 * (self.k + self.l) + 1;
        let mut out = Vec::with_capacity(HEADER_LEN + rec * self.windows.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.windows.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.l as u32).to_le_bytes());
        out.push(self.capacity_mode.as_u8());
        out.extend_from_slice(&self.gamma_th.to_le_bytes());
        for w in &self.windows {
            for h in w.input.iter().chain(&w.future) {
                out.extend_from_slice(&h.re.to_le_bytes());
                out.extend_from_slice(&h.im.to_le_bytes());
            }
            out.push(u8::from(w.label));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format { offset: 0, message: "bad magic, not an OUTAGEDS file".into() });
        }
        let version = r.u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::Version { found: version, expected: DATASET_VERSION });
        }
        let n = r.u64("record count")?;
        let k = r.u32("k")? as usize;
        let l = r.u32("l")? as usize;
        let mode_at = r.pos;
        let capacity_mode = CapacityMode::from_u8(r.u8("capacity mode")?).ok_or_else(|| Error::Format {
            offset: mode_at as u64,
            message: "unknown capacity mode".into(),
        })?;
        let gamma_th = r.f64("gamma_th")?;
        if k == 0 || l == 0 {
            return Err(Error::Format { offset: 20, message: format!("empty windows (k = {k}, l = {l})") });
        }
        let rec = (16 * (k + l) + 1) as u64;
        let expected = (HEADER_LEN as u64).checked_add(n.checked_mul(rec).unwrap_or(u64::MAX));
        if expected != Some(bytes.len() as u64) {
            let have = (bytes.len() - HEADER_LEN) as u64 / rec;
            return Err(Error::Format {
                offset: HEADER_LEN as u64 + have * rec,
                message: format!("expected {n} records, file holds {have} complete records"),
            });
        }
        let mut windows = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let input = r.complexes(k)?;
            let future = r.complexes(l)?;
            let at = r.pos;
            let label = match r.u8("label")? {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Format { offset: at as u64, message: format!("label byte {other}") })
                }
            };
            windows.push(LabeledWindow { input, future, label });
        }
        Ok(Dataset { k, l, capacity_mode, gamma_th, windows })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { offset: self.pos as u64, message: format!("truncated while reading {what}") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn complexes(&mut self, n: usize) -> Result<Vec<Complex64>> {
        (0..n).map(|_| Ok(Complex64::new(self.f64("sample")?, self.f64("sample")?))).collect()
    }
}

/// Draws `n_windows` labeled windows, one per resource per episode.
///
/// Episode `e` uses stream `key.child(e)`, so the output does not depend on
/// how the episodes are scheduled.
pub fn build_dataset(cfg: &SimConfig, mode: ChannelMode, n_windows: usize, key: StreamKey) -> Result<Dataset> {
    cfg.validate_for(mode)?;
    if n_windows == 0 {
        return Err(argument("n_windows must be at least 1"));
    }
    let episodes = n_windows.div_ceil(cfg.resource_count);
    let per_episode: Vec<Vec<LabeledWindow>> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| {
            let ep = simulate(cfg, mode, key.child(e))?;
            (0..ep.resource_count())
                .map(|r| {
                    Ok(LabeledWindow {
                        input: ep.input(r).to_vec(),
                        future: ep.future(r).to_vec(),
                        label: label(ep.future(r), cfg.gamma_th, cfg.capacity_mode)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut windows: Vec<LabeledWindow> = per_episode.into_iter().flatten().collect();
    windows.truncate(n_windows);
    Ok(Dataset { k: cfg.k, l: cfg.l, capacity_mode: cfg.capacity_mode, gamma_th: cfg.gamma_th, windows })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&ds.encode())?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::capacity;

    fn small_cfg() -> SimConfig {
        SimConfig { n_taps: 64, k: 12, l: 4, resource_count: 4, gamma_th: 0.6, ..SimConfig::default() }
    }

    #[test]
    fn shapes_and_labels() {
        let ds = build_dataset(&small_cfg(), ChannelMode::SharedFft, 10, StreamKey::new(3)).unwrap();
        assert_eq!(ds.len(), 10);
        for w in &ds.windows {
            assert_eq!(w.input.len(), 12);
            assert_eq!(w.future.len(), 4);
            assert_eq!(w.label, capacity(&w.future, CapacityMode::Mean).unwrap() < 0.6);
        }
    }

    #[test]
    fn round_trip_and_determinism() {
        let a = build_dataset(&small_cfg(), ChannelMode::SharedFft, 9, StreamKey::new(4)).unwrap();
        let b = build_dataset(&small_cfg(), ChannelMode::SharedFft, 9, StreamKey::new(4)).unwrap();
        assert_eq!(a.encode(), b.encode());
        assert_eq!(Dataset::decode(&a.encode()).unwrap(), a);
    }

    #[test]
    fn rejects_bad_files() {
        let ds = build_dataset(&small_cfg(), ChannelMode::SharedFft, 3, StreamKey::new(5)).unwrap();
        let bytes = ds.encode();
        assert!(matches!(Dataset::decode(&bytes[..bytes.len() - 7]), Err(Error::Format { .. })));
        assert!(matches!(Dataset::decode(&bytes[..10]), Err(Error::Format { offset: 8, .. })));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(Dataset::decode(&bad), Err(Error::Version { found: 2, expected: 1 })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::decode(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes;
        let last = bad.len() - 1;
        bad[last] = 7;
        assert!(matches!(Dataset::decode(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn independent_mode_accepts_any_resource_count() {
        let cfg = SimConfig { resource_count: 3, ..small_cfg() };
        assert!(build_dataset(&cfg, ChannelMode::SharedFft, 5, StreamKey::new(2)).is_err());
        let ds = build_dataset(&cfg, ChannelMode::IndependentEpisodes, 5, StreamKey::new(2)).unwrap();
        assert_eq!(ds.len(), 5);
    }

    #[test]
    fn zero_windows_is_an_error() {
        assert!(build_dataset(&small_cfg(), ChannelMode::SharedFft, 0, StreamKey::new(1)).is_err());
    }
}
