//! Dataset generation, the binary sample format and the manifest.
//!
//! Each "recording time" yields three zone samples sharing one sea state
//! but differing in zone gain and peak-direction offset. Heights are
//! allocated to the three sea-state bins by largest-remainder quotas, so the
//! realized proportions track the configured ones as closely as rounding
//! allows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Result, SptError};
use crate::io as bin;
use crate::wavefield::{
    pm_peak_omega, synthesize_sequence, wrap_angle, GridSpec, ImageSequence, SeaStateSpec,
};

const SAMPLE_MAGIC: &[u8; 4] = b"SPTW";
const SAMPLE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(SptError::Format(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManifestRecord {
    pub sample_id: String,
    /// Path relative to the manifest location.
    pub path: String,
    pub hs: f64,
    pub zone: u8,
    pub recording_time_index: usize,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.sample_id,
                r.path,
                r.hs,
                r.zone,
                r.recording_time_index,
                r.split.as_str()
            )?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let root = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(SptError::Format(format!(
                    "manifest line {}: expected 6 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            records.push(ManifestRecord {
                sample_id: fields[0].to_string(),
                path: fields[1].to_string(),
                hs: fields[2]
                    .parse()
                    .map_err(|e| SptError::Format(format!("manifest line {}: {e}", lineno + 1)))?,
                zone: fields[3]
                    .parse()
                    .map_err(|e| SptError::Format(format!("manifest line {}: {e}", lineno + 1)))?,
                recording_time_index: fields[4]
                    .parse()
                    .map_err(|e| SptError::Format(format!("manifest line {}: {e}", lineno + 1)))?,
                split: Split::parse(fields[5])?,
            });
        }
        Ok(Self { records, root })
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Sample counts per sea-state bin (edges 2.5 m and 4.0 m).
    pub fn bin_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for r in &self.records {
            if r.hs < 2.5 {
                counts[0] += 1;
            } else if r.hs <= 4.0 {
                counts[1] += 1;
            } else {
                counts[2] += 1;
            }
        }
        counts
    }
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub depth: f64,
    pub hs_min: f64,
    pub hs_max: f64,
    /// Target sample fractions for the bins [hs_min, 2.5), [2.5, 4.0], (4.0, hs_max].
    pub proportions: [f64; 3],
    pub gamma_range: (f64, f64),
    pub spread_range: (f64, f64),
    pub harmonic_gain: f64,
    pub noise_level: f64,
    /// Relative half-width of the uniform jitter on the PM peak coupling.
    pub omega_jitter: f64,
    pub zone_gains: [f64; 3],
    /// Per-zone peak-direction offsets, radians.
    pub theta_offsets: [f64; 3],
    pub current: (f64, f64),
    pub threads: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 1620,
            seed: 42,
            grid: GridSpec::default(),
            depth: 39.0,
            hs_min: 0.5,
            hs_max: 6.5,
            proportions: [0.80, 0.18, 0.02],
            gamma_range: (2.0, 3.3),
            spread_range: (6.0, 14.0),
            harmonic_gain: 0.2,
            noise_level: 0.1,
            omega_jitter: 0.10,
            zone_gains: [1.0, 0.8, 0.6],
            theta_offsets: [
                0.0,
                20.0f64.to_radians(),
                -25.0f64.to_radians(),
            ],
            current: (0.0, 0.0),
            threads: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.count == 0 {
            return Err(SptError::Config("dataset count must be positive".into()));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.proportions.iter().any(|&p| p < 0.0) {
            return Err(SptError::Config(format!(
                "bin proportions {:?} must be non-negative and sum to 1",
                self.proportions
            )));
        }
        if !(self.hs_min < self.hs_max) || self.hs_min < 0.3 || self.hs_max > 8.0 {
            return Err(SptError::Config(format!(
                "hs range [{}, {}] must sit inside [0.3, 8.0]",
                self.hs_min, self.hs_max
            )));
        }
        Ok(())
    }
}

/// Stable per-sample seed derivation (splitmix64 over master ^ index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Largest-remainder allocation of `total` items to `fractions`.
fn quota_allocate(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts = [0usize; 3];
    let mut assigned = 0usize;
    for i in 0..3 {
        counts[i] = raw[i].floor() as usize;
        assigned += counts[i];
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .partial_cmp(&(raw[a] - raw[a].floor()))
            .unwrap()
    });
    let mut i = 0;
    while assigned < total {
        counts[order[i % 3]] += 1;
        assigned += 1;
        i += 1;
    }
    counts
}

struct PlannedSample {
    index: usize,
    rec: usize,
    zone: u8,
    spec: SeaStateSpec,
    seed: u64,
}

/// Generates `count` samples under `out_dir` and returns the manifest
/// (also written to `out_dir/manifest.txt`). Identical config and seed give
/// identical manifest and sample bytes.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir.join("samples"))?;

    let rec_times = config.count.div_ceil(3);
    let quotas = quota_allocate(rec_times, &config.proportions);
    let mut bins: Vec<usize> = Vec::with_capacity(rec_times);
    for (bin, &q) in quotas.iter().enumerate() {
        bins.extend(std::iter::repeat_n(bin, q));
    }
    let mut order_rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, 0x4F52_4445));
    bins.shuffle(&mut order_rng);

    let bin_ranges = [
        (config.hs_min, 2.5f64.min(config.hs_max)),
        (2.5f64.max(config.hs_min), 4.0f64.min(config.hs_max)),
        (4.0f64.max(config.hs_min), config.hs_max),
    ];

    // Recording-time draws come from per-recording rngs so the plan does not
    // depend on generation order.
    let mut planned = Vec::with_capacity(config.count);
    let mut index = 0usize;
    for (rec, &bin) in bins.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, 0x5245_4300 + rec as u64));
        let (lo, hi) = bin_ranges[bin];
        let hs = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let jitter = 1.0 + rng.random_range(-config.omega_jitter..=config.omega_jitter);
        let omega_p = pm_peak_omega(hs) * jitter;
        let gamma = if config.gamma_range.1 > config.gamma_range.0 {
            rng.random_range(config.gamma_range.0..config.gamma_range.1)
        } else {
            config.gamma_range.0
        };
        let spread = if config.spread_range.1 > config.spread_range.0 {
            rng.random_range(config.spread_range.0..config.spread_range.1)
        } else {
            config.spread_range.0
        };
        let theta_base = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let zones_here = (config.count - index).min(3);
        for z in 0..zones_here {
            let spec = SeaStateSpec {
                hs_target: hs,
                omega_p,
                gamma,
                spread_exponent: spread,
                theta_p: wrap_angle(theta_base + config.theta_offsets[z]),
                depth: config.depth,
                current: config.current,
                harmonic_gain: config.harmonic_gain,
                noise_level: config.noise_level,
                zone_gains: config.zone_gains,
            };
            planned.push(PlannedSample {
                index,
                rec,
                zone: (z + 1) as u8,
                spec,
                seed: derive_seed(config.seed, 0x534D_5000 + index as u64),
            });
            index += 1;
        }
    }

    let synth_one = |p: &PlannedSample| -> Result<ManifestRecord> {
        let mut seq = synthesize_sequence(&p.spec, &config.grid, p.zone, p.seed)?;
        seq.sample_id = format!("s{:06}", p.index);
        let rel = format!("samples/{}.sptw", seq.sample_id);
        write_sample(&out_dir.join(&rel), &seq)?;
        Ok(ManifestRecord {
            sample_id: seq.sample_id,
            path: rel,
            hs: p.spec.hs_target,
            zone: p.zone,
            recording_time_index: p.rec,
            split: Split::Train, // assigned below
        })
    };

    let mut records: Vec<ManifestRecord> = if config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| SptError::Generation(e.to_string()))?;
        pool.install(|| planned.par_iter().map(synth_one).collect::<Result<Vec<_>>>())?
    } else {
        planned.iter().map(synth_one).collect::<Result<Vec<_>>>()?
    };

    // 2:1 train/test per complete recording time; a trailing incomplete
    // recording (count not divisible by 3) trains in full.
    let mut split_rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, 0x5350_4C54));
    let mut start = 0usize;
    while start < records.len() {
        let rec = records[start].recording_time_index;
        let mut end = start;
        while end < records.len() && records[end].recording_time_index == rec {
            end += 1;
        }
        if end - start == 3 {
            let mut idx = [start, start + 1, start + 2];
            idx.shuffle(&mut split_rng);
            records[idx[0]].split = Split::Train;
            records[idx[1]].split = Split::Train;
            records[idx[2]].split = Split::Test;
        }
        start = end;
    }

    let manifest = DatasetManifest {
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Writes the binary sample format: magic "SPTW", version, header
/// (nt, ny, nx, dt, dx, dy, label, zone, seed), then f32 frames in
/// `(t, y, x)` order, little-endian throughout.
pub fn write_sample(path: &Path, seq: &ImageSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SAMPLE_MAGIC)?;
    bin::write_u32(&mut w, SAMPLE_VERSION)?;
    bin::write_u32(&mut w, seq.grid.nt as u32)?;
    bin::write_u32(&mut w, seq.grid.ny as u32)?;
    bin::write_u32(&mut w, seq.grid.nx as u32)?;
    bin::write_f64(&mut w, seq.grid.dt)?;
    bin::write_f64(&mut w, seq.grid.dx)?;
    bin::write_f64(&mut w, seq.grid.dy)?;
    bin::write_f64(&mut w, seq.label_hs)?;
    bin::write_u8(&mut w, seq.zone)?;
    bin::write_u64(&mut w, seq.seed)?;
    bin::write_f32_slice(&mut w, &seq.frames)?;
    Ok(())
}

pub fn read_sample(path: &Path, sample_id: &str) -> Result<ImageSequence> {
    let mut r = BufReader::new(File::open(path)?);
    bin::expect_magic(&mut r, SAMPLE_MAGIC, "sample file")?;
    let version = bin::read_u32(&mut r)?;
    if version != SAMPLE_VERSION {
        return Err(SptError::Format(format!(
            "sample file version {version} unsupported"
        )));
    }
    let nt = bin::read_u32(&mut r)? as usize;
    let ny = bin::read_u32(&mut r)? as usize;
    let nx = bin::read_u32(&mut r)? as usize;
    let dt = bin::read_f64(&mut r)?;
    let dx = bin::read_f64(&mut r)?;
    let dy = bin::read_f64(&mut r)?;
    let label_hs = bin::read_f64(&mut r)?;
    let zone = bin::read_u8(&mut r)?;
    let seed = bin::read_u64(&mut r)?;
    let grid = GridSpec {
        nt,
        nx,
        ny,
        dt,
        dx,
        dy,
    };
    grid.validate()
        .map_err(|e| SptError::Format(format!("sample header: {e}")))?;
    if grid.total_bins() > 1 << 28 {
        return Err(SptError::Format("sample dimensions implausibly large".into()));
    }
    let frames = bin::read_f32_vec(&mut r, grid.total_bins())?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SptError::Format("trailing bytes after frame data".into()));
    }
    if frames.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SptError::Format(
            "sample frames contain negative or non-finite values".into(),
        ));
    }
    Ok(ImageSequence {
        grid,
        frames,
        label_hs,
        zone,
        sample_id: sample_id.to_string(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_config(count: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            count,
            seed,
            grid: GridSpec {
                nt: 16,
                nx: 32,
                ny: 32,
                dt: 2.5,
                dx: 7.5,
                dy: 7.5,
            },
            threads: 1,
            ..Default::default()
        }
    }

    #[test]
    fn one_recording_time_covers_all_zones() {
        let dir = tempdir().unwrap();
        let manifest = generate_dataset(&tiny_config(3, 5), dir.path()).unwrap();
        assert_eq!(manifest.records.len(), 3);
        let zones: Vec<u8> = manifest.records.iter().map(|r| r.zone).collect();
        assert_eq!(zones, vec![1, 2, 3]);
        let train = manifest
            .records
            .iter()
            .filter(|r| r.split == Split::Train)
            .count();
        assert_eq!(train, 2);
    }

    #[test]
    fn split_is_two_to_one_and_reproducible() {
        let dir = tempdir().unwrap();
        let m1 = generate_dataset(&tiny_config(12, 9), dir.path()).unwrap();
        let train = m1.records.iter().filter(|r| r.split == Split::Train).count();
        assert_eq!(train, 8);
        let dir2 = tempdir().unwrap();
        let m2 = generate_dataset(&tiny_config(12, 9), dir2.path()).unwrap();
        for (a, b) in m1.records.iter().zip(m2.records.iter()) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.hs, b.hs);
            assert_eq!(a.split, b.split);
            let fa = std::fs::read(m1.resolve(a)).unwrap();
            let fb = std::fs::read(m2.resolve(b)).unwrap();
            assert_eq!(fa, fb, "sample bytes differ for {}", a.sample_id);
        }
    }

    #[test]
    fn proportions_match_quotas() {
        let dir = tempdir().unwrap();
        let mut cfg = tiny_config(300, 11);
        cfg.noise_level = 0.0;
        cfg.harmonic_gain = 0.0;
        let manifest = generate_dataset(&cfg, dir.path()).unwrap();
        let counts = manifest.bin_counts();
        let total = manifest.records.len() as f64;
        assert!((counts[0] as f64 / total - 0.80).abs() < 0.03);
        assert!((counts[1] as f64 / total - 0.18).abs() < 0.03);
        assert!((counts[2] as f64 / total - 0.02).abs() < 0.03);
    }

    #[test]
    fn sample_roundtrip() {
        let dir = tempdir().unwrap();
        let spec = SeaStateSpec {
            hs_target: 2.5,
            omega_p: 0.75,
            ..Default::default()
        };
        let grid = GridSpec {
            nt: 16,
            nx: 32,
            ny: 32,
            dt: 2.5,
            dx: 7.5,
            dy: 7.5,
        };
        let seq = synthesize_sequence(&spec, &grid, 2, 77).unwrap();
        let path = dir.path().join("x.sptw");
        write_sample(&path, &seq).unwrap();
        let back = read_sample(&path, &seq.sample_id).unwrap();
        assert_eq!(back.frames, seq.frames);
        assert_eq!(back.grid, seq.grid);
        assert_eq!(back.label_hs, seq.label_hs);
        assert_eq!(back.zone, 2);
        assert_eq!(back.seed, 77);
    }

    #[test]
    fn corrupt_sample_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.sptw");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(read_sample(&path, "bad").is_err());
    }
}
