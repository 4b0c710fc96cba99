//! Binary RIR datasets.
//!
//! Layout (little-endian): a 28-byte header
//! `magic "RGI1" | format_version | sample_count | channels | taps | wprime | fs_hz`
//! followed by `sample_count` fixed-size records
//! `shape_id u8 | num_walls u8 | 2 pad bytes | seed u64 | A 8x4 f32 | p 8 f32 | rir 32x1024 f32`.
//! A JSON manifest sidecar echoes the generation config.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sample_room, ShapeFamily, MAX_WALLS};
use crate::ism::{
    default_array, simulate_sample, IsmError, RirSample, SimConfig, ARRAY_RADIUS_M,
    KERNEL_HALFWIDTH, MAX_ORDER, NUM_MICS, REFLECTION_COEFF_RANGE, RIR_TAPS, SAMPLE_RATE_HZ,
    SPEED_OF_SOUND,
};

pub const MAGIC: [u8; 4] = *b"RGI1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 28;
pub const RIR_LEN: usize = NUM_MICS * RIR_TAPS;
pub const RECORD_BYTES: usize = 2 + 2 + 8 + MAX_WALLS * 4 * 4 + MAX_WALLS * 4 + RIR_LEN * 4;

const WRITE_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("not a dataset file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("dataset format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("dataset dimension `{field}` is {found}, expected {expected}")]
    DimensionMismatch {
        field: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("dataset file is truncated")]
    TruncatedFile,
    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("input is all zeros")]
    AllZeroInput,
    #[error(transparent)]
    Simulation(#[from] IsmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub sample_count: u32,
    pub channels: u32,
    pub taps: u32,
    pub wprime: u32,
    pub fs_hz: u32,
}

impl DatasetHeader {
    pub fn new(sample_count: u32) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            sample_count,
            channels: NUM_MICS as u32,
            taps: RIR_TAPS as u32,
            wprime: MAX_WALLS as u32,
            fs_hz: SAMPLE_RATE_HZ,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&MAGIC)?;
        for v in [
            self.format_version,
            self.sample_count,
            self.channels,
            self.taps,
            self.wprime,
            self.fs_hz,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, DatasetError> {
        let mut buf = [0u8; HEADER_BYTES];
        read_exact_or_truncated(r, &mut buf)?;
        let magic: [u8; 4] = buf[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(DatasetError::BadMagic(magic));
        }
        let field = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let header = Self {
            format_version: field(0),
            sample_count: field(1),
            channels: field(2),
            taps: field(3),
            wprime: field(4),
            fs_hz: field(5),
        };
        if header.format_version != FORMAT_VERSION {
            return Err(DatasetError::VersionMismatch {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let expected = Self::new(header.sample_count);
        for (field, found, want) in [
            ("channels", header.channels, expected.channels),
            ("taps", header.taps, expected.taps),
            ("wprime", header.wprime, expected.wprime),
            ("fs_hz", header.fs_hz, expected.fs_hz),
        ] {
            if found != want {
                return Err(DatasetError::DimensionMismatch {
                    field,
                    found,
                    expected: want,
                });
            }
        }
        Ok(header)
    }
}

/// One stored dataset element, in its 32-bit storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub shape_family: ShapeFamily,
    pub num_walls: u8,
    pub seed: u64,
    pub walls: [[f32; 4]; MAX_WALLS],
    pub presence: [f32; MAX_WALLS],
    /// 32 x 1024, channel-major.
    pub rir: Vec<f32>,
}

impl From<&RirSample> for DatasetRecord {
    fn from(sample: &RirSample) -> Self {
        Self {
            shape_family: sample.shape_family,
            num_walls: sample.walls.num_walls as u8,
            seed: sample.seed,
            walls: sample.walls.rows.map(|row| row.map(|v| v as f32)),
            presence: sample.walls.presence.map(|v| v as f32),
            rir: sample.rir.data.clone(),
        }
    }
}

impl DatasetRecord {
    pub fn walls_f64(&self) -> [[f64; 4]; MAX_WALLS] {
        self.walls.map(|row| row.map(f64::from))
    }

    pub fn presence_f64(&self) -> [f64; MAX_WALLS] {
        self.presence.map(f64::from)
    }

    fn check(&self, index: usize) -> Result<(), DatasetError> {
        let invalid = |reason: String| Err(DatasetError::InvalidRecord { index, reason });
        let nonzero = self
            .walls
            .iter()
            .filter(|r| r.iter().any(|&v| v != 0.0))
            .count();
        let present: f32 = self.presence.iter().sum();
        if nonzero != self.num_walls as usize || present != self.num_walls as f32 {
            return invalid(format!(
                "num_walls {} disagrees with {nonzero} nonzero rows and presence sum {present}",
                self.num_walls
            ));
        }
        if self.rir.len() != RIR_LEN {
            return invalid(format!("rir has {} values", self.rir.len()));
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        let mut buf = Vec::with_capacity(RECORD_BYTES);
        buf.push(self.shape_family.id());
        buf.push(self.num_walls);
        buf.extend_from_slice(&[0, 0]);
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for v in self
            .walls
            .iter()
            .flatten()
            .chain(&self.presence)
            .chain(&self.rir)
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        debug_assert_eq!(buf.len(), RECORD_BYTES);
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read, index: usize) -> Result<Self, DatasetError> {
        let mut buf = vec![0u8; RECORD_BYTES];
        read_exact_or_truncated(r, &mut buf)?;
        let shape_family = ShapeFamily::from_id(buf[0]).ok_or(DatasetError::InvalidRecord {
            index,
            reason: format!("shape id {}", buf[0]),
        })?;
        let seed = u64::from_le_bytes(buf[4..12].try_into().unwrap());
        let mut floats = buf[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut walls = [[0.0f32; 4]; MAX_WALLS];
        for v in walls.iter_mut().flatten() {
            *v = floats.next().unwrap();
        }
        let mut presence = [0.0f32; MAX_WALLS];
        for v in presence.iter_mut() {
            *v = floats.next().unwrap();
        }
        let record = Self {
            shape_family,
            num_walls: buf[1],
            seed,
            walls,
            presence,
            rir: floats.collect(),
        };
        record.check(index)?;
        Ok(record)
    }
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DatasetError::TruncatedFile,
        _ => DatasetError::Io(e),
    })
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    DatasetHeader::new(records.len() as u32).write_to(&mut w)?;
    for r in records {
        r.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut r = BufReader::new(File::open(path)?);
    let header = DatasetHeader::read_from(&mut r)?;
    (0..header.sample_count as usize)
        .map(|i| DatasetRecord::read_from(&mut r, i))
        .collect()
}

/// Reads a single record without loading the whole file.
pub fn read_record(path: &Path, index: usize) -> Result<DatasetRecord, DatasetError> {
    use std::io::{Seek, SeekFrom};
    let mut r = BufReader::new(File::open(path)?);
    let header = DatasetHeader::read_from(&mut r)?;
    if index >= header.sample_count as usize {
        return Err(DatasetError::InvalidConfig(format!(
            "index {index} out of range for {} samples",
            header.sample_count
        )));
    }
    r.seek(SeekFrom::Start(
        (HEADER_BYTES + index * RECORD_BYTES) as u64,
    ))?;
    DatasetRecord::read_from(&mut r, index)
}

/// Scales all channels by the global peak magnitude.
pub fn normalize_input(rir: &[f32]) -> Result<Vec<f32>, DatasetError> {
    let peak = rir.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(DatasetError::AllZeroInput);
    }
    Ok(rir.iter().map(|v| v / peak).collect())
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_seed(global_seed: u64, index: u64) -> u64 {
    splitmix64(global_seed ^ splitmix64(index))
}

/// Per-wall reflection coefficients of a room, derived from its seed.
pub fn reflection_coeffs(room_seed: u64, num_walls: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(room_seed ^ 0x5EED_C0EF_F1C1_E475));
    let (lo, hi) = REFLECTION_COEFF_RANGE;
    (0..num_walls).map(|_| rng.random_range(lo..=hi)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    /// Samples per family, in `ShapeFamily::ALL` order.
    pub counts: [usize; 4],
    pub global_seed: u64,
    pub max_order: usize,
}

impl GenerateConfig {
    pub fn per_family(count: usize, global_seed: u64) -> Self {
        Self {
            counts: [count; 4],
            global_seed,
            max_order: MAX_ORDER,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Family of the sample at `index`; families are laid out in blocks.
    pub fn family_of(&self, index: usize) -> ShapeFamily {
        let mut end = 0;
        for (family, &count) in ShapeFamily::ALL.iter().zip(&self.counts) {
            end += count;
            if index < end {
                return *family;
            }
        }
        panic!("sample index {index} out of range");
    }

    pub fn simulate(&self, index: usize) -> Result<RirSample, DatasetError> {
        let family = self.family_of(index);
        let seed = sample_seed(self.global_seed, index as u64);
        let room = sample_room(family, seed);
        let mut cfg = SimConfig::with_coeffs(reflection_coeffs(seed, room.num_walls()));
        cfg.max_order = self.max_order;
        Ok(simulate_sample(&room, &cfg, &default_array())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub fs_hz: u32,
    pub taps: usize,
    pub channels: usize,
    pub array_radius_m: f64,
    pub speed_of_sound: f64,
    pub max_order: usize,
    pub kernel_halfwidth: usize,
    pub reflection_coeff_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub sample_count: usize,
    pub wprime: usize,
    pub family_counts: BTreeMap<ShapeFamily, usize>,
    pub config: GenerateConfig,
    pub simulation: SimSummary,
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Simulates and writes a dataset plus its manifest sidecar.
///
/// Samples are simulated in parallel and written in index order, so the file
/// bytes do not depend on the thread count.
pub fn generate_dataset(config: &GenerateConfig, out: &Path) -> Result<Manifest, DatasetError> {
    let total = config.total();
    if total == 0 {
        return Err(DatasetError::InvalidConfig("no samples requested".into()));
    }
    let sample_count =
        u32::try_from(total).map_err(|_| DatasetError::InvalidConfig("too many samples".into()))?;
    let mut w = BufWriter::new(File::create(out)?);
    DatasetHeader::new(sample_count).write_to(&mut w)?;
    for chunk_start in (0..total).step_by(WRITE_CHUNK) {
        let chunk_end = (chunk_start + WRITE_CHUNK).min(total);
        let records = (chunk_start..chunk_end)
            .into_par_iter()
            .map(|i| config.simulate(i).map(|s| DatasetRecord::from(&s)))
            .collect::<Result<Vec<_>, _>>()?;
        for r in &records {
            r.write_to(&mut w)?;
        }
        log::debug!("simulated {chunk_end}/{total} rooms");
    }
    w.flush()?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        sample_count: total,
        wprime: MAX_WALLS,
        family_counts: ShapeFamily::ALL.into_iter().zip(config.counts).collect(),
        config: config.clone(),
        simulation: SimSummary {
            fs_hz: SAMPLE_RATE_HZ,
            taps: RIR_TAPS,
            channels: NUM_MICS,
            array_radius_m: ARRAY_RADIUS_M,
            speed_of_sound: SPEED_OF_SOUND,
            max_order: config.max_order,
            kernel_halfwidth: KERNEL_HALFWIDTH,
            reflection_coeff_range: REFLECTION_COEFF_RANGE,
        },
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(manifest_path(out), json + "\n")?;
    Ok(manifest)
}

/// Sizes and seeds of the train / validation / test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train: GenerateConfig,
    pub val: GenerateConfig,
    pub test: GenerateConfig,
}

impl SplitPlan {
    fn from_per_family(train: usize, val: usize, test: usize, seed: u64) -> Self {
        Self {
            train: GenerateConfig::per_family(train, seed),
            val: GenerateConfig::per_family(val, splitmix64(seed ^ 1)),
            test: GenerateConfig::per_family(test, splitmix64(seed ^ 2)),
        }
    }

    /// 2000 / 200 / 200 samples, uniform over the families.
    pub fn desk(seed: u64) -> Self {
        Self::from_per_family(500, 50, 50, seed)
    }

    /// 39000 / 1000 / 500 samples, uniform over the families.
    pub fn full_scale(seed: u64) -> Self {
        Self::from_per_family(9750, 250, 125, seed)
    }

    pub fn splits(&self) -> [(&'static str, &GenerateConfig); 3] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ]
    }
}
