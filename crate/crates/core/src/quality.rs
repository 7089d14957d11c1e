//! YUV-PSNR of raw planar 4:2:0 video.
//!
//! Sequence values are the mean of per-frame PSNRs, and the combined score
//! weights luma six times as much as each chroma plane.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// PSNR reported for a lossless plane.
pub const DEFAULT_PSNR_CEILING: f64 = 999.0;

/// Luma, Cb and Cr weights of the combined score, over their sum of 8.
pub const YUV_WEIGHTS: [f64; 3] = [6.0, 1.0, 1.0];

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("malformed yuv {path}: expected {expected} bytes, found {actual}")]
    MalformedYuv { path: PathBuf, expected: u64, actual: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Geometry and sample format of a raw 4:2:0 file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub width: u32,
    pub height: u32,
    pub bit_depth: u8,
    pub frame_count: u32,
}

impl VideoSpec {
    pub fn validate(&self) -> Result<(), QualityError> {
        let mut problems = Vec::new();
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            problems.push(format!(
                "{}x{} is not a non-empty even 4:2:0 size",
                self.width, self.height
            ));
        }
        if self.bit_depth != 8 && self.bit_depth != 10 {
            problems.push(format!("bit depth {} not in {{8, 10}}", self.bit_depth));
        }
        if self.frame_count == 0 {
            problems.push("frame_count must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(QualityError::InvalidArgument(problems.join("; ")))
        }
    }

    pub fn bytes_per_sample(&self) -> u64 {
        if self.bit_depth > 8 {
            2
        } else {
            1
        }
    }

    pub fn luma_samples(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn chroma_samples(&self) -> usize {
        self.luma_samples() / 4
    }

    pub fn frame_bytes(&self) -> u64 {
        (self.luma_samples() + 2 * self.chroma_samples()) as u64 * self.bytes_per_sample()
    }

    pub fn file_bytes(&self) -> u64 {
        self.frame_bytes() * u64::from(self.frame_count)
    }

    pub fn peak(&self) -> f64 {
        f64::from((1u32 << self.bit_depth) - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u16>,
}

impl Plane {
    pub fn new(width: usize, height: usize, samples: Vec<u16>) -> Result<Self, QualityError> {
        if samples.len() != width * height {
            return Err(QualityError::InvalidArgument(format!(
                "{}x{} plane needs {} samples, got {}",
                width,
                height,
                width * height,
                samples.len()
            )));
        }
        Ok(Self { width, height, samples })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        Self {
            width,
            height,
            samples: vec![value; width * height],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub planes: [Plane; 3],
}

/// Iterator over the frames of a raw file; the size is checked up front.
pub struct FrameReader {
    reader: BufReader<File>,
    spec: VideoSpec,
    remaining: u32,
    path: PathBuf,
    buf: Vec<u8>,
}

pub fn read_frames(path: impl AsRef<Path>, spec: &VideoSpec) -> Result<FrameReader, QualityError> {
    spec.validate()?;
    let path = path.as_ref();
    let io_err = |source| QualityError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let actual = file.metadata().map_err(io_err)?.len();
    let expected = spec.file_bytes();
    if actual != expected {
        return Err(QualityError::MalformedYuv {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(FrameReader {
        reader: BufReader::new(file),
        spec: *spec,
        remaining: spec.frame_count,
        path: path.to_path_buf(),
        buf: Vec::new(),
    })
}

impl FrameReader {
    fn read_plane(&mut self, width: usize, height: usize) -> Result<Plane, QualityError> {
        let n = width * height;
        let bps = self.spec.bytes_per_sample() as usize;
        self.buf.resize(n * bps, 0);
        self.reader
            .read_exact(&mut self.buf)
            .map_err(|source| QualityError::Io {
                path: self.path.clone(),
                source,
            })?;
        let samples = if bps == 1 {
            self.buf.iter().map(|&b| u16::from(b)).collect()
        } else {
            self.buf
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect()
        };
        Ok(Plane { width, height, samples })
    }
}

impl Iterator for FrameReader {
    type Item = Result<Frame, QualityError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let (w, h) = (self.spec.width as usize, self.spec.height as usize);
        let frame = (|| {
            let y = self.read_plane(w, h)?;
            let u = self.read_plane(w / 2, h / 2)?;
            let v = self.read_plane(w / 2, h / 2)?;
            Ok(Frame { planes: [y, u, v] })
        })();
        Some(frame)
    }
}

/// PSNR of one plane and whether the ceiling was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePsnr {
    pub db: f64,
    pub clamped: bool,
}

/// `10 * log10(peak^2 / mse)`, limited to `ceiling`.
pub fn psnr_from_mse(mse: f64, peak: f64, ceiling: f64) -> PlanePsnr {
    if mse <= 0.0 {
        return PlanePsnr {
            db: ceiling,
            clamped: true,
        };
    }
    let db = 10.0 * (peak * peak / mse).log10();
    if db >= ceiling {
        PlanePsnr {
            db: ceiling,
            clamped: true,
        }
    } else {
        PlanePsnr { db, clamped: false }
    }
}

pub fn mean_squared_error(reference: &Plane, decoded: &Plane) -> Result<f64, QualityError> {
    if reference.width != decoded.width || reference.height != decoded.height {
        return Err(QualityError::InvalidArgument(format!(
            "plane size mismatch: {}x{} vs {}x{}",
            reference.width, reference.height, decoded.width, decoded.height
        )));
    }
    if reference.samples.is_empty() {
        return Err(QualityError::InvalidArgument("empty plane".into()));
    }
    let sse: u64 = reference
        .samples
        .iter()
        .zip(&decoded.samples)
        .map(|(&a, &b)| {
            let d = u64::from(a.abs_diff(b));
            d * d
        })
        .sum();
    Ok(sse as f64 / reference.samples.len() as f64)
}

/// PSNR of a plane pair with an explicit peak value.
pub fn plane_psnr_with_peak(
    reference: &Plane,
    decoded: &Plane,
    peak: f64,
    ceiling: f64,
) -> Result<PlanePsnr, QualityError> {
    Ok(psnr_from_mse(mean_squared_error(reference, decoded)?, peak, ceiling))
}

/// PSNR of a plane pair with peak `2^bit_depth - 1`.
pub fn frame_psnr(reference: &Plane, decoded: &Plane, bit_depth: u8, ceiling: f64) -> Result<PlanePsnr, QualityError> {
    if !(1..=16).contains(&bit_depth) {
        return Err(QualityError::InvalidArgument(format!("bit depth {bit_depth}")));
    }
    let peak = ((1u32 << bit_depth) - 1) as f64;
    plane_psnr_with_peak(reference, decoded, peak, ceiling)
}

/// Per-frame Y, U and V PSNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePsnr {
    pub y: f64,
    pub u: f64,
    pub v: f64,
    /// True when any plane of the frame hit the ceiling.
    pub clamped: bool,
}

/// Frame-averaged sequence PSNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequencePsnr {
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub psnr_yuv: f64,
    pub clamped_frames: u32,
}

pub fn combine_yuv(y: f64, u: f64, v: f64) -> f64 {
    let [wy, wu, wv] = YUV_WEIGHTS;
    (wy * y + wu * u + wv * v) / (wy + wu + wv)
}

impl SequencePsnr {
    pub fn from_frames(frames: &[FramePsnr]) -> Result<Self, QualityError> {
        if frames.is_empty() {
            return Err(QualityError::InvalidArgument("no frames".into()));
        }
        let n = frames.len() as f64;
        let psnr_y = frames.iter().map(|f| f.y).sum::<f64>() / n;
        let psnr_u = frames.iter().map(|f| f.u).sum::<f64>() / n;
        let psnr_v = frames.iter().map(|f| f.v).sum::<f64>() / n;
        Ok(Self {
            psnr_y,
            psnr_u,
            psnr_v,
            psnr_yuv: combine_yuv(psnr_y, psnr_u, psnr_v),
            clamped_frames: frames.iter().filter(|f| f.clamped).count() as u32,
        })
    }
}

pub fn compare_frames(
    reference: &Frame,
    decoded: &Frame,
    bit_depth: u8,
    ceiling: f64,
) -> Result<FramePsnr, QualityError> {
    let mut out = [PlanePsnr {
        db: 0.0,
        clamped: false,
    }; 3];
    for (slot, (r, d)) in out.iter_mut().zip(reference.planes.iter().zip(&decoded.planes)) {
        *slot = frame_psnr(r, d, bit_depth, ceiling)?;
    }
    Ok(FramePsnr {
        y: out[0].db,
        u: out[1].db,
        v: out[2].db,
        clamped: out.iter().any(|p| p.clamped),
    })
}

/// YUV-PSNR between a reference and a decoded raw file of the same spec.
pub fn sequence_psnr(
    reference: impl AsRef<Path>,
    decoded: impl AsRef<Path>,
    spec: &VideoSpec,
    ceiling: f64,
) -> Result<SequencePsnr, QualityError> {
    let refs = read_frames(reference, spec)?;
    let decs = read_frames(decoded, spec)?;
    let mut frames = Vec::with_capacity(spec.frame_count as usize);
    for (r, d) in refs.zip(decs) {
        frames.push(compare_frames(&r?, &d?, spec.bit_depth, ceiling)?);
    }
    SequencePsnr::from_frames(&frames)
}
