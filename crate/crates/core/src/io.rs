//! On-disk video formats and spatio-temporal slices.
//!
//! Two formats are supported:
//!
//! * **raw**: `"VTEN"`, `u32` version (= 1), then `T, H, W, C` as `u32`, then
//!   `T·H·W·C` `f32` values in `(t, h, w, c)` order; all little-endian.
//! * **frame-dir**: a directory of 8-bit PNG frames named `frame_%05d.png`.
//!   Loading accepts any lexicographically ordered set of PNG files.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, VideoTensor};

pub const RAW_MAGIC: &[u8; 4] = b"VTEN";
pub const RAW_VERSION: u32 = 1;
const RAW_HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoFormat {
    FrameDir,
    Raw,
}

impl VideoFormat {
    /// Directories are frame sequences, everything else is raw.
    pub fn infer(path: &Path) -> Self {
        if path.is_dir() {
            VideoFormat::FrameDir
        } else {
            VideoFormat::Raw
        }
    }
}

pub fn load_video(path: &Path, format: VideoFormat) -> Result<VideoTensor> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "path does not exist"),
        ));
    }
    match format {
        VideoFormat::Raw => read_raw(path),
        VideoFormat::FrameDir => read_frame_dir(path),
    }
}

/// Writes `x`; nothing is written if `x` contains NaN or infinities.
pub fn save_video(x: &VideoTensor, path: &Path, format: VideoFormat) -> Result<()> {
    x.ensure_finite()?;
    match format {
        VideoFormat::Raw => write_raw(x, path),
        VideoFormat::FrameDir => write_frame_dir(x, path),
    }
}

pub fn encode_raw(x: &VideoTensor) -> Vec<u8> {
    let s = x.shape();
    let mut buf = Vec::with_capacity(RAW_HEADER_LEN + 4 * x.len());
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&RAW_VERSION.to_le_bytes());
    for d in s.as_array() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in x.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_raw(bytes: &[u8]) -> Result<VideoTensor> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::CorruptHeader(format!(
            "{} bytes is shorter than the {RAW_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::CorruptHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != RAW_VERSION {
        return Err(Error::CorruptHeader(format!(
            "unsupported version {version}"
        )));
    }
    let dims: Vec<usize> = (0..4).map(|k| word(8 + 4 * k) as usize).collect();
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    if shape.is_empty() {
        return Err(Error::CorruptHeader(format!("zero dimension in {shape}")));
    }
    let expected = RAW_HEADER_LEN + 4 * shape.len();
    if bytes.len() != expected {
        return Err(Error::CorruptHeader(format!(
            "shape {shape} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[RAW_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let x = VideoTensor::new(shape, data)?;
    x.ensure_finite()?;
    Ok(x)
}

fn read_raw(path: &Path) -> Result<VideoTensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes)
}

fn write_raw(x: &VideoTensor, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_raw(x))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_png(&p) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn read_frame_dir(dir: &Path) -> Result<VideoTensor> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(Error::ZeroFrames(dir.to_path_buf()));
    }
    let open = |p: &Path| {
        image::open(p).map_err(|e| Error::Image {
            path: p.to_path_buf(),
            source: e,
        })
    };
    let first = open(&files[0])?;
    let (width, height) = (first.width(), first.height());
    let channels = if first.color().has_color() { 3 } else { 1 };
    let shape = Shape::new(files.len(), height as usize, width as usize, channels);
    let mut data = Vec::with_capacity(shape.len());
    for (k, p) in files.iter().enumerate() {
        let img = if k == 0 { first.clone() } else { open(p)? };
        if (img.width(), img.height()) != (width, height) {
            return Err(Error::InconsistentFrames {
                first: files[0].display().to_string(),
                other: p.display().to_string(),
                expected: (width, height),
                actual: (img.width(), img.height()),
            });
        }
        let bytes = if channels == 3 {
            img.to_rgb8().into_raw()
        } else {
            img.to_luma8().into_raw()
        };
        data.extend(bytes.into_iter().map(|b| b as f64 / 255.0));
    }
    VideoTensor::new(shape, data)
}

/// Quantizes a value in nominal `[0, 1]` to 8 bits, clamping first.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_from_plane(
    width: usize,
    height: usize,
    channels: usize,
    values: &[f64],
) -> Result<DynamicImage> {
    let bytes: Vec<u8> = values.iter().map(|&v| quantize_u8(v)).collect();
    let (w, h) = (width as u32, height as u32);
    match channels {
        1 => Ok(DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, bytes).expect("buffer sized from shape"),
        )),
        3 => Ok(DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, bytes).expect("buffer sized from shape"),
        )),
        c => Err(Error::InvalidArgument(format!(
            "PNG export supports 1 or 3 channels, got {c}"
        ))),
    }
}

fn write_frame_dir(x: &VideoTensor, dir: &Path) -> Result<()> {
    let s = x.shape();
    if s.channels != 1 && s.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "frame-dir export supports 1 or 3 channels, got {}",
            s.channels
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..s.frames {
        let img = image_from_plane(s.width, s.height, s.channels, x.frame_data(t))?;
        let path = dir.join(format!("frame_{t:05}.png"));
        img.save(&path).map_err(|e| Error::Image { path, source: e })?;
    }
    Ok(())
}

/// A spatio-temporal `(i, t)` slice: rows are image rows, columns are frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceImage {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Row-major `(i, t, c)`.
    pub data: Vec<f64>,
}

impl SliceImage {
    pub fn get(&self, row: usize, col: usize, c: usize) -> f64 {
        self.data[(row * self.cols + col) * self.channels + c]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let img = image_from_plane(self.cols, self.rows, self.channels, &self.data)?;
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Fixes column `column` of every frame: `out(i, t, c) = x(t, i, column, c)`.
pub fn slice_extract(x: &VideoTensor, column: usize) -> Result<SliceImage> {
    let s = x.shape();
    if column >= s.width {
        return Err(Error::InvalidArgument(format!(
            "column {column} out of range for width {}",
            s.width
        )));
    }
    let mut data = Vec::with_capacity(s.height * s.frames * s.channels);
    for i in 0..s.height {
        for t in 0..s.frames {
            for c in 0..s.channels {
                data.push(x.get(t, i, column, c));
            }
        }
    }
    Ok(SliceImage {
        rows: s.height,
        cols: s.frames,
        channels: s.channels,
        data,
    })
}

/// Writes a slice back into column `column`; inverse of [`slice_extract`].
pub fn insert_column(x: &mut VideoTensor, column: usize, slice: &SliceImage) -> Result<()> {
    let s = x.shape();
    if column >= s.width {
        return Err(Error::InvalidArgument(format!(
            "column {column} out of range for width {}",
            s.width
        )));
    }
    if (slice.rows, slice.cols, slice.channels) != (s.height, s.frames, s.channels) {
        return Err(Error::InvalidArgument(format!(
            "slice {}x{}x{} does not fit tensor {s}",
            slice.rows, slice.cols, slice.channels
        )));
    }
    for i in 0..s.height {
        for t in 0..s.frames {
            for c in 0..s.channels {
                x.set(t, i, column, c, slice.get(i, t, c));
            }
        }
    }
    Ok(())
}
