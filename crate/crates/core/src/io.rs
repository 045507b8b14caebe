//! Image, table and run-record files.
//!
//! Grids are read from single-channel TIFF (8/16/32-bit integer, 32/64-bit
//! float) or from comma-separated text. Values are taken as stored, with no
//! rescaling. Images are written as 32-bit float TIFF; CSV grids are written
//! with shortest round-trip formatting and reload bit-identically.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Role};
use crate::metrics::{MetricsRow, RadialBin};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Tiff,
    Csv,
}

fn format_of(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("tif") | Some("tiff") => Ok(Format::Tiff),
        Some("csv") | Some("txt") => Ok(Format::Csv),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: expected a .tif, .tiff or .csv file",
            path.display()
        ))),
    }
}

/// Error naming `path` if it is not an existing file.
pub fn require_file(path: &Path) -> Result<()> {
    match std::fs::metadata(path) {
        Ok(m) if m.is_file() => Ok(()),
        Ok(_) => Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a regular file"),
        )),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Raw values of a single-channel image file.
pub fn load_array(path: &Path) -> Result<Array2<f64>> {
    let format = format_of(path)?;
    require_file(path)?;
    match format {
        Format::Tiff => read_tiff(path),
        Format::Csv => read_csv_grid(path),
    }
}

pub fn load_image(path: &Path, pixel_pitch: f64, role: Role) -> Result<ImageGrid> {
    ImageGrid::new(load_array(path)?, pixel_pitch, role)
}

/// Write by extension: TIFF as 32-bit float, CSV at full precision.
pub fn save_array(path: &Path, values: &Array2<f64>) -> Result<()> {
    match format_of(path)? {
        Format::Tiff => save_tiff_f32(path, values),
        Format::Csv => write_csv_grid(path, values),
    }
}

pub fn save_image(path: &Path, image: &ImageGrid) -> Result<()> {
    save_array(path, image.values())
}

fn tiff_err(path: &Path) -> impl FnOnce(tiff::TiffError) -> Error + '_ {
    move |source| Error::Tiff {
        path: path.to_path_buf(),
        source,
    }
}

fn read_tiff(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(tiff_err(path))?
        .with_limits(Limits::unlimited());
    let colour = dec.colortype().map_err(tiff_err(path))?;
    if !matches!(colour, ColorType::Gray(_)) {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only single-channel grayscale images are supported, found {colour:?}",
            path.display()
        )));
    }
    let (width, height) = dec.dimensions().map_err(tiff_err(path))?;
    let data: Vec<f64> = match dec.read_image().map_err(tiff_err(path))? {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F16(v) => v.into_iter().map(|x| f64::from(x.to_f32())).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        DecodingResult::U64(_) | DecodingResult::I64(_) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: 64-bit integer samples are not supported",
                path.display()
            )))
        }
    };
    let shape = (height as usize, width as usize);
    if data.len() != shape.0 * shape.1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected {} samples for a {}x{} image, found {}",
            path.display(),
            shape.0 * shape.1,
            shape.0,
            shape.1,
            data.len()
        )));
    }
    Ok(Array2::from_shape_vec(shape, data).expect("length checked"))
}

fn tiff_dims(values: &Array2<f64>) -> (u32, u32) {
    let (rows, cols) = values.dim();
    (cols as u32, rows as u32)
}

pub fn save_tiff_f32(path: &Path, values: &Array2<f64>) -> Result<()> {
    let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    let (w, h) = tiff_dims(values);
    let mut enc = TiffEncoder::new(create(path)?).map_err(tiff_err(path))?;
    enc.write_image::<colortype::Gray32Float>(w, h, &data)
        .map_err(tiff_err(path))
}

/// Lossless 64-bit float TIFF.
pub fn save_tiff_f64(path: &Path, values: &Array2<f64>) -> Result<()> {
    let data: Vec<f64> = values.iter().copied().collect();
    let (w, h) = tiff_dims(values);
    let mut enc = TiffEncoder::new(create(path)?).map_err(tiff_err(path))?;
    enc.write_image::<colortype::Gray64Float>(w, h, &data)
        .map_err(tiff_err(path))
}

/// 16-bit TIFF; values are rounded and must lie in `[0, 65535]`.
pub fn save_tiff_u16(path: &Path, values: &Array2<f64>) -> Result<()> {
    if values.iter().any(|v| !(0.0..=65535.0).contains(v)) {
        return Err(Error::invalid("16-bit TIFF values must lie in [0, 65535]"));
    }
    let data: Vec<u16> = values.iter().map(|&v| v.round() as u16).collect();
    let (w, h) = tiff_dims(values);
    let mut enc = TiffEncoder::new(create(path)?).map_err(tiff_err(path))?;
    enc.write_image::<colortype::Gray16>(w, h, &data)
        .map_err(tiff_err(path))
}

/// Rows of comma-separated numbers; blank lines and `#` comments skipped.
pub fn parse_csv_grid(text: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::UnsupportedFormat(format!(
                    "line {}: cannot parse '{}' as a number",
                    lineno + 1,
                    field.trim()
                ))
            })?;
            data.push(v);
        }
        let n = data.len() - before;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(Error::UnsupportedFormat(format!(
                    "line {}: expected {c} columns, found {n}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::UnsupportedFormat("CSV grid has no rows".into()))?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row lengths checked"))
}

fn read_csv_grid(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_grid(&text).map_err(|e| match e {
        Error::UnsupportedFormat(msg) => {
            Error::UnsupportedFormat(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

fn write_csv_grid(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "method,step,psnr_db,rmse").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{:?},{:?}", r.method, r.step, r.psnr_db, r.rmse).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parse a metrics table written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize| {
        Error::UnsupportedFormat(format!("{}: malformed metrics line {n}", path.display()))
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1));
        }
        out.push(MetricsRow {
            method: f[0].to_string(),
            step: f[1].parse().map_err(|_| bad(i + 1))?,
            psnr_db: f[2].parse().map_err(|_| bad(i + 1))?,
            rmse: f[3].parse().map_err(|_| bad(i + 1))?,
        });
    }
    Ok(out)
}

/// `frequency_per_nm,mean_magnitude,mean_power,count`.
pub fn write_spectrum_csv(path: &Path, bins: &[RadialBin]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "frequency_per_nm,mean_magnitude,mean_power,count").map_err(io)?;
    for b in bins {
        writeln!(
            w,
            "{:?},{:?},{:?},{}",
            b.frequency, b.mean_magnitude, b.mean_power, b.count
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Record of one run: the effective configuration, seed and settings.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Command-specific settings such as worker count or chunk side.
    pub settings: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, config: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            settings: serde_json::Map::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("settings serialize");
        self.settings.insert(key.to_string(), v);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::io(path, e.into()))?;
        writeln!(w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}
