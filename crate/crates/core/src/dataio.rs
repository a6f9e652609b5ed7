//! Archive parsing and artifact writing.
//!
//! Input formats:
//! - `.ts`: header lines (`@problemName`, `@univariate`, `@classLabel`,
//!   `@data`), then one record per line with colon-separated dimensions,
//!   comma-separated values and the class label after the final colon.
//! - `.tsv` / `.txt`: one univariate series per line, label in the first
//!   column, tab-separated values after it.
//!
//! Class labels are mapped to contiguous indices `0..K-1` in sorted label
//! order (numeric when every label parses as a number, lexicographic
//! otherwise). Output formats are RFC-4180-style CSV with full-precision
//! reals and binary `P5` PGM images.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// One multichannel series; channels have equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelSeries<S> {
    channels: Vec<Vec<S>>,
}

impl<S: Scalar> MultichannelSeries<S> {
    /// Builds a series, rejecting ragged or empty channels.
    pub fn new(channels: Vec<Vec<S>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Data("series has no channels".into()));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(Error::Data("series has empty channels".into()));
        }
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "ragged channels: lengths {:?}",
                channels.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[Vec<S>] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels[0].is_empty()
    }
}

/// A labeled collection of series.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub items: Vec<MultichannelSeries<S>>,
    /// Contiguous class index per item, aligned with `items`.
    pub labels: Vec<usize>,
    /// Original label tokens, indexed by class index.
    pub label_names: Vec<String>,
    pub problem_name: Option<String>,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Channel count, identical across items by construction.
    pub fn channel_count(&self) -> usize {
        self.items.first().map_or(0, MultichannelSeries::channel_count)
    }

    /// Re-indexes labels against an externally fixed label list (for example
    /// the one stored in a checkpoint). Unknown labels are an error.
    pub fn align_labels(&mut self, label_names: &[String]) -> Result<()> {
        let mut remapped = Vec::with_capacity(self.labels.len());
        for &old in &self.labels {
            let name = &self.label_names[old];
            let new = label_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    Error::Label(format!("label {name:?} not present in reference list"))
                })?;
            remapped.push(new);
        }
        self.labels = remapped;
        self.label_names = label_names.to_vec();
        Ok(())
    }
}

/// Sorted label order: numeric when every token parses, lexicographic
/// otherwise.
fn sort_label_names(names: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = names.iter().cloned().collect();
    let numeric: Option<Vec<f64>> = out
        .iter()
        .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();
    if let Some(values) = numeric {
        let mut pairs: Vec<(f64, String)> = values.into_iter().zip(out).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        out = pairs.into_iter().map(|(_, s)| s).collect();
    } else {
        out.sort();
    }
    out
}

/// Loads a dataset, dispatching on the file extension (`.ts`, `.tsv`,
/// `.txt`).
pub fn load_dataset<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let text = fs::read_to_string(path)?;
    match ext.as_str() {
        "ts" => parse_ts_str(&text),
        "tsv" | "txt" => parse_tsv_str(&text),
        other => Err(Error::Data(format!(
            "unrecognized dataset extension {other:?} (expected .ts, .tsv or .txt)"
        ))),
    }
}

fn parse_value<S: Scalar>(token: &str, line: usize) -> Result<S> {
    let token = token.trim();
    if token == "?" {
        return Err(Error::Data(format!("missing value marker at line {line}")));
    }
    let v: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse number {token:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!("non-finite value at line {line}")));
    }
    Ok(real(v))
}

/// Parses the UEA-style `.ts` format from a string.
pub fn parse_ts_str<S: Scalar>(text: &str) -> Result<Dataset<S>> {
    let mut problem_name = None;
    let mut univariate: Option<bool> = None;
    let mut class_labels: Option<Vec<String>> = None;
    let mut in_data = false;
    let mut raw_items: Vec<(Vec<Vec<S>>, String)> = Vec::new();
    let mut data_line = 0usize;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_start_matches('\u{feff}').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            if let Some(rest) = line.strip_prefix('@') {
                let mut parts = rest.splitn(2, char::is_whitespace);
                let key = parts.next().unwrap_or("").to_ascii_lowercase();
                let value = parts.next().unwrap_or("").trim();
                match key.as_str() {
                    "problemname" => problem_name = Some(value.to_string()),
                    "univariate" => {
                        univariate = Some(parse_bool(value, line_no)?);
                    }
                    "classlabel" => {
                        let mut tokens = value.split_whitespace();
                        let flag = parse_bool(tokens.next().unwrap_or(""), line_no)?;
                        if flag {
                            let labels: Vec<String> =
                                tokens.map(str::to_string).collect();
                            if labels.is_empty() {
                                return Err(Error::Label(format!(
                                    "@classLabel true lists no labels (line {line_no})"
                                )));
                            }
                            class_labels = Some(labels);
                        } else {
                            return Err(Error::Label(
                                "dataset declares @classLabel false; classification needs labels"
                                    .into(),
                            ));
                        }
                    }
                    "data" => {
                        in_data = true;
                        data_line = line_no;
                    }
                    // Tolerated descriptive headers (@timeStamps, @missing,
                    // @equalLength, @seriesLength, @dimension, ...).
                    _ => {}
                }
                continue;
            }
            return Err(Error::Parse {
                line: line_no,
                message: "expected @header before @data".into(),
            });
        }

        // Data record: dim1:dim2:...:label
        let mut fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "record needs at least one dimension and a label".into(),
            });
        }
        let label = fields.pop().unwrap().trim().to_string();
        if label.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty label field".into(),
            });
        }
        let mut channels = Vec::with_capacity(fields.len());
        for dim in &fields {
            let values: Vec<S> = dim
                .split(',')
                .map(|t| parse_value(t, line_no))
                .collect::<Result<_>>()?;
            if values.is_empty() {
                return Err(Error::Data(format!("empty dimension at line {line_no}")));
            }
            channels.push(values);
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "ragged channel lengths at line {line_no}"
            )));
        }
        if let Some(true) = univariate {
            if channels.len() != 1 {
                return Err(Error::Shape(format!(
                    "@univariate true but record at line {line_no} has {} dimensions",
                    channels.len()
                )));
            }
        }
        raw_items.push((channels, label));
    }

    if !in_data {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            message: "missing @data section".into(),
        });
    }
    if raw_items.is_empty() {
        return Err(Error::Data(format!(
            "no records after @data (line {data_line})"
        )));
    }
    let class_labels = class_labels.ok_or_else(|| {
        Error::Label("missing @classLabel header".into())
    })?;

    let universe: BTreeSet<String> = class_labels.iter().cloned().collect();
    let label_names = sort_label_names(&universe);
    finish_dataset(raw_items, label_names, problem_name)
}

/// Parses label-first tab-separated series from a string.
pub fn parse_tsv_str<S: Scalar>(text: &str) -> Result<Dataset<S>> {
    let mut raw_items: Vec<(Vec<Vec<S>>, String)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_start_matches('\u{feff}').trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let label = fields.next().unwrap_or("").trim().to_string();
        if label.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty label column".into(),
            });
        }
        let values: Vec<S> = fields
            .map(|t| parse_value(t, line_no))
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::Data(format!(
                "record at line {line_no} has a label but no values"
            )));
        }
        raw_items.push((vec![values], label));
    }
    if raw_items.is_empty() {
        return Err(Error::Data("no records in TSV input".into()));
    }
    let universe: BTreeSet<String> = raw_items.iter().map(|(_, l)| l.clone()).collect();
    let label_names = sort_label_names(&universe);
    finish_dataset(raw_items, label_names, None)
}

fn finish_dataset<S: Scalar>(
    raw_items: Vec<(Vec<Vec<S>>, String)>,
    label_names: Vec<String>,
    problem_name: Option<String>,
) -> Result<Dataset<S>> {
    let mut items = Vec::with_capacity(raw_items.len());
    let mut labels = Vec::with_capacity(raw_items.len());
    let mut channel_count = None;
    for (channels, label) in raw_items {
        let series = MultichannelSeries::new(channels)?;
        match channel_count {
            None => channel_count = Some(series.channel_count()),
            Some(c) if c != series.channel_count() => {
                return Err(Error::Shape(format!(
                    "inconsistent channel counts across items: {c} vs {}",
                    series.channel_count()
                )));
            }
            _ => {}
        }
        let idx = label_names
            .iter()
            .position(|n| *n == label)
            .ok_or_else(|| Error::Label(format!("unknown class label {label:?}")))?;
        items.push(series);
        labels.push(idx);
    }
    Ok(Dataset {
        items,
        labels,
        label_names,
        problem_name,
    })
}

fn parse_bool(token: &str, line: usize) -> Result<bool> {
    match token.trim().to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse {
            line,
            message: format!("expected true/false, found {other:?}"),
        }),
    }
}

/// Per-channel z-normalization with population variance.
///
/// Channels whose standard deviation is within rounding noise of zero map to
/// all-zero channels instead of amplifying noise.
pub fn znormalize<S: Scalar>(series: &MultichannelSeries<S>) -> MultichannelSeries<S> {
    let channels = series
        .channels()
        .iter()
        .map(|ch| {
            let n = real::<S>(ch.len() as f64);
            let mean = ch.iter().copied().sum::<S>() / n;
            let var = ch
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<S>()
                / n;
            let floor = (mean.abs() + S::one()) * S::epsilon() * real::<S>(16.0);
            if var.sqrt() <= floor {
                vec![S::zero(); ch.len()]
            } else {
                let inv = S::one() / var.sqrt();
                ch.iter().map(|&v| (v - mean) * inv).collect()
            }
        })
        .collect();
    MultichannelSeries { channels }
}

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MtfImage<S> {
    height: usize,
    width: usize,
    pixels: Vec<S>,
}

impl<S: Scalar> MtfImage<S> {
    /// Builds an image, checking volume, minimum size and the `[0, 1]` pixel
    /// range.
    pub fn new(height: usize, width: usize, pixels: Vec<S>) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::Shape(format!(
                "image must be at least 8x8, got {height}x{width}"
            )));
        }
        if height * width != pixels.len() {
            return Err(Error::Shape(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        let tol = real::<S>(1e-9);
        if pixels
            .iter()
            .any(|&p| !p.is_finite() || p < -tol || p > S::one() + tol)
        {
            return Err(Error::Data("image pixel outside [0, 1]".into()));
        }
        let pixels = pixels
            .into_iter()
            .map(|p| p.max(S::zero()).min(S::one()))
            .collect();
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[S] {
        &self.pixels
    }
}

/// Encodes a binary `P5` PGM with maxval 255; values round half-up.
pub fn encode_pgm<S: Scalar>(image: &MtfImage<S>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&p| {
        let v = (p.to_real() * 255.0).round();
        v.clamp(0.0, 255.0) as u8
    }));
    out
}

/// Writes a `P5` PGM file.
pub fn write_pgm<S: Scalar>(path: &Path, image: &MtfImage<S>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(image))?;
    Ok(())
}

/// Decodes a binary `P5` PGM produced by [`encode_pgm`].
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let header_err = |m: &str| Error::Parse {
        line: 1,
        message: format!("PGM: {m}"),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            break;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            header_err("non-ascii header")
        })?);
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(header_err("expected P5 header"));
    }
    let width: usize = fields[1].parse().map_err(|_| header_err("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| header_err("bad height"))?;
    if fields[3] != "255" {
        return Err(header_err("expected maxval 255"));
    }
    pos += 1; // single whitespace after maxval
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| header_err("truncated pixel data"))?;
    Ok((width, height, data.to_vec()))
}

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum CsvValue {
    Real(f64),
    Int(i64),
    Text(String),
}

impl CsvValue {
    fn render(&self) -> String {
        match self {
            CsvValue::Real(v) => format_real(*v),
            CsvValue::Int(v) => v.to_string(),
            CsvValue::Text(s) => s.clone(),
        }
    }
}

/// Full-precision decimal rendering: the shortest string that parses back to
/// exactly the same `f64` (at most 17 significant digits).
pub fn format_real(x: f64) -> String {
    format!("{x}")
}

/// Renders rows as RFC-4180-style CSV with a header row.
pub fn csv_to_string(header: &[&str], rows: &[Vec<CsvValue>]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .map_err(|e| Error::Data(format!("csv: {e}")))?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Shape(format!(
                "csv row {i} has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(CsvValue::render).collect();
        writer
            .write_record(&cells)
            .map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv: {e}")))
}

/// Writes rows as CSV with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<CsvValue>]) -> Result<()> {
    fs::write(path, csv_to_string(header, rows)?)?;
    Ok(())
}
