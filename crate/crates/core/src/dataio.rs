//! Dataset loading (IDX, optionally gzipped, and CSV), binary training
//! checkpoints, and PGM image grids.
//!
//! Checkpoint layout, all integers and reals little-endian:
//!
//! ```text
//! "AEVB"  u32 version
//! u64 data_dim  u64 encoder_hidden  u64 decoder_hidden  u64 latent_dim
//! u8 family (0 Bernoulli, 1 Gaussian)  u8 clamp_mean
//! u64 n  n × f64 parameters (encoder blocks, then decoder blocks)
//! 4 × u64 RNG words  u64 examples_seen
//! sections: u8 tag, u64 byte length, payload; tag 0 ends the file
//!   1 optimizer   2 Monte Carlo EM chains   3 metric log
//! ```

use std::io::Read;
use std::ops::Range;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::aevb::{AdagradState, MetricLog, MetricRow, OptimizerState, TrainState};
use crate::baselines::McemState;
use crate::error::{AevbError, Result};
use crate::evalkit::StepsizeAdapter;
use crate::networks::{DecoderFamily, ModelShape, Parameters, VaeModel};
use crate::numkit::{normal_quantile, Matrix, RngState};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AEVB";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_END: u8 = 0;
const TAG_OPTIMIZER: u8 = 1;
const TAG_MCEM: u8 = 2;
const TAG_LOG: u8 = 3;

/// A data matrix with values in `[0, 1]` and a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub labels: Option<Vec<u8>>,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl Dataset {
    /// Everything in the training range; empty test range.
    pub fn new(name: impl Into<String>, x: Matrix, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(AevbError::shape(
                    "Dataset::new",
                    format!("{} labels", l.len()),
                    format!("{} rows", x.rows()),
                ));
            }
        }
        if let Some(v) = x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AevbError::Param(format!("dataset values must lie in [0, 1], found {v}")));
        }
        let n = x.rows();
        Ok(Self {
            name: name.into(),
            x,
            labels,
            train: 0..n,
            test: n..n,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// First `n_train` rows train, the rest test.
    pub fn with_split(mut self, n_train: usize) -> Result<Self> {
        if n_train == 0 || n_train > self.len() {
            return Err(AevbError::Param(format!(
                "train size must be in 1..={}, got {n_train}",
                self.len()
            )));
        }
        self.train = 0..n_train;
        self.test = n_train..self.len();
        Ok(self)
    }

    /// Keep only the first `n` rows.
    pub fn truncate(mut self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(AevbError::Param(format!("cannot keep {n} of {} rows", self.len())));
        }
        self.x = self.x.select_rows(&(0..n).collect::<Vec<_>>())?;
        if let Some(l) = &mut self.labels {
            l.truncate(n);
        }
        self.train = 0..n;
        self.test = n..n;
        Ok(self)
    }

    /// Threshold every value: `1` where `v > threshold`, else `0`.
    pub fn binarize(mut self, threshold: f64) -> Self {
        for v in self.x.as_mut_slice() {
            *v = if *v > threshold { 1.0 } else { 0.0 };
        }
        self
    }

    pub fn train_matrix(&self) -> Matrix {
        self.x
            .select_rows(&self.train.clone().collect::<Vec<_>>())
            .expect("train range is nonempty and in bounds")
    }

    /// `None` when the test range is empty.
    pub fn test_matrix(&self) -> Option<Matrix> {
        (!self.test.is_empty()).then(|| {
            self.x
                .select_rows(&self.test.clone().collect::<Vec<_>>())
                .expect("test range is in bounds")
        })
    }
}

/// Read a file, transparently inflating gzip content.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| AevbError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| AevbError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| AevbError::Parse {
            offset: bytes.len(),
            message: format!("header ends early: needed 4 bytes at offset {offset}"),
        })
}

/// Decode an IDX image file: rows are images, pixel bytes scaled by `1/255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(AevbError::Parse {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let d = rows * cols;
    let expected = 16 + n * d;
    if bytes.len() != expected {
        return Err(AevbError::Parse {
            offset: bytes.len().min(expected),
            message: format!(
                "payload length mismatch: header declares {n}x{rows}x{cols} ({expected} bytes), file has {} bytes",
                bytes.len()
            ),
        });
    }
    if n == 0 || d == 0 {
        return Err(AevbError::Parse {
            offset: 4,
            message: "IDX file declares no images".into(),
        });
    }
    let data = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::new(n, d, data)
}

/// Decode an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(AevbError::Parse {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + n {
        return Err(AevbError::Parse {
            offset: bytes.len().min(8 + n),
            message: format!("payload length mismatch: expected {} bytes, file has {}", 8 + n, bytes.len()),
        });
    }
    Ok(bytes[8..].to_vec())
}

/// Load IDX images (and optionally labels), gzipped or raw.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let x = parse_idx_images(&read_bytes(images)?)?;
    let labels = labels.map(|p| read_bytes(p).and_then(|b| parse_idx_labels(&b))).transpose()?;
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, x, labels)
}

/// Parse CSV text: one image per line, comma-separated values in `0..=255`.
/// Blank lines are skipped.
pub fn parse_csv(text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in body.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| AevbError::Parse {
                offset: start,
                message: format!("line {}: not a number: {field:?}", rows + 1),
            })?;
            if !(0.0..=255.0).contains(&v) {
                return Err(AevbError::Parse {
                    offset: start,
                    message: format!("line {}: value {v} outside 0..=255", rows + 1),
                });
            }
            data.push(v / 255.0);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(AevbError::Parse {
                    offset: start,
                    message: format!("line {}: {count} columns, expected {c}", rows + 1),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or(AevbError::Parse {
        offset: 0,
        message: "no data rows".into(),
    })?;
    Matrix::new(rows, cols, data)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| AevbError::io(path, e))?;
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, parse_csv(&text)?, None)
}

/// IDX when the file starts with an IDX image magic (after inflation),
/// CSV otherwise.
pub fn load_dataset(path: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let bytes = read_bytes(path)?;
    if bytes.len() >= 4 && be_u32(&bytes, 0)? == IDX_IMAGES_MAGIC {
        let x = parse_idx_images(&bytes)?;
        let labels = labels.map(|p| read_bytes(p).and_then(|b| parse_idx_labels(&b))).transpose()?;
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Dataset::new(name, x, labels)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| AevbError::Parse {
            offset: e.utf8_error().valid_up_to(),
            message: "neither an IDX image file nor UTF-8 CSV".into(),
        })?;
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Dataset::new(name, parse_csv(&text)?, None)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
    fn section(&mut self, tag: u8, body: Writer) {
        self.u8(tag);
        self.u64(body.0.len() as u64);
        self.0.extend_from_slice(&body.0);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| AevbError::Parse {
            offset: self.pos,
            message: format!("truncated checkpoint: {what} needs {n} bytes, {} left", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| AevbError::Parse {
            offset: at,
            message: format!("{what} {v} does not fit in memory"),
        })
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.usize(what)?;
        let raw = self.take(n.checked_mul(8).unwrap_or(usize::MAX), what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn bad(&self, at: usize, message: impl Into<String>) -> AevbError {
        AevbError::Parse {
            offset: at,
            message: message.into(),
        }
    }
}

/// Serialize a complete training state.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let shape = state.model.shape();
    w.u64(shape.data_dim as u64);
    w.u64(shape.encoder_hidden as u64);
    w.u64(shape.decoder_hidden as u64);
    w.u64(shape.latent_dim as u64);
    match shape.family {
        DecoderFamily::Bernoulli => {
            w.u8(0);
            w.u8(0);
        }
        DecoderFamily::Gaussian { clamp_mean } => {
            w.u8(1);
            w.u8(clamp_mean as u8);
        }
    }
    w.f64s(&state.model.to_flat());
    state.rng.words().iter().for_each(|v| w.u64(*v));
    w.u64(state.examples_seen);

    let mut opt = Writer(Vec::new());
    match &state.optimizer {
        OptimizerState::Sgd { stepsize } => {
            opt.u8(0);
            opt.f64(*stepsize);
        }
        OptimizerState::Adagrad(a) => {
            opt.u8(1);
            opt.f64(a.stepsize);
            opt.f64(a.epsilon);
            opt.f64s(&a.accum);
        }
    }
    w.section(TAG_OPTIMIZER, opt);

    if let Some(m) = &state.mcem {
        let mut s = Writer(Vec::new());
        s.u64(m.chains.rows() as u64);
        s.u64(m.chains.cols() as u64);
        m.chains.as_slice().iter().for_each(|v| s.f64(*v));
        s.f64(m.stepsize);
        s.f64(m.adapter.target);
        s.f64(m.adapter.shrink_to);
        s.u64(m.adapter.iteration);
        s.f64(m.adapter.mean_error);
        s.f64(m.adapter.log_eps);
        s.f64(m.adapter.log_eps_avg);
        s.u64(m.transitions);
        s.u64(m.updates);
        w.section(TAG_MCEM, s);
    }

    let mut log = Writer(Vec::new());
    log.u64(state.log.rows.len() as u64);
    for r in &state.log.rows {
        log.u64(r.examples_seen);
        log.f64(r.train);
        log.u8(r.test.is_some() as u8);
        log.f64(r.test.unwrap_or(0.0));
    }
    w.section(TAG_LOG, log);
    w.u8(TAG_END);
    w.0
}

/// Inverse of [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.bad(0, "not a checkpoint: bad magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(AevbError::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let data_dim = r.usize("data_dim")?;
    let encoder_hidden = r.usize("encoder_hidden")?;
    let decoder_hidden = r.usize("decoder_hidden")?;
    let latent_dim = r.usize("latent_dim")?;
    let at = r.pos;
    let family = match (r.u8("family")?, r.u8("clamp flag")?) {
        (0, 0) => DecoderFamily::Bernoulli,
        (1, c @ (0 | 1)) => DecoderFamily::Gaussian { clamp_mean: c == 1 },
        (f, c) => return Err(r.bad(at, format!("unknown decoder family {f} / clamp flag {c}"))),
    };
    let shape = ModelShape {
        data_dim,
        encoder_hidden,
        decoder_hidden,
        latent_dim,
        family,
    };
    shape.validate().map_err(|e| r.bad(8, format!("bad topology: {e}")))?;
    let at = r.pos;
    let params = r.f64s("parameters")?;
    let mut model = VaeModel::zeros(&shape)?;
    if params.len() != model.num_params() {
        return Err(r.bad(
            at,
            format!("topology needs {} parameters, checkpoint has {}", model.num_params(), params.len()),
        ));
    }
    model.set_flat(&params)?;
    let at = r.pos;
    let words = [r.u64("rng")?, r.u64("rng")?, r.u64("rng")?, r.u64("rng")?];
    let rng = RngState::from_words(words).ok_or_else(|| r.bad(at, "all-zero RNG state"))?;
    let examples_seen = r.u64("examples_seen")?;

    let mut optimizer = None;
    let mut mcem = None;
    let mut log = MetricLog::default();
    loop {
        let at = r.pos;
        let tag = r.u8("section tag")?;
        if tag == TAG_END {
            break;
        }
        let len = r.usize("section length")?;
        let body = r.take(len, "section body")?;
        let mut s = Reader { bytes: body, pos: 0 };
        let base = r.pos - len;
        let rebase = |e: AevbError| match e {
            AevbError::Parse { offset, message } => AevbError::Parse {
                offset: base + offset,
                message,
            },
            other => other,
        };
        match tag {
            TAG_OPTIMIZER => {
                let kind = s.u8("optimizer kind").map_err(rebase)?;
                let stepsize = s.f64("stepsize").map_err(rebase)?;
                optimizer = Some(match kind {
                    0 => OptimizerState::Sgd { stepsize },
                    1 => {
                        let epsilon = s.f64("epsilon").map_err(rebase)?;
                        let accum = s.f64s("accumulator").map_err(rebase)?;
                        OptimizerState::Adagrad(AdagradState { accum, epsilon, stepsize })
                    }
                    k => return Err(r.bad(base, format!("unknown optimizer kind {k}"))),
                });
            }
            TAG_MCEM => {
                let rows = s.usize("chain rows").map_err(rebase)?;
                let cols = s.usize("chain cols").map_err(rebase)?;
                let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(len / 8));
                for _ in 0..rows * cols {
                    data.push(s.f64("chains").map_err(rebase)?);
                }
                let chains = Matrix::new(rows, cols, data).map_err(|e| r.bad(base, e.to_string()))?;
                let stepsize = s.f64("stepsize").map_err(rebase)?;
                let adapter = StepsizeAdapter {
                    target: s.f64("target").map_err(rebase)?,
                    shrink_to: s.f64("shrink").map_err(rebase)?,
                    iteration: s.u64("iteration").map_err(rebase)?,
                    mean_error: s.f64("mean error").map_err(rebase)?,
                    log_eps: s.f64("log stepsize").map_err(rebase)?,
                    log_eps_avg: s.f64("average log stepsize").map_err(rebase)?,
                };
                mcem = Some(McemState {
                    chains,
                    stepsize,
                    adapter,
                    transitions: s.u64("transitions").map_err(rebase)?,
                    updates: s.u64("updates").map_err(rebase)?,
                });
            }
            TAG_LOG => {
                let n = s.usize("log rows").map_err(rebase)?;
                for _ in 0..n {
                    let examples_seen = s.u64("log row").map_err(rebase)?;
                    let train = s.f64("log row").map_err(rebase)?;
                    let has_test = s.u8("log row").map_err(rebase)?;
                    let test = s.f64("log row").map_err(rebase)?;
                    log.rows.push(MetricRow {
                        examples_seen,
                        train,
                        test: (has_test == 1).then_some(test),
                    });
                }
            }
            t => return Err(r.bad(at, format!("unknown section tag {t}"))),
        }
        if s.pos != body.len() {
            return Err(r.bad(base + s.pos, format!("section {tag} has {} trailing bytes", body.len() - s.pos)));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.bad(r.pos, "trailing bytes after end marker"));
    }
    let optimizer = optimizer.ok_or_else(|| r.bad(r.pos, "checkpoint has no optimizer section"))?;
    Ok(TrainState {
        model,
        optimizer,
        rng,
        examples_seen,
        log,
        mcem,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| AevbError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| AevbError::io(path, e))?)
}

/// 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| AevbError::io(path, e))
    }
}

/// `round(255 · v)` with ties to even, after clamping `v` into `[0, 1]`.
pub fn to_pixel(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round_ties_even() as u8
}

/// Height and width for a flattened image of `d` pixels: 28×28 for 784,
/// 28×20 for 560, the square for other perfect squares, else one row.
pub fn default_image_shape(d: usize) -> (usize, usize) {
    match d {
        784 => (28, 28),
        560 => (28, 20),
        _ => {
            let s = (d as f64).sqrt().round() as usize;
            if s * s == d {
                (s, s)
            } else {
                (1, d)
            }
        }
    }
}

/// Tile row-major images into `cols` columns; missing cells stay black.
pub fn tile_images(images: &[Vec<f64>], height: usize, width: usize, cols: usize) -> Result<GrayImage> {
    if images.is_empty() || cols == 0 {
        return Err(AevbError::Param("nothing to tile".into()));
    }
    if let Some(bad) = images.iter().find(|im| im.len() != height * width) {
        return Err(AevbError::shape(
            "tile_images",
            format!("image of {} pixels", bad.len()),
            format!("{height}x{width}"),
        ));
    }
    let rows = images.len().div_ceil(cols);
    let (gw, gh) = (cols * width, rows * height);
    let mut pixels = vec![0u8; gw * gh];
    for (k, im) in images.iter().enumerate() {
        let (r0, c0) = ((k / cols) * height, (k % cols) * width);
        for i in 0..height {
            for j in 0..width {
                pixels[(r0 + i) * gw + c0 + j] = to_pixel(im[i * width + j]);
            }
        }
    }
    Ok(GrayImage {
        width: gw,
        height: gh,
        pixels,
    })
}

/// Latent coordinates of a `k × k` manifold grid: cell `(r, c)` sits at
/// `(Φ⁻¹(u_c), Φ⁻¹(u_r))` with `u_i = (i + ½) / k`.
pub fn manifold_coordinates(k: usize) -> Vec<[f64; 2]> {
    let u: Vec<f64> = (0..k).map(|i| normal_quantile((i as f64 + 0.5) / k as f64)).collect();
    let mut out = Vec::with_capacity(k * k);
    for r in 0..k {
        for c in 0..k {
            out.push([u[c], u[r]]);
        }
    }
    out
}

/// Decoder means over a `k × k` grid of a two-dimensional latent space.
pub fn manifold_grid(model: &VaeModel, k: usize, height: usize, width: usize) -> Result<GrayImage> {
    if model.latent_dim() != 2 {
        return Err(AevbError::Param(format!(
            "manifold grids need a 2-dimensional latent space, model has {}",
            model.latent_dim()
        )));
    }
    if k == 0 {
        return Err(AevbError::Param("grid side must be positive".into()));
    }
    let images = manifold_coordinates(k)
        .iter()
        .map(|z| model.decoder.mean(z))
        .collect::<Result<Vec<_>>>()?;
    tile_images(&images, height, width, k)
}

/// Decoder means at `n` prior draws, tiled `⌈√n⌉` wide.
pub fn sample_grid(model: &VaeModel, n: usize, rng: &mut RngState, height: usize, width: usize) -> Result<GrayImage> {
    if n == 0 {
        return Err(AevbError::Param("sample count must be positive".into()));
    }
    let images = (0..n)
        .map(|_| model.decoder.mean(&rng.standard_normal_vec(model.latent_dim())))
        .collect::<Result<Vec<_>>>()?;
    let cols = (1..=n).find(|c| c * c >= n).expect("n ≥ 1");
    tile_images(&images, height, width, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aevb::{train, TrainConfig, Trainer};
    use proptest::prelude::*;

    fn idx_bytes(n: u32, h: u32, w: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [n, h, w] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn handcrafted_idx() {
        let m = parse_idx_images(&idx_bytes(2, 2, 2, &[0, 255, 51, 102, 255, 0, 0, 204])).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 4));
        assert_eq!(m.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(m.row(1), &[1.0, 0.0, 0.0, 0.8]);
    }

    #[test]
    fn short_payload_names_lengths() {
        let err = parse_idx_images(&idx_bytes(2, 2, 2, &[0; 7])).unwrap_err().to_string();
        assert!(err.contains("24 bytes") && err.contains("23 bytes"), "{err}");
        assert!(matches!(parse_idx_images(&idx_bytes(2, 2, 2, &[0; 7])), Err(AevbError::Parse { offset: 23, .. })));
    }

    #[test]
    fn bad_magic_and_short_header() {
        let mut b = idx_bytes(1, 1, 1, &[0]);
        b[3] = 0x01;
        assert!(matches!(parse_idx_images(&b), Err(AevbError::Parse { offset: 0, .. })));
        assert!(parse_idx_images(&b[..10]).is_err());
        assert!(parse_idx_labels(&idx_bytes(1, 1, 1, &[0])).is_err());
    }

    #[test]
    fn labels_parse() {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 2, 1]);
        assert_eq!(parse_idx_labels(&b).unwrap(), vec![7, 2, 1]);
        assert!(parse_idx_labels(&b[..10]).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let raw = idx_bytes(1, 1, 3, &[0, 128, 255]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.idx.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        let ds = load_idx(&path, None).unwrap();
        assert_eq!(ds.x.row(0), &[0.0, 128.0 / 255.0, 1.0]);
        assert!(matches!(load_idx(&dir.path().join("missing"), None), Err(AevbError::Io { .. })));
    }

    /// Byte-at-a-time decoder written independently of `parse_idx_images`.
    fn reference_decode(bytes: &[u8]) -> Option<(usize, usize, Vec<f64>)> {
        if bytes.len() < 16 || bytes[0..4] != [0, 0, 8, 3] {
            return None;
        }
        let word = |i: usize| bytes[i..i + 4].iter().fold(0usize, |acc, b| acc * 256 + *b as usize);
        let (n, d) = (word(4), word(8) * word(12));
        (bytes.len() == 16 + n * d && n * d > 0).then(|| (n, d, bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect()))
    }

    proptest! {
        #[test]
        fn idx_matches_reference(n in 1u32..5, h in 1u32..5, w in 1u32..5, seed in any::<u64>()) {
            let mut rng = RngState::from_seed(seed);
            let payload: Vec<u8> = (0..n * h * w).map(|_| rng.below(256) as u8).collect();
            let bytes = idx_bytes(n, h, w, &payload);
            let (rn, rd, rdata) = reference_decode(&bytes).unwrap();
            let m = parse_idx_images(&bytes).unwrap();
            prop_assert_eq!((m.rows(), m.cols()), (rn, rd));
            prop_assert_eq!(m.as_slice(), &rdata[..]);
        }
    }

    #[test]
    fn csv_parsing() {
        let m = parse_csv("0,255\n\n51, 102\n").unwrap();
        assert_eq!(m.as_slice(), &[0.0, 1.0, 0.2, 0.4]);
        assert!(matches!(parse_csv("0,1\n0\n"), Err(AevbError::Parse { offset: 4, .. })));
        assert!(parse_csv("0,x\n").is_err());
        assert!(parse_csv("0,256\n").is_err());
        assert!(parse_csv("\n").is_err());
    }

    #[test]
    fn dataset_split_and_binarize() {
        let x = Matrix::new(4, 2, vec![0.1, 0.6, 0.5, 0.51, 0.0, 1.0, 0.7, 0.2]).unwrap();
        let ds = Dataset::new("t", x, None).unwrap().with_split(3).unwrap();
        assert_eq!(ds.train_matrix().rows(), 3);
        assert_eq!(ds.test_matrix().unwrap().row(0), &[0.7, 0.2]);
        let b = ds.clone().binarize(0.5);
        assert_eq!(b.x.as_slice(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(ds.clone().with_split(0).is_err());
        assert!(ds.clone().with_split(5).is_err());
        assert!(Dataset::new("t", Matrix::new(1, 1, vec![1.5]).unwrap(), None).is_err());
        assert!(Dataset::new("t", Matrix::zeros(2, 1), Some(vec![1])).is_err());
        assert_eq!(ds.truncate(2).unwrap().len(), 2);
    }

    fn trained_state(mcem: bool) -> TrainState {
        let x = Matrix::new(6, 4, (0..24).map(|i| ((i * 7) % 5) as f64 / 4.0).collect()).unwrap();
        let shape = ModelShape {
            data_dim: 4,
            encoder_hidden: 3,
            decoder_hidden: 3,
            latent_dim: 2,
            family: DecoderFamily::Gaussian { clamp_mean: true },
        };
        let algorithm = if mcem {
            crate::aevb::Algorithm::Mcem(crate::baselines::McemConfig { eval_samples: 5, ..Default::default() })
        } else {
            crate::aevb::Algorithm::Aevb
        };
        let cfg = TrainConfig {
            minibatch_size: 2,
            epochs: 2,
            eval_every: 4,
            eval_points: Some(2),
            seed: 5,
            algorithm,
            ..TrainConfig::default()
        };
        train(&x, Some(&x), &shape, cfg).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        for mcem in [false, true] {
            let st = trained_state(mcem);
            let bytes = encode_checkpoint(&st);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back.model.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                       st.model.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(back.rng, st.rng);
            assert_eq!(back.optimizer, st.optimizer);
            assert_eq!(back.mcem, st.mcem);
            assert_eq!(back.log, st.log);
            assert_eq!(back.examples_seen, st.examples_seen);
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn checkpoint_file_save_load_save() {
        let st = trained_state(false);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&st, &a).unwrap();
        save_checkpoint(&load_checkpoint(&a).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = encode_checkpoint(&trained_state(false));
        for cut in [0, 3, 10, 60, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(AevbError::Parse { offset: 0, .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint(&v2), Err(AevbError::Format(_))));
        let mut trailing = bytes;
        trailing.push(0);
        assert!(decode_checkpoint(&trailing).is_err());
    }

    #[test]
    fn resume_from_checkpoint_file_matches_uninterrupted() {
        let x = Matrix::new(5, 3, (0..15).map(|i| ((i * 3) % 4) as f64 / 3.0).collect()).unwrap();
        let shape = ModelShape {
            data_dim: 3,
            encoder_hidden: 4,
            decoder_hidden: 4,
            latent_dim: 2,
            family: DecoderFamily::Bernoulli,
        };
        let cfg = TrainConfig { minibatch_size: 5, epochs: 4, eval_every: 5, seed: 9, ..TrainConfig::default() };
        let full = train(&x, None, &shape, cfg.clone()).unwrap();
        let mut first = Trainer::new(&x, None, &shape, TrainConfig { max_examples: Some(10), ..cfg.clone() }).unwrap();
        first.run().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        save_checkpoint(&first.into_state(), &path).unwrap();
        let mut second = Trainer::resume(load_checkpoint(&path).unwrap(), &x, None, cfg).unwrap();
        second.run().unwrap();
        let resumed = second.into_state();
        assert_eq!(encode_checkpoint(&TrainState { log: MetricLog::default(), ..resumed.clone() }),
                   encode_checkpoint(&TrainState { log: MetricLog::default(), ..full.clone() }));
        assert_eq!(resumed.log.last(), full.log.last());
    }

    #[test]
    fn pixel_rounding_is_half_even() {
        assert_eq!(to_pixel(0.5), 128); // 127.5 → 128
        assert_eq!(to_pixel(0.5 / 255.0), 0); // 0.5 → 0
        assert_eq!(to_pixel(1.5 / 255.0), 2);
        assert_eq!(to_pixel(-1.0), 0);
        assert_eq!(to_pixel(2.0), 255);
    }

    #[test]
    fn pgm_header_and_size() {
        let im = GrayImage { width: 3, height: 2, pixels: vec![1, 2, 3, 4, 5, 6] };
        let b = im.to_pgm();
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(b.len(), 11 + 6);
    }

    fn zero_model(latent: usize) -> VaeModel {
        VaeModel::zeros(&ModelShape {
            data_dim: 6,
            encoder_hidden: 2,
            decoder_hidden: 2,
            latent_dim: latent,
            family: DecoderFamily::Bernoulli,
        })
        .unwrap()
    }

    #[test]
    fn manifold_layout() {
        let c = manifold_coordinates(1);
        assert_eq!(c, vec![[0.0, 0.0]]);
        let c3 = manifold_coordinates(3);
        assert!((c3[0][0] + c3[2][0]).abs() < 1e-12 && c3[1][0] == 0.0);
        assert!((c3[0][1] + c3[6][1]).abs() < 1e-12);
        let m = zero_model(2);
        let im = manifold_grid(&m, 4, 2, 3).unwrap();
        assert_eq!((im.height, im.width), (8, 12));
        let one = manifold_grid(&m, 1, 2, 3).unwrap();
        let want: Vec<u8> = m.decoder.mean(&[0.0, 0.0]).unwrap().iter().map(|v| to_pixel(*v)).collect();
        assert_eq!(one.pixels, want);
        assert!(manifold_grid(&zero_model(3), 2, 2, 3).is_err());
    }

    #[test]
    fn sample_grid_layout_and_gray() {
        let m = zero_model(3);
        let im = sample_grid(&m, 5, &mut RngState::from_seed(1), 2, 3).unwrap();
        assert_eq!((im.width, im.height), (9, 4));
        for r in 0..4 {
            for c in 0..9 {
                let filled = r < 2 || c < 6;
                assert_eq!(im.pixels[r * 9 + c], if filled { 128 } else { 0 }, "({r},{c})");
            }
        }
        let again = sample_grid(&m, 5, &mut RngState::from_seed(1), 2, 3).unwrap();
        assert_eq!(im.to_pgm(), again.to_pgm());
    }

    #[test]
    fn image_shapes() {
        assert_eq!(default_image_shape(784), (28, 28));
        assert_eq!(default_image_shape(560), (28, 20));
        assert_eq!(default_image_shape(16), (4, 4));
        assert_eq!(default_image_shape(6), (1, 6));
    }
}
