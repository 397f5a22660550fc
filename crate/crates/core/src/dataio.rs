//! Dataset, checkpoint and configuration files.
//!
//! Binary dataset layout (all little-endian):
//!
//! ```text
//! "AKRM" | u32 version | u64 N | u64 d | f32 X[N*d] (row-major) | f32 s[N]
//! [ u8 flags (bit 0: ids, bit 1: meta)
//!   | for each present block, N x (u32 byte length | UTF-8 bytes) ]
//! ```
//!
//! Checkpoint layout:
//!
//! ```text
//! "AKRC" | u32 version | u64 input_dim | u64 seed | u8 mode | u32 layers
//! | per layer: u64 in | u64 out | u8 has_norm | f64 weight[out*in] | f64 bias[out]
//!              [ f64 scale[out] | f64 shift[out] | f64 running_mean[out] | f64 running_var[out] ]
//! | f64 alpha_raw | f64 beta_raw
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{BatchNorm, KernelParams, Layer, MlpParams, Mode, ModelState};
use crate::trainer::TrainConfig;

pub const DATASET_MAGIC: &[u8; 4] = b"AKRM";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AKRC";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_IDS: u8 = 1;
const FLAG_META: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x d` embeddings.
    pub x: Array2<f32>,
    pub scores: Vec<f32>,
    pub ids: Option<Vec<String>>,
    pub meta: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f32>, scores: Vec<f32>, ids: Option<Vec<String>>, meta: Option<Vec<String>>) -> Result<Self> {
        let ds = Dataset { x, scores, ids, meta };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if n < 2 {
            return Err(Error::TooFewPoints(n));
        }
        if self.x.ncols() == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if self.scores.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} scores for {n} rows",
                self.scores.len()
            )));
        }
        for (row, r) in self.x.rows().into_iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row,
                    what: "embedding".into(),
                });
            }
            if !self.scores[row].is_finite() {
                return Err(Error::NonFinite {
                    row,
                    what: "score".into(),
                });
            }
        }
        if let Some(ids) = &self.ids {
            if ids.len() != n {
                return Err(Error::InvalidInput(format!("{} ids for {n} rows", ids.len())));
            }
            let mut seen = HashSet::with_capacity(n);
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::DuplicateId(id.clone()));
                }
            }
        }
        if let Some(meta) = &self.meta {
            if meta.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{} metadata entries for {n} rows",
                    meta.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Row id, or the row index when the dataset has no ids.
    pub fn id(&self, row: usize) -> String {
        match &self.ids {
            Some(ids) => ids[row].clone(),
            None => row.to_string(),
        }
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        match &self.ids {
            Some(ids) => ids.iter().position(|i| i == id),
            None => id.parse::<usize>().ok().filter(|&r| r < self.n()),
        }
    }

    pub fn meta(&self, row: usize) -> Option<&str> {
        self.meta.as_ref().map(|m| m[row].as_str())
    }

    pub fn features(&self) -> Array2<f64> {
        self.x.mapv(f64::from)
    }

    pub fn scores_f64(&self) -> Vec<f64> {
        self.scores.iter().map(|&v| f64::from(v)).collect()
    }

    /// Rows `idx` in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let pick = |v: &Option<Vec<String>>| v.as_ref().map(|v| idx.iter().map(|&i| v[i].clone()).collect());
        Dataset::new(
            self.x.select(ndarray::Axis(0), idx),
            idx.iter().map(|&i| self.scores[i]).collect(),
            pick(&self.ids),
            pick(&self.meta),
        )
    }
}

fn too_short(what: &str) -> Error {
    Error::Corrupt(format!("unexpected end of file while reading {what}"))
}

/// Little-endian cursor over a byte slice.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| too_short(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
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

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| too_short(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| too_short(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt(format!("{what} is not valid UTF-8")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn usize_from(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Corrupt(format!("{what} {v} out of range")))
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let (n, d) = (ds.n(), ds.d());
    let mut out = Vec::with_capacity(24 + 4 * n * (d + 1));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in ds.x.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &ds.scores {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let flags = if ds.ids.is_some() { FLAG_IDS } else { 0 } | if ds.meta.is_some() { FLAG_META } else { 0 };
    if flags != 0 {
        out.push(flags);
        for block in [&ds.ids, &ds.meta].into_iter().flatten() {
            for s in block {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic").ok() != Some(DATASET_MAGIC.as_slice()) {
        return Err(Error::BadMagic { expected: "AKRM" });
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n = usize_from(r.u64("row count")?, "row count")?;
    let d = usize_from(r.u64("dimension")?, "dimension")?;
    let cells = n.checked_mul(d).ok_or_else(|| Error::Corrupt("N*d overflows".into()))?;
    let x = r.f32s(cells, "embeddings")?;
    let scores = r.f32s(n, "scores")?;
    let (mut ids, mut meta) = (None, None);
    if !r.done() {
        let flags = r.u8("flags")?;
        if flags & !(FLAG_IDS | FLAG_META) != 0 {
            return Err(Error::Corrupt(format!("unknown flags {flags:#04x}")));
        }
        if flags & FLAG_IDS != 0 {
            ids = Some((0..n).map(|_| r.string("id")).collect::<Result<Vec<_>>>()?);
        }
        if flags & FLAG_META != 0 {
            meta = Some((0..n).map(|_| r.string("metadata")).collect::<Result<Vec<_>>>()?);
        }
        if !r.done() {
            return Err(Error::Corrupt("trailing bytes after dataset".into()));
        }
    }
    let x = Array2::from_shape_vec((n, d), x).map_err(|e| Error::Corrupt(e.to_string()))?;
    Dataset::new(x, scores, ids, meta)
}

/// Reads a CSV dataset: header with `e0..e{d-1}`, `score`, optional `id`
/// and `meta` columns. Row numbers in errors count data rows from 0.
pub fn read_csv_dataset<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut emb = Vec::new();
    while let Some(c) = col(&format!("e{}", emb.len())) {
        emb.push(c);
    }
    if emb.is_empty() {
        return Err(Error::Csv("header has no e0 column".into()));
    }
    let score = col("score").ok_or_else(|| Error::Csv("header has no score column".into()))?;
    let (id_col, meta_col) = (col("id"), col("meta"));
    let d = emb.len();

    let mut x = Vec::new();
    let mut scores = Vec::new();
    let mut ids = id_col.map(|_| Vec::new());
    let mut meta = meta_col.map(|_| Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let parse = |c: usize, what: &str| -> Result<f32> {
            let v: f32 = field(c)
                .parse()
                .map_err(|_| Error::Csv(format!("row {row}: cannot parse {what} {:?}", field(c))))?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, what: what.into() });
            }
            Ok(v)
        };
        for &c in &emb {
            x.push(parse(c, "embedding")?);
        }
        scores.push(parse(score, "score")?);
        if let (Some(ids), Some(c)) = (ids.as_mut(), id_col) {
            ids.push(field(c).to_string());
        }
        if let (Some(meta), Some(c)) = (meta.as_mut(), meta_col) {
            meta.push(rec.get(c).unwrap_or("").to_string());
        }
    }
    let n = scores.len();
    let x = Array2::from_shape_vec((n, d), x).map_err(|e| Error::Csv(e.to_string()))?;
    Dataset::new(x, scores, ids, meta)
}

pub fn write_csv_dataset<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..ds.d()).map(|k| format!("e{k}")).collect();
    header.push("score".into());
    if ds.ids.is_some() {
        header.push("id".into());
    }
    if ds.meta.is_some() {
        header.push("meta".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.scores[i].to_string());
        if let Some(ids) = &ds.ids {
            rec.push(ids[i].clone());
        }
        if let Some(meta) = &ds.meta {
            rec.push(meta[i].clone());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset, choosing the format from the leading magic bytes.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(DATASET_MAGIC) {
        decode_dataset(&bytes)
    } else if bytes.starts_with(CHECKPOINT_MAGIC) {
        Err(Error::BadMagic { expected: "AKRM" })
    } else {
        read_csv_dataset(bytes.as_slice())
    }
}

/// Writes CSV when the extension is `.csv`, the binary format otherwise.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_csv_dataset(ds, fs::File::create(path)?)
    } else {
        Ok(fs::write(path, encode_dataset(ds))?)
    }
}

pub fn encode_checkpoint(model: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, vals: &mut dyn Iterator<Item = f64>| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.input_dim as u64).to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.push(match model.mode {
        Mode::Train => 0,
        Mode::Inference => 1,
    });
    out.extend_from_slice(&(model.mlp.layers.len() as u32).to_le_bytes());
    for l in &model.mlp.layers {
        out.extend_from_slice(&(l.in_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(l.out_dim() as u64).to_le_bytes());
        out.push(u8::from(l.norm.is_some()));
        put(&mut out, &mut l.weight.iter().copied());
        put(&mut out, &mut l.bias.iter().copied());
        if let Some(n) = &l.norm {
            for a in [&n.scale, &n.shift, &n.running_mean, &n.running_var] {
                put(&mut out, &mut a.iter().copied());
            }
        }
    }
    put(
        &mut out,
        &mut [model.kernel.alpha_raw, model.kernel.beta_raw].into_iter(),
    );
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic").ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::BadMagic { expected: "AKRC" });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let input_dim = usize_from(r.u64("input dimension")?, "input dimension")?;
    let seed = r.u64("seed")?;
    let mode = match r.u8("mode")? {
        0 => Mode::Train,
        1 => Mode::Inference,
        m => return Err(Error::Corrupt(format!("unknown mode byte {m}"))),
    };
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    let mut expected_in = input_dim;
    for i in 0..count {
        let inp = usize_from(r.u64("layer input")?, "layer input")?;
        let out = usize_from(r.u64("layer output")?, "layer output")?;
        if inp != expected_in || out == 0 {
            return Err(Error::Corrupt(format!("layer {i} has inconsistent shape {out}x{inp}")));
        }
        expected_in = out;
        let has_norm = match r.u8("norm flag")? {
            0 => false,
            1 => true,
            f => return Err(Error::Corrupt(format!("bad norm flag {f}"))),
        };
        let cells = inp
            .checked_mul(out)
            .ok_or_else(|| Error::Corrupt("layer too large".into()))?;
        let weight = Array2::from_shape_vec((out, inp), r.f64s(cells, "weights")?).unwrap();
        let bias = Array1::from(r.f64s(out, "bias")?);
        let norm = if has_norm {
            let mut next = || r.f64s(out, "batch norm").map(Array1::from);
            Some(BatchNorm {
                scale: next()?,
                shift: next()?,
                running_mean: next()?,
                running_var: next()?,
            })
        } else {
            None
        };
        layers.push(Layer { weight, bias, norm });
    }
    if expected_in != 2 {
        return Err(Error::Corrupt(format!(
            "network outputs {expected_in} columns, expected 2"
        )));
    }
    let k = r.f64s(2, "kernel parameters")?;
    if !r.done() {
        return Err(Error::Corrupt("trailing bytes after checkpoint".into()));
    }
    Ok(ModelState {
        mlp: MlpParams { layers },
        kernel: KernelParams {
            alpha_raw: k[0],
            beta_raw: k[1],
        },
        input_dim,
        mode,
        seed,
    })
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    Ok(fs::write(path, encode_checkpoint(model))?)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    decode_checkpoint(&fs::read(path)?)
}

/// Fails unless `ds` has the model's input dimension.
pub fn check_compatible(model: &ModelState, ds: &Dataset) -> Result<()> {
    if model.input_dim != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            found: ds.d(),
        });
    }
    Ok(())
}

/// Flat TOML document keyed by [`TrainConfig`] field names; missing keys take defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    parse_config(&fs::read_to_string(path)?)
}

pub fn config_to_toml(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::InvalidConfig(e.to_string()))
}
