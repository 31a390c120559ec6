//! On-disk formats: the binary embedding store, dataset and checkpoint
//! files, the flat `key = value` run config, and CSV reports.
//!
//! All binary formats are little-endian. Every reader checks magic, version
//! and exact length before returning anything.
//!
//! Embedding file layout:
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `CYEM`                       |
//! | 4      | 4    | format version (u32) = 1           |
//! | 8      | 4    | dim (u32)                          |
//! | 12     | 8    | count (u64)                        |
//! | 20     | 1    | has_labels (0 or 1)                |
//! | 21     | 4·count·dim | f32 payload, row-major      |
//! | …      | 8·count     | i64 labels if has_labels    |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{GeneratorConfig, Split, SyntheticDataset};
use crate::encoder::{DenseLayer, EmbeddingBatch, MlpEncoder};
use crate::error::{Error, Result};
use crate::eval::Evaluation;
use crate::loss::{LogitScale, LossWeights, Variant};
use crate::math::{Matrix, Vector};
use crate::metrics::ProbeConfig;
use crate::train::{DualEncoder, StepRecord, TrainConfig};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"CYEM";
pub const DATASET_MAGIC: [u8; 4] = *b"CYDS";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CYCK";
pub const FORMAT_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: u64 = 21;

/// Exact byte length of an embedding file.
pub fn embedding_file_len(count: u64, dim: u64, has_labels: bool) -> u64 {
    EMBEDDING_HEADER_LEN + 4 * count * dim + if has_labels { 8 * count } else { 0 }
}

#[derive(Default)]
struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn matrix(&mut self, m: &Matrix) {
        self.usize(m.rows());
        self.usize(m.cols());
        self.f64s(m.data());
    }
    fn usizes(&mut self, vs: &[usize]) {
        self.usize(vs.len());
        vs.iter().for_each(|&v| self.usize(v));
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::TruncatedFile {
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.buf.len() as u64,
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        if self.take(4)? != expected {
            return Err(Error::BadMagic { expected });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::ShapeMismatch("length does not fit in memory".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::TruncatedFile {
            expected: u64::MAX,
            found: self.buf.len() as u64,
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::ShapeMismatch(format!("{rows}x{cols}")))?;
        Matrix::new(rows, cols, self.f64s(n)?)
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        // bound the allocation by what the buffer can hold
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::TruncatedFile {
                expected: (self.pos as u64).saturating_add(8 * n as u64),
                found: self.buf.len() as u64,
            });
        }
        (0..n).map(|_| self.usize()).collect()
    }
    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::TruncatedFile {
                expected: self.pos as u64,
                found: self.buf.len() as u64,
            });
        }
        Ok(())
    }
}

/// Contents of an embedding file, widened from f32 without renormalizing.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub vectors: Matrix,
    pub labels: Option<Vec<i64>>,
}

pub fn encode_embeddings(vectors: &Matrix, labels: Option<&[i64]>) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        if l.len() != vectors.rows() {
            return Err(Error::BatchMismatch(format!(
                "{} rows but {} labels",
                vectors.rows(),
                l.len()
            )));
        }
    }
    let dim = u32::try_from(vectors.cols())
        .map_err(|_| Error::ShapeMismatch("dim exceeds u32".into()))?;
    let mut w = ByteWriter::default();
    w.bytes(&EMBEDDING_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(dim);
    w.u64(vectors.rows() as u64);
    w.u8(u8::from(labels.is_some()));
    for &v in vectors.data() {
        w.bytes(&(v as f32).to_le_bytes());
    }
    if let Some(l) = labels {
        l.iter().for_each(|&x| w.bytes(&x.to_le_bytes()));
    }
    Ok(w.0)
}

pub fn decode_embeddings(buf: &[u8]) -> Result<EmbeddingFile> {
    let mut r = ByteReader::new(buf);
    r.magic(EMBEDDING_MAGIC)?;
    let dim = r.u32()? as u64;
    let count = r.u64()?;
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::ShapeMismatch(format!("has_labels flag {other}"))),
    };
    let expected = count
        .checked_mul(dim)
        .and_then(|cd| cd.checked_mul(4))
        .and_then(|p| p.checked_add(EMBEDDING_HEADER_LEN))
        .and_then(|p| p.checked_add(if has_labels { count.checked_mul(8)? } else { 0 }))
        .unwrap_or(u64::MAX);
    if buf.len() as u64 != expected {
        return Err(Error::TruncatedFile {
            expected,
            found: buf.len() as u64,
        });
    }
    let (count, dim) = (count as usize, dim as usize);
    let payload = r.take(4 * count * dim)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let vectors = Matrix::new(count, dim, data)?;
    let labels = if has_labels {
        let bytes = r.take(8 * count)?;
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };
    r.finish()?;
    Ok(EmbeddingFile { vectors, labels })
}

/// Writes `batch` as f32 (round-to-nearest-even), with optional labels.
pub fn write_embeddings(
    path: impl AsRef<Path>,
    batch: &EmbeddingBatch,
    labels: Option<&[i64]>,
) -> Result<()> {
    fs::write(path, encode_embeddings(batch.vectors(), labels)?)?;
    Ok(())
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    decode_embeddings(&fs::read(path)?)
}

/// Reads an embedding file; rows are renormalized in f64 to absorb f32 rounding.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingBatch, Option<Vec<i64>>)> {
    let file = read_embedding_file(path)?;
    Ok((
        EmbeddingBatch::from_unnormalized(file.vectors)?,
        file.labels,
    ))
}

fn write_generator(w: &mut ByteWriter, cfg: &GeneratorConfig) {
    w.usize(cfg.n_superclasses);
    w.usizes(&cfg.children_per_parent);
    for v in [cfg.latent_dim, cfg.image_dim, cfg.text_dim, cfg.n_templates] {
        w.usize(v);
    }
    w.f64s(&[
        cfg.noise_sigma,
        cfg.parent_sigma,
        cfg.child_sigma,
        cfg.template_sigma,
    ]);
    w.usize(cfg.n_train);
    w.usize(cfg.n_test);
    w.u64(cfg.seed);
}

fn read_generator(r: &mut ByteReader) -> Result<GeneratorConfig> {
    Ok(GeneratorConfig {
        n_superclasses: r.usize()?,
        children_per_parent: r.usizes()?,
        latent_dim: r.usize()?,
        image_dim: r.usize()?,
        text_dim: r.usize()?,
        n_templates: r.usize()?,
        noise_sigma: r.f64()?,
        parent_sigma: r.f64()?,
        child_sigma: r.f64()?,
        template_sigma: r.f64()?,
        n_train: r.usize()?,
        n_test: r.usize()?,
        seed: r.u64()?,
    })
}

fn write_split(w: &mut ByteWriter, s: &Split) {
    w.matrix(&s.images);
    w.matrix(&s.texts);
    w.usizes(&s.labels);
    w.usizes(&s.templates);
}

fn read_split(r: &mut ByteReader) -> Result<Split> {
    let split = Split {
        images: r.matrix()?,
        texts: r.matrix()?,
        labels: r.usizes()?,
        templates: r.usizes()?,
    };
    let n = split.labels.len();
    if split.images.rows() != n || split.texts.rows() != n || split.templates.len() != n {
        return Err(Error::ShapeMismatch(
            "split arrays disagree on sample count".into(),
        ));
    }
    Ok(split)
}

pub fn encode_dataset(ds: &SyntheticDataset) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(&DATASET_MAGIC);
    w.u32(FORMAT_VERSION);
    write_generator(&mut w, &ds.config);
    w.usizes(ds.hierarchy.parents());
    w.usize(ds.hierarchy.n_superclasses());
    for m in [
        &ds.parent_prototypes,
        &ds.class_prototypes,
        &ds.image_projection,
        &ds.text_projection,
        &ds.template_offsets,
    ] {
        w.matrix(m);
    }
    write_split(&mut w, &ds.train);
    write_split(&mut w, &ds.test);
    w.0
}

pub fn decode_dataset(buf: &[u8]) -> Result<SyntheticDataset> {
    let mut r = ByteReader::new(buf);
    r.magic(DATASET_MAGIC)?;
    let config = read_generator(&mut r)?;
    let parents = r.usizes()?;
    let n_superclasses = r.usize()?;
    let hierarchy = crate::metrics::ClassHierarchy::new(parents, n_superclasses)?;
    let ds = SyntheticDataset {
        config,
        hierarchy,
        parent_prototypes: r.matrix()?,
        class_prototypes: r.matrix()?,
        image_projection: r.matrix()?,
        text_projection: r.matrix()?,
        template_offsets: r.matrix()?,
        train: read_split(&mut r)?,
        test: read_split(&mut r)?,
    };
    r.finish()?;
    let n_classes = ds.n_classes();
    if ds.class_prototypes.rows() != n_classes
        || ds.template_offsets.rows() != n_classes * ds.config.n_templates
        || ds.template_offsets.cols() != ds.text_projection.rows()
        || ds
            .train
            .labels
            .iter()
            .chain(&ds.test.labels)
            .any(|&l| l >= n_classes)
    {
        return Err(Error::ShapeMismatch(
            "dataset arrays are inconsistent".into(),
        ));
    }
    Ok(ds)
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &SyntheticDataset) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<SyntheticDataset> {
    decode_dataset(&fs::read(path)?)
}

fn write_encoder(w: &mut ByteWriter, enc: &MlpEncoder) {
    w.usizes(enc.layer_dims());
    for t in enc.tensors() {
        w.f64s(t);
    }
}

fn read_encoder(r: &mut ByteReader) -> Result<MlpEncoder> {
    let dims = r.usizes()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::BadArchitecture(format!(
            "checkpoint layer dims {dims:?}"
        )));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (inp, out) = (w[0], w[1]);
        let n = inp
            .checked_mul(out)
            .ok_or_else(|| Error::BadArchitecture(format!("{inp}x{out}")))?;
        let weight = Matrix::new(out, inp, r.f64s(n)?)?;
        let bias = Vector::new(r.f64s(out)?)?;
        layers.push(DenseLayer { weight, bias });
    }
    MlpEncoder::from_layers(layers)
}

pub fn encode_checkpoint(model: &DualEncoder) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.f64(model.logit_scale.value());
    write_encoder(&mut w, &model.image_encoder);
    write_encoder(&mut w, &model.text_encoder);
    w.0
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<DualEncoder> {
    let mut r = ByteReader::new(buf);
    r.magic(CHECKPOINT_MAGIC)?;
    let s = r.f64()?;
    if !s.is_finite() {
        return Err(Error::NonFinite("checkpoint logit scale"));
    }
    let image_encoder = read_encoder(&mut r)?;
    let text_encoder = read_encoder(&mut r)?;
    r.finish()?;
    if image_encoder.output_dim() != text_encoder.output_dim() {
        return Err(Error::BadArchitecture(
            "encoders disagree on embedding dim".into(),
        ));
    }
    Ok(DualEncoder {
        image_encoder,
        text_encoder,
        logit_scale: LogitScale::new(s),
    })
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &DualEncoder) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<DualEncoder> {
    decode_checkpoint(&fs::read(path)?)
}

/// Every setting a run needs: data generation, training, and the linear probe.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub data: GeneratorConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

/// Keys accepted in a run config file.
pub const CONFIG_KEYS: &[&str] = &[
    "n_superclasses",
    "children_per_parent",
    "latent_dim",
    "image_dim",
    "text_dim",
    "n_templates",
    "noise_sigma",
    "parent_sigma",
    "child_sigma",
    "template_sigma",
    "n_train",
    "n_test",
    "data_seed",
    "variant",
    "lambda1",
    "lambda2",
    "epochs",
    "batch_size",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "weight_decay",
    "warmup_steps",
    "hidden_dim",
    "embed_dim",
    "init_logit_scale",
    "seed",
    "probe_epochs",
    "probe_batch_size",
    "probe_learning_rate",
    "probe_weight_decay",
];

impl RunConfig {
    /// Parses `key = value` lines. `#` starts a comment. Keys may appear in any
    /// order; unknown or repeated keys are errors. `variant` sets both loss
    /// weights, and explicit `lambda1`/`lambda2` keys override them.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(&str, &str, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("unknown key {key:?}"),
                });
            }
            if entries.iter().any(|(k, _, _)| *k == key) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("duplicate key {key:?}"),
                });
            }
            entries.push((key, value, line_no));
        }

        let mut cfg = RunConfig::default();
        if let Some(&(_, v, line)) = entries.iter().find(|(k, _, _)| *k == "variant") {
            let variant: Variant = v.parse().map_err(|e: Error| Error::ConfigParse {
                line,
                message: e.to_string(),
            })?;
            cfg.train.variant = variant;
            cfg.train.weights = variant.weights();
        }
        for &(key, value, line) in &entries {
            cfg.apply(key, value)
                .map_err(|message| Error::ConfigParse { line, message })?;
        }
        cfg.train.weights = LossWeights::new(cfg.train.weights.lambda1, cfg.train.weights.lambda2)
            .map_err(|e| Error::ConfigParse {
                line: 0,
                message: e.to_string(),
            })?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        let d = &mut self.data;
        let t = &mut self.train;
        let p = &mut self.probe;
        match key {
            "n_superclasses" => d.n_superclasses = num(key, value)?,
            "children_per_parent" => {
                d.children_per_parent = value
                    .split(',')
                    .map(|c| num(key, c.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "latent_dim" => d.latent_dim = num(key, value)?,
            "image_dim" => d.image_dim = num(key, value)?,
            "text_dim" => d.text_dim = num(key, value)?,
            "n_templates" => d.n_templates = num(key, value)?,
            "noise_sigma" => d.noise_sigma = num(key, value)?,
            "parent_sigma" => d.parent_sigma = num(key, value)?,
            "child_sigma" => d.child_sigma = num(key, value)?,
            "template_sigma" => d.template_sigma = num(key, value)?,
            "n_train" => d.n_train = num(key, value)?,
            "n_test" => d.n_test = num(key, value)?,
            "data_seed" => d.seed = num(key, value)?,
            "variant" => {}
            "lambda1" => t.weights.lambda1 = num(key, value)?,
            "lambda2" => t.weights.lambda2 = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "learning_rate" => t.base_lr = num(key, value)?,
            "adam_beta1" => t.adam_beta1 = num(key, value)?,
            "adam_beta2" => t.adam_beta2 = num(key, value)?,
            "adam_eps" => t.adam_eps = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "warmup_steps" => t.warmup_steps = num(key, value)?,
            "hidden_dim" => t.hidden_dim = num(key, value)?,
            "embed_dim" => t.embed_dim = num(key, value)?,
            "init_logit_scale" => t.init_logit_scale = num(key, value)?,
            "seed" => {
                t.seed = num(key, value)?;
                p.seed = t.seed;
            }
            "probe_epochs" => p.epochs = num(key, value)?,
            "probe_batch_size" => p.batch_size = num(key, value)?,
            "probe_learning_rate" => p.learning_rate = num(key, value)?,
            "probe_weight_decay" => p.weight_decay = num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Sets the training seed (and the probe seed with it).
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.probe.seed = seed;
    }

    /// Every key, one per line, in [`CONFIG_KEYS`] order.
    pub fn serialize(&self) -> String {
        let d = &self.data;
        let t = &self.train;
        let p = &self.probe;
        let children = d
            .children_per_parent
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let values: Vec<String> = vec![
            d.n_superclasses.to_string(),
            children,
            d.latent_dim.to_string(),
            d.image_dim.to_string(),
            d.text_dim.to_string(),
            d.n_templates.to_string(),
            d.noise_sigma.to_string(),
            d.parent_sigma.to_string(),
            d.child_sigma.to_string(),
            d.template_sigma.to_string(),
            d.n_train.to_string(),
            d.n_test.to_string(),
            d.seed.to_string(),
            t.variant.to_string(),
            t.weights.lambda1.to_string(),
            t.weights.lambda2.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.base_lr.to_string(),
            t.adam_beta1.to_string(),
            t.adam_beta2.to_string(),
            t.adam_eps.to_string(),
            t.weight_decay.to_string(),
            t.warmup_steps.to_string(),
            t.hidden_dim.to_string(),
            t.embed_dim.to_string(),
            t.init_logit_scale.to_string(),
            t.seed.to_string(),
            p.epochs.to_string(),
            p.batch_size.to_string(),
            p.learning_rate.to_string(),
            p.weight_decay.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }
}

/// Writes a header row and records as `,`-separated LF-terminated CSV.
pub fn write_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_csv(fs::File::create(path)?, header, rows)
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.6}")
}

pub const TRAIN_LOG_HEADER: [&str; 8] = [
    "step",
    "epoch",
    "lr",
    "logit_scale",
    "clip_loss",
    "in_modal_loss",
    "cross_modal_loss",
    "total",
];

pub fn train_log_rows(log: &[StepRecord]) -> Vec<Vec<String>> {
    log.iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.epoch.to_string(),
                r.lr.to_string(),
                r.logit_scale.to_string(),
                r.clip_loss.to_string(),
                r.in_modal_loss.to_string(),
                r.cross_modal_loss.to_string(),
                r.total.to_string(),
            ]
        })
        .collect()
}

pub const REPORT_HEADER: [&str; 5] = [
    "variant",
    "zs_top1",
    "consistency_k1",
    "alignment",
    "uniformity",
];

pub fn report_row(variant: &str, eval: &Evaluation) -> Vec<String> {
    let lookup = |pairs: &[(usize, f64)], k: usize| {
        pairs.iter().find(|p| p.0 == k).map_or(f64::NAN, |p| p.1)
    };
    vec![
        variant.to_string(),
        fmt_f64(lookup(&eval.zero_shot_topk, 1)),
        fmt_f64(lookup(&eval.consistency, 1)),
        fmt_f64(eval.geometry.alignment),
        fmt_f64(eval.geometry.uniformity),
    ]
}
