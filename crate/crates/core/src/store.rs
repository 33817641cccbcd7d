//! Checksummed binary containers for datasets, models and predictions.
//!
//! Every file is `magic (4) | version u16 | header length u32 | JSON header |
//! body | CRC-64/XZ u64`, all integers and reals little-endian. The checksum
//! covers every preceding byte. The byte-level layout of each body is
//! documented in `docs/formats.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use galbnn_nn::{Adam, AdamHyper, Scalar, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bayes::UncertaintySplit;
use crate::ellipticity::Ellipticity;
use crate::error::{Error, Result};
use crate::linalg::Sym2;
use crate::model::{ArchitectureConfig, HeadKind, ShapeNet};
use crate::protocol::EpochMetrics;
use crate::simulator::{
    hex_sha256, Dataset, DatasetHeader, DatasetRecord, GalaxyModel, Noise, Profile, Scene,
};

pub const DATASET_MAGIC: [u8; 4] = *b"GSDS";
pub const MODEL_MAGIC: [u8; 4] = *b"GSMD";
pub const PREDICTION_MAGIC: [u8; 4] = *b"GSPR";

/// Current (and highest readable) version of each format. Readers accept
/// every version from 1 up to the current one.
pub const DATASET_VERSION: u16 = 1;
pub const MODEL_VERSION: u16 = 1;
pub const PREDICTION_VERSION: u16 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const PREAMBLE: usize = 10;
const TRAILER: usize = 8;

/// SHA-256 of a file's bytes, hex.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex_sha256(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(4 * v.len());
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
}

fn seal<H: Serialize>(magic: [u8; 4], version: u16, header: &H, body: Writer) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("serialisable header");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + body.buf.len() + TRAILER);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body.buf);
    let crc = CRC64.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.end - self.pos < n {
            return Err(self.corrupt(self.pos, format!("record data ends early (need {n} bytes)")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.corrupt(self.pos, "length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.end {
            return Err(self.corrupt(
                self.pos,
                format!("{} unexpected trailing bytes", self.end - self.pos),
            ));
        }
        Ok(())
    }
}

/// Validates magic, version and checksum, parses the JSON header and
/// returns a reader positioned at the body.
fn open<'a, H: DeserializeOwned>(
    path: &'a Path,
    bytes: &'a [u8],
    magic: [u8; 4],
    kind: &'static str,
    supported: u16,
) -> Result<(u16, H, Reader<'a>)> {
    let corrupt = |offset: usize, reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.to_string(),
    };
    if bytes.len() < 4 {
        return Err(corrupt(bytes.len(), "file shorter than its magic number"));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            expected: kind,
            found,
        });
    }
    if bytes.len() < 6 {
        return Err(corrupt(bytes.len(), "file ends inside the version field"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version == 0 || version > supported {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            supported,
        });
    }
    if bytes.len() < PREAMBLE + TRAILER {
        return Err(corrupt(
            bytes.len(),
            "file shorter than preamble and checksum",
        ));
    }
    let body_end = bytes.len() - TRAILER;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
    if CRC64.checksum(&bytes[..body_end]) != stored {
        return Err(corrupt(
            body_end,
            "checksum mismatch (truncated or modified file)",
        ));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if header_len > body_end - PREAMBLE {
        return Err(corrupt(6, "header length exceeds file size"));
    }
    let header = serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + header_len])
        .map_err(|e| corrupt(PREAMBLE, &format!("invalid header: {e}")))?;
    Ok((
        version,
        header,
        Reader {
            bytes,
            pos: PREAMBLE + header_len,
            end: body_end,
            path,
        },
    ))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn profile_code(p: Profile) -> u8 {
    match p {
        Profile::EllipticalGaussian => 0,
        Profile::Exponential => 1,
    }
}

fn write_galaxy(w: &mut Writer, g: &GalaxyModel) {
    w.u8(profile_code(g.profile));
    for v in [
        g.flux,
        g.half_light_radius,
        g.q,
        g.theta,
        g.center.0,
        g.center.1,
    ] {
        w.f64(v);
    }
}

fn read_galaxy(r: &mut Reader<'_>) -> Result<GalaxyModel> {
    let at = r.pos;
    let profile = match r.u8()? {
        0 => Profile::EllipticalGaussian,
        1 => Profile::Exponential,
        c => return Err(r.corrupt(at, format!("unknown profile code {c}"))),
    };
    let mut v = [0.0; 6];
    for x in &mut v {
        *x = r.f64()?;
    }
    Ok(GalaxyModel {
        profile,
        flux: v[0],
        half_light_radius: v[1],
        q: v[2],
        theta: v[3],
        center: (v[4], v[5]),
    })
}

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let h = &d.header;
    if h.count != d.records.len() {
        return Err(Error::Contract(format!(
            "header count {} but {} records",
            h.count,
            d.records.len()
        )));
    }
    let npix = h.height * h.width;
    let mut w = Writer::default();
    for rec in &d.records {
        if rec.clean.len() != npix || rec.noisy.as_ref().is_some_and(|n| n.len() != npix) {
            return Err(Error::Contract(
                "record pixel count does not match the header".into(),
            ));
        }
        let s = &rec.scene;
        w.f64(s.label.e1);
        w.f64(s.label.e2);
        w.u8(s.is_blend() as u8);
        w.u8(s.companions.len() as u8);
        w.u64(s.seed);
        match s.noise {
            Noise::None => {
                w.u8(0);
                w.f64(0.0);
            }
            Noise::Poisson { sky_level } => {
                w.u8(1);
                w.f64(sky_level);
            }
        }
        write_galaxy(&mut w, &s.central);
        for c in &s.companions {
            write_galaxy(&mut w, c);
        }
        w.u8(if rec.noisy.is_some() { 2 } else { 1 });
        w.f32s(&rec.clean);
        if let Some(n) = &rec.noisy {
            w.f32s(n);
        }
    }
    Ok(seal(DATASET_MAGIC, DATASET_VERSION, h, w))
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_atomic(path, &encode_dataset(d)?)
}

pub fn decode_dataset(path: &Path, bytes: &[u8]) -> Result<Dataset> {
    let (_, header, mut r): (_, DatasetHeader, _) =
        open(path, bytes, DATASET_MAGIC, "dataset", DATASET_VERSION)?;
    let npix = header.height * header.width;
    let mut records = Vec::with_capacity(header.count.min(1 << 20));
    for _ in 0..header.count {
        let start = r.pos;
        let label = Ellipticity::new(r.f64()?, r.f64()?);
        let is_blend = r.u8()? != 0;
        let n_comp = r.u8()? as usize;
        let seed = r.u64()?;
        let at = r.pos;
        let noise = match (r.u8()?, r.f64()?) {
            (0, _) => Noise::None,
            (1, sky_level) => Noise::Poisson { sky_level },
            (c, _) => return Err(r.corrupt(at, format!("unknown noise code {c}"))),
        };
        let central = read_galaxy(&mut r)?;
        let companions = (0..n_comp)
            .map(|_| read_galaxy(&mut r))
            .collect::<Result<Vec<_>>>()?;
        if is_blend != (n_comp > 0) {
            return Err(r.corrupt(start, "blend flag disagrees with companion count"));
        }
        let at = r.pos;
        let variants = r.u8()?;
        if !(1..=2).contains(&variants) {
            return Err(r.corrupt(at, format!("invalid variant count {variants}")));
        }
        let clean = r.f32s(npix)?;
        let noisy = if variants == 2 {
            Some(r.f32s(npix)?)
        } else {
            None
        };
        records.push(DatasetRecord {
            scene: Scene {
                central,
                companions,
                noise,
                label,
                seed,
            },
            clean,
            noisy,
        });
    }
    r.finish()?;
    Ok(Dataset { header, records })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(path, &read_file(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerHeader {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub arch: ArchitectureConfig,
    pub head: HeadKind,
    pub run_config_hash: Option<String>,
    pub manifest_hash: Option<String>,
    /// Epochs completed when the file was written.
    pub epoch: usize,
    #[serde(default)]
    pub history: Vec<EpochMetrics>,
    pub optimizer: Option<OptimizerHeader>,
}

/// A model plus, for checkpoints, its optimizer state.
#[derive(Clone, Debug)]
pub struct ModelFile {
    pub header: ModelHeader,
    pub model: ShapeNet<f32>,
    pub optimizer: Option<Adam<f32>>,
}

fn write_tensor(w: &mut Writer, name: &str, t: &Tensor<f32>) {
    w.u16(name.len() as u16);
    w.bytes(name.as_bytes());
    w.u8(t.shape().len() as u8);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    w.f32s(t.data());
}

/// Provenance stored in a model file's header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelMeta {
    /// Epochs completed when the file was written.
    pub epoch: usize,
    /// Per-epoch metrics up to `epoch`, needed to resume a checkpoint.
    pub history: Vec<EpochMetrics>,
    pub run_config_hash: Option<String>,
    pub manifest_hash: Option<String>,
}

pub fn encode_model(
    model: &ShapeNet<f32>,
    optimizer: Option<&Adam<f32>>,
    meta: ModelMeta,
) -> Vec<u8> {
    let net = model.net();
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    let params = net.named_params();
    for (n, p) in &params {
        tensors.push((n.clone(), &p.value));
    }
    for (n, b) in net.named_buffers() {
        tensors.push((n, b));
    }
    let opt = optimizer.map(|a| {
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = a.hyper;
        OptimizerHeader {
            lr,
            beta1,
            beta2,
            eps,
            step: a.step,
        }
    });
    if let Some(a) = optimizer {
        for ((n, _), (m, v)) in params.iter().zip(a.first.iter().zip(&a.second)) {
            tensors.push((format!("adam.m.{n}"), m));
            tensors.push((format!("adam.v.{n}"), v));
        }
    }
    let mut w = Writer::default();
    w.u32(tensors.len() as u32);
    for (n, t) in &tensors {
        write_tensor(&mut w, n, t);
    }
    let header = ModelHeader {
        arch: model.arch().clone(),
        head: model.head(),
        run_config_hash: meta.run_config_hash,
        manifest_hash: meta.manifest_hash,
        epoch: meta.epoch,
        history: meta.history,
        optimizer: opt,
    };
    seal(MODEL_MAGIC, MODEL_VERSION, &header, w)
}

pub fn write_model(
    path: &Path,
    model: &ShapeNet<f32>,
    optimizer: Option<&Adam<f32>>,
    meta: ModelMeta,
) -> Result<()> {
    write_atomic(path, &encode_model(model, optimizer, meta))
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<ModelFile> {
    let (_, header, mut r): (_, ModelHeader, _) =
        open(path, bytes, MODEL_MAGIC, "model", MODEL_VERSION)?;
    let mut table: Vec<(String, usize, Tensor<f32>)> = Vec::new();
    let count = r.u32()?;
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| r.corrupt(at, "tensor name is not UTF-8"))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.corrupt(at, "shape overflow"))?;
        let data = r.f32s(n)?;
        table.push((
            name,
            at,
            Tensor::new(shape, data).map_err(|e| r.corrupt(at, e.to_string()))?,
        ));
    }
    r.finish()?;

    let mut model = ShapeNet::<f32>::new(&header.arch, header.head, 0)
        .map_err(|e| r.corrupt(PREAMBLE, e.to_string()))?;
    let mut used = vec![false; table.len()];
    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let hits: Vec<usize> = table
            .iter()
            .enumerate()
            .filter(|(_, t)| t.0 == name)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [i] if table[*i].2.shape() == shape => {
                used[*i] = true;
                Ok(table[*i].2.clone())
            }
            [i] => Err(r.corrupt(
                table[*i].1,
                format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    table[*i].2.shape()
                ),
            )),
            [] => Err(r.corrupt(PREAMBLE, format!("tensor {name} missing"))),
            _ => Err(r.corrupt(
                table[hits[1]].1,
                format!("tensor {name} stored more than once"),
            )),
        }
    };
    let mut param_names = Vec::new();
    for (n, p) in model.net_mut().named_params_mut() {
        p.value = take(&n, p.value.shape())?;
        param_names.push((n, p.value.shape().to_vec()));
    }
    for (n, b) in model.net_mut().named_buffers_mut() {
        *b = take(&n, b.shape())?;
    }
    let optimizer = match header.optimizer {
        Some(o) => {
            let mut adam = Adam::new(AdamHyper {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            });
            adam.step = o.step;
            if o.step > 0 {
                for (n, shape) in &param_names {
                    adam.first.push(take(&format!("adam.m.{n}"), shape)?);
                    adam.second.push(take(&format!("adam.v.{n}"), shape)?);
                }
            }
            Some(adam)
        }
        None => None,
    };
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(r.corrupt(table[i].1, format!("unexpected tensor {}", table[i].0)));
    }
    Ok(ModelFile {
        header,
        model,
        optimizer,
    })
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    decode_model(path, &read_file(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionHeader {
    pub count: usize,
    pub mc_samples: usize,
    pub sigma_floor: f64,
    /// SHA-256 of the dataset file the predictions were made on.
    pub dataset_hash: String,
    pub model_hash: String,
    pub run_config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub index: u64,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub raw: Vec<[f32; 5]>,
    pub split: UncertaintySplit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFile {
    pub header: PredictionHeader,
    pub records: Vec<PredictionRecord>,
}

fn write_sym(w: &mut Writer, m: &Sym2) {
    w.f64(m.xx);
    w.f64(m.xy);
    w.f64(m.yy);
}

fn read_sym(r: &mut Reader<'_>) -> Result<Sym2> {
    Ok(Sym2::new(r.f64()?, r.f64()?, r.f64()?))
}

pub fn encode_predictions(p: &PredictionFile) -> Result<Vec<u8>> {
    if p.header.count != p.records.len() {
        return Err(Error::Contract(
            "prediction header count does not match records".into(),
        ));
    }
    let mut w = Writer::default();
    for rec in &p.records {
        if rec.seeds.len() != rec.raw.len() {
            return Err(Error::Contract("one seed per MC sample required".into()));
        }
        w.u64(rec.index);
        w.u32(rec.raw.len() as u32);
        w.u64(rec.base_seed);
        for &s in &rec.seeds {
            w.u64(s);
        }
        for raw in &rec.raw {
            w.f32s(raw);
        }
        let s = &rec.split;
        w.f64(s.mu_bar[0]);
        w.f64(s.mu_bar[1]);
        write_sym(&mut w, &s.sigma_aleat);
        write_sym(&mut w, &s.sigma_epist);
        write_sym(&mut w, &s.sigma_pred);
        w.f64(s.u_aleat);
        w.f64(s.u_epist);
        w.f64(s.u_pred);
    }
    Ok(seal(PREDICTION_MAGIC, PREDICTION_VERSION, &p.header, w))
}

pub fn write_predictions(path: &Path, p: &PredictionFile) -> Result<()> {
    write_atomic(path, &encode_predictions(p)?)
}

pub fn decode_predictions(path: &Path, bytes: &[u8]) -> Result<PredictionFile> {
    let (_, header, mut r): (_, PredictionHeader, _) = open(
        path,
        bytes,
        PREDICTION_MAGIC,
        "prediction",
        PREDICTION_VERSION,
    )?;
    let mut records = Vec::with_capacity(header.count.min(1 << 20));
    for _ in 0..header.count {
        let index = r.u64()?;
        let k = r.u32()? as usize;
        let base_seed = r.u64()?;
        let seeds = (0..k).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let raw = (0..k)
            .map(|_| r.f32s(5).map(|v| [v[0], v[1], v[2], v[3], v[4]]))
            .collect::<Result<Vec<_>>>()?;
        let mu_bar = [r.f64()?, r.f64()?];
        let (sigma_aleat, sigma_epist, sigma_pred) =
            (read_sym(&mut r)?, read_sym(&mut r)?, read_sym(&mut r)?);
        let split = UncertaintySplit {
            mu_bar,
            sigma_aleat,
            sigma_epist,
            sigma_pred,
            u_aleat: r.f64()?,
            u_epist: r.f64()?,
            u_pred: r.f64()?,
        };
        records.push(PredictionRecord {
            index,
            base_seed,
            seeds,
            raw,
            split,
        });
    }
    r.finish()?;
    Ok(PredictionFile { header, records })
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile> {
    decode_predictions(path, &read_file(path)?)
}

/// Converts a model's raw-output table to `f64` for re-derivation checks.
pub fn raw_to_f64(raw: &[f32; 5]) -> [f64; 5] {
    std::array::from_fn(|i| raw[i].as_f64())
}
