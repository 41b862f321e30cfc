//! Model file: `MMX1`, u32 header length, JSON header, then f32 little-endian
//! blobs in manifest order.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EmbedderSpec, EpochRecord, TaggerConfig, TaggerModel};
use crate::corpus::Scheme;
use crate::embeddings::{Buckets, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"MMX1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TableHeader {
    words: Vec<String>,
    dim: usize,
    buckets: Option<usize>,
    ngram_range: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    config: TaggerConfig,
    labels: Vec<String>,
    scheme: Scheme,
    normalize: bool,
    embedder: EmbedderSpec,
    tables: Vec<TableHeader>,
    history: Vec<EpochRecord>,
    manifest: Vec<ManifestEntry>,
}

fn write_f32s<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

fn table_entry(name: String, rows: usize, dim: usize) -> ManifestEntry {
    ManifestEntry {
        name,
        shape: vec![rows, dim],
        frozen: true,
        seed: None,
    }
}

impl TaggerModel {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let tables = self.embedder.tables();
        let mut manifest = Vec::new();
        let mut table_headers = Vec::new();
        for (i, t) in tables.iter().enumerate() {
            manifest.push(table_entry(format!("table{i}.matrix"), t.len(), t.dim()));
            if let Some(b) = t.buckets() {
                manifest.push(table_entry(format!("table{i}.buckets"), b.count(), b.dim()));
            }
            table_headers.push(TableHeader {
                words: t.words().to_vec(),
                dim: t.dim(),
                buckets: t.buckets().map(|b| b.count()),
                ngram_range: t.ngram_range(),
            });
        }
        for e in self.params.entries() {
            manifest.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                frozen: e.frozen,
                seed: e.seed,
            });
        }
        let header = Header {
            format: FORMAT_VERSION,
            config: self.config.clone(),
            labels: self.labels.clone(),
            scheme: self.scheme,
            normalize: self.normalize,
            embedder: self.embedder.spec(),
            tables: table_headers,
            history: self.history.clone(),
            manifest,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?.to_le_bytes())?;
        w.write_all(&json)?;
        for t in &tables {
            write_f32s(&mut w, t.matrix())?;
            if let Some(b) = t.buckets() {
                write_f32s(&mut w, b.data())?;
            }
        }
        for e in self.params.entries() {
            write_f32s(&mut w, e.tensor.data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.format != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format {}", header.format)));
        }
        let mut entries = header.manifest.iter();
        let mut tables = Vec::with_capacity(header.tables.len());
        for th in &header.tables {
            let m = entries.next().ok_or_else(|| Error::Format("manifest too short".into()))?;
            let data = read_f32s(&mut r, th.words.len() * th.dim)?;
            if m.shape != [th.words.len(), th.dim] {
                return Err(Error::Format(format!("table entry {} has shape {:?}", m.name, m.shape)));
            }
            let rows = th
                .words
                .iter()
                .cloned()
                .zip(data.chunks(th.dim).map(<[f64]>::to_vec));
            let mut table = EmbeddingTable::new(th.dim, rows)?;
            if let Some(count) = th.buckets {
                entries.next().ok_or_else(|| Error::Format("manifest too short".into()))?;
                let data = read_f32s(&mut r, count * th.dim)?;
                table = table.with_buckets(Buckets::new(count, th.dim, data)?, th.ngram_range)?;
            }
            tables.push(Arc::new(table));
        }
        let mut params = ParamStore::new();
        let embedder = header.embedder.build(&tables, &mut params, header.config.seed)?;
        let mut model = TaggerModel::new(
            header.config,
            header.labels,
            header.scheme,
            header.normalize,
            embedder,
            params,
        )?;
        let remaining: Vec<&ManifestEntry> = entries.collect();
        if remaining.len() != model.params.len() {
            return Err(Error::Format(format!(
                "manifest lists {} parameters, model has {}",
                remaining.len(),
                model.params.len()
            )));
        }
        for m in remaining {
            let id = model
                .params
                .id(&m.name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {}", m.name)))?;
            let n: usize = m.shape.iter().product();
            let t = Tensor::new(m.shape.clone(), read_f32s(&mut r, n)?)?;
            model.params.set(id, t).map_err(|e| Error::Format(format!("parameter {}: {e}", m.name)))?;
            model.params.set_frozen(id, m.frozen);
        }
        model.history = header.history;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
