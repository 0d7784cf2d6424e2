//! Little-endian binary containers.
//!
//! | magic  | content            | header after magic                         | payload                                        |
//! |--------|--------------------|--------------------------------------------|------------------------------------------------|
//! | `AVEB` | embeddings         | u32 version, u32 dim, u32 count            | per record: u16 id len, UTF-8 id, dim × f32    |
//! | `AVFM` | feature matrix     | u32 version, u32 dim, u32 frames, f64 shift, f64 length | frames × dim f32, row-major       |
//! | `AVBM` | LDA + PLDA backend | u32 version, u32 input dim, u32 output dim | f64 arrays, see [`write_backend`]              |

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};

use crate::backend::{BackendModel, EmbeddingSet, LdaTransform, PldaModel};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::scalar::Real;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"AVEB";
pub const FEATURE_MAGIC: &[u8; 4] = b"AVFM";
pub const BACKEND_MAGIC: &[u8; 4] = b"AVBM";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!(
                "{}: truncated at byte {} (needed {n} more, {} left)",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.array::<4>()?;
        if &found != magic {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("{}: unsupported version {version}", self.what)));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after the declared records",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

/// Embeddings keyed by id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T: Real> {
    ids: Vec<String>,
    vectors: DMatrix<T>,
    index: HashMap<String, usize>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(ids: Vec<String>, vectors: DMatrix<T>) -> Result<Self> {
        if ids.len() != vectors.nrows() {
            return Err(Error::Contract(format!("{} ids for {} vectors", ids.len(), vectors.nrows())));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(Self { ids, vectors, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &DMatrix<T> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<DVector<T>> {
        self.index.get(id).map(|&i| self.vectors.row(i).transpose())
    }

    /// Attaches speaker labels from `(utterance, speaker)` pairs. Every
    /// embedding must be labelled.
    pub fn labelled(&self, utt2spk: &[(String, String)]) -> Result<EmbeddingSet<T>> {
        let map: HashMap<&str, &str> = utt2spk.iter().map(|(u, s)| (u.as_str(), s.as_str())).collect();
        let speakers = self
            .ids
            .iter()
            .map(|id| {
                map.get(id.as_str())
                    .map(|s| s.to_string())
                    .ok_or_else(|| Error::Contract(format!("embedding {id:?} has no speaker label")))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSet::new(self.ids.clone(), speakers, self.vectors.clone())
    }

    /// Groups rows by model id through a `(segment, model)` map; without a
    /// map every id is its own model.
    pub fn enrollment(&self, segment_to_model: Option<&[(String, String)]>) -> Result<HashMap<String, Vec<DVector<T>>>> {
        let mut out: HashMap<String, Vec<DVector<T>>> = HashMap::new();
        match segment_to_model {
            None => {
                for (i, id) in self.ids.iter().enumerate() {
                    out.insert(id.clone(), vec![self.vectors.row(i).transpose()]);
                }
            }
            Some(map) => {
                for (segment, model) in map {
                    let v = self
                        .get(segment)
                        .ok_or_else(|| Error::Contract(format!("enrollment segment {segment:?} has no embedding")))?;
                    out.entry(model.clone()).or_default().push(v);
                }
            }
        }
        Ok(out)
    }

    pub fn by_id(&self) -> HashMap<String, DVector<T>> {
        crate::backend::rows_by_id(&self.ids, &self.vectors)
    }
}

pub fn read_embeddings<T: Real>(bytes: &[u8]) -> Result<EmbeddingTable<T>> {
    let mut r = Reader::new(bytes, "embedding container");
    r.header(EMBEDDING_MAGIC)?;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut data = Vec::with_capacity(count.saturating_mul(dim).min(1 << 24));
    let mut seen = HashSet::new();
    for record in 0..count {
        let len = r.u16()? as usize;
        let raw = r.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::Format(format!("embedding container: record {record} id is not UTF-8")))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!("embedding container: duplicate id {id:?}")));
        }
        for _ in 0..dim {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::Format(format!("embedding container: non-finite value in {id:?}")));
            }
            data.push(T::lit(f64::from(v)));
        }
        ids.push(id);
    }
    r.finish()?;
    EmbeddingTable::new(ids, DMatrix::from_row_slice(count, dim, &data))
}

pub fn write_embeddings<T: Real>(table: &EmbeddingTable<T>) -> Result<Vec<u8>> {
    let dim = table.dim();
    let mut out = Vec::with_capacity(16 + table.len() * (dim * 4 + 18));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(table.len(), "record count")?.to_le_bytes());
    for (i, id) in table.ids().iter().enumerate() {
        let len = u16::try_from(id.len()).map_err(|_| Error::Format(format!("id {id:?} longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for j in 0..dim {
            let v = table.vectors()[(i, j)].to_f64_lossy() as f32;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_features<T: Real>(bytes: &[u8]) -> Result<FeatureMatrix<T>> {
    let mut r = Reader::new(bytes, "feature file");
    r.header(FEATURE_MAGIC)?;
    let dim = r.u32()? as usize;
    let frames = r.u32()? as usize;
    let shift = r.f64()?;
    let length = r.f64()?;
    let mut data = Vec::with_capacity(frames.saturating_mul(dim).min(1 << 24));
    for _ in 0..frames * dim {
        data.push(T::lit(f64::from(r.f32()?)));
    }
    r.finish()?;
    FeatureMatrix::new(DMatrix::from_row_slice(frames, dim, &data), shift, length)
        .map_err(|e| Error::Format(format!("feature file: {e}")))
}

pub fn write_features<T: Real>(features: &FeatureMatrix<T>) -> Result<Vec<u8>> {
    let (frames, dim) = features.frames().shape();
    let mut out = Vec::with_capacity(32 + frames * dim * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(frames, "frame count")?.to_le_bytes());
    out.extend_from_slice(&features.frame_shift.to_le_bytes());
    out.extend_from_slice(&features.frame_length.to_le_bytes());
    for t in 0..frames {
        for j in 0..dim {
            out.extend_from_slice(&(features.frames()[(t, j)].to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Backend model layout after the header (all f64, matrices row-major):
/// LDA mean (D), LDA projection (d × D), LDA eigenvalues (d),
/// PLDA mean (d), PLDA B (d × d), PLDA W (d × d).
pub fn write_backend<T: Real>(model: &BackendModel<T>) -> Result<Vec<u8>> {
    let (d, big_d) = model.lda.projection.shape();
    let mut out = Vec::new();
    out.extend_from_slice(BACKEND_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(big_d, "input dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "output dimension")?.to_le_bytes());
    let mut put = |v: T| out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    model.lda.mean.iter().copied().for_each(&mut put);
    for i in 0..d {
        model.lda.projection.row(i).iter().copied().for_each(&mut put);
    }
    model.lda.eigenvalues.iter().copied().for_each(&mut put);
    model.plda.mean.iter().copied().for_each(&mut put);
    for m in [&model.plda.between, &model.plda.within] {
        for i in 0..d {
            m.row(i).iter().copied().for_each(&mut put);
        }
    }
    Ok(out)
}

pub fn read_backend<T: Real>(bytes: &[u8]) -> Result<BackendModel<T>> {
    let mut r = Reader::new(bytes, "backend model");
    r.header(BACKEND_MAGIC)?;
    let big_d = r.u32()? as usize;
    let d = r.u32()? as usize;
    let mut vec = |n: usize| -> Result<Vec<T>> { (0..n).map(|_| r.f64().map(T::lit)).collect() };
    let lda_mean = DVector::from_vec(vec(big_d)?);
    let projection = DMatrix::from_row_slice(d, big_d, &vec(d * big_d)?);
    let eigenvalues = vec(d)?;
    let mean = DVector::from_vec(vec(d)?);
    let between = DMatrix::from_row_slice(d, d, &vec(d * d)?);
    let within = DMatrix::from_row_slice(d, d, &vec(d * d)?);
    r.finish()?;
    let plda = PldaModel::new(mean, between, within).map_err(|e| Error::Format(format!("backend model: {e}")))?;
    Ok(BackendModel {
        lda: LdaTransform {
            mean: lda_mean,
            projection,
            eigenvalues,
        },
        plda,
    })
}
