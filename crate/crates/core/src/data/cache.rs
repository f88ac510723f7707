//! Frozen vision embeddings at the three blur levels, and the `UBPF` file.
//!
//! ```text
//! magic "UBPF" | version u32 | n_images u32 | dim u32 | backbone_tag (u32 len + UTF-8)
//! | per image: image_id u32, then low, base, high as dim × f32 each
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::binio::{self, io_err};
use crate::error::{Result, UbpError};
use crate::numkernel::Matrix;
use crate::uncertainty::BlurLevel;

const CACHE_MAGIC: &[u8; 4] = b"UBPF";
const CACHE_VERSION: u32 = 1;
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    dim: usize,
    backbone_tag: String,
    ids: Vec<u32>,
    // per image: low, base, high
    vectors: Vec<f32>,
    index: HashMap<u32, usize>,
}

fn check_norm(id: u32, level: BlurLevel, v: &[f32]) -> Result<()> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(UbpError::Data(format!(
            "embedding for image {id} at level {level:?} has norm {norm:.6}, expected 1"
        )));
    }
    Ok(())
}

impl FeatureCache {
    pub fn new(dim: usize, backbone_tag: impl Into<String>) -> Self {
        Self {
            dim,
            backbone_tag: backbone_tag.into(),
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backbone_tag(&self) -> &str {
        &self.backbone_tag
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }

    /// Adds one image; vectors are (low, base, high) and must be unit-norm.
    pub fn insert(&mut self, id: u32, levels: [&[f32]; 3]) -> Result<()> {
        if self.index.contains_key(&id) {
            return Err(UbpError::Data(format!("duplicate image id {id} in feature cache")));
        }
        for (level, v) in BlurLevel::ALL.into_iter().zip(levels) {
            if v.len() != self.dim {
                return Err(UbpError::Format(format!(
                    "embedding for image {id} has dim {}, cache dim is {}",
                    v.len(),
                    self.dim
                )));
            }
            check_norm(id, level, v)?;
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        for v in levels {
            self.vectors.extend_from_slice(v);
        }
        Ok(())
    }

    pub fn get(&self, id: u32, level: BlurLevel) -> Result<&[f32]> {
        let slot = *self
            .index
            .get(&id)
            .ok_or_else(|| UbpError::Data(format!("image id {id} missing from feature cache")))?;
        let start = (slot * 3 + level.index()) * self.dim;
        Ok(&self.vectors[start..start + self.dim])
    }

    /// Stacks embeddings for `ids` at the given per-row levels.
    pub fn gather(&self, ids: &[u32], levels: &[BlurLevel]) -> Result<Matrix<f32>> {
        if ids.len() != levels.len() {
            return Err(UbpError::Contract(format!(
                "{} ids but {} levels",
                ids.len(),
                levels.len()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for (&id, &level) in ids.iter().zip(levels) {
            data.extend_from_slice(self.get(id, level)?);
        }
        Matrix::new(ids.len(), self.dim, data)
    }

    pub fn gather_level(&self, ids: &[u32], level: BlurLevel) -> Result<Matrix<f32>> {
        self.gather(ids, &vec![level; ids.len()])
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        (|| -> std::io::Result<()> {
            w.write_all(CACHE_MAGIC)?;
            binio::write_u32(w, CACHE_VERSION)?;
            binio::write_u32(w, self.ids.len() as u32)?;
            binio::write_u32(w, self.dim as u32)?;
            binio::write_str(w, &self.backbone_tag)?;
            for (slot, id) in self.ids.iter().enumerate() {
                binio::write_u32(w, *id)?;
                binio::write_f32s(w, &self.vectors[slot * 3 * self.dim..(slot + 1) * 3 * self.dim])?;
            }
            Ok(())
        })()
        .map_err(io_err("feature cache"))
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        binio::read_magic(r, CACHE_MAGIC, "feature cache")?;
        let version = binio::read_u32(r, "feature cache header")?;
        if version != CACHE_VERSION {
            return Err(UbpError::Format(format!("unsupported feature cache version {version}")));
        }
        let n = binio::read_u32(r, "feature cache header")? as usize;
        let dim = binio::read_u32(r, "feature cache header")? as usize;
        if dim == 0 {
            return Err(UbpError::Format("feature cache has dim 0".into()));
        }
        let tag = binio::read_str(r, "backbone tag")?;
        let mut cache = Self::new(dim, tag);
        for _ in 0..n {
            let id = binio::read_u32(r, "feature cache entry")?;
            let v = binio::read_f32s(r, 3 * dim, "feature cache entry")?;
            cache.insert(id, [&v[..dim], &v[dim..2 * dim], &v[2 * dim..]])?;
        }
        binio::expect_eof(r, "feature cache")?;
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf).map_err(|e| UbpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| UbpError::io(path, e))?;
        Self::read(&mut bytes.as_slice()).map_err(|e| match e {
            UbpError::Format(m) => UbpError::Format(format!("{}: {m}", path.display())),
            UbpError::Data(m) => UbpError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
