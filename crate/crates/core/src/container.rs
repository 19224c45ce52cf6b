//! Versioned container of named `f32` arrays plus JSON metadata.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "CFNA" | version u32 | metadata_len u64 | metadata (UTF-8 JSON)
//! entry_count u32 | entries… | sha256 of everything before it (32 bytes)
//! entry = name_len u32 | name | ndim u32 | dims u64×ndim | values f32×Π(dims)
//! ```
//!
//! Both translation checkpoints and classifier weights use this format, so
//! weights from any external source can be imported by writing the same layout.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CFNA";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn key(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrayContainer {
    pub metadata: serde_json::Value,
    arrays: Vec<(String, Tensor)>,
}

impl ArrayContainer {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            arrays: Vec::new(),
        }
    }

    /// Adds or replaces an array.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.arrays.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.arrays.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::checkpoint(name, "array not present"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Stores every parameter of `store` under `prefix/<name>` (bare `<name>` for an empty prefix).
    pub fn insert_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.insert(key(prefix, name), t.clone());
        }
    }

    /// Overwrites every parameter of `store` from the keys written by [`Self::insert_store`]; shapes must match.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        for i in 0..store.len() {
            let key = key(prefix, store.name(i));
            let src = self.get(&key)?;
            if src.shape() != store.get(i).shape() {
                return Err(Error::checkpoint(
                    key,
                    format!("shape {:?} does not match expected {:?}", src.shape(), store.get(i).shape()),
                ));
            }
            store.get_mut(i).data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        out.write_u64::<LittleEndian>(meta.len() as u64).unwrap();
        out.extend_from_slice(&meta);
        out.write_u32::<LittleEndian>(self.arrays.len() as u32).unwrap();
        for (name, t) in &self.arrays {
            out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
            out.extend_from_slice(name.as_bytes());
            out.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
            for &d in t.shape() {
                out.write_u64::<LittleEndian>(d as u64).unwrap();
            }
            for &v in t.data() {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::checkpoint("header", "file truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::checkpoint("magic", "not an array container"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
            ));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let mut cur = Cursor::new(&body[8..]);
        let truncated = |field: &str| Error::checkpoint(field, "file truncated");

        let meta_len = cur.read_u64::<LittleEndian>().map_err(|_| truncated("metadata"))? as usize;
        let mut meta = vec![0u8; meta_len.min(body.len())];
        if meta_len > body.len() {
            return Err(truncated("metadata"));
        }
        cur.read_exact(&mut meta).map_err(|_| truncated("metadata"))?;
        let metadata =
            serde_json::from_slice(&meta).map_err(|e| Error::checkpoint("metadata", format!("corrupt JSON: {e}")))?;

        let count = cur.read_u32::<LittleEndian>().map_err(|_| truncated("entry_count"))?;
        let mut arrays = Vec::with_capacity(count.min(1 << 16) as usize);
        for i in 0..count {
            let field = format!("entry {i}");
            let name_len = cur.read_u32::<LittleEndian>().map_err(|_| truncated(&field))? as usize;
            if name_len > body.len() {
                return Err(truncated(&field));
            }
            let mut name = vec![0u8; name_len];
            cur.read_exact(&mut name).map_err(|_| truncated(&field))?;
            let name = String::from_utf8(name).map_err(|_| Error::checkpoint(&field, "name is not UTF-8"))?;
            let ndim = cur.read_u32::<LittleEndian>().map_err(|_| truncated(&name))? as usize;
            if ndim > 8 {
                return Err(Error::checkpoint(&name, format!("implausible rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.read_u64::<LittleEndian>().map_err(|_| truncated(&name))? as usize);
            }
            let n: usize = shape.iter().product();
            if n * 4 > body.len() {
                return Err(truncated(&name));
            }
            let mut data = vec![0f32; n];
            cur.read_f32_into::<LittleEndian>(&mut data).map_err(|_| truncated(&name))?;
            arrays.push((name, Tensor::from_vec(&shape, data)));
        }
        if (cur.position() as usize) != body.len() - 8 {
            return Err(Error::checkpoint("trailer", "unexpected bytes after last entry"));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::checkpoint("checksum", "content digest mismatch (corrupt file)"));
        }
        Ok(Self { metadata, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ArrayContainer {
        let mut c = ArrayContainer::new(serde_json::json!({"epoch": 3, "kind": "test"}));
        c.insert("a/w", Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-8, 7.0]));
        c.insert("b", Tensor::from_vec(&[1], vec![f32::MAX]));
        c
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = sample().to_bytes();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(ArrayContainer::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 40;
        flipped[mid] ^= 0x55;
        let err = ArrayContainer::from_bytes(&flipped).unwrap_err().to_string();
        assert!(err.contains("checksum") || err.contains("entry") || err.contains("b"), "{err}");

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        let err = ArrayContainer::from_bytes(&wrong_version).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn missing_array_names_field() {
        let err = sample().get("nope").unwrap_err().to_string();
        assert!(err.contains("nope"));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..64), epoch in 0u64..1000) {
            let mut c = ArrayContainer::new(serde_json::json!({"epoch": epoch}));
            c.insert("x", Tensor::from_vec(&[values.len()], values));
            let bytes = c.to_bytes();
            let back = ArrayContainer::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
