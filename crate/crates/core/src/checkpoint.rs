//! Versioned binary parameter blobs.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     b"PGAN"
//! version   u32
//! kind      u32 length + UTF-8 bytes
//! header    u32 count, then per field: u32 length + UTF-8 key, u64 value
//! params    u32 count, then per matrix: u32 length + UTF-8 name,
//!           u64 rows, u64 cols, rows*cols f64 values in row-major order
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::{Matrix, ParamStore};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PGAN";

/// Decoded blob.
#[derive(Debug, Clone)]
pub struct Blob {
    pub kind: String,
    pub header: Vec<(String, u64)>,
    pub params: ParamStore,
}

impl Blob {
    pub fn field(&self, key: &str) -> Option<u64> {
        self.header.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub(crate) fn require(&self, key: &str, path: &Path) -> Result<u64> {
        self.field(key).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("missing header field `{key}`"),
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(kind: &str, header: &[(&str, u64)], params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, kind);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    for (k, v) in header {
        put_str(&mut out, k);
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for i in 0..params.len() {
        put_str(&mut out, params.name(i));
        let m = params.get(i);
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for &x in m.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| "truncated blob".to_string())?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<Blob, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let kind = r.str()?;
    let n_header = r.u32()?;
    let mut header = Vec::new();
    for _ in 0..n_header {
        let k = r.str()?;
        header.push((k, r.u64()?));
    }
    let n_params = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = r.str()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or("overflow")?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = Matrix::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())?;
        params.push(name, m);
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(Blob { kind, header, params })
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Blob> {
    decode_inner(bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

pub fn save(path: &Path, kind: &str, header: &[(&str, u64)], params: &ParamStore) -> Result<()> {
    fs::write(path, encode(kind, header, params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected_kind: &str) -> Result<Blob> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let blob = decode(&bytes, path)?;
    if blob.kind != expected_kind {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("expected a {expected_kind} blob, found {}", blob.kind),
        });
    }
    Ok(blob)
}
