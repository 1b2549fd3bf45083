//! Binary checkpoint format for trained parameters.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   4 bytes  "GWCK"
//! version u32      currently 1
//! cfg_len u32      length of the UTF-8 JSON config echo
//! cfg     cfg_len  JSON blob (variant, net config, train config)
//! count   u32      number of parameter arrays
//! repeat count times:
//!   name_len u32
//!   name     name_len bytes UTF-8
//!   rows     u32
//!   cols     u32
//!   data     rows*cols f64 (LE)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;

const MAGIC: &[u8; 4] = b"GWCK";
const VERSION: u32 = 1;

/// One named parameter array as stored on disk.
#[derive(Debug, Clone)]
pub struct CheckpointParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// A parsed checkpoint: the config echo and all parameter arrays.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn find(&self, name: &str) -> Option<&CheckpointParam> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write the store's parameters with a JSON config echo.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &serde_json::Value,
    store: &ParamStore,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let cfg_bytes = serde_json::to_vec(config)?;

    w.write_all(MAGIC).map_err(io_err(path))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(cfg_bytes.len() as u32).to_le_bytes())
        .map_err(io_err(path))?;
    w.write_all(&cfg_bytes).map_err(io_err(path))?;
    w.write_all(&(store.len() as u32).to_le_bytes())
        .map_err(io_err(path))?;
    for (name, rows, cols, values) in store.iter_named() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())
            .map_err(io_err(path))?;
        w.write_all(name_bytes).map_err(io_err(path))?;
        w.write_all(&(rows as u32).to_le_bytes()).map_err(io_err(path))?;
        w.write_all(&(cols as u32).to_le_bytes()).map_err(io_err(path))?;
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(Error::InvalidCheckpoint(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::InvalidCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let cfg_len = u32::from_le_bytes(u32buf) as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes).map_err(io_err(path))?;
    let config: serde_json::Value = serde_json::from_slice(&cfg_bytes)?;

    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(io_err(path))?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err(path))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::InvalidCheckpoint("non-UTF8 parameter name".into()))?;
        r.read_exact(&mut u32buf).map_err(io_err(path))?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf).map_err(io_err(path))?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        let mut values = vec![0.0f64; rows * cols];
        let mut f64buf = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut f64buf).map_err(io_err(path))?;
            *v = f64::from_le_bytes(f64buf);
        }
        params.push(CheckpointParam {
            name,
            rows,
            cols,
            values,
        });
    }
    Ok(Checkpoint { config, params })
}

/// Copy checkpoint values back into a freshly constructed store whose
/// parameter names and shapes must match exactly.
pub fn restore_into(store: &mut ParamStore, ckpt: &Checkpoint) -> Result<()> {
    if store.len() != ckpt.params.len() {
        return Err(Error::InvalidCheckpoint(format!(
            "{} parameters in store, {} in checkpoint",
            store.len(),
            ckpt.params.len()
        )));
    }
    for i in 0..store.len() {
        let id = super::params::ParamId(i);
        let p = &ckpt.params[i];
        if store.name(id) != p.name || store.shape(id) != (p.rows, p.cols) {
            return Err(Error::InvalidCheckpoint(format!(
                "parameter {} mismatch (expected {} {:?})",
                p.name,
                store.name(id),
                store.shape(id),
            )));
        }
        store.values_mut(id).copy_from_slice(&p.values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let mut store = ParamStore::new();
        store.add("a.w", 2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, 7.0]);
        store.add("b", 1, 1, vec![42.0]);
        let cfg = serde_json::json!({"variant": "l", "epochs": 3});
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(tmp.path(), &cfg, &store).unwrap();
        let ckpt = load_checkpoint(tmp.path()).unwrap();
        assert_eq!(ckpt.config["epochs"], 3);
        assert_eq!(ckpt.params.len(), 2);
        assert_eq!(ckpt.find("a.w").unwrap().values[4], 1e-300);

        let mut fresh = ParamStore::new();
        fresh.add("a.w", 2, 3, vec![0.0; 6]);
        fresh.add("b", 1, 1, vec![0.0]);
        restore_into(&mut fresh, &ckpt).unwrap();
        assert_eq!(fresh.values(super::super::params::ParamId(1)), &[42.0]);
    }

    #[test]
    fn rejects_bad_magic() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), b"NOPE....").unwrap();
        assert!(matches!(
            load_checkpoint(tmp.path()),
            Err(Error::InvalidCheckpoint(_))
        ));
    }
}
