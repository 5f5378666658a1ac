//! Binary grid container with a JSON sidecar.
//!
//! Layout: the 8-byte magic `HJGRID01`, a little-endian `u64` header length,
//! the JSON header (lattice and field table), then every field as
//! little-endian `f64` in declaration order. The sidecar `<file>.json`
//! carries free-form metadata for replay.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

const MAGIC: &[u8; 8] = b"HJGRID01";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldEntry {
    pub name: String,
    pub components: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    lattice: Lattice,
    fields: Vec<FieldEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridBundle {
    pub lattice: Lattice,
    pub fields: Vec<(FieldEntry, Vec<f64>)>,
}

impl GridBundle {
    pub fn new(lattice: Lattice) -> Self {
        GridBundle {
            lattice,
            fields: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, components: usize, data: Vec<f64>) {
        self.fields.push((
            FieldEntry {
                name: name.to_string(),
                components,
            },
            data,
        ));
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields
            .iter()
            .find(|(e, _)| e.name == name)
            .map(|(_, d)| d.as_slice())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_bundle(path: &Path, bundle: &GridBundle, meta: &serde_json::Value) -> Result<()> {
    let n = bundle.lattice.len();
    for (e, d) in &bundle.fields {
        if d.len() != n * e.components {
            return Err(Error::Format(format!(
                "field `{}` has {} values, expected {}",
                e.name,
                d.len(),
                n * e.components
            )));
        }
    }
    let header = Header {
        lattice: bundle.lattice,
        fields: bundle.fields.iter().map(|(e, _)| e.clone()).collect(),
    };
    let hbytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(hbytes.len() as u64).to_le_bytes())?;
    f.write_all(&hbytes)?;
    for (_, d) in &bundle.fields {
        for v in d {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<(GridBundle, serde_json::Value)> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not a grid container", path.display())));
    }
    let mut lenb = [0u8; 8];
    f.read_exact(&mut lenb)?;
    let hlen = u64::from_le_bytes(lenb) as usize;
    let mut hbytes = vec![0u8; hlen];
    f.read_exact(&mut hbytes)?;
    let header: Header = serde_json::from_slice(&hbytes)?;
    let n = header.lattice.len();
    let mut bundle = GridBundle::new(header.lattice);
    let mut buf = [0u8; 8];
    for e in header.fields {
        let mut d = Vec::with_capacity(n * e.components);
        for _ in 0..n * e.components {
            f.read_exact(&mut buf)?;
            d.push(f64::from_le_bytes(buf));
        }
        bundle.fields.push((e, d));
    }
    let meta = match fs::read(sidecar_path(path)) {
        Ok(b) => serde_json::from_slice(&b)?,
        Err(_) => serde_json::Value::Null,
    };
    Ok((bundle, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.bin");
        let l = Lattice::torus(2, 3, 0.5).unwrap();
        let mut b = GridBundle::new(l);
        b.push("v", 1, (0..9).map(|i| (i as f64).sin()).collect());
        b.push("b", 2, (0..18).map(|i| -(i as f64) / 7.0).collect());
        write_bundle(&p, &b, &serde_json::json!({"seed": 4})).unwrap();
        let (r, meta) = read_bundle(&p).unwrap();
        assert_eq!(r, b);
        assert_eq!(meta["seed"], 4);
    }
}
