//! On-disk formats shared by the CLI commands: the graph JSON document, the
//! spectral-basis binary, and small CSV helpers.
//!
//! Basis binary layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "GWSB"
//! version u32      currently 1
//! n       u32
//! source  u8       0 = computed, 1 = learned
//! lambda  n   f64
//! U       n*n f64  row-major eigenvector matrix (columns are eigenvectors)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{graph_from_adjacency, BasisSource, LocalGraph, SpectralBasis};
use crate::linalg::Mat;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One weighted undirected edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// The graph JSON document: vertex count, undirected edge list, degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n: usize,
    pub edges: Vec<EdgeRecord>,
    pub degree: Vec<f64>,
}

impl GraphDocument {
    pub fn from_graph(g: &LocalGraph) -> Self {
        let mut edges = Vec::new();
        for i in 0..g.n {
            for j in (i + 1)..g.n {
                let w = g.adjacency.get(i, j);
                if w > 0.0 {
                    edges.push(EdgeRecord { i, j, w });
                }
            }
        }
        GraphDocument {
            n: g.n,
            edges,
            degree: g.degree.clone(),
        }
    }

    pub fn to_graph(&self) -> Result<LocalGraph> {
        let mut adj = Mat::zeros(self.n, self.n);
        for e in &self.edges {
            if e.i >= self.n || e.j >= self.n {
                return Err(Error::VertexOutOfRange {
                    index: e.i.max(e.j),
                    n: self.n,
                });
            }
            adj.set(e.i, e.j, e.w);
            adj.set(e.j, e.i, e.w);
        }
        graph_from_adjacency(adj)
    }
}

pub fn save_graph_json(path: impl AsRef<Path>, doc: &GraphDocument) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), doc)?;
    Ok(())
}

pub fn load_graph_json(path: impl AsRef<Path>) -> Result<GraphDocument> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

const BASIS_MAGIC: &[u8; 4] = b"GWSB";
const BASIS_VERSION: u32 = 1;

pub fn save_basis(path: impl AsRef<Path>, basis: &SpectralBasis) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let n = basis.n();
    w.write_all(BASIS_MAGIC).map_err(io_err(path))?;
    w.write_all(&BASIS_VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(n as u32).to_le_bytes()).map_err(io_err(path))?;
    let source = match basis.source {
        BasisSource::Computed => 0u8,
        BasisSource::Learned => 1u8,
    };
    w.write_all(&[source]).map_err(io_err(path))?;
    for v in &basis.eigenvalues {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    for v in basis.eigenvectors.as_slice() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn load_basis(path: impl AsRef<Path>) -> Result<SpectralBasis> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != BASIS_MAGIC {
        return Err(Error::InvalidArgument(format!(
            "{} is not a basis file",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    if u32::from_le_bytes(u32buf) != BASIS_VERSION {
        return Err(Error::InvalidArgument("unsupported basis version".into()));
    }
    r.read_exact(&mut u32buf).map_err(io_err(path))?;
    let n = u32::from_le_bytes(u32buf) as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag).map_err(io_err(path))?;
    let source = if flag[0] == 1 {
        BasisSource::Learned
    } else {
        BasisSource::Computed
    };
    let mut f64buf = [0u8; 8];
    let mut eigenvalues = vec![0.0; n];
    for v in &mut eigenvalues {
        r.read_exact(&mut f64buf).map_err(io_err(path))?;
        *v = f64::from_le_bytes(f64buf);
    }
    let mut data = vec![0.0; n * n];
    for v in &mut data {
        r.read_exact(&mut f64buf).map_err(io_err(path))?;
        *v = f64::from_le_bytes(f64buf);
    }
    Ok(SpectralBasis {
        eigenvectors: Mat::from_vec(n, n, data),
        eigenvalues,
        source,
    })
}

/// Parse a numeric CSV: comma- or whitespace-separated values, one record per
/// line; a first line that fails to parse is treated as a header.
pub fn load_numeric_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    use std::io::BufRead;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect();
        match parsed {
            Ok(vals) => rows.push(vals),
            Err(_) if idx == 0 => continue, // header
            Err(_) => {
                return Err(Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: "non-numeric field".into(),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::DimensionMismatch(format!(
            "ragged CSV in {}",
            path.display()
        )));
    }
    Ok(rows)
}

/// A signal matrix (n rows, c channels) from a numeric CSV.
pub fn load_signal_csv(path: impl AsRef<Path>) -> Result<Mat> {
    let rows = load_numeric_csv(path)?;
    let n = rows.len();
    let c = rows[0].len();
    let mut data = Vec::with_capacity(n * c);
    for row in rows {
        data.extend(row);
    }
    Ok(Mat::from_vec(n, c, data))
}

pub fn write_text(path: impl AsRef<Path>, content: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, content).map_err(io_err(path))
}

/// Signal/reconstruction CSV: `vertex,ch0..` rows.
pub fn signal_csv(m: &Mat) -> String {
    let mut out = String::from("vertex");
    for c in 0..m.cols() {
        out.push_str(&format!(",ch{c}"));
    }
    out.push('\n');
    for i in 0..m.rows() {
        out.push_str(&format!("{i}"));
        for c in 0..m.cols() {
            out.push_str(&format!(",{}", m.get(i, c)));
        }
        out.push('\n');
    }
    out
}
