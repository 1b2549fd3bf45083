//! Point clouds: XYZ/OFF ingestion, normalization, and synthetic shapes.
//!
//! The XYZ text format is the canonical interchange format: one point per
//! line, `x y z` in decimal notation. A small OFF subset (triangular faces)
//! is supported for mesh ingestion via area-weighted surface sampling.
//! Synthetic sphere/cube/torus clouds provide seeded, labeled data for the
//! toy classifier.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// An ordered set of 3D points with optional per-point features and a class label.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    pub features: Option<Mat>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<[f64; 3]>) -> Self {
        PointCloud {
            positions,
            features: None,
            label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.positions.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        for v in &mut c {
            *v /= n;
        }
        c
    }

    pub fn max_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Shape family for synthetic clouds. The discriminant doubles as the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Torus,
}

impl ShapeFamily {
    pub fn label(self) -> usize {
        match self {
            ShapeFamily::Sphere => 0,
            ShapeFamily::Cube => 1,
            ShapeFamily::Torus => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Torus => "torus",
        }
    }
}

/// Recipe for one synthetic labeled cloud.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ShapeSpec {
    fn validate(&self) -> Result<()> {
        if self.n_points < 8 {
            return Err(Error::InvalidShapeSpec(format!(
                "n_points = {} < 8",
                self.n_points
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidShapeSpec(format!(
                "noise_sigma = {} must be >= 0",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Major/minor radii of the synthetic torus.
pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.4;

/// Parse an XYZ file: three whitespace-separated decimals per non-empty line.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut positions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (d, f) in fields.iter().enumerate() {
            p[d] = f.parse::<f64>().map_err(|_| Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("`{f}` is not a number"),
            })?;
        }
        positions.push(p);
    }
    if positions.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(PointCloud::from_positions(positions))
}

/// Write positions as XYZ text, one `x y z` line per point.
///
/// Floats are printed with Rust's shortest round-trip formatting, so
/// `load_xyz(save_xyz(pc))` reproduces positions bit-for-bit.
pub fn save_xyz(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for p in &pc.positions {
        writeln!(w, "{} {} {}", p[0], p[1], p[2]).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Load a triangular OFF mesh and sample `n_samples` surface points,
/// area-weighted and uniform within each triangle. Deterministic per seed.
pub fn load_off(path: impl AsRef<Path>, n_samples: usize, seed: u64) -> Result<PointCloud> {
    let path = path.as_ref();
    if n_samples == 0 {
        return Err(Error::InvalidShapeSpec("n_samples must be >= 1".into()));
    }
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);

    // Collect non-empty, non-comment lines with their 1-based line numbers.
    let mut lines: Vec<(usize, String)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim().to_string();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push((idx + 1, trimmed));
    }
    if lines.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }

    let (_, header) = &lines[0];
    let mut header_fields: Vec<&str> = header.split_whitespace().collect();
    if header_fields.first() != Some(&"OFF") {
        return Err(Error::MissingOffHeader(path.to_path_buf()));
    }
    header_fields.remove(0);

    let mut cursor = 1;
    // Counts either share the header line ("OFF nv nf ne") or follow it.
    let counts: Vec<&str> = if !header_fields.is_empty() {
        header_fields
    } else {
        let (line_no, counts_line) = lines
            .get(cursor)
            .ok_or_else(|| Error::EmptyFile(path.to_path_buf()))?;
        cursor += 1;
        let fields: Vec<&str> = counts_line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: *line_no,
                reason: "expected vertex/face counts".into(),
            });
        }
        // leak-free: re-split below from the owned string
        return load_off_body(path, &lines, cursor - 1, fields_to_counts(&fields, path, *line_no)?, n_samples, seed);
    };
    let (line_no, _) = lines[0];
    let parsed = fields_to_counts(&counts, path, line_no)?;
    load_off_body(path, &lines, cursor - 1, parsed, n_samples, seed)
}

fn fields_to_counts(fields: &[&str], path: &Path, line: usize) -> Result<(usize, usize)> {
    if fields.len() < 2 {
        return Err(Error::MalformedLine {
            path: path.to_path_buf(),
            line,
            reason: "expected vertex and face counts".into(),
        });
    }
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| Error::MalformedLine {
            path: path.to_path_buf(),
            line,
            reason: format!("`{s}` is not a count"),
        })
    };
    Ok((parse(fields[0])?, parse(fields[1])?))
}

fn load_off_body(
    path: &Path,
    lines: &[(usize, String)],
    counts_index: usize,
    (n_vertices, n_faces): (usize, usize),
    n_samples: usize,
    seed: u64,
) -> Result<PointCloud> {
    let body = &lines[counts_index + 1..];
    if body.len() < n_vertices + n_faces {
        return Err(Error::MalformedLine {
            path: path.to_path_buf(),
            line: lines.last().map(|(l, _)| *l).unwrap_or(0),
            reason: format!(
                "expected {} vertex + {} face lines, found {}",
                n_vertices,
                n_faces,
                body.len()
            ),
        });
    }

    let mut vertices = Vec::with_capacity(n_vertices);
    for (line_no, line) in &body[..n_vertices] {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: *line_no,
                reason: "vertex line needs 3 coordinates".into(),
            });
        }
        let mut p = [0.0; 3];
        for d in 0..3 {
            p[d] = fields[d].parse::<f64>().map_err(|_| Error::MalformedLine {
                path: path.to_path_buf(),
                line: *line_no,
                reason: format!("`{}` is not a number", fields[d]),
            })?;
        }
        vertices.push(p);
    }

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(n_faces);
    for (line_no, line) in &body[n_vertices..n_vertices + n_faces] {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let nv: usize = fields
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedLine {
                path: path.to_path_buf(),
                line: *line_no,
                reason: "face line needs a vertex count".into(),
            })?;
        if nv != 3 {
            return Err(Error::NonTriangleFace {
                path: path.to_path_buf(),
                line: *line_no,
                verts: nv,
            });
        }
        let mut f = [0usize; 3];
        for d in 0..3 {
            let idx: usize =
                fields
                    .get(d + 1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::MalformedLine {
                        path: path.to_path_buf(),
                        line: *line_no,
                        reason: "face line needs 3 vertex indices".into(),
                    })?;
            if idx >= vertices.len() {
                return Err(Error::VertexIndexOutOfRange {
                    index: idx,
                    n: vertices.len(),
                    line: *line_no,
                });
            }
            f[d] = idx;
        }
        faces.push(f);
    }

    // Area-weighted triangle choice, then uniform barycentric sampling.
    let mut cum_areas = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in &faces {
        total += triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
        cum_areas.push(total);
    }
    if total <= 0.0 {
        return Err(Error::InvalidShapeSpec(
            "mesh has zero total surface area".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let u: f64 = rng.random_range(0.0..total);
        let tri = cum_areas.partition_point(|&a| a <= u).min(faces.len() - 1);
        let [a, b, c] = faces[tri];
        let r1: f64 = rng.random::<f64>();
        let r2: f64 = rng.random::<f64>();
        let sr1 = r1.sqrt();
        let (wa, wb, wc) = (1.0 - sr1, sr1 * (1.0 - r2), sr1 * r2);
        let mut p = [0.0; 3];
        for d in 0..3 {
            p[d] = wa * vertices[a][d] + wb * vertices[b][d] + wc * vertices[c][d];
        }
        positions.push(p);
    }
    Ok(PointCloud::from_positions(positions))
}

fn triangle_area(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Center at the origin and scale so the farthest point sits on the unit sphere.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::InvalidShapeSpec("empty point cloud".into()));
    }
    let c = pc.centroid();
    let mut centered: Vec<[f64; 3]> = pc
        .positions
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let scale = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    if scale < 1e-15 {
        return Err(Error::ZeroScale);
    }
    for p in &mut centered {
        for v in p.iter_mut() {
            *v /= scale;
        }
    }
    Ok(PointCloud {
        positions: centered,
        features: pc.features.clone(),
        label: pc.label,
    })
}

/// Append base points and their exact negations until `n` points exist.
/// Antipodal pairing keeps the raw centroid at exactly zero (for even `n`),
/// so unit-sphere normalization does not shift the surface.
fn antithetic_fill(n: usize, mut draw: impl FnMut() -> [f64; 3]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = draw();
        out.push(p);
        if out.len() < n {
            out.push([-p[0], -p[1], -p[2]]);
        }
    }
    out
}

/// Uniform points on the unit sphere (Marsaglia's method), antipodally paired.
pub fn sample_sphere(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    antithetic_fill(n, || loop {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        let s = u * u + v * v;
        if s >= 1.0 || s == 0.0 {
            continue;
        }
        let f = (1.0 - s).sqrt();
        return [2.0 * u * f, 2.0 * v * f, 1.0 - 2.0 * s];
    })
}

/// Uniform points on the surface of the cube [-1, 1]^3, faces equally
/// weighted, antipodally paired.
pub fn sample_cube(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    antithetic_fill(n, || {
        let face = rng.random_range(0..6u32);
        let axis = (face / 2) as usize;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        let mut p = [0.0; 3];
        p[axis] = sign;
        p[(axis + 1) % 3] = a;
        p[(axis + 2) % 3] = b;
        p
    })
}

/// Uniform points on a torus surface (major radius R, minor radius r),
/// with rejection on the tube angle to correct for the surface Jacobian.
/// Antipodally paired; the negation of a torus point is again on the torus.
pub fn sample_torus(n: usize, major: f64, minor: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    use std::f64::consts::TAU;
    antithetic_fill(n, || loop {
        let theta: f64 = rng.random_range(0.0..TAU);
        let phi: f64 = rng.random_range(0.0..TAU);
        let accept: f64 = rng.random::<f64>();
        // surface element is proportional to R + r cos(phi)
        if accept * (major + minor) > major + minor * phi.cos() {
            continue;
        }
        let ring = major + minor * phi.cos();
        return [ring * theta.cos(), ring * theta.sin(), minor * phi.sin()];
    })
}

/// Sample a labeled synthetic cloud: surface points of the family, isotropic
/// Gaussian noise of `noise_sigma`, then unit-sphere normalization.
pub fn synth_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut positions = match spec.family {
        ShapeFamily::Sphere => sample_sphere(spec.n_points, &mut rng),
        ShapeFamily::Cube => sample_cube(spec.n_points, &mut rng),
        ShapeFamily::Torus => sample_torus(spec.n_points, TORUS_MAJOR, TORUS_MINOR, &mut rng),
    };
    if spec.noise_sigma > 0.0 {
        for p in &mut positions {
            for v in p.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise_sigma * g;
            }
        }
    }
    let mut pc = normalize_unit_sphere(&PointCloud::from_positions(positions))?;
    pc.label = Some(spec.family.label());
    Ok(pc)
}
