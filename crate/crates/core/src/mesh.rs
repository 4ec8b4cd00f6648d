//! Triangle meshes: Wavefront OBJ input and a few procedural shapes used by
//! tests and synthetic sequences.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    /// Vertex positions in the model frame, meters.
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Largest distance between any two vertices, meters.
    pub diameter: f64,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidInput(format!("triangle {t:?} indexes past {n} vertices")));
        }
        let diameter = max_pairwise_distance(&vertices);
        Ok(Self { vertices, triangles, diameter })
    }

    /// Radius of the smallest origin-centered sphere containing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        TriangleMesh::new(self.vertices.iter().map(|v| v * factor).collect(), self.triangles.clone())
    }

    pub fn to_obj_string(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }
}

fn max_pairwise_distance(vertices: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in vertices.iter().enumerate() {
        for b in &vertices[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Load a Wavefront OBJ file. Only `v` and `f` records are read; polygons
/// are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .take(3)
                    .map(|f| {
                        f.parse::<f64>().map_err(|e| parse_err(line_no, format!("bad vertex coordinate {f:?}: {e}")))
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(parse_err(line_no, "vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut face = Vec::with_capacity(4);
                for f in fields {
                    // "i", "i/t", "i//n", "i/t/n"
                    let index_str = f.split('/').next().unwrap_or("");
                    let index: i64 =
                        index_str.parse().map_err(|e| parse_err(line_no, format!("bad face index {f:?}: {e}")))?;
                    let resolved = match index {
                        i if i > 0 => i - 1,
                        i if i < 0 => vertices.len() as i64 + i,
                        _ => return Err(parse_err(line_no, "face index 0 is invalid".into())),
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_err(line_no, format!("face index {index} out of range")));
                    }
                    face.push(resolved as u32);
                }
                if face.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least three vertices".into()));
                }
                for i in 1..face.len() - 1 {
                    triangles.push([face[0], face[i], face[i + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Axis-aligned box centered at the origin.
pub fn box_mesh(size_x: f64, size_y: f64, size_z: f64) -> TriangleMesh {
    let (hx, hy, hz) = (size_x / 2.0, size_y / 2.0, size_z / 2.0);
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -hx } else { hx },
                if i & 2 == 0 { -hy } else { hy },
                if i & 4 == 0 { -hz } else { hz },
            )
        })
        .collect();
    let quads: [[u32; 4]; 6] = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh::new(vertices, triangles).expect("box mesh is well formed")
}

/// Geodesic sphere: an icosahedron subdivided `subdivisions` times, radius `radius`.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let (dirs, triangles) = crate::viewpoint::subdivided_icosahedron(subdivisions);
    TriangleMesh::new(dirs.into_iter().map(|d| d * radius).collect(), triangles).expect("icosphere is well formed")
}

/// A smooth, lopsided potato: an ellipsoid with low-frequency bumps, no
/// symmetry axis. `size` is roughly the longest extent in meters.
pub fn potato(size: f64) -> TriangleMesh {
    let (dirs, triangles) = crate::viewpoint::subdivided_icosahedron(3);
    let vertices = dirs
        .into_iter()
        .map(|d| {
            let bump = 1.0
                + 0.18 * (2.0 * d.x + d.y).sin() * d.z
                + 0.12 * (3.0 * d.y).cos() * d.x
                + 0.15 * d.x.max(0.0).powi(3);
            Vec3::new(d.x, 0.72 * d.y, 0.5 * d.z) * (0.5 * size * bump)
        })
        .collect();
    TriangleMesh::new(vertices, triangles).expect("potato mesh is well formed")
}

/// An L-shaped block: asymmetric enough that its silhouette pins down all
/// six degrees of freedom. `size` is the long edge in meters.
pub fn l_block(size: f64) -> TriangleMesh {
    // L-shaped profile in the XY plane, extruded along Z.
    let s = size;
    let profile = [(0.0, 0.0), (s, 0.0), (s, 0.35 * s), (0.4 * s, 0.35 * s), (0.4 * s, 0.8 * s), (0.0, 0.8 * s)];
    let depth = 0.45 * s;
    // Center the bounding box on the origin.
    let offset = Vec3::new(s / 2.0, 0.4 * s, depth / 2.0);
    let mut vertices = Vec::new();
    for &z in &[0.0, depth] {
        for &(x, y) in &profile {
            vertices.push(Vec3::new(x, y, z) - offset);
        }
    }
    let n = profile.len() as u32;
    // Profile split into two convex quads: [0,1,2,3] and [0,3,4,5].
    let caps: [[u32; 3]; 4] = [[0, 2, 1], [0, 3, 2], [0, 4, 3], [0, 5, 4]];
    let mut triangles = Vec::new();
    for t in caps {
        triangles.push(t);
        triangles.push([t[0] + n, t[2] + n, t[1] + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        triangles.push([i, j, j + n]);
        triangles.push([i, j + n, i + n]);
    }
    TriangleMesh::new(vertices, triangles).expect("l block is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    const CUBE_OBJ: &str = "\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 2 3 4
f 5 8 7 6
f 1 5 6 2
f 2 6 7 3
f 3 7 8 4
f 5 1 4 8
";

    #[test]
    fn unit_cube_from_file() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(CUBE_OBJ.as_bytes()).unwrap();
        let mesh = load_mesh(file.path()).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.triangles.len(), 12);
        assert_relative_eq!(mesh.diameter, 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(load_mesh("/nonexistent/mesh.obj"), Err(Error::Io { .. })));
    }

    #[test]
    fn tetrahedron_diameter_is_edge_length() {
        let h = (2.0f64 / 3.0).sqrt();
        let obj = format!(
            "v 0 0 0\nv 1 0 0\nv 0.5 {} 0\nv 0.5 {} {}\nf 1 2 3\nf 1 2 4\nf 2 3 4\nf 3 1 4\n",
            3f64.sqrt() / 2.0,
            3f64.sqrt() / 6.0,
            h
        );
        let mesh = parse_obj(&obj, Path::new("tet.obj")).unwrap();
        assert_relative_eq!(mesh.diameter, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn parse_failures() {
        let p = Path::new("x.obj");
        assert!(matches!(parse_obj("v 0 0 zero\n", p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_obj("v 0 0 0\nf 1 2 3\n", p), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_obj("# nothing\n", p), Err(Error::EmptyMesh)));
    }

    #[test]
    fn face_records_with_texture_and_normal_indices() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 -1//1\n";
        let mesh = parse_obj(obj, Path::new("a.obj")).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_round_trip() {
        let mesh = l_block(0.1);
        let back = parse_obj(&mesh.to_obj_string(), Path::new("l.obj")).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn procedural_shapes() {
        let b = box_mesh(1.0, 1.0, 1.0);
        assert_relative_eq!(b.diameter, 3f64.sqrt(), epsilon = 1e-12);
        let s = icosphere(0.5, 2);
        assert_eq!(s.vertices.len(), 162);
        assert_relative_eq!(s.bounding_radius(), 0.5, epsilon = 1e-12);
        let l = l_block(0.1);
        assert_eq!(l.triangles.len(), 20);
    }
}
