//! Iso-surface extraction and mesh export.
//!
//! Cells are split into six tetrahedra along the main diagonal (Kuhn
//! decomposition), which neighbouring cells share consistently, so closed
//! level sets come out as closed, vertex-welded meshes.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Point3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Every undirected edge is used by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !edges.is_empty() && edges.values().all(|&n| n == 2)
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Binary little-endian PLY with float vertices and int indices.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        let header = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        );
        buf.extend_from_slice(header.as_bytes());
        for v in &self.vertices {
            for c in v {
                buf.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        for t in &self.triangles {
            buf.push(3u8);
            for i in t {
                buf.extend_from_slice(&(*i as i32).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads back the subset of OBJ written by [`TriangleMesh::write_obj`].
    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut mesh = TriangleMesh::default();
        let bad = |line: &str| Error::Format(format!("bad OBJ line: {line}"));
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let v: Vec<f64> = parts.map(|s| s.parse().map_err(|_| bad(line))).collect::<Result<_>>()?;
                    if v.len() != 3 {
                        return Err(bad(line));
                    }
                    mesh.vertices.push([v[0], v[1], v[2]]);
                }
                Some("f") => {
                    let f: Vec<u32> = parts
                        .map(|s| s.parse::<u32>().map_err(|_| bad(line)).map(|i| i - 1))
                        .collect::<Result<_>>()?;
                    if f.len() != 3 {
                        return Err(bad(line));
                    }
                    mesh.triangles.push([f[0], f[1], f[2]]);
                }
                _ => {}
            }
        }
        Ok(mesh)
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]);
                0.5 * len(cross(sub(b, a), sub(c, a)))
            })
            .sum()
    }

    /// Area-weighted surface points: every triangle's centroid plus its vertices.
    pub fn surface_points(&self) -> Vec<Point3> {
        let mut pts = self.vertices.clone();
        for t in &self.triangles {
            let (a, b, c) = (self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]);
            pts.push([(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0]);
        }
        pts
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn len(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

// Corner k of a cell sits at offset (k & 1, (k >> 1) & 1, (k >> 2) & 1).
// Each tetrahedron walks from corner 0 to corner 7 adding one axis at a time.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Triangulates `{ f < iso }`'s boundary for a node-sampled scalar field
/// stored with z fastest, then y, then x. Triangles face toward increasing
/// field values.
pub fn marching_tetrahedra(
    values: &[f64],
    resolution: [usize; 3],
    origin: Point3,
    spacing: [f64; 3],
    iso: f64,
) -> TriangleMesh {
    let [rx, ry, rz] = resolution;
    let index = |x: usize, y: usize, z: usize| (x * ry + y) * rz + z;
    let position = |n: usize| {
        let z = n % rz;
        let rest = n / rz;
        let (x, y) = (rest / ry, rest % ry);
        [
            origin[0] + x as f64 * spacing[0],
            origin[1] + y as f64 * spacing[1],
            origin[2] + z as f64 * spacing[2],
        ]
    };
    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertex_on = |a: usize, b: usize, mesh: &mut TriangleMesh| -> u32 {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            let (va, vb) = (values[key.0], values[key.1]);
            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
            let (pa, pb) = (position(key.0), position(key.1));
            mesh.vertices.push([
                pa[0] + t * (pb[0] - pa[0]),
                pa[1] + t * (pb[1] - pa[1]),
                pa[2] + t * (pb[2] - pa[2]),
            ]);
            (mesh.vertices.len() - 1) as u32
        })
    };

    for x in 0..rx.saturating_sub(1) {
        for y in 0..ry.saturating_sub(1) {
            for z in 0..rz.saturating_sub(1) {
                let corners: [usize; 8] =
                    std::array::from_fn(|k| index(x + (k & 1), y + ((k >> 1) & 1), z + ((k >> 2) & 1)));
                let inside = corners.iter().filter(|&&n| values[n] < iso).count();
                if inside == 0 || inside == 8 {
                    continue;
                }
                for tet in TETS {
                    let nodes = tet.map(|k| corners[k]);
                    let (ins, outs): (Vec<usize>, Vec<usize>) = nodes.iter().partition(|&&n| values[n] < iso);
                    let tris: Vec<[u32; 3]> = match ins.len() {
                        1 => vec![[
                            vertex_on(ins[0], outs[0], &mut mesh),
                            vertex_on(ins[0], outs[1], &mut mesh),
                            vertex_on(ins[0], outs[2], &mut mesh),
                        ]],
                        3 => vec![[
                            vertex_on(outs[0], ins[0], &mut mesh),
                            vertex_on(outs[0], ins[1], &mut mesh),
                            vertex_on(outs[0], ins[2], &mut mesh),
                        ]],
                        2 => {
                            let a = vertex_on(ins[0], outs[0], &mut mesh);
                            let b = vertex_on(ins[0], outs[1], &mut mesh);
                            let c = vertex_on(ins[1], outs[1], &mut mesh);
                            let d = vertex_on(ins[1], outs[0], &mut mesh);
                            vec![[a, b, c], [a, c, d]]
                        }
                        _ => Vec::new(),
                    };
                    if tris.is_empty() {
                        continue;
                    }
                    let centroid = |set: &[usize]| {
                        let mut c = [0.0; 3];
                        for &n in set {
                            let p = position(n);
                            (0..3).for_each(|a| c[a] += p[a] / set.len() as f64);
                        }
                        c
                    };
                    let outward = sub(centroid(&outs), centroid(&ins));
                    for mut t in tris {
                        let (a, b, c) = (mesh.vertices[t[0] as usize], mesh.vertices[t[1] as usize], mesh.vertices[t[2] as usize]);
                        if dot(cross(sub(b, a), sub(c, a)), outward) < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    mesh
}

/// Symmetric mean nearest-point distance between two point sets
/// (brute force).
pub fn chamfer_distance(a: &[Point3], b: &[Point3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let one_way = |from: &[Point3], to: &[Point3]| {
        from.iter()
            .map(|p| to.iter().map(|q| len(sub(*p, *q))).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}
