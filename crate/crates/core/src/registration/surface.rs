use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::spatial::{KdTree, Neighbour};

const MAGIC: &[u8; 8] = b"OBJRSURF";
/// Neighbours stored per point for hinted queries.
const GRAPH_K: usize = 12;
const GRAPH_HOPS: usize = 4;
const VERSION: u32 = 1;

/// Dense map geometry: world points with unit normals and a spatial index.
#[derive(Clone, Debug)]
pub struct SurfaceModel {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    tree: KdTree,
    /// `GRAPH_K` nearest other points of each point, row by row.
    graph: Vec<u32>,
    /// Distance from each point to the nearest point not in its row.
    reach: Vec<f64>,
}

impl SurfaceModel {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidInput(format!("normal {i} is not unit length")));
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput("surface point is not finite".into()));
        }
        let tree = KdTree::new(&points);
        let (graph, reach) = neighbour_graph(&points, &tree);
        Ok(SurfaceModel {
            points,
            normals,
            tree,
            graph,
            reach,
        })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index(&self) -> &KdTree {
        &self.tree
    }

    /// Exact nearest point within `sqrt(max_dist2)` of `q`, ties to the
    /// lowest index.
    ///
    /// `hint` is a previous match. The hint's stored neighbours are checked
    /// first; when the best of them is closer than anything outside the row
    /// can be, the tree is not searched.
    pub fn nearest_within(&self, q: &Vec3, max_dist2: f64, hint: Option<usize>) -> Option<Neighbour> {
        let Some(h) = hint else {
            return self.tree.nearest_within(q, max_dist2, None);
        };
        let mut pivot = h;
        let mut pivot_d2 = (self.points[h] - q).norm_squared();
        let (mut best, mut best_d2) = (h, pivot_d2);
        if !self.graph.is_empty() {
            // walk towards q along the graph until a row certifies its best
            for _ in 0..GRAPH_HOPS {
                for &j in &self.graph[pivot * GRAPH_K..(pivot + 1) * GRAPH_K] {
                    let j = j as usize;
                    let d2 = (self.points[j] - q).norm_squared();
                    if d2 < best_d2 || (d2 == best_d2 && j < best) {
                        best = j;
                        best_d2 = d2;
                    }
                }
                // any point outside the row is at least reach - |q - pivot| away
                let floor = self.reach[pivot] - pivot_d2.sqrt();
                if best_d2.sqrt() < floor - 1e-9 * self.reach[pivot] {
                    return (best_d2 <= max_dist2).then_some(Neighbour {
                        index: best,
                        dist2: best_d2,
                    });
                }
                if best == pivot {
                    break;
                }
                pivot = best;
                pivot_d2 = best_d2;
            }
        }
        self.tree.nearest_within(q, max_dist2, Some((best, best_d2)))
    }

    /// Binary form: magic, version, count, then `count` records of six
    /// little-endian f64 (point, normal).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&VERSION.to_le_bytes())?;
        write(&(self.points.len() as u64).to_le_bytes())?;
        for (p, n) in self.points.iter().zip(&self.normals) {
            for v in p.iter().chain(n.iter()) {
                write(&v.to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: message.to_string(),
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a surface model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported surface file version {version}")));
        }
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() != count * 48 {
            return Err(bad("truncated surface model file"));
        }
        let mut points = Vec::with_capacity(count);
        let mut normals = Vec::with_capacity(count);
        for rec in body.chunks_exact(48) {
            let f = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
            points.push(Vec3::new(f(0), f(1), f(2)));
            normals.push(Vec3::new(f(3), f(4), f(5)));
        }
        SurfaceModel::new(points, normals)
    }
}

/// Rows of the `GRAPH_K` nearest other points and the distance to the next
/// one. Empty when the model is too small to have full rows.
fn neighbour_graph(points: &[Vec3], tree: &KdTree) -> (Vec<u32>, Vec<f64>) {
    if points.len() <= GRAPH_K + 1 {
        return (Vec::new(), Vec::new());
    }
    let mut graph = Vec::with_capacity(points.len() * GRAPH_K);
    let mut reach = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        // a duplicate with a lower index can sort ahead of the point itself
        let others: Vec<_> = tree.knn(p, GRAPH_K + 2).into_iter().filter(|n| n.index != i).collect();
        graph.extend(others[..GRAPH_K].iter().map(|n| n.index as u32));
        reach.push(others[GRAPH_K].dist2.sqrt());
    }
    (graph, reach)
}
