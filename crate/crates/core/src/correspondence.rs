//! Frame-to-map object matching from pairwise centroid geometry.
//!
//! Every label-compatible (frame object, map configuration) pair is a
//! candidate. Candidates are scored by the principal eigenvector of an
//! adjacency matrix that rewards similar box scale on the diagonal and
//! agreement of pairwise centroid distances off it. A greedy pass then
//! keeps a one-to-one subset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::detection::DetectedObject;
use crate::geom::{Mat3, Vec3};
use crate::object_map::ObjectMap;
use crate::registration::WeightedPair;

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 10_000;
/// Candidates scoring at or below this are never selected.
pub const MIN_SCORE: f64 = 1e-6;
/// Relative eigenvalue gap under which the spectrum is flagged degenerate.
const GAP_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateCorrespondence {
    pub frame_index: usize,
    pub map_object_index: usize,
    pub configuration_index: usize,
    pub frame_centroid: Vec3,
    pub map_centroid_mean: Vec3,
    pub map_centroid_cov: Mat3,
    pub frame_scale: f64,
    pub map_scale: f64,
}

impl CandidateCorrespondence {
    pub fn conflicts_with(&self, other: &CandidateCorrespondence) -> bool {
        self.frame_index == other.frame_index || self.map_object_index == other.map_object_index
    }

    pub fn weighted_pair(&self) -> WeightedPair {
        WeightedPair::new(self.frame_centroid, self.map_centroid_mean, self.map_centroid_cov)
    }
}

/// Candidate list with its adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub candidates: Vec<CandidateCorrespondence>,
    pub matrix: DMatrix<f64>,
}

/// Enumerates candidates and fills the adjacency matrix.
///
/// `decay` is the length scale (metres) of the distance-consistency term.
/// Conflicting candidates get a zero entry.
pub fn build_adjacency(frame_objects: &[DetectedObject], map: &ObjectMap, decay: f64) -> Adjacency {
    let mut candidates = Vec::new();
    for (fi, fo) in frame_objects.iter().enumerate() {
        for (mi, mo) in map.objects.iter().enumerate() {
            if mo.label != fo.label {
                continue;
            }
            for (ki, conf) in mo.configurations.iter().enumerate() {
                candidates.push(CandidateCorrespondence {
                    frame_index: fi,
                    map_object_index: mi,
                    configuration_index: ki,
                    frame_centroid: fo.bbox.centroid,
                    map_centroid_mean: conf.centroid.mean,
                    map_centroid_cov: conf.centroid.covariance,
                    frame_scale: fo.bbox.scale,
                    map_scale: conf.bbox.scale,
                });
            }
        }
    }

    let n = candidates.len();
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        let a = &candidates[i];
        matrix[(i, i)] = (a.frame_scale / a.map_scale).min(a.map_scale / a.frame_scale);
        for j in i + 1..n {
            let b = &candidates[j];
            if a.conflicts_with(b) {
                continue;
            }
            let df = (a.frame_centroid - b.frame_centroid).norm();
            let dm = (a.map_centroid_mean - b.map_centroid_mean).norm();
            let v = (-(df - dm).abs() / decay).exp();
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Adjacency { candidates, matrix }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalEigen {
    /// Unit length, largest-magnitude entry positive.
    pub vector: DVector<f64>,
    /// Rayleigh quotient of `vector`.
    pub eigenvalue: f64,
    pub iterations: usize,
    /// Zero matrix or a repeated top eigenvalue.
    pub degenerate: bool,
}

/// Power iteration from the uniform vector.
pub fn principal_eigenvector(a: &DMatrix<f64>) -> PrincipalEigen {
    let n = a.nrows();
    assert!(n == a.ncols(), "adjacency must be square");
    if n == 0 {
        return PrincipalEigen {
            vector: DVector::zeros(0),
            eigenvalue: 0.0,
            iterations: 0,
            degenerate: true,
        };
    }
    let uniform = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    if a.iter().all(|x| *x == 0.0) {
        return PrincipalEigen {
            vector: uniform,
            eigenvalue: 0.0,
            iterations: 0,
            degenerate: true,
        };
    }

    let mut v = uniform;
    let mut iterations = 0;
    while iterations < POWER_MAX_ITERATIONS {
        iterations += 1;
        let mut next = a * &v;
        let norm = next.norm();
        if norm == 0.0 {
            break;
        }
        next /= norm;
        let diff = (&next - &v).amax();
        v = next;
        if diff < POWER_TOLERANCE {
            break;
        }
    }

    let imax = v.iamax();
    if v[imax] < 0.0 {
        v = -v;
    }
    let eigenvalue = v.dot(&(a * &v));

    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    let degenerate = ev.len() > 1 && (ev[0] - ev[1]).abs() < GAP_TOLERANCE * ev[0].abs();

    PrincipalEigen {
        vector: v,
        eigenvalue,
        iterations,
        degenerate,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<CandidateCorrespondence>,
    /// Index of each pair in the candidate list.
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn weighted_pairs(&self) -> Vec<WeightedPair> {
        self.pairs.iter().map(|p| p.weighted_pair()).collect()
    }
}

/// Repeatedly accepts the best remaining candidate and discards everything
/// that conflicts with it. Ties go to the lowest candidate index.
pub fn greedy_select(candidates: &[CandidateCorrespondence], scores: &DVector<f64>) -> CorrespondenceSet {
    assert_eq!(candidates.len(), scores.len(), "one score per candidate");
    let mut alive = vec![true; candidates.len()];
    let mut out = CorrespondenceSet::default();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..candidates.len() {
            if alive[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        if !(scores[b] > MIN_SCORE) {
            break;
        }
        for i in 0..candidates.len() {
            if alive[i] && candidates[i].conflicts_with(&candidates[b]) {
                alive[i] = false;
            }
        }
        out.pairs.push(candidates[b].clone());
        out.indices.push(b);
        out.scores.push(scores[b]);
    }
    out
}

/// Everything the matcher computed for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchOutcome {
    pub adjacency: Adjacency,
    pub eigen: PrincipalEigen,
    pub selected: CorrespondenceSet,
}

pub fn match_objects(frame_objects: &[DetectedObject], map: &ObjectMap, decay: f64) -> MatchOutcome {
    let adjacency = build_adjacency(frame_objects, map, decay);
    let eigen = principal_eigenvector(&adjacency.matrix);
    let selected = greedy_select(&adjacency.candidates, &eigen.vector);
    MatchOutcome {
        adjacency,
        eigen,
        selected,
    }
}
