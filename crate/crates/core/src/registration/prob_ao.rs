use nalgebra::{Matrix3x6, Matrix6};

use super::{check_pairs, information, RegistrationResult, WeightedPair};
use crate::error::{Error, Result};
use crate::geom::{skew, Mat3, RigidTransform, Vec3, Vec6};

/// Relative cost change treated as rounding noise.
const COST_ROUNDING: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbAoParams {
    pub max_iterations: usize,
    /// Converged once the update's L2 norm drops below this, or once the
    /// predicted decrease is lost in the rounding of the cost.
    pub step_tolerance: f64,
    pub max_halvings: usize,
    /// Consecutive rejected iterations before giving up.
    pub max_rejections: usize,
}

impl Default for ProbAoParams {
    fn default() -> Self {
        ProbAoParams {
            max_iterations: 50,
            step_tolerance: 1e-10,
            max_halvings: 8,
            max_rejections: 5,
        }
    }
}

/// Residual `d = mean - (R u + t)` and its Jacobian with respect to a left
/// update `(omega, v)`: `J = [ [R u + t]x, -I ]`.
pub fn residual_jacobian(pair: &WeightedPair, pose: &RigidTransform) -> (Vec3, Matrix3x6<f64>) {
    let q = pose.transform_point(&pair.frame_point);
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&q));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Mat3::identity()));
    (pair.map_mean - q, j)
}

/// Sum of squared Mahalanobis residuals.
pub fn prob_ao_cost(pairs: &[WeightedPair], pose: &RigidTransform) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let d = p.residual(pose);
            d.dot(&(information(&p.map_cov) * d))
        })
        .sum()
}

/// Gradient of [`prob_ao_cost`] with respect to a left update at `pose`.
pub fn prob_ao_gradient(pairs: &[WeightedPair], pose: &RigidTransform) -> Vec6 {
    let mut g = Vec6::zeros();
    for p in pairs {
        let (d, j) = residual_jacobian(p, pose);
        g += 2.0 * j.transpose() * (information(&p.map_cov) * d);
    }
    g
}

pub fn probabilistic_ao(pairs: &[WeightedPair], init: &RigidTransform) -> Result<RegistrationResult> {
    probabilistic_ao_with(pairs, init, &ProbAoParams::default())
}

/// Minimises the covariance-weighted centroid cost by damped Gauss-Newton
/// from `init`. Steps that raise the cost are halved; if halving fails the
/// damping grows tenfold.
pub fn probabilistic_ao_with(
    pairs: &[WeightedPair],
    init: &RigidTransform,
    params: &ProbAoParams,
) -> Result<RegistrationResult> {
    check_pairs(pairs)?;
    if !init.is_valid() {
        return Err(Error::InvalidInput("initial pose is not a valid rigid transform".into()));
    }
    super::horn::check_rank(pairs)?;
    let weights: Vec<Mat3> = pairs.iter().map(|p| information(&p.map_cov)).collect();
    let cost_at = |pose: &RigidTransform| -> f64 {
        pairs
            .iter()
            .zip(&weights)
            .map(|(p, w)| {
                let d = p.residual(pose);
                d.dot(&(w * d))
            })
            .sum()
    };

    let mut pose = *init;
    let mut cost = cost_at(&pose);
    let mut damping = 0.0;
    let mut rejections = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iterations {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut b = Vec6::zeros();
        for (p, w) in pairs.iter().zip(&weights) {
            let (d, j) = residual_jacobian(p, &pose);
            let jt_w = j.transpose() * w;
            h += jt_w * j;
            b += jt_w * d;
        }
        let mut lhs = h;
        for i in 0..6 {
            lhs[(i, i)] += damping * h[(i, i)].max(1e-12);
        }
        let Some(step) = lhs.cholesky().map(|c| -c.solve(&b)) else {
            damping = (damping * 10.0).max(1e-6);
            rejections += 1;
            if rejections >= params.max_rejections {
                return Err(Error::NonDecreasingCost);
            }
            continue;
        };

        // Decrease predicted by the quadratic model. Below the rounding floor
        // of the cost no step can be verified as descent, so stop there too.
        let predicted = -b.dot(&step);
        if step.norm() < params.step_tolerance || predicted <= COST_ROUNDING * cost {
            let candidate = pose.left_update(&step);
            let c = cost_at(&candidate);
            if c <= cost {
                pose = candidate;
                cost = c;
            }
            converged = true;
            break;
        }

        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=params.max_halvings {
            let candidate = pose.left_update(&(step * scale));
            let c = cost_at(&candidate);
            if c <= cost {
                pose = candidate;
                cost = c;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if accepted {
            rejections = 0;
            damping = if damping > 1e-9 { damping * 0.1 } else { 0.0 };
        } else {
            rejections += 1;
            if rejections >= params.max_rejections {
                return Err(Error::NonDecreasingCost);
            }
            damping = (damping * 10.0).max(1e-6);
        }
    }

    Ok(RegistrationResult {
        pose,
        inliers: (0..pairs.len()).collect(),
        final_cost: cost,
        converged,
        iterations,
        diverged: false,
    })
}
