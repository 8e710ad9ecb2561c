//! The three-term training loss, built inside the autodiff graph:
//! MPJPE + bone-length deviation + λ·reprojection.

use crate::dataset::{WindowSample, CENTRAL_FRAME};
use crate::geometry::{denormalize_2d, MIN_DEPTH_M, SEGMENT_PAIRS};
use crate::tensor::{Graph, Node, Real};
use crate::Result;

/// Loss-term weighting. MPJPE and bone terms enter unweighted; the
/// pixel-space reprojection term is scaled down to balance against the
/// 3D-space terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_reproj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_reproj: 1e-2,
        }
    }
}

/// Handles to the assembled loss nodes. The part nodes are scalars for
/// logging; `total` is the optimization target.
pub struct LossNodes {
    pub total: Node,
    pub mpjpe: Node,
    pub bone: Node,
    pub reproj: Node,
    /// Predicted joints that needed depth clamping during reprojection
    /// (training proceeds; the count is logged).
    pub behind_camera: usize,
}

/// Per-sample MPJPE in meters: mean over `T·J` joints of the Euclidean
/// distance between prediction and ground truth. Returns a `[B]` node.
pub fn loss_mpjpe<F: Real>(
    g: &mut Graph<F>,
    pred: Node,
    samples: &[WindowSample],
) -> Result<Node> {
    let (b, t, j) = batch_dims(g, pred);
    let mut gt = Vec::with_capacity(b * t * j * 3);
    for sample in samples {
        for frame in &sample.gt3d_root {
            for joint in frame {
                gt.extend_from_slice(&[joint.x, joint.y, joint.z]);
            }
        }
    }
    let gt_node = g.constant_f64(vec![b, t, j, 3], &gt)?;
    let diff = g.sub(pred, gt_node)?;
    let flat = g.reshape(diff, vec![b, t * j, 3])?;
    let dist = g.norm_lastdim(flat)?;
    g.mean_axis(dist, 1)
}

/// Per-sample bone loss in meters: mean L1 deviation of the six segment
/// lengths at the central frame from the sample's ground truth. `[B]`.
pub fn loss_bone<F: Real>(g: &mut Graph<F>, pred: Node, samples: &[WindowSample]) -> Result<Node> {
    let (b, _t, j) = batch_dims(g, pred);
    let central = g.slice(pred, 1, CENTRAL_FRAME, 1)?;
    let central = g.reshape(central, vec![b, j, 3])?;
    let firsts: Vec<usize> = SEGMENT_PAIRS.iter().map(|&(a, _)| a.index()).collect();
    let seconds: Vec<usize> = SEGMENT_PAIRS.iter().map(|&(_, b)| b.index()).collect();
    let pa = g.index_select(central, 1, &firsts)?;
    let pb = g.index_select(central, 1, &seconds)?;
    let diff = g.sub(pa, pb)?;
    let lengths = g.norm_lastdim(diff)?;

    let mut gt = Vec::with_capacity(b * 6);
    for sample in samples {
        gt.extend_from_slice(&sample.gt_segments.0);
    }
    let gt_node = g.constant_f64(vec![b, 6], &gt)?;
    let dev = g.sub(lengths, gt_node)?;
    let dev = g.abs(dev);
    g.mean_axis(dev, 1)
}

/// Per-sample reprojection loss (dimensionless): predictions are mapped to
/// world space through the ground-truth root frame, projected through the
/// ground-truth camera, and compared to the observed pixels; the mean
/// per-joint pixel distance is divided by the image width.
///
/// The ground-truth camera is used regardless of masking. Joints that land
/// behind the camera have their depth clamped to [`MIN_DEPTH_M`] and are
/// counted, not fatal.
pub fn loss_reproj<F: Real>(
    g: &mut Graph<F>,
    pred: Node,
    samples: &[WindowSample],
) -> Result<(Node, usize)> {
    let (b, t, j) = batch_dims(g, pred);
    let n = t * j;

    // Root -> world: row vectors multiply the world->root matrix on the
    // right, then add the per-frame mid-hip origin.
    let mut rot = Vec::with_capacity(b * 9);
    let mut origins = Vec::with_capacity(b * n * 3);
    let mut cam_rot_t = Vec::with_capacity(b * 9);
    let mut cam_t = Vec::with_capacity(b * 3);
    let mut focal = Vec::with_capacity(b);
    let mut principal = Vec::with_capacity(b * 2);
    let mut obs_px = Vec::with_capacity(b * n * 2);
    let mut inv_width = Vec::with_capacity(b);
    for sample in samples {
        let r = &sample.gt_root.rotation;
        for row in 0..3 {
            for col in 0..3 {
                rot.push(r[(row, col)]);
            }
        }
        for origin in &sample.gt_root.origins {
            for _ in 0..j {
                origins.extend_from_slice(&[origin.x, origin.y, origin.z]);
            }
        }
        let rc = &sample.gt_pose.rotation;
        for row in 0..3 {
            for col in 0..3 {
                cam_rot_t.push(rc[(col, row)]);
            }
        }
        cam_t.extend_from_slice(&[
            sample.gt_pose.translation.x,
            sample.gt_pose.translation.y,
            sample.gt_pose.translation.z,
        ]);
        focal.push(sample.gt_intrinsics.f_px);
        principal.extend_from_slice(&[sample.gt_intrinsics.cx_px, sample.gt_intrinsics.cy_px]);
        for frame in denormalize_2d(&sample.x2d, &sample.gt_intrinsics) {
            for p in frame {
                obs_px.extend_from_slice(&p);
            }
        }
        inv_width.push(1.0 / sample.gt_intrinsics.width_px);
    }

    let flat = g.reshape(pred, vec![b, n, 3])?;
    let rot_node = g.constant_f64(vec![b, 3, 3], &rot)?;
    let world = g.matmul(flat, rot_node)?;
    let origin_node = g.constant_f64(vec![b, n, 3], &origins)?;
    let world = g.add(world, origin_node)?;

    let cam_rot_node = g.constant_f64(vec![b, 3, 3], &cam_rot_t)?;
    let cam = g.matmul(world, cam_rot_node)?;
    let cam_t_node = g.constant_f64(vec![b, 1, 3], &cam_t)?;
    let cam = g.add(cam, cam_t_node)?;

    let depth = g.slice(cam, 2, 2, 1)?;
    let behind_camera = g
        .value(depth)
        .data()
        .iter()
        .filter(|d| d.to_f64() <= MIN_DEPTH_M)
        .count();
    let depth = g.clamp_min(depth, F::from_f64(MIN_DEPTH_M));
    let xy = g.slice(cam, 2, 0, 2)?;
    let persp = g.div(xy, depth)?;
    let focal_node = g.constant_f64(vec![b, 1, 1], &focal)?;
    let scaled = g.mul(persp, focal_node)?;
    let principal_node = g.constant_f64(vec![b, 1, 2], &principal)?;
    let px = g.add(scaled, principal_node)?;

    let obs_node = g.constant_f64(vec![b, n, 2], &obs_px)?;
    let diff = g.sub(px, obs_node)?;
    let dist = g.norm_lastdim(diff)?;
    let mean_px = g.mean_axis(dist, 1)?;
    let inv_width_node = g.constant_f64(vec![b], &inv_width)?;
    let loss = g.mul(mean_px, inv_width_node)?;
    Ok((loss, behind_camera))
}

/// Batch-averaged total loss plus scalar part nodes for logging.
pub fn build_total_loss<F: Real>(
    g: &mut Graph<F>,
    pred: Node,
    samples: &[WindowSample],
    lw: &LossWeights,
) -> Result<LossNodes> {
    let mpjpe_b = loss_mpjpe(g, pred, samples)?;
    let bone_b = loss_bone(g, pred, samples)?;
    let (reproj_b, behind_camera) = loss_reproj(g, pred, samples)?;

    let sum = g.add(mpjpe_b, bone_b)?;
    let reproj_scaled = g.mul_scalar(reproj_b, F::from_f64(lw.lambda_reproj));
    let total_b = g.add(sum, reproj_scaled)?;

    Ok(LossNodes {
        total: g.mean_all(total_b),
        mpjpe: g.mean_all(mpjpe_b),
        bone: g.mean_all(bone_b),
        reproj: g.mean_all(reproj_b),
        behind_camera,
    })
}

fn batch_dims<F: Real>(g: &Graph<F>, pred: Node) -> (usize, usize, usize) {
    let s = g.value(pred).shape();
    (s[0], s[1], s[2])
}
