//! Pinhole cameras, random camera sampling, perspective projection, 2D
//! normalization, pelvis-centered root frames and segment lengths.
//!
//! Everything here is pure f64 math over value types; any number of threads
//! may call these functions concurrently.

use crate::rng::Rng;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// Number of joints in the canonical skeleton.
pub const JOINT_COUNT: usize = 12;

/// Minimum camera-frame depth for a valid projection, in meters.
pub const MIN_DEPTH_M: f64 = 0.05;

/// Canonical joint enumeration. All arrays are indexed in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum Joint {
    LShoulder = 0,
    RShoulder = 1,
    LElbow = 2,
    RElbow = 3,
    LWrist = 4,
    RWrist = 5,
    LHip = 6,
    RHip = 7,
    LKnee = 8,
    RKnee = 9,
    LAnkle = 10,
    RAnkle = 11,
}

impl Joint {
    pub const ALL: [Joint; JOINT_COUNT] = [
        Joint::LShoulder,
        Joint::RShoulder,
        Joint::LElbow,
        Joint::RElbow,
        Joint::LWrist,
        Joint::RWrist,
        Joint::LHip,
        Joint::RHip,
        Joint::LKnee,
        Joint::RKnee,
        Joint::LAnkle,
        Joint::RAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::LShoulder => "l_shoulder",
            Joint::RShoulder => "r_shoulder",
            Joint::LElbow => "l_elbow",
            Joint::RElbow => "r_elbow",
            Joint::LWrist => "l_wrist",
            Joint::RWrist => "r_wrist",
            Joint::LHip => "l_hip",
            Joint::RHip => "r_hip",
            Joint::LKnee => "l_knee",
            Joint::RKnee => "r_knee",
            Joint::LAnkle => "l_ankle",
            Joint::RAnkle => "r_ankle",
        }
    }
}

/// The six fixed joint pairs whose lengths form the anthropometric prior:
/// left-limb segments plus shoulder and hip widths.
pub const SEGMENT_PAIRS: [(Joint, Joint); 6] = [
    (Joint::LShoulder, Joint::LElbow),
    (Joint::LElbow, Joint::LWrist),
    (Joint::LHip, Joint::LKnee),
    (Joint::LKnee, Joint::LAnkle),
    (Joint::LShoulder, Joint::RShoulder),
    (Joint::LHip, Joint::RHip),
];

/// One frame of 3D joint positions (meters), canonical joint order.
pub type Joints3d = [Vector3<f64>; JOINT_COUNT];

/// One frame of 2D joint positions (pixels or normalized).
pub type Joints2d = [[f64; 2]; JOINT_COUNT];

/// Pinhole intrinsics in pixels, square pixels (fx = fy), zero skew.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub f_px: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub width_px: f64,
    pub height_px: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.f_px <= 0.0
            || !(0.0..self.width_px).contains(&self.cx_px)
            || !(0.0..self.height_px).contains(&self.cy_px)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid intrinsics: f={} c=({}, {}) image {}x{}",
                self.f_px, self.cx_px, self.cy_px, self.width_px, self.height_px
            )));
        }
        Ok(())
    }
}

/// World-to-camera rigid transform: `x_cam = R · x_world + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    /// Largest entry of `RᵀR - I` plus the determinant defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let mut defect = (gram - Matrix3::identity()).abs().max();
        defect = defect.max((self.rotation.determinant() - 1.0).abs());
        defect
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Normalized camera-intrinsics prior `k ∈ R³`:
/// `[f/width, (cx - width/2)/width, (cy - height/2)/height]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorK(pub [f64; 3]);

impl PriorK {
    pub fn from_intrinsics(cam: &CameraIntrinsics) -> Self {
        PriorK([
            cam.f_px / cam.width_px,
            (cam.cx_px - cam.width_px / 2.0) / cam.width_px,
            (cam.cy_px - cam.height_px / 2.0) / cam.height_px,
        ])
    }

    /// Exact inverse of [`PriorK::from_intrinsics`] given the image size.
    pub fn to_intrinsics(&self, width_px: f64, height_px: f64) -> CameraIntrinsics {
        CameraIntrinsics {
            f_px: self.0[0] * width_px,
            cx_px: self.0[1] * width_px + width_px / 2.0,
            cy_px: self.0[2] * height_px + height_px / 2.0,
            width_px,
            height_px,
        }
    }
}

/// Segment lengths in meters over [`SEGMENT_PAIRS`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentLengths(pub [f64; 6]);

impl SegmentLengths {
    /// Plausibility warnings (not hard errors): non-positive entries or
    /// segments longer than 1 m.
    pub fn implausible(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        for (i, &(a, b)) in SEGMENT_PAIRS.iter().enumerate() {
            let len = self.0[i];
            if len <= 0.0 {
                warnings.push(format!(
                    "segment {}-{} has non-positive length {len}",
                    a.name(),
                    b.name()
                ));
            } else if len >= 1.0 {
                warnings.push(format!(
                    "segment {}-{} is implausibly long: {len:.3} m",
                    a.name(),
                    b.name()
                ));
            }
        }
        warnings
    }
}

/// Pelvis-aligned root frame: static rotation from the central frame plus a
/// per-frame mid-hip origin.
#[derive(Clone, Debug, PartialEq)]
pub struct RootFrame {
    /// World-to-root rotation.
    pub rotation: Matrix3<f64>,
    /// Mid-hip position (world, meters) for each frame of the window.
    pub origins: Vec<Vector3<f64>>,
}

/// Sampling ranges for random synthetic cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRanges {
    pub width_px: f64,
    pub height_px: f64,
    pub f_px: (f64, f64),
    /// Principal-point offset from the image center, as a fraction of width,
    /// applied independently per axis.
    pub principal_offset_frac: f64,
    pub distance_m: (f64, f64),
    pub elevation_deg: (f64, f64),
}

impl Default for CameraRanges {
    fn default() -> Self {
        CameraRanges {
            width_px: 1920.0,
            height_px: 1080.0,
            f_px: (600.0, 1800.0),
            principal_offset_frac: 0.05,
            distance_m: (1.5, 3.5),
            elevation_deg: (-15.0, 45.0),
        }
    }
}

pub fn mid_hip(frame: &Joints3d) -> Vector3<f64> {
    (frame[Joint::LHip.index()] + frame[Joint::RHip.index()]) / 2.0
}

pub fn mid_shoulder(frame: &Joints3d) -> Vector3<f64> {
    (frame[Joint::LShoulder.index()] + frame[Joint::RShoulder.index()]) / 2.0
}

/// Full-perspective projection of a window of world-space joints to pixels.
///
/// Fails (for caller-side camera resampling) if any joint has camera-frame
/// depth below [`MIN_DEPTH_M`].
pub fn project(
    window: &[Joints3d],
    cam: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vec<Joints2d>> {
    let mut out = Vec::with_capacity(window.len());
    for (f, frame) in window.iter().enumerate() {
        let mut px = [[0.0; 2]; JOINT_COUNT];
        for (j, p) in frame.iter().enumerate() {
            let c = pose.rotation * p + pose.translation;
            if c.z <= MIN_DEPTH_M {
                return Err(Error::DegenerateGeometry {
                    frame: f,
                    what: format!(
                        "joint {} at depth {:.3} m is behind the camera",
                        Joint::ALL[j].name(),
                        c.z
                    ),
                });
            }
            px[j] = [
                cam.f_px * c.x / c.z + cam.cx_px,
                cam.f_px * c.y / c.z + cam.cy_px,
            ];
        }
        out.push(px);
    }
    Ok(out)
}

/// Pixel coordinates to normalized coordinates; both axes are divided by the
/// image width so aspect ratio is preserved.
pub fn normalize_2d(pix: &[Joints2d], cam: &CameraIntrinsics) -> Vec<Joints2d> {
    pix.iter()
        .map(|frame| {
            let mut out = [[0.0; 2]; JOINT_COUNT];
            for (j, p) in frame.iter().enumerate() {
                out[j] = [
                    (p[0] - cam.width_px / 2.0) / cam.width_px,
                    (p[1] - cam.height_px / 2.0) / cam.width_px,
                ];
            }
            out
        })
        .collect()
}

/// Inverse of [`normalize_2d`].
pub fn denormalize_2d(norm: &[Joints2d], cam: &CameraIntrinsics) -> Vec<Joints2d> {
    norm.iter()
        .map(|frame| {
            let mut out = [[0.0; 2]; JOINT_COUNT];
            for (j, p) in frame.iter().enumerate() {
                out[j] = [
                    p[0] * cam.width_px + cam.width_px / 2.0,
                    p[1] * cam.width_px + cam.height_px / 2.0,
                ];
            }
            out
        })
        .collect()
}

/// Random camera aimed at `target`: distance, azimuth and elevation drawn
/// from `ranges`, optical axis through the target, roll zero (world-up
/// aligned), randomized intrinsics.
pub fn sample_camera(
    rng: &mut Rng,
    target: Vector3<f64>,
    ranges: &CameraRanges,
) -> (CameraIntrinsics, CameraPose) {
    let f_px = rng.uniform_range(ranges.f_px.0, ranges.f_px.1);
    let off = ranges.principal_offset_frac * ranges.width_px;
    let cx_px = ranges.width_px / 2.0 + rng.uniform_range(-off, off);
    let cy_px = ranges.height_px / 2.0 + rng.uniform_range(-off, off);
    let distance = rng.uniform_range(ranges.distance_m.0, ranges.distance_m.1);
    let azimuth = rng.uniform_range(0.0, std::f64::consts::TAU);
    let elevation = rng
        .uniform_range(ranges.elevation_deg.0, ranges.elevation_deg.1)
        .to_radians();

    let dir = Vector3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    );
    let center = target + distance * dir;

    // Look-at with y down in the image and zero roll. Elevation is capped
    // well below 90°, so the forward axis never degenerates against world-up.
    let z_axis = (target - center).normalize();
    let x_axis = z_axis.cross(&Vector3::z()).normalize();
    let y_axis = z_axis.cross(&x_axis);
    let rotation = Matrix3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        z_axis.transpose(),
    ]);
    let translation = -(rotation * center);

    (
        CameraIntrinsics {
            f_px,
            cx_px,
            cy_px,
            width_px: ranges.width_px,
            height_px: ranges.height_px,
        },
        CameraPose {
            rotation,
            translation,
        },
    )
}

/// Root frame from a window: per-frame mid-hip origin, static rotation from
/// the central frame (x along the hips, z up the spine, y completing the
/// right-handed triad).
pub fn build_root_frame(window: &[Joints3d]) -> Result<RootFrame> {
    let central = window.len() / 2;
    let frame = &window[central];
    let l_hip = frame[Joint::LHip.index()];
    let r_hip = frame[Joint::RHip.index()];
    let hip_axis = r_hip - l_hip;
    if hip_axis.norm() <= 1e-3 {
        return Err(Error::DegenerateGeometry {
            frame: central,
            what: format!("hips are coincident ({:.4} m apart)", hip_axis.norm()),
        });
    }
    let x_axis = hip_axis.normalize();
    let up_raw = mid_shoulder(frame) - mid_hip(frame);
    let z_raw = up_raw - x_axis * up_raw.dot(&x_axis);
    if z_raw.norm() <= 1e-6 {
        return Err(Error::DegenerateGeometry {
            frame: central,
            what: "spine direction is parallel to the hip axis".into(),
        });
    }
    let z_axis = z_raw.normalize();
    let y_axis = z_axis.cross(&x_axis).normalize();
    // Columns are the root axes in world coordinates; world->root is the
    // transpose.
    let basis = Matrix3::from_columns(&[x_axis, y_axis, z_axis]);
    Ok(RootFrame {
        rotation: basis.transpose(),
        origins: window.iter().map(mid_hip).collect(),
    })
}

/// World coordinates to root-frame coordinates (per-frame origin shift).
pub fn to_root(window: &[Joints3d], frame: &RootFrame) -> Vec<Joints3d> {
    window
        .iter()
        .zip(&frame.origins)
        .map(|(joints, origin)| {
            let mut out = *joints;
            for p in out.iter_mut() {
                *p = frame.rotation * (*p - origin);
            }
            out
        })
        .collect()
}

/// Exact inverse of [`to_root`].
pub fn from_root(window: &[Joints3d], frame: &RootFrame) -> Vec<Joints3d> {
    let inv = frame.rotation.transpose();
    window
        .iter()
        .zip(&frame.origins)
        .map(|(joints, origin)| {
            let mut out = *joints;
            for p in out.iter_mut() {
                *p = inv * *p + origin;
            }
            out
        })
        .collect()
}

/// Euclidean distances over [`SEGMENT_PAIRS`] at one frame.
pub fn segment_lengths(frame: &Joints3d) -> SegmentLengths {
    let mut s = [0.0; 6];
    for (i, &(a, b)) in SEGMENT_PAIRS.iter().enumerate() {
        s[i] = (frame[a.index()] - frame[b.index()]).norm();
    }
    SegmentLengths(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cam() -> CameraIntrinsics {
        CameraIntrinsics {
            f_px: 1000.0,
            cx_px: 960.0,
            cy_px: 540.0,
            width_px: 1920.0,
            height_px: 1080.0,
        }
    }

    fn identity_pose() -> CameraPose {
        CameraPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn single_point_window(p: Vector3<f64>) -> Vec<Joints3d> {
        vec![[p; JOINT_COUNT]]
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let px = project(
            &single_point_window(Vector3::new(0.0, 0.0, 2.0)),
            &test_cam(),
            &identity_pose(),
        )
        .unwrap();
        assert_eq!(px[0][0], [960.0, 540.0]);
    }

    #[test]
    fn off_axis_point_pinhole_arithmetic() {
        // u = 960 + 1000 * 0.5 / 2 = 1210.
        let px = project(
            &single_point_window(Vector3::new(0.5, 0.0, 2.0)),
            &test_cam(),
            &identity_pose(),
        )
        .unwrap();
        assert_eq!(px[0][0], [1210.0, 540.0]);
    }

    #[test]
    fn doubling_focal_doubles_offsets() {
        let p = Vector3::new(0.3, -0.2, 1.7);
        let cam1 = test_cam();
        let mut cam2 = test_cam();
        cam2.f_px *= 2.0;
        let a = project(&single_point_window(p), &cam1, &identity_pose()).unwrap()[0][0];
        let b = project(&single_point_window(p), &cam2, &identity_pose()).unwrap()[0][0];
        assert!((2.0 * (a[0] - 960.0) - (b[0] - 960.0)).abs() < 1e-9);
        assert!((2.0 * (a[1] - 540.0) - (b[1] - 540.0)).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_rejected_with_frame_index() {
        let err = project(
            &single_point_window(Vector3::new(0.0, 0.0, -1.0)),
            &test_cam(),
            &identity_pose(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("frame 0"), "{err}");
    }

    #[test]
    fn normalize_center_is_origin() {
        let pix = vec![[[960.0, 540.0]; JOINT_COUNT]];
        let n = normalize_2d(&pix, &test_cam());
        assert_eq!(n[0][0], [0.0, 0.0]);
    }

    #[test]
    fn normalize_right_edge() {
        let pix = vec![[[1920.0, 540.0]; JOINT_COUNT]];
        let n = normalize_2d(&pix, &test_cam());
        assert_eq!(n[0][0], [0.5, 0.0]);
    }

    #[test]
    fn axis_point_normalizes_to_prior_k_components() {
        // normalize(project(axis point)) = (k1, k2 * height / width).
        let cam = CameraIntrinsics {
            f_px: 1234.0,
            cx_px: 1010.0,
            cy_px: 500.0,
            width_px: 1920.0,
            height_px: 1080.0,
        };
        let k = PriorK::from_intrinsics(&cam);
        let px = project(
            &single_point_window(Vector3::new(0.0, 0.0, 2.5)),
            &cam,
            &identity_pose(),
        )
        .unwrap();
        let n = normalize_2d(&px, &cam)[0][0];
        assert!((n[0] - k.0[1]).abs() < 1e-12);
        assert!((n[1] - k.0[2] * cam.height_px / cam.width_px).abs() < 1e-12);
    }

    #[test]
    fn prior_k_round_trips_exactly() {
        let cam = CameraIntrinsics {
            f_px: 845.5,
            cx_px: 992.25,
            cy_px: 513.75,
            width_px: 1920.0,
            height_px: 1080.0,
        };
        let k = PriorK::from_intrinsics(&cam);
        let back = k.to_intrinsics(1920.0, 1080.0);
        assert_eq!(cam, back);
    }

    #[test]
    fn sampled_cameras_respect_distance_and_orthonormality() {
        let mut rng = Rng::seed_from_u64(11);
        let ranges = CameraRanges::default();
        let target = Vector3::new(0.2, -0.4, 0.95);
        for _ in 0..2000 {
            let (cam, pose) = sample_camera(&mut rng, target, &ranges);
            cam.validate().unwrap();
            let d = (pose.camera_center() - target).norm();
            assert!((1.5..=3.5).contains(&d), "distance {d}");
            assert!(pose.orthonormality_defect() < 1e-6);
        }
    }

    #[test]
    fn azimuth_is_uniform_chi_squared() {
        let mut rng = Rng::seed_from_u64(5);
        let ranges = CameraRanges::default();
        let target = Vector3::zeros();
        const BINS: usize = 16;
        let mut counts = [0usize; BINS];
        let n = 10_000;
        for _ in 0..n {
            let (_, pose) = sample_camera(&mut rng, target, &ranges);
            let c = pose.camera_center() - target;
            let az = c.y.atan2(c.x).rem_euclid(std::f64::consts::TAU);
            let bin = ((az / std::f64::consts::TAU) * BINS as f64) as usize;
            counts[bin.min(BINS - 1)] += 1;
        }
        let expected = n as f64 / BINS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // Critical value of chi-squared with 15 dof at p = 0.01.
        assert!(chi2 < 30.578, "chi2 = {chi2}");
    }

    #[test]
    fn midhip_projects_to_principal_point_with_zero_offset() {
        let mut rng = Rng::seed_from_u64(3);
        let ranges = CameraRanges {
            principal_offset_frac: 0.0,
            ..CameraRanges::default()
        };
        let target = Vector3::new(0.3, 0.7, 0.9);
        for _ in 0..100 {
            let (cam, pose) = sample_camera(&mut rng, target, &ranges);
            let px = project(&single_point_window(target), &cam, &pose).unwrap()[0][0];
            assert!((px[0] - cam.cx_px).abs() < 1.0, "u off by {}", px[0] - cam.cx_px);
            assert!((px[1] - cam.cy_px).abs() < 1.0);
        }
    }

    /// Axis-aligned subject: hips along world x, spine along world z.
    fn t_pose_window() -> Vec<Joints3d> {
        let mut frame = [Vector3::zeros(); JOINT_COUNT];
        frame[Joint::LHip.index()] = Vector3::new(-0.15, 0.0, 0.95);
        frame[Joint::RHip.index()] = Vector3::new(0.15, 0.0, 0.95);
        frame[Joint::LShoulder.index()] = Vector3::new(-0.20, 0.0, 1.45);
        frame[Joint::RShoulder.index()] = Vector3::new(0.20, 0.0, 1.45);
        frame[Joint::LElbow.index()] = Vector3::new(-0.50, 0.0, 1.45);
        frame[Joint::RElbow.index()] = Vector3::new(0.50, 0.0, 1.45);
        frame[Joint::LWrist.index()] = Vector3::new(-0.76, 0.0, 1.45);
        frame[Joint::RWrist.index()] = Vector3::new(0.76, 0.0, 1.45);
        frame[Joint::LKnee.index()] = Vector3::new(-0.15, 0.0, 0.55);
        frame[Joint::RKnee.index()] = Vector3::new(0.15, 0.0, 0.55);
        frame[Joint::LAnkle.index()] = Vector3::new(-0.15, 0.0, 0.15);
        frame[Joint::RAnkle.index()] = Vector3::new(0.15, 0.0, 0.15);
        vec![frame; 13]
    }

    #[test]
    fn axis_aligned_subject_gives_identity_rotation() {
        let rf = build_root_frame(&t_pose_window()).unwrap();
        assert!((rf.rotation - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn root_frame_origin_is_midhip_every_frame() {
        let window = t_pose_window();
        let rf = build_root_frame(&window).unwrap();
        let rooted = to_root(&window, &rf);
        for frame in &rooted {
            assert!(mid_hip(frame).norm() < 1e-12);
        }
    }

    #[test]
    fn coincident_hips_error_names_frame() {
        let mut window = t_pose_window();
        let central = window.len() / 2;
        window[central][Joint::RHip.index()] = window[central][Joint::LHip.index()];
        let err = build_root_frame(&window).unwrap_err();
        assert!(err.to_string().contains("frame 6"), "{err}");
    }

    #[test]
    fn segment_lengths_of_degenerate_pose_flagged() {
        let frame = [Vector3::zeros(); JOINT_COUNT];
        let s = segment_lengths(&frame);
        assert_eq!(s.0, [0.0; 6]);
        assert_eq!(s.implausible().len(), 6);
    }

    #[test]
    fn segment_lengths_of_fixture_are_exact() {
        let frame = t_pose_window()[0];
        let s = segment_lengths(&frame);
        let expected = [0.3, 0.26, 0.4, 0.4, 0.4, 0.3];
        for (got, want) in s.0.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!(s.implausible().is_empty());
    }
}
