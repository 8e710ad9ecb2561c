//! Motion-clip ingestion, procedural synthesis, window extraction and
//! on-the-fly training-sample assembly with random cameras.

mod mclip;
mod procedural;

pub use mclip::{clip_from_bytes, clip_to_bytes, load_clip, save_clip};
pub use procedural::{generate_procedural_clip, generate_procedural_clip_for_task, TASKS};

use crate::geometry::{
    self, build_root_frame, mid_hip, normalize_2d, project, sample_camera, segment_lengths,
    CameraIntrinsics, CameraPose, CameraRanges, Joints2d, Joints3d, PriorK, RootFrame,
    SegmentLengths,
};
use crate::rng::Rng;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Temporal window length processed by the lifter.
pub const WINDOW_LEN: usize = 13;

/// Index of the central frame in a window.
pub const CENTRAL_FRAME: usize = WINDOW_LEN / 2;

/// Fixed scale for the segment-length prior: lengths are in meters and
/// divided by 1 m, so values stay in (0, 1) for plausible humans.
pub const SEGMENT_SCALE_M: f64 = 1.0;

/// Maximum camera re-draws before a window is abandoned.
pub const CAMERA_RETRIES: u32 = 16;

/// A subject's 3D joint trajectory in world meters.
///
/// Coordinates are held as f64 but always carry f32 precision (the on-disk
/// precision), so save/load round-trips are bit-identical.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub subject_id: String,
    pub task_label: String,
    pub fps: f32,
    pub frames: Vec<Joints3d>,
}

impl MotionClip {
    /// Builds a clip, rounding every coordinate through f32.
    pub fn new(
        subject_id: String,
        task_label: String,
        fps: f32,
        mut frames: Vec<Joints3d>,
    ) -> Self {
        for frame in &mut frames {
            for p in frame.iter_mut() {
                for c in 0..3 {
                    p[c] = p[c] as f32 as f64;
                }
            }
        }
        MotionClip {
            subject_id,
            task_label,
            fps,
            frames,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Plausibility warnings: windows too short for training, segment
    /// lengths drifting more than 5% across the clip.
    pub fn validate(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.frames.len() < WINDOW_LEN {
            warnings.push(format!(
                "clip has {} frames; windows need {WINDOW_LEN}",
                self.frames.len()
            ));
            return warnings;
        }
        let reference = segment_lengths(&self.frames[self.frames.len() / 2]);
        for (f, frame) in self.frames.iter().enumerate() {
            let s = segment_lengths(frame);
            for (i, (a, b)) in s.0.iter().zip(&reference.0).enumerate() {
                if b.abs() > 1e-9 && ((a - b) / b).abs() > 0.05 {
                    warnings.push(format!(
                        "frame {f}: segment {i} drifts {:.1}% from the central frame",
                        100.0 * ((a - b) / b).abs()
                    ));
                    return warnings;
                }
            }
        }
        warnings
    }
}

/// Which priors are zeroed before the model sees them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskState {
    pub camera_masked: bool,
    pub bones_masked: bool,
}

impl MaskState {
    pub const FULL_PRIORS: MaskState = MaskState {
        camera_masked: false,
        bones_masked: false,
    };
    pub const CAMERA_MASKED: MaskState = MaskState {
        camera_masked: true,
        bones_masked: false,
    };
    pub const BONES_MASKED: MaskState = MaskState {
        camera_masked: false,
        bones_masked: true,
    };
    pub const NO_PRIORS: MaskState = MaskState {
        camera_masked: true,
        bones_masked: true,
    };

    /// The four ablation settings, in report-column order.
    pub const ALL_MODES: [MaskState; 4] = [
        MaskState::FULL_PRIORS,
        MaskState::CAMERA_MASKED,
        MaskState::BONES_MASKED,
        MaskState::NO_PRIORS,
    ];

    pub fn label(&self) -> &'static str {
        match (self.camera_masked, self.bones_masked) {
            (false, false) => "full_priors",
            (true, false) => "camera_masked",
            (false, true) => "bones_masked",
            (true, true) => "no_priors",
        }
    }

    pub fn from_label(label: &str) -> Option<MaskState> {
        MaskState::ALL_MODES
            .iter()
            .copied()
            .find(|m| m.label() == label)
    }
}

/// One training/evaluation example.
///
/// `k` and `s` are the (possibly zeroed) model inputs; the `gt_*` fields
/// always carry the unmasked ground truth for loss computation.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// T frames of normalized 2D keypoints.
    pub x2d: Vec<Joints2d>,
    /// Camera prior as fed to the model (zero when camera_masked).
    pub k: PriorK,
    /// Normalized segment-length prior (zero when bones_masked).
    pub s: SegmentLengths,
    /// Ground-truth 3D window in the root frame, mid-hip at the origin.
    pub gt3d_root: Vec<Joints3d>,
    pub gt_intrinsics: CameraIntrinsics,
    pub gt_pose: CameraPose,
    pub gt_root: RootFrame,
    /// Unmasked ground-truth segment lengths (meters) for the bone loss.
    pub gt_segments: SegmentLengths,
    pub mask: MaskState,
    pub task_label: String,
}

impl WindowSample {
    /// The same sample under a different masking mode. Only the prior
    /// vectors change; geometry and ground truth are untouched.
    pub fn with_mask(&self, mask: MaskState) -> WindowSample {
        let mut out = self.clone();
        out.mask = mask;
        out.k = if mask.camera_masked {
            PriorK([0.0; 3])
        } else {
            PriorK::from_intrinsics(&self.gt_intrinsics)
        };
        out.s = if mask.bones_masked {
            SegmentLengths([0.0; 6])
        } else {
            SegmentLengths(self.gt_segments.0.map(|v| v / SEGMENT_SCALE_M))
        };
        out
    }
}

/// Uniform random 13-frame window; returns the window and the clip index of
/// its central frame.
pub fn sample_window(rng: &mut Rng, clip: &MotionClip) -> Result<(Vec<Joints3d>, usize)> {
    let max_start = clip
        .frames
        .len()
        .checked_sub(WINDOW_LEN)
        .ok_or(Error::ClipTooShort {
            frames: clip.frames.len(),
            needed: WINDOW_LEN,
        })?;
    window_at(clip, rng.below(max_start as u64 + 1) as usize)
}

/// The window starting at a fixed frame index.
pub fn window_at(clip: &MotionClip, start: usize) -> Result<(Vec<Joints3d>, usize)> {
    if clip.frames.len() < WINDOW_LEN || start > clip.frames.len() - WINDOW_LEN {
        return Err(Error::ClipTooShort {
            frames: clip.frames.len(),
            needed: start + WINDOW_LEN,
        });
    }
    Ok((
        clip.frames[start..start + WINDOW_LEN].to_vec(),
        start + CENTRAL_FRAME,
    ))
}

/// Full sample-assembly pipeline: window → camera → projection →
/// normalization → root frame → priors → masking.
///
/// The camera aims at the central-frame mid-hip and is held fixed across the
/// window; a camera that puts any joint behind the image plane is redrawn up
/// to [`CAMERA_RETRIES`] times.
pub fn synthesize_sample(
    rng: &mut Rng,
    clip: &MotionClip,
    mask: MaskState,
    ranges: &CameraRanges,
) -> Result<WindowSample> {
    let (window, _central) = sample_window(rng, clip)?;
    synthesize_sample_for_window(rng, &window, &clip.task_label, mask, ranges)
}

/// Same as [`synthesize_sample`] but over an explicit window (used when the
/// window list is enumerated by the training loop).
pub fn synthesize_sample_for_window(
    rng: &mut Rng,
    window: &[Joints3d],
    task_label: &str,
    mask: MaskState,
    ranges: &CameraRanges,
) -> Result<WindowSample> {
    let target = mid_hip(&window[CENTRAL_FRAME]);

    let mut projected = None;
    for _ in 0..CAMERA_RETRIES {
        let (cam, pose) = sample_camera(rng, target, ranges);
        match project(window, &cam, &pose) {
            Ok(pix) => {
                projected = Some((cam, pose, pix));
                break;
            }
            Err(_) => continue,
        }
    }
    let Some((cam, pose, pix)) = projected else {
        return Err(Error::CameraRejected {
            retries: CAMERA_RETRIES,
        });
    };

    let x2d = normalize_2d(&pix, &cam);
    let root = build_root_frame(window)?;
    let gt3d_root = geometry::to_root(window, &root);
    let gt_segments = segment_lengths(&window[CENTRAL_FRAME]);

    let k = if mask.camera_masked {
        PriorK([0.0; 3])
    } else {
        PriorK::from_intrinsics(&cam)
    };
    let s = if mask.bones_masked {
        SegmentLengths([0.0; 6])
    } else {
        SegmentLengths(gt_segments.0.map(|v| v / SEGMENT_SCALE_M))
    };

    Ok(WindowSample {
        x2d,
        k,
        s,
        gt3d_root,
        gt_intrinsics: cam,
        gt_pose: pose,
        gt_root: root,
        gt_segments,
        mask,
        task_label: task_label.to_string(),
    })
}

/// Train/val split tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    pub task_label: String,
}

/// Camera / image synthesis parameters, echoed into every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisParams {
    pub image_width_px: f64,
    pub image_height_px: f64,
    pub focal_range_px: [f64; 2],
    pub principal_offset_frac: f64,
    pub distance_range_m: [f64; 2],
    pub elevation_range_deg: [f64; 2],
}

impl Default for SynthesisParams {
    fn default() -> Self {
        let r = CameraRanges::default();
        SynthesisParams {
            image_width_px: r.width_px,
            image_height_px: r.height_px,
            focal_range_px: [r.f_px.0, r.f_px.1],
            principal_offset_frac: r.principal_offset_frac,
            distance_range_m: [r.distance_m.0, r.distance_m.1],
            elevation_range_deg: [r.elevation_deg.0, r.elevation_deg.1],
        }
    }
}

impl SynthesisParams {
    pub fn camera_ranges(&self) -> CameraRanges {
        CameraRanges {
            width_px: self.image_width_px,
            height_px: self.image_height_px,
            f_px: (self.focal_range_px[0], self.focal_range_px[1]),
            principal_offset_frac: self.principal_offset_frac,
            distance_m: (self.distance_range_m[0], self.distance_range_m[1]),
            elevation_deg: (self.elevation_range_deg[0], self.elevation_range_deg[1]),
        }
    }
}

/// Clip list with split tags, the synthesis seed and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub train_fraction: f64,
    pub synthesis: SynthesisParams,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<DatasetManifest> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

/// Clip-level train/val split, stratified by task label where counts allow.
///
/// A clip never appears in both splits; every task with at least two clips
/// appears in both splits when the validation budget permits.
pub fn split_manifest(
    clips: &[(String, String)],
    train_fraction: f64,
    seed: u64,
    synthesis: SynthesisParams,
) -> Result<DatasetManifest> {
    if clips.len() < 2 {
        return Err(Error::TooFewClips {
            got: clips.len(),
            needed: 2,
        });
    }
    if !(0.0..1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = clips.len();
    let val_target = ((n as f64 * (1.0 - train_fraction)).round() as usize)
        .max(1)
        .min(n - 1);

    // Group clip indices by task; BTreeMap gives a deterministic task order.
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, task)) in clips.iter().enumerate() {
        by_task.entry(task.as_str()).or_default().push(i);
    }
    let mut rng = Rng::derive(seed, "split", &[]);
    for group in by_task.values_mut() {
        rng.shuffle(group);
    }

    // Largest-remainder allocation of validation slots, each task capped at
    // size-1 so it keeps at least one training clip.
    struct Alloc<'a> {
        task: &'a str,
        size: usize,
        val: usize,
        remainder: f64,
    }
    let mut allocs: Vec<Alloc> = by_task
        .iter()
        .map(|(task, group)| {
            let quota = val_target as f64 * group.len() as f64 / n as f64;
            let base = (quota.floor() as usize).min(group.len().saturating_sub(1));
            Alloc {
                task,
                size: group.len(),
                val: base,
                remainder: quota - quota.floor(),
            }
        })
        .collect();
    let mut assigned: usize = allocs.iter().map(|a| a.val).sum();

    // First make sure multi-clip tasks reach the validation split.
    let mut order: Vec<usize> = (0..allocs.len()).collect();
    order.sort_by(|&a, &b| {
        allocs[b]
            .remainder
            .partial_cmp(&allocs[a].remainder)
            .unwrap()
            .then(allocs[a].task.cmp(allocs[b].task))
    });
    for &i in &order {
        if assigned >= val_target {
            break;
        }
        if allocs[i].size >= 2 && allocs[i].val == 0 {
            allocs[i].val += 1;
            assigned += 1;
        }
    }
    // Then spend the rest of the budget by largest remainder.
    while assigned < val_target {
        let mut progressed = false;
        for &i in &order {
            if assigned >= val_target {
                break;
            }
            if allocs[i].val < allocs[i].size.saturating_sub(1) {
                allocs[i].val += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    // If the keep-one-train-clip caps exhausted the candidates (many
    // single-clip tasks), relax them: an intact validation split beats
    // per-task stratification.
    while assigned < val_target {
        let mut progressed = false;
        for &i in &order {
            if assigned >= val_target {
                break;
            }
            if allocs[i].val < allocs[i].size {
                allocs[i].val += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut split_of = vec![Split::Train; n];
    for alloc in &allocs {
        let group = &by_task[alloc.task];
        for &clip_idx in group.iter().take(alloc.val) {
            split_of[clip_idx] = Split::Val;
        }
    }

    Ok(DatasetManifest {
        seed,
        train_fraction,
        synthesis,
        entries: clips
            .iter()
            .zip(&split_of)
            .map(|((path, task), &split)| ManifestEntry {
                path: path.clone(),
                split,
                task_label: task.clone(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clips_with_tasks(counts: &[(&str, usize)]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (task, n) in counts {
            for i in 0..*n {
                out.push((format!("{task}_{i}.mclip"), task.to_string()));
            }
        }
        out
    }

    #[test]
    fn ten_clips_split_nine_one() {
        let clips = clips_with_tasks(&[("walk", 10)]);
        let m = split_manifest(&clips, 0.9, 7, SynthesisParams::default()).unwrap();
        assert_eq!(m.split_entries(Split::Train).len(), 9);
        assert_eq!(m.split_entries(Split::Val).len(), 1);
    }

    #[test]
    fn single_clip_errors() {
        let clips = clips_with_tasks(&[("walk", 1)]);
        assert!(matches!(
            split_manifest(&clips, 0.9, 7, SynthesisParams::default()),
            Err(Error::TooFewClips { got: 1, .. })
        ));
    }

    #[test]
    fn multi_clip_tasks_reach_both_splits() {
        let clips = clips_with_tasks(&[("walk", 20), ("squat", 20), ("kick", 20), ("pour", 20)]);
        let m = split_manifest(&clips, 0.9, 3, SynthesisParams::default()).unwrap();
        for task in ["walk", "squat", "kick", "pour"] {
            let train = m
                .entries
                .iter()
                .any(|e| e.task_label == task && e.split == Split::Train);
            let val = m
                .entries
                .iter()
                .any(|e| e.task_label == task && e.split == Split::Val);
            assert!(train && val, "task {task} missing from a split");
        }
        assert_eq!(m.split_entries(Split::Val).len(), 8);
    }

    #[test]
    fn split_is_deterministic() {
        let clips = clips_with_tasks(&[("walk", 7), ("kick", 6)]);
        let a = split_manifest(&clips, 0.9, 42, SynthesisParams::default()).unwrap();
        let b = split_manifest(&clips, 0.9, 42, SynthesisParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_clip_in_both_splits_and_single_clip_tasks_stay_in_train() {
        let clips = clips_with_tasks(&[("walk", 3), ("kick", 2), ("solo", 1)]);
        let m = split_manifest(&clips, 0.7, 1, SynthesisParams::default()).unwrap();
        let train = m.split_entries(Split::Train).len();
        let val = m.split_entries(Split::Val).len();
        assert_eq!(train + val, clips.len());
        assert!(m
            .entries
            .iter()
            .all(|e| e.task_label != "solo" || e.split == Split::Train));
    }

    mod windows {
        use super::super::*;
        use nalgebra::Vector3;

        fn straight_clip(frames: usize) -> MotionClip {
            let data: Vec<Joints3d> = (0..frames)
                .map(|t| {
                    let mut f = [Vector3::zeros(); crate::geometry::JOINT_COUNT];
                    for (j, p) in f.iter_mut().enumerate() {
                        *p = Vector3::new(t as f64, j as f64, 0.0);
                    }
                    f
                })
                .collect();
            MotionClip::new("s".into(), "walk".into(), 30.0, data)
        }

        #[test]
        fn window_of_exact_length_clip_is_whole_clip() {
            let clip = straight_clip(13);
            let mut rng = Rng::seed_from_u64(0);
            let (w, central) = sample_window(&mut rng, &clip).unwrap();
            assert_eq!(w.len(), 13);
            assert_eq!(central, 6);
            assert_eq!(w[0], clip.frames[0]);
        }

        #[test]
        fn starts_cover_range_uniformly() {
            let clip = straight_clip(100);
            let mut rng = Rng::seed_from_u64(1);
            let mut counts = vec![0usize; 88];
            for _ in 0..10_000 {
                let (w, central) = sample_window(&mut rng, &clip).unwrap();
                let start = w[0][0].x as usize;
                assert!(start <= 87);
                assert_eq!(central, start + 6);
                counts[start] += 1;
            }
            // Chi-squared uniformity over 88 bins; critical value for 87 dof
            // at p = 0.01 is 121.0.
            let expected = 10_000.0 / 88.0;
            let chi2: f64 = counts
                .iter()
                .map(|&c| {
                    let d = c as f64 - expected;
                    d * d / expected
                })
                .sum();
            assert!(chi2 < 121.0, "chi2 {chi2}");
        }

        #[test]
        fn short_clip_errors() {
            let clip = straight_clip(12);
            let mut rng = Rng::seed_from_u64(0);
            assert!(matches!(
                sample_window(&mut rng, &clip),
                Err(Error::ClipTooShort { frames: 12, .. })
            ));
        }
    }

    mod synthesis {
        use super::super::*;
        use crate::geometry::{denormalize_2d, from_root};

        fn test_clip(seed: u64) -> MotionClip {
            let mut rng = Rng::seed_from_u64(seed);
            generate_procedural_clip(&mut rng, 2.0, 30.0).unwrap()
        }

        #[test]
        fn masked_sample_has_zero_priors_and_intact_gt() {
            let clip = test_clip(0);
            let mut rng = Rng::seed_from_u64(5);
            let s = synthesize_sample(
                &mut rng,
                &clip,
                MaskState::NO_PRIORS,
                &CameraRanges::default(),
            )
            .unwrap();
            assert_eq!(s.k.0, [0.0; 3]);
            assert_eq!(s.s.0, [0.0; 6]);
            assert!(s.gt_intrinsics.f_px > 0.0);
            assert!(s.gt_segments.0.iter().all(|&v| v > 0.0));
        }

        #[test]
        fn reprojection_self_consistency() {
            // Mapping gt3d back to world and through the GT camera must
            // reproduce the stored 2D observations.
            let clip = test_clip(1);
            for seed in 0..20 {
                let mut rng = Rng::seed_from_u64(seed);
                let s = synthesize_sample(
                    &mut rng,
                    &clip,
                    MaskState::FULL_PRIORS,
                    &CameraRanges::default(),
                )
                .unwrap();
                let world = from_root(&s.gt3d_root, &s.gt_root);
                let pix = project(&world, &s.gt_intrinsics, &s.gt_pose).unwrap();
                let obs_pix = denormalize_2d(&s.x2d, &s.gt_intrinsics);
                for (a, b) in pix.iter().zip(&obs_pix) {
                    for (pa, pb) in a.iter().zip(b.iter()) {
                        let du = (pa[0] - pb[0]).abs();
                        let dv = (pa[1] - pb[1]).abs();
                        assert!(du < 1e-3 && dv < 1e-3, "{du} {dv}");
                        assert!(du / s.gt_intrinsics.width_px < 1e-4);
                    }
                }
            }
        }

        #[test]
        fn same_seed_same_sample_bitwise() {
            let clip = test_clip(2);
            let a = synthesize_sample(
                &mut Rng::seed_from_u64(33),
                &clip,
                MaskState::CAMERA_MASKED,
                &CameraRanges::default(),
            )
            .unwrap();
            let b = synthesize_sample(
                &mut Rng::seed_from_u64(33),
                &clip,
                MaskState::CAMERA_MASKED,
                &CameraRanges::default(),
            )
            .unwrap();
            assert_eq!(a.x2d, b.x2d);
            assert_eq!(a.gt3d_root, b.gt3d_root);
            assert_eq!(a.k, b.k);
            assert_eq!(a.s, b.s);
        }

        #[test]
        fn masking_changes_only_prior_vectors() {
            let clip = test_clip(3);
            let full = synthesize_sample(
                &mut Rng::seed_from_u64(44),
                &clip,
                MaskState::FULL_PRIORS,
                &CameraRanges::default(),
            )
            .unwrap();
            for mode in MaskState::ALL_MODES {
                let m = synthesize_sample(
                    &mut Rng::seed_from_u64(44),
                    &clip,
                    mode,
                    &CameraRanges::default(),
                )
                .unwrap();
                assert_eq!(full.x2d, m.x2d);
                assert_eq!(full.gt3d_root, m.gt3d_root);
                assert_eq!(full.gt_pose, m.gt_pose);
                assert_eq!(full.gt_intrinsics, m.gt_intrinsics);
                assert_eq!(m.k.0 == [0.0; 3], mode.camera_masked);
                assert_eq!(m.s.0 == [0.0; 6], mode.bones_masked);
                // with_mask reproduces the same prior vectors.
                let remasked = full.with_mask(mode);
                assert_eq!(remasked.k, m.k);
                assert_eq!(remasked.s, m.s);
            }
        }

        #[test]
        fn unmasked_prior_equals_gt_segments_exactly() {
            let clip = test_clip(4);
            let s = synthesize_sample(
                &mut Rng::seed_from_u64(55),
                &clip,
                MaskState::FULL_PRIORS,
                &CameraRanges::default(),
            )
            .unwrap();
            for (prior, gt) in s.s.0.iter().zip(&s.gt_segments.0) {
                assert_eq!(*prior, gt / SEGMENT_SCALE_M);
            }
        }

        #[test]
        fn midhip_is_origin_in_root_frame() {
            let clip = test_clip(5);
            let s = synthesize_sample(
                &mut Rng::seed_from_u64(66),
                &clip,
                MaskState::FULL_PRIORS,
                &CameraRanges::default(),
            )
            .unwrap();
            for frame in &s.gt3d_root {
                assert!(mid_hip(frame).norm() < 1e-9);
            }
        }
    }
}
