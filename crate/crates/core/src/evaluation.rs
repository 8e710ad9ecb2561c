//! Per-task MPJPE ablation reports (the shape of the expert/versatile
//! comparison tables), joint-trajectory export, and CPU latency
//! benchmarking.
//!
//! Evaluation never mutates weights; windows may be processed on several
//! threads, with results merged in window-index order so reports are
//! deterministic.

use crate::dataset::{
    window_at, DatasetManifest, MaskState, MotionClip, Split, WindowSample, CENTRAL_FRAME,
    WINDOW_LEN,
};
use crate::geometry::{CameraRanges, Joint, Joints3d, JOINT_COUNT};
use crate::model::{forward_batch, LifterInput, LifterWeights, ModelConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// MPJPE in millimeters of one window in a batched `[B, T, J, 3]`
/// prediction, against the ground-truth root-frame window.
pub fn batch_window_mpjpe_mm(pred: &Tensor<f32>, index: usize, gt: &[Joints3d]) -> f64 {
    let n = WINDOW_LEN * JOINT_COUNT;
    let base = index * n * 3;
    let data = pred.data();
    let mut sum = 0.0f64;
    for (t, frame) in gt.iter().enumerate() {
        for (j, joint) in frame.iter().enumerate() {
            let o = base + (t * JOINT_COUNT + j) * 3;
            let dx = data[o] as f64 - joint.x;
            let dy = data[o + 1] as f64 - joint.y;
            let dz = data[o + 2] as f64 - joint.z;
            sum += (dx * dx + dy * dy + dz * dz).sqrt();
        }
    }
    1000.0 * sum / n as f64
}

/// Mean and spread of per-window MPJPE for one (task, mode) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mpjpe_mean_mm: f64,
    /// Standard deviation of per-window MPJPE within the cell.
    pub mpjpe_std_mm: f64,
    pub sample_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_label: String,
    pub per_mode: BTreeMap<String, ModeStats>,
}

/// Per-task × per-mode MPJPE table plus count-weighted overall averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub model_id: String,
    /// Mode labels in column order.
    pub modes: Vec<String>,
    pub tasks: Vec<TaskMetrics>,
    pub overall: BTreeMap<String, ModeStats>,
    /// How the ± spread is defined, recorded in the report itself.
    pub std_definition: String,
}

impl AblationReport {
    /// Aligned plain-text table mirroring the per-task ablation layout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let task_w = self
            .tasks
            .iter()
            .map(|t| t.task_label.len())
            .chain(["Task".len(), "Average".len()])
            .max()
            .unwrap_or(8);
        let col_w = 16;
        out.push_str(&format!("{:<task_w$}", "Task"));
        for mode in &self.modes {
            out.push_str(&format!(" | {mode:>col_w$}"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(task_w + self.modes.len() * (col_w + 3)));
        out.push('\n');
        for task in &self.tasks {
            out.push_str(&format!("{:<task_w$}", task.task_label));
            for mode in &self.modes {
                let cell = &task.per_mode[mode];
                out.push_str(&format!(
                    " | {:>col_w$}",
                    format!("{:.1} ± {:.1}", cell.mpjpe_mean_mm, cell.mpjpe_std_mm)
                ));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<task_w$}", "Average"));
        for mode in &self.modes {
            let cell = &self.overall[mode];
            out.push_str(&format!(
                " | {:>col_w$}",
                format!("{:.1} ± {:.1}", cell.mpjpe_mean_mm, cell.mpjpe_std_mm)
            ));
        }
        out.push('\n');
        out
    }
}

/// Evaluation driver over the validation split of a manifest.
pub struct Evaluator<'a> {
    pub clips: &'a [MotionClip],
    pub manifest: &'a DatasetManifest,
    /// Seed for the fixed per-window validation cameras (must match the
    /// training seed for metrics to line up with the training log).
    pub seed: u64,
    pub window_stride: usize,
    pub batch_size: usize,
    pub threads: usize,
}

/// Per-window evaluation record, merged in window order.
struct WindowRecord {
    task_label: String,
    mpjpe_by_mode: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    /// Validation windows as (clip index, start frame) pairs.
    pub fn val_windows(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ci, entry) in self.manifest.entries.iter().enumerate() {
            if entry.split != Split::Val {
                continue;
            }
            let frames = self.clips[ci].frames.len();
            if frames < WINDOW_LEN {
                continue;
            }
            let mut start = 0;
            while start + WINDOW_LEN <= frames {
                out.push((ci, start));
                start += self.window_stride;
            }
        }
        out
    }

    /// The fixed validation sample for one window (camera depends only on
    /// the seed and the window identity, never on the epoch).
    pub fn validation_sample(&self, clip_idx: usize, start: usize) -> Result<WindowSample> {
        let ranges = self.manifest.synthesis.camera_ranges();
        fixed_camera_sample(self.seed, clip_idx, &self.clips[clip_idx], start, &ranges)
    }

    /// Per-task MPJPE under each masking mode.
    pub fn evaluate(
        &self,
        weights: &LifterWeights<f32>,
        cfg: &ModelConfig,
        modes: &[MaskState],
        model_id: &str,
    ) -> Result<AblationReport> {
        let windows = self.val_windows();
        if windows.is_empty() {
            return Err(Error::EmptyValidationSplit);
        }
        let predict = |inputs: &[LifterInput]| forward_batch(weights, cfg, inputs, false, None);
        self.evaluate_with(&predict, &windows, modes, model_id)
    }

    /// Same aggregation against an arbitrary predictor (testable without a
    /// trained model).
    pub fn evaluate_with(
        &self,
        predict: &(dyn Fn(&[LifterInput]) -> Result<Tensor<f32>> + Sync),
        windows: &[(usize, usize)],
        modes: &[MaskState],
        model_id: &str,
    ) -> Result<AblationReport> {
        if windows.is_empty() {
            return Err(Error::EmptyValidationSplit);
        }
        let threads = self.threads.max(1).min(windows.len());
        let records: Vec<WindowRecord> = if threads == 1 {
            self.eval_chunk(predict, windows, modes)?
        } else {
            // Contiguous chunks per thread; concatenation preserves window
            // order, so aggregation is deterministic.
            let chunk_len = windows.len().div_ceil(threads);
            let results: Vec<Result<Vec<WindowRecord>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = windows
                    .chunks(chunk_len)
                    .map(|chunk| scope.spawn(move || self.eval_chunk(predict, chunk, modes)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("eval worker")).collect()
            });
            let mut merged = Vec::with_capacity(windows.len());
            for r in results {
                merged.extend(r?);
            }
            merged
        };

        Ok(aggregate(records, modes, model_id))
    }

    fn eval_chunk(
        &self,
        predict: &(dyn Fn(&[LifterInput]) -> Result<Tensor<f32>> + Sync),
        windows: &[(usize, usize)],
        modes: &[MaskState],
    ) -> Result<Vec<WindowRecord>> {
        let mut records: Vec<WindowRecord> = windows
            .iter()
            .map(|&(ci, _)| WindowRecord {
                task_label: self.manifest.entries[ci].task_label.clone(),
                mpjpe_by_mode: Vec::with_capacity(modes.len()),
            })
            .collect();
        let samples: Vec<WindowSample> = windows
            .iter()
            .map(|&(ci, start)| self.validation_sample(ci, start))
            .collect::<Result<_>>()?;
        for mode in modes {
            for (chunk_start, batch) in samples.chunks(self.batch_size.max(1)).enumerate() {
                let masked: Vec<WindowSample> = batch.iter().map(|s| s.with_mask(*mode)).collect();
                let inputs: Vec<LifterInput> = masked.iter().map(LifterInput::from_sample).collect();
                let pred = predict(&inputs)?;
                for (i, s) in batch.iter().enumerate() {
                    let w = chunk_start * self.batch_size.max(1) + i;
                    records[w]
                        .mpjpe_by_mode
                        .push(batch_window_mpjpe_mm(&pred, i, &s.gt3d_root));
                }
            }
        }
        Ok(records)
    }
}

/// Validation sample with a camera fixed by (seed, clip, start).
pub fn fixed_camera_sample(
    seed: u64,
    clip_idx: usize,
    clip: &MotionClip,
    start: usize,
    ranges: &CameraRanges,
) -> Result<WindowSample> {
    let (window, _) = window_at(clip, start)?;
    let mut rng = Rng::derive(seed, "val-sample", &[clip_idx as u64, start as u64]);
    crate::dataset::synthesize_sample_for_window(
        &mut rng,
        &window,
        &clip.task_label,
        MaskState::FULL_PRIORS,
        ranges,
    )
}

fn aggregate(records: Vec<WindowRecord>, modes: &[MaskState], model_id: &str) -> AblationReport {
    let mode_labels: Vec<String> = modes.iter().map(|m| m.label().to_string()).collect();
    let mut by_task: BTreeMap<&str, Vec<&WindowRecord>> = BTreeMap::new();
    for r in &records {
        by_task.entry(&r.task_label).or_default().push(r);
    }

    let mut tasks = Vec::new();
    for (task, rows) in &by_task {
        let mut per_mode = BTreeMap::new();
        for (mi, label) in mode_labels.iter().enumerate() {
            let values: Vec<f64> = rows.iter().map(|r| r.mpjpe_by_mode[mi]).collect();
            per_mode.insert(label.clone(), stats_of(&values));
        }
        tasks.push(TaskMetrics {
            task_label: task.to_string(),
            per_mode,
        });
    }

    // Overall mean is the sample-count-weighted mean of task means; the
    // spread is the std over all windows.
    let mut overall = BTreeMap::new();
    for (mi, label) in mode_labels.iter().enumerate() {
        let mut weighted = 0.0;
        let mut count = 0usize;
        for task in &tasks {
            let cell = &task.per_mode[label];
            weighted += cell.mpjpe_mean_mm * cell.sample_count as f64;
            count += cell.sample_count;
        }
        let all: Vec<f64> = records.iter().map(|r| r.mpjpe_by_mode[mi]).collect();
        overall.insert(
            label.clone(),
            ModeStats {
                mpjpe_mean_mm: weighted / count as f64,
                mpjpe_std_mm: stats_of(&all).mpjpe_std_mm,
                sample_count: count,
            },
        );
    }

    AblationReport {
        model_id: model_id.to_string(),
        modes: mode_labels,
        tasks,
        overall,
        std_definition: "std of per-window MPJPE within the cell".to_string(),
    }
}

fn stats_of(values: &[f64]) -> ModeStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    ModeStats {
        mpjpe_mean_mm: mean,
        mpjpe_std_mm: var.sqrt(),
        sample_count: n,
    }
}

// ── Trajectory export ───────────────────────────────────────────────────

/// Per-joint time series for one clip: CSV plus one SVG per joint.
pub struct TrajectoryExport {
    /// `frame,joint,coord,mode,value_m` rows; "gt" plus one mode label each.
    pub csv: String,
    /// (joint name, SVG document) pairs.
    pub svgs: Vec<(String, String)>,
    /// Central-frame indices covered (length `F - T + 1`).
    pub frames: Vec<usize>,
}

/// Sliding-window inference over a clip (stride 1), taking the central-frame
/// prediction of every window. Ground truth is the clip in each window's
/// root frame at its central frame.
pub fn export_trajectories(
    weights: &LifterWeights<f32>,
    cfg: &ModelConfig,
    clip: &MotionClip,
    modes: &[MaskState],
    seed: u64,
    ranges: &CameraRanges,
    batch_size: usize,
) -> Result<TrajectoryExport> {
    let frames = clip.frames.len();
    if frames < WINDOW_LEN {
        return Err(Error::ClipTooShort {
            frames,
            needed: WINDOW_LEN,
        });
    }
    let starts: Vec<usize> = (0..=frames - WINDOW_LEN).collect();
    let samples: Vec<WindowSample> = starts
        .iter()
        .map(|&start| fixed_camera_sample(seed, 0, clip, start, ranges))
        .collect::<Result<_>>()?;

    // series[mode][joint][coord][frame]
    let mut gt_series = vec![[[0.0f64; 3]; JOINT_COUNT]; starts.len()];
    for (w, s) in samples.iter().enumerate() {
        for (j, joint) in s.gt3d_root[CENTRAL_FRAME].iter().enumerate() {
            gt_series[w][j] = [joint.x, joint.y, joint.z];
        }
    }

    let mut mode_series: Vec<Vec<[[f64; 3]; JOINT_COUNT]>> = Vec::with_capacity(modes.len());
    for mode in modes {
        let mut series = vec![[[0.0f64; 3]; JOINT_COUNT]; starts.len()];
        for (chunk_idx, batch) in samples.chunks(batch_size.max(1)).enumerate() {
            let masked: Vec<WindowSample> = batch.iter().map(|s| s.with_mask(*mode)).collect();
            let inputs: Vec<LifterInput> = masked.iter().map(LifterInput::from_sample).collect();
            let pred = forward_batch(weights, cfg, &inputs, false, None)?;
            for i in 0..batch.len() {
                let w = chunk_idx * batch_size.max(1) + i;
                let base = (i * WINDOW_LEN + CENTRAL_FRAME) * JOINT_COUNT * 3;
                for j in 0..JOINT_COUNT {
                    let o = base + j * 3;
                    series[w][j] = [
                        pred.data()[o] as f64,
                        pred.data()[o + 1] as f64,
                        pred.data()[o + 2] as f64,
                    ];
                }
            }
        }
        mode_series.push(series);
    }

    let frame_ids: Vec<usize> = starts.iter().map(|s| s + CENTRAL_FRAME).collect();

    let mut csv = String::from("frame,joint,coord,mode,value_m\n");
    let coords = ["x", "y", "z"];
    for (w, &frame) in frame_ids.iter().enumerate() {
        for joint in Joint::ALL {
            for (c, coord) in coords.iter().enumerate() {
                csv.push_str(&format!(
                    "{frame},{},{},gt,{}\n",
                    joint.name(),
                    coord,
                    gt_series[w][joint.index()][c]
                ));
                for (mi, mode) in modes.iter().enumerate() {
                    csv.push_str(&format!(
                        "{frame},{},{},{},{}\n",
                        joint.name(),
                        coord,
                        mode.label(),
                        mode_series[mi][w][joint.index()][c]
                    ));
                }
            }
        }
    }

    let svgs = Joint::ALL
        .iter()
        .map(|&joint| {
            let svg = joint_svg(joint, &frame_ids, &gt_series, &mode_series, modes);
            (joint.name().to_string(), svg)
        })
        .collect();

    Ok(TrajectoryExport {
        csv,
        svgs,
        frames: frame_ids,
    })
}

/// Static line plot: three stacked axes (x, y, z over time), ground truth in
/// black, one colored polyline per mode.
fn joint_svg(
    joint: Joint,
    frames: &[usize],
    gt: &[[[f64; 3]; JOINT_COUNT]],
    modes_data: &[Vec<[[f64; 3]; JOINT_COUNT]>],
    modes: &[MaskState],
) -> String {
    const W: f64 = 720.0;
    const PANEL_H: f64 = 160.0;
    const MARGIN: f64 = 40.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let total_h = 3.0 * PANEL_H + 2.0 * MARGIN;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{total_h}\" viewBox=\"0 0 {W} {total_h}\">\n"
    );
    svg.push_str(&format!(
        "<title>{} trajectory (meters, root frame)</title>\n",
        joint.name()
    ));

    for (c, coord) in ["x", "y", "z"].iter().enumerate() {
        let y0 = c as f64 * (PANEL_H + MARGIN);
        // Value range over gt and all modes for this coordinate.
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for w in 0..frames.len() {
            lo = lo.min(gt[w][joint.index()][c]);
            hi = hi.max(gt[w][joint.index()][c]);
            for series in modes_data {
                lo = lo.min(series[w][joint.index()][c]);
                hi = hi.max(series[w][joint.index()][c]);
            }
        }
        if !(hi > lo) {
            hi = lo + 1e-6;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let to_xy = |w: usize, v: f64| {
            let x = 50.0 + (W - 70.0) * w as f64 / (frames.len().max(2) - 1) as f64;
            let y = y0 + PANEL_H - PANEL_H * (v - lo) / (hi - lo);
            (x, y)
        };

        svg.push_str(&format!(
            "<rect x=\"50\" y=\"{y0}\" width=\"{}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#cccccc\"/>\n",
            W - 70.0
        ));
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{}\" font-size=\"12\">{}</text>\n",
            y0 + PANEL_H / 2.0,
            coord
        ));

        let polyline = |svg: &mut String, values: Vec<(f64, f64)>, color: &str, dash: &str| {
            let points: Vec<String> = values
                .iter()
                .map(|(x, y)| format!("{x:.1},{y:.1}"))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"{dash} points=\"{}\"/>\n",
                points.join(" ")
            ));
        };
        polyline(
            &mut svg,
            (0..frames.len())
                .map(|w| to_xy(w, gt[w][joint.index()][c]))
                .collect(),
            "#000000",
            "",
        );
        for (mi, _mode) in modes.iter().enumerate() {
            polyline(
                &mut svg,
                (0..frames.len())
                    .map(|w| to_xy(w, modes_data[mi][w][joint.index()][c]))
                    .collect(),
                colors[mi % colors.len()],
                " stroke-dasharray=\"4 2\"",
            );
        }
    }

    // Legend.
    let mut lx = 60.0;
    svg.push_str(&format!(
        "<text x=\"{lx}\" y=\"14\" font-size=\"11\" fill=\"#000000\">gt</text>\n"
    ));
    lx += 40.0;
    for (mi, mode) in modes.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{lx}\" y=\"14\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            colors[mi % colors.len()],
            mode.label()
        ));
        lx += 110.0;
    }
    svg.push_str("</svg>\n");
    svg
}

// ── Latency benchmark ───────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyReport {
    pub batch_size: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub median_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub threads: usize,
    /// Operator-supplied machine description.
    pub machine: String,
}

/// Wall-time benchmark of the eval-mode forward pass on a synthetic window.
pub fn bench_latency(
    weights: &LifterWeights<f32>,
    cfg: &ModelConfig,
    batch_size: usize,
    iterations: usize,
    warmup: usize,
    machine: &str,
) -> Result<LatencyReport> {
    let mut rng = Rng::derive(0xbe7c4, "bench-clip", &[]);
    let clip = crate::dataset::generate_procedural_clip(&mut rng, 2.0, 30.0)?;
    let sample = crate::dataset::synthesize_sample(
        &mut rng,
        &clip,
        MaskState::FULL_PRIORS,
        &CameraRanges::default(),
    )?;
    let samples = vec![sample; batch_size.max(1)];
    let inputs: Vec<LifterInput> = samples.iter().map(LifterInput::from_sample).collect();

    for _ in 0..warmup {
        forward_batch(weights, cfg, &inputs, false, None)?;
    }
    let mut times_us = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        forward_batch(weights, cfg, &inputs, false, None)?;
        times_us.push(t.elapsed().as_secs_f64() * 1e6);
    }
    times_us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| times_us[(((times_us.len() as f64) * q) as usize).min(times_us.len() - 1)];
    Ok(LatencyReport {
        batch_size: batch_size.max(1),
        iterations,
        warmup,
        median_us: pick(0.5),
        p90_us: pick(0.9),
        p99_us: pick(0.99),
        threads: 1,
        machine: machine.to_string(),
    })
}
