//! Procedural motion synthesis: forward kinematics over a 12-joint skeleton
//! with per-subject limb lengths from anthropometric ranges and joint angles
//! driven by band-limited sums of sinusoids. Bone lengths are constant by
//! construction.

use super::{MotionClip, WINDOW_LEN};
use crate::geometry::{Joint, Joints3d, JOINT_COUNT};
use crate::rng::Rng;
use crate::{Error, Result};
use nalgebra::{Rotation3, Unit, Vector3};

/// The thirteen activity labels used for stratified synthesis.
pub const TASKS: [&str; 13] = [
    "walk",
    "squat",
    "tennis",
    "bend",
    "displace_tilt",
    "wipe",
    "pour",
    "guitar",
    "stairs_climbing",
    "push_recovery",
    "punch",
    "turn",
    "kick",
];

/// Motion-style envelope per task. Amplitudes in radians (or meters where
/// noted), frequencies in Hz. Budgets are sized so worst-case end-effector
/// speeds stay under ~8 m/s.
struct TaskStyle {
    speed_m_s: (f64, f64),
    turn_amp_rad: f64,
    bob_amp_m: f64,
    lean_amp_rad: f64,
    sway_amp_rad: f64,
    arm_amp_rad: f64,
    arm_freq_hz: f64,
    leg_amp_rad: f64,
    leg_freq_hz: f64,
    knee_flex_rad: f64,
}

fn style_of(task: &str) -> TaskStyle {
    match task {
        "walk" => TaskStyle {
            speed_m_s: (0.8, 1.4),
            turn_amp_rad: 0.4,
            bob_amp_m: 0.03,
            lean_amp_rad: 0.08,
            sway_amp_rad: 0.06,
            arm_amp_rad: 0.45,
            arm_freq_hz: 1.0,
            leg_amp_rad: 0.55,
            leg_freq_hz: 1.0,
            knee_flex_rad: 0.7,
        },
        "squat" => TaskStyle {
            speed_m_s: (0.0, 0.1),
            turn_amp_rad: 0.1,
            bob_amp_m: 0.22,
            lean_amp_rad: 0.25,
            sway_amp_rad: 0.05,
            arm_amp_rad: 0.35,
            arm_freq_hz: 0.5,
            leg_amp_rad: 0.30,
            leg_freq_hz: 0.45,
            knee_flex_rad: 1.1,
        },
        "tennis" => TaskStyle {
            speed_m_s: (0.2, 0.7),
            turn_amp_rad: 0.6,
            bob_amp_m: 0.05,
            lean_amp_rad: 0.18,
            sway_amp_rad: 0.10,
            arm_amp_rad: 0.9,
            arm_freq_hz: 1.3,
            leg_amp_rad: 0.35,
            leg_freq_hz: 0.9,
            knee_flex_rad: 0.6,
        },
        "bend" => TaskStyle {
            speed_m_s: (0.0, 0.15),
            turn_amp_rad: 0.15,
            bob_amp_m: 0.06,
            lean_amp_rad: 0.65,
            sway_amp_rad: 0.08,
            arm_amp_rad: 0.5,
            arm_freq_hz: 0.5,
            leg_amp_rad: 0.15,
            leg_freq_hz: 0.4,
            knee_flex_rad: 0.4,
        },
        "displace_tilt" => TaskStyle {
            speed_m_s: (0.4, 0.9),
            turn_amp_rad: 0.4,
            bob_amp_m: 0.04,
            lean_amp_rad: 0.35,
            sway_amp_rad: 0.15,
            arm_amp_rad: 0.45,
            arm_freq_hz: 0.8,
            leg_amp_rad: 0.4,
            leg_freq_hz: 0.8,
            knee_flex_rad: 0.5,
        },
        "wipe" => TaskStyle {
            speed_m_s: (0.0, 0.2),
            turn_amp_rad: 0.2,
            bob_amp_m: 0.03,
            lean_amp_rad: 0.20,
            sway_amp_rad: 0.08,
            arm_amp_rad: 0.8,
            arm_freq_hz: 1.2,
            leg_amp_rad: 0.12,
            leg_freq_hz: 0.5,
            knee_flex_rad: 0.25,
        },
        "pour" => TaskStyle {
            speed_m_s: (0.0, 0.1),
            turn_amp_rad: 0.15,
            bob_amp_m: 0.02,
            lean_amp_rad: 0.12,
            sway_amp_rad: 0.05,
            arm_amp_rad: 0.5,
            arm_freq_hz: 0.6,
            leg_amp_rad: 0.08,
            leg_freq_hz: 0.4,
            knee_flex_rad: 0.2,
        },
        "guitar" => TaskStyle {
            speed_m_s: (0.0, 0.05),
            turn_amp_rad: 0.1,
            bob_amp_m: 0.02,
            lean_amp_rad: 0.10,
            sway_amp_rad: 0.06,
            arm_amp_rad: 0.55,
            arm_freq_hz: 1.6,
            leg_amp_rad: 0.08,
            leg_freq_hz: 0.4,
            knee_flex_rad: 0.2,
        },
        "stairs_climbing" => TaskStyle {
            speed_m_s: (0.4, 0.8),
            turn_amp_rad: 0.15,
            bob_amp_m: 0.12,
            lean_amp_rad: 0.18,
            sway_amp_rad: 0.07,
            arm_amp_rad: 0.4,
            arm_freq_hz: 0.9,
            leg_amp_rad: 0.75,
            leg_freq_hz: 0.9,
            knee_flex_rad: 1.0,
        },
        "push_recovery" => TaskStyle {
            speed_m_s: (0.1, 0.5),
            turn_amp_rad: 0.3,
            bob_amp_m: 0.05,
            lean_amp_rad: 0.4,
            sway_amp_rad: 0.2,
            arm_amp_rad: 0.6,
            arm_freq_hz: 1.0,
            leg_amp_rad: 0.45,
            leg_freq_hz: 1.0,
            knee_flex_rad: 0.6,
        },
        "punch" => TaskStyle {
            speed_m_s: (0.1, 0.4),
            turn_amp_rad: 0.5,
            bob_amp_m: 0.04,
            lean_amp_rad: 0.15,
            sway_amp_rad: 0.12,
            arm_amp_rad: 0.9,
            arm_freq_hz: 1.6,
            leg_amp_rad: 0.25,
            leg_freq_hz: 0.8,
            knee_flex_rad: 0.45,
        },
        "turn" => TaskStyle {
            speed_m_s: (0.1, 0.5),
            turn_amp_rad: 1.4,
            bob_amp_m: 0.03,
            lean_amp_rad: 0.12,
            sway_amp_rad: 0.10,
            arm_amp_rad: 0.4,
            arm_freq_hz: 0.8,
            leg_amp_rad: 0.35,
            leg_freq_hz: 0.8,
            knee_flex_rad: 0.5,
        },
        "kick" => TaskStyle {
            speed_m_s: (0.0, 0.3),
            turn_amp_rad: 0.3,
            bob_amp_m: 0.04,
            lean_amp_rad: 0.22,
            sway_amp_rad: 0.15,
            arm_amp_rad: 0.45,
            arm_freq_hz: 0.9,
            leg_amp_rad: 0.95,
            leg_freq_hz: 0.8,
            knee_flex_rad: 1.0,
        },
        _ => TaskStyle {
            // Free-form labels get a mild generic motion.
            speed_m_s: (0.1, 0.6),
            turn_amp_rad: 0.3,
            bob_amp_m: 0.04,
            lean_amp_rad: 0.15,
            sway_amp_rad: 0.08,
            arm_amp_rad: 0.5,
            arm_freq_hz: 0.9,
            leg_amp_rad: 0.4,
            leg_freq_hz: 0.8,
            knee_flex_rad: 0.6,
        },
    }
}

/// Band-limited oscillator: sum of three sinusoids whose amplitudes sum to
/// `amp`, so `|value| <= amp` and `|d/dt value| <= amp · 2π · f_max`.
struct Osc {
    comps: [(f64, f64, f64); 3],
}

impl Osc {
    fn sample(rng: &mut Rng, amp: f64, f_max: f64, phase_offset: f64) -> Self {
        let mut weights = [0.0; 3];
        let mut total = 0.0;
        for w in weights.iter_mut() {
            *w = rng.uniform_range(0.2, 1.0);
            total += *w;
        }
        let mut comps = [(0.0, 0.0, 0.0); 3];
        for (i, c) in comps.iter_mut().enumerate() {
            let f = rng.uniform_range(0.3 * f_max, f_max);
            let phase = rng.uniform_range(0.0, std::f64::consts::TAU) + phase_offset;
            *c = (amp * weights[i] / total, f, phase);
        }
        Osc { comps }
    }

    fn value(&self, t: f64) -> f64 {
        self.comps
            .iter()
            .map(|&(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin())
            .sum()
    }

    fn amp(&self) -> f64 {
        self.comps.iter().map(|c| c.0).sum()
    }
}

struct Anthro {
    shoulder_w: f64,
    hip_w: f64,
    torso_h: f64,
    upper_arm: f64,
    forearm: f64,
    thigh: f64,
    shank: f64,
}

impl Anthro {
    fn sample(rng: &mut Rng) -> Self {
        Anthro {
            shoulder_w: rng.uniform_range(0.32, 0.42),
            hip_w: rng.uniform_range(0.24, 0.34),
            torso_h: rng.uniform_range(0.42, 0.52),
            upper_arm: rng.uniform_range(0.25, 0.33),
            forearm: rng.uniform_range(0.22, 0.28),
            thigh: rng.uniform_range(0.36, 0.44),
            shank: rng.uniform_range(0.34, 0.42),
        }
    }
}

/// Procedural clip with a task label drawn from [`TASKS`].
pub fn generate_procedural_clip(rng: &mut Rng, duration_s: f64, fps: f64) -> Result<MotionClip> {
    let task = TASKS[rng.below(TASKS.len() as u64) as usize];
    generate_procedural_clip_for_task(rng, task, duration_s, fps)
}

/// Procedural clip for a specific task label.
pub fn generate_procedural_clip_for_task(
    rng: &mut Rng,
    task: &str,
    duration_s: f64,
    fps: f64,
) -> Result<MotionClip> {
    if fps <= 0.0 || !fps.is_finite() {
        return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
    }
    let frames = (duration_s * fps).round() as usize;
    if frames < WINDOW_LEN {
        return Err(Error::InvalidArgument(format!(
            "duration {duration_s} s at {fps} fps gives {frames} frames; a window needs {WINDOW_LEN}"
        )));
    }

    let anthro = Anthro::sample(rng);
    let style = style_of(task);
    let pelvis_base_h = 0.96 * (anthro.thigh + anthro.shank) + 0.08;

    // Per-clip jitter so two clips of the same task still differ in style.
    let speed = rng.uniform_range(style.speed_m_s.0, style.speed_m_s.1);
    let heading0 = rng.uniform_range(0.0, std::f64::consts::TAU);
    let start = Vector3::new(
        rng.uniform_range(-0.5, 0.5),
        rng.uniform_range(-0.5, 0.5),
        0.0,
    );

    let turn = Osc::sample(rng, style.turn_amp_rad, 0.3, 0.0);
    let speed_mod = Osc::sample(rng, 0.25, 0.4, 0.0);
    let bob = Osc::sample(rng, style.bob_amp_m, style.leg_freq_hz.max(0.4), 0.0);
    let lean = Osc::sample(rng, style.lean_amp_rad, 0.5, 0.0);
    let sway = Osc::sample(rng, style.sway_amp_rad, 0.6, 0.0);
    let twist = Osc::sample(rng, 0.25, 0.5, 0.0);

    const PI: f64 = std::f64::consts::PI;
    // Legs swing anti-phase; arms counter-swing their own side's leg.
    let leg_swing = [
        Osc::sample(rng, style.leg_amp_rad, style.leg_freq_hz, 0.0),
        Osc::sample(rng, style.leg_amp_rad, style.leg_freq_hz, PI),
    ];
    let knee_flex = [
        Osc::sample(rng, 1.0, style.leg_freq_hz, 0.7),
        Osc::sample(rng, 1.0, style.leg_freq_hz, 0.7 + PI),
    ];
    let arm_swing = [
        Osc::sample(rng, style.arm_amp_rad, style.arm_freq_hz, PI),
        Osc::sample(rng, style.arm_amp_rad, style.arm_freq_hz, 0.0),
    ];
    let arm_abduct = [
        Osc::sample(rng, 0.6 * style.arm_amp_rad, style.arm_freq_hz, 0.3),
        Osc::sample(rng, 0.6 * style.arm_amp_rad, style.arm_freq_hz, 0.3 + PI),
    ];
    let elbow_flex = [
        Osc::sample(rng, 1.0, style.arm_freq_hz, 1.1),
        Osc::sample(rng, 1.0, style.arm_freq_hz, 1.1 + PI),
    ];

    let dt = 1.0 / fps;
    let mut pos_xy = start;
    let mut out = Vec::with_capacity(frames);

    for i in 0..frames {
        let t = i as f64 * dt;
        let heading = heading0 + turn.value(t);
        let v = speed * (0.8 + 0.2 * speed_mod.value(t) / speed_mod.amp().max(1e-9));
        pos_xy += dt * v * Vector3::new(heading.cos(), heading.sin(), 0.0);

        let mid_hip =
            Vector3::new(pos_xy.x, pos_xy.y, pelvis_base_h + bob.value(t));

        // Pelvis frame: x lateral (to the subject's right), y forward, z up,
        // tilted by lean (about x) and sway (about y).
        let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), heading);
        let x0 = yaw * Vector3::x();
        let y0 = yaw * Vector3::y();
        let tilt = Rotation3::from_axis_angle(&Unit::new_normalize(x0), lean.value(t))
            * Rotation3::from_axis_angle(&Unit::new_normalize(y0), sway.value(t));
        let x_p = tilt * x0;
        let y_p = tilt * y0;
        let z_p = x_p.cross(&y_p);

        // Shoulder girdle twists about the spine relative to the pelvis.
        let twist_rot = Rotation3::from_axis_angle(&Unit::new_normalize(z_p), twist.value(t));
        let x_s = twist_rot * x_p;

        let mid_shoulder = mid_hip + anthro.torso_h * z_p;

        let mut frame: Joints3d = [Vector3::zeros(); JOINT_COUNT];
        frame[Joint::LHip.index()] = mid_hip - 0.5 * anthro.hip_w * x_p;
        frame[Joint::RHip.index()] = mid_hip + 0.5 * anthro.hip_w * x_p;
        frame[Joint::LShoulder.index()] = mid_shoulder - 0.5 * anthro.shoulder_w * x_s;
        frame[Joint::RShoulder.index()] = mid_shoulder + 0.5 * anthro.shoulder_w * x_s;

        for (side, (hip_j, knee_j, ankle_j, shoulder_j, elbow_j, wrist_j)) in [
            (
                0usize,
                (Joint::LHip, Joint::LKnee, Joint::LAnkle, Joint::LShoulder, Joint::LElbow, Joint::LWrist),
            ),
            (
                1usize,
                (Joint::RHip, Joint::RKnee, Joint::RAnkle, Joint::RShoulder, Joint::RElbow, Joint::RWrist),
            ),
        ] {
            let sign = if side == 0 { -1.0 } else { 1.0 };
            let lateral = Unit::new_normalize(x_p);

            // Leg: thigh swings about the lateral axis; knee flexes backward
            // (non-negative flexion by construction).
            let swing = leg_swing[side].value(t);
            let kf_amp = knee_flex[side].amp().max(1e-9);
            let kf = style.knee_flex_rad * (0.5 + 0.5 * knee_flex[side].value(t) / kf_amp);
            let thigh_dir =
                Rotation3::from_axis_angle(&lateral, swing) * (-z_p) + 0.06 * sign * x_p;
            let thigh_dir = thigh_dir.normalize();
            let knee = frame[hip_j.index()] + anthro.thigh * thigh_dir;
            let shank_dir = Rotation3::from_axis_angle(&lateral, swing - kf) * (-z_p);
            frame[knee_j.index()] = knee;
            frame[ankle_j.index()] = knee + anthro.shank * shank_dir.normalize();

            // Arm: shoulder swing + abduction, elbow flexes forward.
            let a_sw = arm_swing[side].value(t);
            let abd = 0.15 + arm_abduct[side].value(t).abs();
            let fwd = Unit::new_normalize(y_p);
            let upper_dir = Rotation3::from_axis_angle(&lateral, a_sw)
                * Rotation3::from_axis_angle(&fwd, -sign * abd)
                * (-z_p);
            let elbow = frame[shoulder_j.index()] + anthro.upper_arm * upper_dir.normalize();
            let ef_amp = elbow_flex[side].amp().max(1e-9);
            let ef = 1.1 * (0.5 + 0.5 * elbow_flex[side].value(t) / ef_amp);
            let fore_dir = Rotation3::from_axis_angle(&lateral, a_sw + ef)
                * Rotation3::from_axis_angle(&fwd, -sign * abd)
                * (-z_p);
            frame[elbow_j.index()] = elbow;
            frame[wrist_j.index()] = elbow + anthro.forearm * fore_dir.normalize();
        }

        out.push(frame);
    }

    Ok(MotionClip::new(
        format!("proc_{:08x}", rng.next_u64() as u32),
        task.to_string(),
        fps as f32,
        out,
    ))
}
