//! The `.mclip` motion-clip container.
//!
//! Layout (all integers little-endian):
//! magic `"MCLP"`, version byte `0x01`, `u32` joint count, `u32` frame
//! count, `f32` fps, length-prefixed UTF-8 subject id and task label
//! (`u32` byte length each), then `F·J·3` `f32` meters, frame-major, in
//! canonical joint order.

use super::{MotionClip, WINDOW_LEN};
use crate::geometry::JOINT_COUNT;
use crate::{Error, Result};
use nalgebra::Vector3;
use std::path::Path;

const MAGIC: [u8; 4] = *b"MCLP";
const VERSION: u8 = 0x01;

/// Byte-offset-tracking reader so parse errors can name the exact position.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ClipParse {
                offset: self.pos as u64,
                what: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let offset = self.pos as u64;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::ClipParse {
            offset,
            what: format!("{what} is not valid UTF-8: {e}"),
        })
    }
}

pub fn clip_to_bytes(clip: &MotionClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        4 + 1 + 4 + 4 + 4 + 8 + clip.subject_id.len() + clip.task_label.len()
            + clip.frames.len() * JOINT_COUNT * 12,
    );
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(JOINT_COUNT as u32).to_le_bytes());
    out.extend_from_slice(&(clip.frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&clip.fps.to_le_bytes());
    out.extend_from_slice(&(clip.subject_id.len() as u32).to_le_bytes());
    out.extend_from_slice(clip.subject_id.as_bytes());
    out.extend_from_slice(&(clip.task_label.len() as u32).to_le_bytes());
    out.extend_from_slice(clip.task_label.as_bytes());
    for frame in &clip.frames {
        for joint in frame {
            for c in 0..3 {
                out.extend_from_slice(&(joint[c] as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn clip_from_bytes(buf: &[u8]) -> Result<MotionClip> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::ClipParse {
            offset: 0,
            what: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::ClipParse {
            offset: 4,
            what: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let joints = r.u32("joint count")?;
    if joints as usize != JOINT_COUNT {
        return Err(Error::UnsupportedJointCount {
            got: joints,
            expected: JOINT_COUNT as u32,
        });
    }
    let frames = r.u32("frame count")? as usize;
    let fps_offset = r.pos as u64;
    let fps = r.f32("fps")?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::ClipParse {
            offset: fps_offset,
            what: format!("fps must be finite and positive, got {fps}"),
        });
    }
    let subject_id = r.string("subject_id")?;
    let task_label = r.string("task_label")?;

    let mut data = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut frame = [Vector3::zeros(); JOINT_COUNT];
        for joint in frame.iter_mut() {
            for c in 0..3 {
                let offset = r.pos as u64;
                let v = r.f32("joint coordinate")?;
                if v.is_nan() {
                    return Err(Error::ClipParse {
                        offset,
                        what: "NaN joint coordinate".into(),
                    });
                }
                joint[c] = v as f64;
            }
        }
        data.push(frame);
    }
    if r.pos != buf.len() {
        return Err(Error::ClipParse {
            offset: r.pos as u64,
            what: format!("{} trailing bytes after frame data", buf.len() - r.pos),
        });
    }
    if frames < WINDOW_LEN {
        return Err(Error::ClipTooShort {
            frames,
            needed: WINDOW_LEN,
        });
    }
    Ok(MotionClip {
        subject_id,
        task_label,
        fps,
        frames: data,
    })
}

pub fn save_clip(clip: &MotionClip, path: &Path) -> Result<()> {
    std::fs::write(path, clip_to_bytes(clip))?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<MotionClip> {
    clip_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MotionClip;

    fn sample_clip() -> MotionClip {
        let frames: Vec<_> = (0..15)
            .map(|t| {
                let mut f = [Vector3::zeros(); JOINT_COUNT];
                for (j, p) in f.iter_mut().enumerate() {
                    *p = Vector3::new(t as f64 * 0.01, j as f64 * 0.1, 0.9);
                }
                f
            })
            .collect();
        MotionClip::new("subj_0001".into(), "walk".into(), 30.0, frames)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let clip = sample_clip();
        let bytes = clip_to_bytes(&clip);
        let loaded = clip_from_bytes(&bytes).unwrap();
        assert_eq!(clip.subject_id, loaded.subject_id);
        assert_eq!(clip.task_label, loaded.task_label);
        assert_eq!(clip.fps, loaded.fps);
        assert_eq!(clip.frames, loaded.frames);
        // And byte-for-byte when re-serialized.
        assert_eq!(bytes, clip_to_bytes(&loaded));
    }

    #[test]
    fn truncated_file_yields_no_partial_clip() {
        let bytes = clip_to_bytes(&sample_clip());
        for cut in [3, 8, 20, bytes.len() - 5] {
            let err = clip_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::ClipParse { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn wrong_joint_count_is_explicit() {
        let mut bytes = clip_to_bytes(&sample_clip());
        bytes[5..9].copy_from_slice(&17u32.to_le_bytes());
        match clip_from_bytes(&bytes) {
            Err(Error::UnsupportedJointCount { got: 17, expected: 12 }) => {}
            other => panic!("expected UnsupportedJointCount, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = clip_to_bytes(&sample_clip());
        bytes[0] = b'X';
        match clip_from_bytes(&bytes) {
            Err(Error::ClipParse { offset: 0, .. }) => {}
            other => panic!("expected ClipParse at 0, got {other:?}"),
        }
    }

    #[test]
    fn nan_coordinate_is_rejected() {
        let mut clip = sample_clip();
        clip.frames[2][3].y = f64::NAN;
        let bytes = clip_to_bytes(&clip);
        let err = clip_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("NaN"), "{err}");
    }

    #[test]
    fn too_few_frames_is_rejected() {
        let mut clip = sample_clip();
        clip.frames.truncate(7);
        let err = clip_from_bytes(&clip_to_bytes(&clip)).unwrap_err();
        assert!(matches!(err, Error::ClipTooShort { frames: 7, needed: 13 }));
    }
}
