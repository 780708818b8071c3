//! GPSQ pose files: `"GPSQ1"`, u8 version, LE u32 joint count, LE u32 frame count, LE f32 fps,
//! then frame-major f32 coordinates. The skeleton lives in a JSON sidecar next to the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array3;

use super::{PoseSequence, Skeleton};
use crate::error::{Error, Result};

pub const GPSQ_MAGIC: &[u8; 5] = b"GPSQ1";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 5 + 1 + 4 + 4 + 4;

/// `walk.gpsq` -> `walk.skeleton.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("skeleton.json")
}

pub fn encode_gpsq(seq: &PoseSequence) -> Vec<u8> {
    let frames = seq.frames();
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * 4);
    out.extend_from_slice(GPSQ_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(seq.joint_count() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.frame_count() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.fps() as f32).to_le_bytes());
    for v in frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_gpsq(bytes: &[u8], skeleton: Arc<Skeleton>) -> Result<PoseSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), format!("header needs {HEADER_LEN} bytes")));
    }
    if &bytes[..5] != GPSQ_MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..5]))));
    }
    if bytes[5] != VERSION {
        return Err(format_err(5, format!("unsupported version {}", bytes[5])));
    }
    let joints = read_u32(bytes, 6) as usize;
    let frames = read_u32(bytes, 10) as usize;
    let fps = f32::from_le_bytes(bytes[14..18].try_into().unwrap());
    if joints != skeleton.joint_count() {
        return Err(format_err(
            6,
            format!("file has {joints} joints, skeleton has {}", skeleton.joint_count()),
        ));
    }
    if frames == 0 {
        return Err(format_err(10, "frame count is zero"));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(format_err(14, format!("fps must be positive, got {fps}")));
    }
    let count = frames * joints * 3;
    let expected = HEADER_LEN + count * 4;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let at = HEADER_LEN + i * 4;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if !v.is_finite() {
            let (frame, rem) = (i / (joints * 3), i % (joints * 3));
            return Err(format_err(
                at,
                format!("non-finite value at frame {frame}, joint {}, axis {}", rem / 3, rem % 3),
            ));
        }
        values.push(v);
    }
    let array = Array3::from_shape_vec((frames, joints, 3), values).expect("length checked above");
    PoseSequence::new(skeleton, fps as f64, array)
}

/// Writes the binary file and its skeleton sidecar.
pub fn write_pose_sequence(seq: &PoseSequence, path: &Path) -> Result<()> {
    std::fs::write(path, encode_gpsq(seq)).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_vec_pretty(seq.skeleton().as_ref())?;
    std::fs::write(&sidecar, json).map_err(|e| Error::io(sidecar, e))
}

/// Reads a GPSQ file. Without a sidecar the built-in upper-body skeleton is assumed when the
/// joint count matches.
pub fn read_pose_sequence(path: &Path) -> Result<PoseSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let skeleton = match std::fs::read(&sidecar) {
        Ok(text) => serde_json::from_slice::<Skeleton>(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("{}: no skeleton sidecar, assuming the upper-body layout", path.display());
            Skeleton::upper_body()
        }
        Err(e) => return Err(Error::io(sidecar, e)),
    };
    decode_gpsq(&bytes, Arc::new(skeleton))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_skeleton() -> Arc<Skeleton> {
        use super::super::Handedness::*;
        Arc::new(
            Skeleton::new(
                vec!["root".into(), "a".into(), "b".into()],
                vec![-1, 0, 1],
                vec![Center, Left, Left],
                vec![[0.0; 3]; 3],
            )
            .unwrap(),
        )
    }

    #[test]
    fn two_frame_round_trip() {
        let sk = toy_skeleton();
        let frames = Array3::from_shape_fn((2, 3, 3), |(f, j, a)| (f * 9 + j * 3 + a) as f32 * 0.125 - 0.3);
        let seq = PoseSequence::new(sk.clone(), 15.0, frames).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.gpsq");
        write_pose_sequence(&seq, &path).unwrap();
        let back = read_pose_sequence(&path).unwrap();
        assert_eq!(back, seq);
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let seq = PoseSequence::rest(toy_skeleton(), 15.0, 2).unwrap();
        let mut bytes = encode_gpsq(&seq);
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_gpsq(&bytes, toy_skeleton()) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn nan_payload_names_its_index() {
        let seq = PoseSequence::rest(toy_skeleton(), 15.0, 2).unwrap();
        let mut bytes = encode_gpsq(&seq);
        // frame 1, joint 2, axis 1 -> value index 9 + 6 + 1 = 16
        let at = HEADER_LEN + 16 * 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_gpsq(&bytes, toy_skeleton()).unwrap_err();
        match &err {
            Error::Format { offset, message } => {
                assert_eq!(*offset as usize, at);
                assert!(message.contains("frame 1, joint 2, axis 1"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let seq = PoseSequence::rest(toy_skeleton(), 15.0, 2).unwrap();
        let bytes = encode_gpsq(&seq);
        assert!(matches!(
            decode_gpsq(&bytes[..bytes.len() - 3], toy_skeleton()),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_is_identity(
            frames in 1usize..6,
            values in proptest::collection::vec(-10.0f32..10.0, 54),
            fps in prop_oneof![Just(15.0f64), Just(30.0), Just(12.5), Just(60.0)],
        ) {
            let sk = toy_skeleton();
            let arr = Array3::from_shape_fn((frames, 3, 3), |(f, j, a)| values[(f * 9 + j * 3 + a) % 54]);
            let seq = PoseSequence::new(sk.clone(), fps, arr).unwrap();
            let back = decode_gpsq(&encode_gpsq(&seq), sk).unwrap();
            prop_assert_eq!(back, seq);
        }
    }
}
