use serde::{Deserialize, Serialize};

use super::GenerationConfig;
use crate::error::{Error, Result};

/// One generation unit. Seed indices may be negative: those frames come from the rest pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub seed_start: i64,
    pub seed_end: i64,
    pub emit_start: usize,
    pub emit_end: usize,
}

impl Chunk {
    pub fn emit_len(&self) -> usize {
        self.emit_end - self.emit_start
    }

    pub fn is_rest_seeded(&self) -> bool {
        self.seed_start < 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunks: Vec<Chunk>,
    pub total_frames: usize,
}

/// Chunk k emits `[k*N, min((k+1)*N, total))` and is seeded by the M frames before `k*N`.
pub fn chunk_plan(total_frames: usize, cfg: &GenerationConfig) -> Result<ChunkPlan> {
    cfg.validate()?;
    if total_frames == 0 {
        return Err(Error::invalid("total_frames must be at least 1"));
    }
    let n = cfg.chunk_frames;
    let m = cfg.seed_frames as i64;
    let chunks = (0..total_frames.div_ceil(n))
        .map(|k| {
            let emit_start = k * n;
            Chunk {
                seed_start: emit_start as i64 - m,
                seed_end: emit_start as i64,
                emit_start,
                emit_end: (emit_start + n).min(total_frames),
            }
        })
        .collect();
    Ok(ChunkPlan {
        chunks,
        total_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(m: usize, n: usize) -> GenerationConfig {
        GenerationConfig {
            seed_frames: m,
            chunk_frames: n,
            fps: 15.0,
        }
    }

    #[test]
    fn ninety_frames_make_three_full_chunks() {
        let plan = chunk_plan(90, &cfg(4, 30)).unwrap();
        assert_eq!(plan.chunks.len(), 3);
        assert!(plan.chunks.iter().all(|c| c.emit_len() == 30));
        assert!(plan.chunks[0].is_rest_seeded());
        assert_eq!((plan.chunks[1].seed_start, plan.chunks[1].seed_end), (26, 30));
        assert_eq!((plan.chunks[2].seed_start, plan.chunks[2].seed_end), (56, 60));
    }

    #[test]
    fn single_chunk_is_rest_seeded() {
        let plan = chunk_plan(30, &cfg(4, 30)).unwrap();
        assert_eq!(plan.chunks.len(), 1);
        assert_eq!((plan.chunks[0].emit_start, plan.chunks[0].emit_end), (0, 30));
        assert_eq!((plan.chunks[0].seed_start, plan.chunks[0].seed_end), (-4, 0));
    }

    #[test]
    fn final_chunk_is_truncated() {
        let plan = chunk_plan(45, &cfg(4, 30)).unwrap();
        assert_eq!(plan.chunks.len(), 2);
        assert_eq!((plan.chunks[1].emit_start, plan.chunks[1].emit_end), (30, 45));
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(matches!(chunk_plan(0, &cfg(4, 30)), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn emitted_windows_partition_the_timeline(total in 1usize..2000, m in 1usize..10, n in 1usize..64) {
            let plan = chunk_plan(total, &cfg(m, n)).unwrap();
            let mut next = 0;
            for (k, c) in plan.chunks.iter().enumerate() {
                prop_assert_eq!(c.emit_start, next);
                prop_assert!(c.emit_end > c.emit_start);
                prop_assert_eq!(c.seed_end, c.emit_start as i64);
                prop_assert_eq!(c.seed_end - c.seed_start, m as i64);
                if k > 0 {
                    // seeded by the tail of what has been emitted so far
                    prop_assert!(c.seed_end as usize <= plan.chunks[k - 1].emit_end);
                }
                next = c.emit_end;
            }
            prop_assert_eq!(next, total);
        }
    }
}
