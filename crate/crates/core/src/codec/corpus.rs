// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BODY_LEN;

const RUN: usize = 64;

/// Deterministic page body mixing random runs with repeats of a per-page
/// record template. `target` approximates the LZ4 stored/raw ratio; 0 gives a
/// fully repetitive body and 1 a fully random one.
pub fn synth_body(seed: u64, pid: u64, version: u64, target: f64) -> Vec<u8> {
    let mix = seed
        ^ pid.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ version.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let mut template = [0u8; 64];
    rng.fill_bytes(&mut template);
    let runs = BODY_LEN.div_ceil(RUN);
    // Each random run costs slightly more than its length once compressed,
    // and the page header plus match tokens add a small fixed overhead.
    let share = ((target - 0.03) / 1.03).clamp(0.0, 1.0);
    let random_runs = (share * runs as f64).floor() as usize;
    let mut body = vec![0u8; BODY_LEN];
    for run in body.chunks_mut(RUN) {
        run.copy_from_slice(&template[..run.len()]);
    }
    for i in sample(&mut rng, runs, random_runs) {
        let end = (i * RUN + RUN).min(BODY_LEN);
        rng.fill_bytes(&mut body[i * RUN..end]);
    }
    body
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{compress_page, Lz4, PageHeader, PageImage};

    #[test]
    fn stored_ratio_tracks_target() {
        for t in [0.1, 0.3, 0.5, 0.6] {
            let n = 200u64;
            let total: usize = (0..n)
                .map(|pid| {
                    let p = PageImage::new(&PageHeader { pid, ..Default::default() }, &synth_body(1, pid, 0, t));
                    compress_page(&Lz4, &p).stored_len()
                })
                .sum();
            let ratio = total as f64 / (n as f64 * 4096.0);
            assert!((ratio - t).abs() < 0.03, "target {t} gave {ratio}");
        }
    }

    #[test]
    fn half_target_pages_pair_up() {
        let stored: Vec<_> = (0..64u64)
            .map(|pid| {
                let p = PageImage::new(&PageHeader { pid, ..Default::default() }, &synth_body(9, pid, 3, 0.5));
                compress_page(&Lz4, &p)
            })
            .collect();
        assert_eq!(crate::codec::pack(&stored).len(), 32);
    }

    #[test]
    fn deterministic_and_version_sensitive() {
        assert_eq!(synth_body(1, 2, 3, 0.4), synth_body(1, 2, 3, 0.4));
        assert_ne!(synth_body(1, 2, 3, 0.4), synth_body(1, 2, 4, 0.4));
    }
}
