// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Zipfian pid sampler: rank r is drawn with probability proportional to
/// r^-theta, and ranks map to pids through a seeded random permutation so
/// hot pages are scattered over the pid space.
#[derive(Clone, Debug)]
pub struct Zipf {
    cdf: Vec<f64>,
    perm: Vec<u64>,
}

impl Zipf {
    pub fn new(n: u64, theta: f64, seed: u64) -> Self {
        assert!(n > 0, "empty key space");
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for r in 1..=n {
            acc += (r as f64).powf(-theta);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        let mut perm: Vec<u64> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Zipf { cdf, perm }
    }

    pub fn len(&self) -> u64 {
        self.perm.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Pid holding rank `r` (0-based, 0 is hottest).
    pub fn pid_of_rank(&self, r: usize) -> u64 {
        self.perm[r]
    }

    /// Probability of rank `r` (0-based).
    pub fn rank_probability(&self, r: usize) -> f64 {
        self.cdf[r] - if r == 0 { 0.0 } else { self.cdf[r - 1] }
    }

    pub fn sample_rank<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.perm[self.sample_rank(rng)]
    }
}
