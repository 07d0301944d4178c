// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::codec::{synth_body, PageHeader, PageImage};
use crate::engine::{Engine, EngineError, PagePeek};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    /// Dirty pages handed to the engine.
    pub dirty_flushes: u64,
}

impl PoolStats {
    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_ratio(&self) -> f64 {
        if self.accesses() == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses() as f64
        }
    }

    pub fn since(&self, e: &PoolStats) -> PoolStats {
        PoolStats {
            hits: self.hits - e.hits,
            misses: self.misses - e.misses,
            evictions: self.evictions - e.evictions,
            dirty_flushes: self.dirty_flushes - e.dirty_flushes,
        }
    }
}

/// A cached page. The body is not kept: it is a pure function of
/// (seed, pid, version) and is rebuilt when the page is written.
#[derive(Clone, Copy, Debug)]
struct Frame {
    header: PageHeader,
    version: u64,
    dirty: bool,
    referenced: bool,
}

/// Clock (second chance) buffer pool. Evicted dirty pages wait in a write
/// queue and are flushed to the engine `batch` at a time; a page found in
/// the queue counts as a hit.
pub struct BufferPool {
    frames: Vec<Frame>,
    capacity: usize,
    /// pid -> frame index.
    index: Vec<u32>,
    hand: usize,
    queue: Vec<Frame>,
    /// pid -> queue position.
    queued: Vec<u32>,
    batch: usize,
    /// Newest version of each pid known to be on the device.
    durable: Vec<u64>,
    seed: u64,
    target: f64,
    stats: PoolStats,
}

impl BufferPool {
    /// An empty pool for pids `0..page_count`, all durable at version 0.
    pub fn new(capacity: usize, page_count: u64, batch: usize, seed: u64, target: f64) -> Self {
        assert!(capacity > 0 && batch > 0);
        BufferPool {
            frames: Vec::with_capacity(capacity),
            capacity,
            index: vec![NONE; page_count as usize],
            hand: 0,
            queue: Vec::with_capacity(batch),
            queued: vec![NONE; page_count as usize],
            batch,
            durable: vec![0; page_count as usize],
            seed,
            target,
            stats: PoolStats::default(),
        }
    }

    pub fn stats(&self) -> PoolStats {
        self.stats
    }

    pub fn resident(&self) -> usize {
        self.frames.len()
    }

    /// Version the device holds for `pid`.
    pub fn durable_version(&self, pid: u64) -> u64 {
        self.durable[pid as usize]
    }

    /// Newest version of `pid`, cached or not.
    pub fn current_version(&self, pid: u64) -> u64 {
        let p = pid as usize;
        if self.index[p] != NONE {
            self.frames[self.index[p] as usize].version
        } else if self.queued[p] != NONE {
            self.queue[self.queued[p] as usize].version
        } else {
            self.durable[p]
        }
    }

    pub fn body(&self, pid: u64, version: u64) -> Vec<u8> {
        synth_body(self.seed, pid, version, self.target)
    }

    /// Touches `pid`; an update dirties it and advances `lsn`.
    pub fn access(&mut self, engine: &mut Engine, pid: u64, update: bool, lsn: &mut u64) -> Result<(), EngineError> {
        let p = pid as usize;
        let fi = if self.index[p] != NONE {
            self.stats.hits += 1;
            self.index[p] as usize
        } else if self.queued[p] != NONE {
            self.stats.hits += 1;
            let frame = self.take_queued(pid);
            self.admit(engine, pid, frame, *lsn)?
        } else {
            self.stats.misses += 1;
            let img = engine.read_page(pid)?;
            let frame = Frame { header: img.header(), version: self.durable[p], dirty: false, referenced: false };
            self.admit(engine, pid, frame, *lsn)?
        };
        let f = &mut self.frames[fi];
        f.referenced = true;
        if update {
            *lsn += 1;
            f.version += 1;
            f.dirty = true;
        }
        Ok(())
    }

    fn take_queued(&mut self, pid: u64) -> Frame {
        let at = self.queued[pid as usize] as usize;
        let frame = self.queue.swap_remove(at);
        self.queued[pid as usize] = NONE;
        if at < self.queue.len() {
            let moved = self.queue[at].header.pid;
            self.queued[moved as usize] = at as u32;
        }
        frame
    }

    /// Places `frame` in the pool, evicting with the clock hand if full.
    fn admit(&mut self, engine: &mut Engine, pid: u64, frame: Frame, lsn: u64) -> Result<usize, EngineError> {
        if self.frames.len() < self.capacity {
            self.frames.push(frame);
            self.index[pid as usize] = (self.frames.len() - 1) as u32;
            return Ok(self.frames.len() - 1);
        }
        let victim = loop {
            let f = &mut self.frames[self.hand];
            let at = self.hand;
            self.hand = (self.hand + 1) % self.capacity;
            if f.referenced {
                f.referenced = false;
            } else {
                break at;
            }
        };
        let old = std::mem::replace(&mut self.frames[victim], frame);
        self.index[old.header.pid as usize] = NONE;
        self.index[pid as usize] = victim as u32;
        self.stats.evictions += 1;
        if old.dirty {
            self.queued[old.header.pid as usize] = self.queue.len() as u32;
            self.queue.push(old);
            if self.queue.len() >= self.batch {
                self.flush_queue(engine, lsn)?;
            }
        }
        Ok(victim)
    }

    /// Writes every queued page to the engine as one batch.
    pub fn flush_queue(&mut self, engine: &mut Engine, lsn: u64) -> Result<(), EngineError> {
        if self.queue.is_empty() {
            return Ok(());
        }
        let batch = std::mem::take(&mut self.queue);
        let mut pages: Vec<PageImage> =
            batch.iter().map(|f| PageImage::new(&f.header, &self.body(f.header.pid, f.version))).collect();
        let res = engine.flush_batch(&mut pages, lsn, &CleanFrames(self));
        if let Err(e) = res {
            // Keep the pages queued so the caller still sees them as dirty.
            self.queue = batch;
            return Err(e);
        }
        for (f, page) in batch.iter().zip(&pages) {
            let pid = f.header.pid as usize;
            self.queued[pid] = NONE;
            self.durable[pid] = f.version;
            // Pages flushed by flush_all stay resident with the stamped header.
            if self.index[pid] != NONE {
                let r = &mut self.frames[self.index[pid] as usize];
                r.header = page.header();
                r.dirty = false;
            }
        }
        self.stats.dirty_flushes += batch.len() as u64;
        self.queue = batch;
        self.queue.clear();
        Ok(())
    }

    /// Queues every dirty resident page and flushes, leaving the pool clean.
    pub fn flush_all(&mut self, engine: &mut Engine, lsn: u64) -> Result<(), EngineError> {
        for i in 0..self.frames.len() {
            if self.frames[i].dirty && self.queued[self.frames[i].header.pid as usize] == NONE {
                let f = self.frames[i];
                self.queued[f.header.pid as usize] = self.queue.len() as u32;
                self.queue.push(f);
                if self.queue.len() >= self.batch {
                    self.flush_queue(engine, lsn)?;
                }
            }
        }
        self.flush_queue(engine, lsn)
    }
}

/// Serves GC reads from clean resident frames, whose content matches the
/// device copy.
struct CleanFrames<'a>(&'a BufferPool);

impl PagePeek for CleanFrames<'_> {
    fn peek(&self, pid: u64) -> Option<PageImage> {
        let pool = self.0;
        let fi = *pool.index.get(pid as usize)?;
        if fi == NONE {
            return None;
        }
        let f = &pool.frames[fi as usize];
        if f.dirty {
            return None;
        }
        Some(PageImage::new(&f.header, &pool.body(pid, f.version)))
    }
}
