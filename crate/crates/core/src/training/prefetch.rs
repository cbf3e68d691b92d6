//! Batch preparation, optionally on background threads.
//!
//! Each batch is a pure function of `(seed, epoch, step)`, so prepared
//! batches are identical whatever the worker count. Worker `w` builds steps
//! `w, w + n, ...` into its own bounded queue and the training loop drains
//! the queues round-robin, which keeps step order fixed.

use std::sync::mpsc::sync_channel;

use smgarn_autograd::Element;

use super::data::{augment, collate, position_rng, sample_patch, AugmentFlags, Batch};
use super::BATCH_PURPOSE;
use crate::error::Result;
use crate::synthesis::SnowSample;

pub const NUM_WORKERS_ENV: &str = "SMGARN_NUM_WORKERS";
const QUEUE_DEPTH: usize = 2;

/// Worker count from `SMGARN_NUM_WORKERS`; unset or unparsable means 0.
pub fn num_workers_from_env() -> usize {
    std::env::var(NUM_WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

pub(crate) struct BatchContext<'a> {
    pub samples: &'a [SnowSample],
    pub plan: &'a [Vec<usize>],
    pub seed: u64,
    pub epoch: usize,
    pub patch_size: usize,
    pub augment: AugmentFlags,
    pub with_mask: bool,
    pub mask_channels: usize,
}

impl BatchContext<'_> {
    fn build<T: Element>(&self, step: usize) -> Result<Batch<T>> {
        let mut rng = position_rng(self.seed, self.epoch as u64, step as u64, BATCH_PURPOSE);
        let items = self.plan[step]
            .iter()
            .map(|&i| {
                let patch = sample_patch(&self.samples[i], self.patch_size, &mut rng)?;
                augment(&patch, self.augment, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        collate(&items, self.with_mask, self.mask_channels)
    }
}

pub(crate) fn for_each_batch<T, F>(ctx: &BatchContext<'_>, num_workers: usize, mut f: F) -> Result<()>
where
    T: Element,
    F: FnMut(Result<Batch<T>>) -> Result<()>,
{
    let steps = ctx.plan.len();
    if num_workers == 0 {
        for step in 0..steps {
            f(ctx.build(step))?;
        }
        return Ok(());
    }
    let workers = num_workers.min(steps.max(1));
    std::thread::scope(|scope| {
        let mut queues = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = sync_channel(QUEUE_DEPTH);
            queues.push(rx);
            scope.spawn(move || {
                for step in (w..steps).step_by(workers) {
                    if tx.send(ctx.build::<T>(step)).is_err() {
                        break;
                    }
                }
            });
        }
        let mut result = Ok(());
        for step in 0..steps {
            let batch = queues[step % workers].recv().expect("worker sends every assigned step");
            if let Err(e) = f(batch) {
                result = Err(e);
                break;
            }
        }
        // unblock workers still waiting on a full queue
        drop(queues);
        result
    })
}
