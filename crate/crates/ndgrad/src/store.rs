//! Shared parameter blocks for asynchronous training.
//!
//! Readers take a per-block consistent snapshot; writers update one block at a
//! time under that block's lock, so a snapshot taken during an update may mix
//! old and new blocks. [`AccessMode::Strict`] serializes every snapshot and
//! update through one lock.

use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, OptimizerConfig, SlotState};
use crate::params::{Gradients, ParamSet};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AccessMode {
    #[default]
    Concurrent,
    Strict,
}

struct Block<T> {
    value: Tensor<T>,
    slots: SlotState<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { version: u64, grad_norm: f64 },
    /// Non-finite gradient; nothing was written.
    Skipped,
}

pub struct ParameterStore<T> {
    names: Vec<String>,
    blocks: Vec<RwLock<Block<T>>>,
    config: OptimizerConfig,
    version: AtomicU64,
    incidents: AtomicU64,
    strict: Option<Mutex<()>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(params: ParamSet<T>, config: OptimizerConfig, mode: AccessMode) -> Result<Self> {
        config.validate()?;
        let names = params.names().to_vec();
        let blocks = params
            .iter()
            .map(|(_, t)| {
                RwLock::new(Block {
                    slots: SlotState::new(&config.kind, t.len()),
                    value: t.clone(),
                })
            })
            .collect();
        Ok(Self {
            names,
            blocks,
            config,
            version: AtomicU64::new(0),
            incidents: AtomicU64::new(0),
            strict: (mode == AccessMode::Strict).then(|| Mutex::new(())),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }

    /// Number of updates skipped because of non-finite gradients.
    pub fn incidents(&self) -> u64 {
        self.incidents.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> ParamSet<T> {
        let _guard = self.strict.as_ref().map(Mutex::lock);
        let mut set = ParamSet::new();
        for (name, block) in self.names.iter().zip(&self.blocks) {
            set.insert(name.clone(), block.read().value.clone())
                .expect("store block names are unique");
        }
        set
    }

    /// Clip (if configured), then apply one optimizer step block by block.
    pub fn apply(&self, mut grads: Gradients<T>) -> Result<StepOutcome> {
        if grads.names() != self.names.as_slice() {
            return Err(Error::InvalidTensor("gradient layout does not match the store".into()));
        }
        for (g, b) in grads.iter().zip(&self.blocks) {
            let value = &b.read().value;
            if g.1.shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: value.shape().to_vec(),
                    rhs: g.1.shape().to_vec(),
                });
            }
        }
        if !grads.all_finite() {
            let n = self.incidents.fetch_add(1, Ordering::Relaxed) + 1;
            log::warn!("non-finite gradient, update skipped (incident {n})");
            return Ok(StepOutcome::Skipped);
        }
        let _guard = self.strict.as_ref().map(Mutex::lock);
        let grad_norm = match self.config.max_grad_norm {
            Some(max) => clip_global_norm(&mut grads, max),
            None => grads.global_norm(),
        };
        for (i, block) in self.blocks.iter().enumerate() {
            let mut block = block.write();
            let Block { value, slots } = &mut *block;
            slots.apply(&self.config, value, grads.get(i).data());
        }
        let version = self.version.fetch_add(1, Ordering::AcqRel) + 1;
        Ok(StepOutcome::Applied { version, grad_norm })
    }
}

/// One optimizer step on `store`: clipping, L2 and the update rule, then a version bump.
pub fn optimizer_step<T: Real>(store: &ParameterStore<T>, grads: Gradients<T>) -> Result<StepOutcome> {
    store.apply(grads)
}
