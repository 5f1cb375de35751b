//! The published snapshot and the single-writer rebuild slot.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use explore_core::ModelSnapshot;

use crate::error::ApiError;

#[derive(Default)]
pub struct AppState {
    published: RwLock<Option<Arc<ModelSnapshot>>>,
    rebuilding: AtomicBool,
}

/// Held while a new snapshot is being built; releases the slot on drop.
pub struct RebuildGuard<'a> {
    state: &'a AppState,
}

impl Drop for RebuildGuard<'_> {
    fn drop(&mut self) {
        self.state.rebuilding.store(false, Ordering::Release);
    }
}

impl AppState {
    pub fn new(snapshot: Option<ModelSnapshot>) -> Self {
        AppState {
            published: RwLock::new(snapshot.map(Arc::new)),
            rebuilding: AtomicBool::new(false),
        }
    }

    /// Current snapshot. Readers keep their `Arc` for the whole request, so
    /// a concurrent publish never changes what they see.
    pub fn current(&self) -> Result<Arc<ModelSnapshot>, ApiError> {
        self.published
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
            .ok_or_else(ApiError::no_snapshot)
    }

    pub fn publish(&self, snapshot: ModelSnapshot) {
        *self.published.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(snapshot));
    }

    /// Claims the rebuild slot, or `None` when another build is running.
    pub fn begin_rebuild(&self) -> Option<RebuildGuard<'_>> {
        self.rebuilding
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| RebuildGuard { state: self })
    }

    pub fn is_rebuilding(&self) -> bool {
        self.rebuilding.load(Ordering::Acquire)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_builder_at_a_time() {
        let state = AppState::new(None);
        let guard = state.begin_rebuild().unwrap();
        assert!(state.begin_rebuild().is_none());
        assert!(state.is_rebuilding());
        drop(guard);
        assert!(state.begin_rebuild().is_some());
    }

    #[test]
    fn empty_state_is_unavailable() {
        assert_eq!(AppState::new(None).current().unwrap_err().code, "no_snapshot");
    }
}
