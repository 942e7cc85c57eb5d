//! Pipeline execution policies, selectable by name.
//!
//! The two policies differ only in when the source stage may start a new
//! generation iteration of a micro-batch: with the barrier policy
//! (`bubbles`) every micro-batch must have returned its previous token
//! first; without it (`no_bubbles`) each micro-batch proceeds as soon as
//! its own token is back.

/// Readiness rule for stage-0 tasks of generation iterations.
pub trait SchedulePolicy: Sync {
    fn name(&self) -> &'static str;
    /// Micro-batches whose previous-iteration token return gates stage 0 of
    /// `micro_batch`.
    fn stage_zero_gate(&self, micro_batch: usize, micro_batches: usize) -> Vec<usize>;
}

/// Iteration barrier: all micro-batches finish an iteration before any
/// starts the next one.
pub struct Bubbles;

impl SchedulePolicy for Bubbles {
    fn name(&self) -> &'static str {
        "bubbles"
    }

    fn stage_zero_gate(&self, _micro_batch: usize, micro_batches: usize) -> Vec<usize> {
        (0..micro_batches).collect()
    }
}

/// Immediate continuation: a micro-batch only waits for its own token.
pub struct NoBubbles;

impl SchedulePolicy for NoBubbles {
    fn name(&self) -> &'static str {
        "no_bubbles"
    }

    fn stage_zero_gate(&self, micro_batch: usize, _micro_batches: usize) -> Vec<usize> {
        vec![micro_batch]
    }
}

static BUBBLES: Bubbles = Bubbles;
static NO_BUBBLES: NoBubbles = NoBubbles;
static REGISTRY: [&dyn SchedulePolicy; 2] = [&BUBBLES, &NO_BUBBLES];

/// All built-in policies.
pub fn registry() -> &'static [&'static dyn SchedulePolicy] {
    &REGISTRY
}

pub fn by_name(name: &str) -> Option<&'static dyn SchedulePolicy> {
    registry().iter().copied().find(|p| p.name() == name)
}
