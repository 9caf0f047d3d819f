//! Fingerprints of the discrete choices made during a forward pass.
//!
//! Piecewise layers (ReLU masks, max-pool winners, channel-max winners)
//! report their choices here. Outside [`traced`] recording is a no-op, so
//! the only cost is a thread-local lookup per layer call.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

thread_local! {
    static TRACE: RefCell<Option<DefaultHasher>> = const { RefCell::new(None) };
}

pub(crate) fn record<H: Hash + ?Sized>(choices: &H) {
    TRACE.with(|t| {
        if let Some(h) = t.borrow_mut().as_mut() {
            choices.hash(h);
        }
    });
}

/// Run `f` and return its result with a hash of every choice recorded on
/// this thread meanwhile.
pub(crate) fn traced<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = TRACE.with(|t| t.borrow_mut().replace(DefaultHasher::new()));
    let out = f();
    let hash = TRACE.with(|t| {
        let mut slot = t.borrow_mut();
        let h = slot.take().expect("trace installed above").finish();
        *slot = outer;
        h
    });
    (out, hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traces_are_scoped_and_deterministic() {
        let ((), a) = traced(|| record(&[true, false]));
        let ((), b) = traced(|| record(&[true, false]));
        let ((), c) = traced(|| record(&[false, false]));
        assert_eq!(a, b);
        assert_ne!(a, c);
        record(&[1u8]);
    }
}
