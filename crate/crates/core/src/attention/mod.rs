//! Channel attention across radix branches, spatial attention, and the
//! bottleneck block that composes them.

mod bottleneck;
mod spatial;
mod splat;

pub use bottleneck::{Bottleneck, BottleneckCtx, BottleneckSpec};
pub use spatial::{SASpec, SpatialAttention, SpatialAttentionCtx};
pub use splat::{SplAtSpec, SplitAttention, SplitAttentionCtx, MIN_INTER_CHANNELS};
