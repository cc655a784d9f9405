//! Recording sessions, the canonical `EMG1` container, repetition-based
//! splits and the synthetic generator.

mod canonical;
mod session;
mod split;
mod synth;

pub use canonical::{decode_canonical, encode_canonical, load_canonical, load_dir, save_canonical};
pub use session::{Exercise, RecordingSession};
pub use split::{
    audit_disjoint, make_split, Scope, SegmentItem, SegmentSet, SplitPlan, SubjectSplit,
};
pub use synth::{synth_dataset, SynthSpec};
