//! Post-processing, intersection-based matching and PSDS scoring.

mod events;
mod matching;
mod postprocess;
mod psds;

pub use events::{
    format_events, format_weak, parse_events, parse_weak, read_events, write_events, Event,
    EventList, EventTable,
};
pub use matching::{intersection_match, MatchCounts, Tolerances};
pub use postprocess::{
    decode, decode_column, effective_window, median_filter, median_filter_1d, weak_mask, MaskRule,
    PostProcess, FRAME_SECONDS,
};
pub use psds::{
    count_operating_point, psds, psds_from_counts, thresholds, ClipScores, PsdsParams, PsdsResult,
    RocPoint, ScoreReport,
};
