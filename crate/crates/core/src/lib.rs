//! EEG condition-decoding pipeline.
//!
//! The crate covers the full analysis chain:
//!
//! ```text
//! recordings (JSON manifest + raw f32)
//!   ├─ preprocess    band-pass FIR, bad-channel repair, ASR bursts,
//!   │                EOG regression, common average reference
//!   ├─ windows       4 s sliding windows, 2 s hop, per annotated segment
//!   ├─ features      multitaper band power (channels x bands) and
//!   │                MVAR/PDC directed coherence (28 x 28 x bands)
//!   ├─ normalize     relative change from per-subject baseline, then
//!   │                z-scored across all subjects
//!   ├─ rank          two-class Kruskal-Wallis p-values, Bonferroni
//!   └─ evaluate      polynomial-kernel SVM, leave-one-subject-out,
//!                    scrambled-label baselines, feature-count sweep
//! ```
//!
//! `synthgen` builds seeded multi-subject studies with planted effects so
//! every stage can be validated against known ground truth.

pub mod connectivity;
pub mod error;
pub mod features;
pub mod ml;
pub mod preprocess;
pub mod seeds;
pub mod signal_io;
pub mod spectral;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
pub use features::{FeatureDesc, FeatureMatrix, RowLabel};
pub use signal_io::{
    load_recording, save_recording, segment_windows, standard_montage, Annotation, ChannelRole,
    Montage, Recording, Window,
};
pub use spectral::{canonical_bands, FrequencyBand, MultitaperConfig};
