//! Newton–Schulz weight reinitialization (FIRE), the SFE/DfI metrics and
//! bound checks built around it, baseline reinitializers, and a small
//! trainable network to exercise them on.

pub mod baselines;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod orthogonalize;
pub mod params;
pub mod verify;

pub use linalg::{Matrix, SvdResult};
pub use metrics::{BoundCheck, PlasticityReport};
pub use orthogonalize::NsCoefficients;
pub use params::{Architecture, LayerWeights, NetworkParams};

/// Mixes a base seed with a stream tag and an index (SplitMix64 finalizer),
/// so independent random streams can be addressed without shared state.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z =
        base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
