//! Synthetic data: pattern families, tile rendering, photo degradation and
//! dataset assembly.

mod dataset;
mod degrade;
mod patterns;
mod render;

pub use dataset::{
    build_dataset, split_counts, Dataset, DatasetConfig, LabelCount, Manifest, SampleMeta, SampleRecord, Split,
    MANIFEST_FORMAT,
};
pub use degrade::{simulate_real, DegradeParams};
pub use patterns::{generate_pattern, PatternFamily};
pub use render::{render, tile_decode, RenderTileAtlas, IMAGE_SIZE, MIN_TILE_DISTANCE, TILE};

pub(crate) use patterns::generate_with_map;

/// Mixes a base seed with extra words (splitmix64 finalizer per word).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
