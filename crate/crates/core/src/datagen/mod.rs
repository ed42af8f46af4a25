//! Synthetic word-block generation.

mod compose;
mod dataset;
pub mod font;
mod glyphs;

pub use compose::{compose_block, make_variant_family, AugmentConfig, BlockDraw, Range, SymbolDraw, WordBlockSample};
pub use dataset::{
    allocate, gen_dataset, image_path, read_manifest, write_dataset, DatasetSpec, Generator, GlyphSource, LabelMix,
    LabelSource, ManifestEntry, Split,
};
pub use glyphs::{load_glyph_bank, rasterize, synth_glyph_bank, GlyphBank, Provenance, WriterStyle, GLYPH_HEIGHT};

/// Order-sensitive 64-bit hash of `parts` (SplitMix64 finaliser chain).
pub fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}
