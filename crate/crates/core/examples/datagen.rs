//! Writes a small synthetic dataset and a slant/noise variant family.
//!
//! `cargo run --release --example datagen -- [OUT_DIR]`

use std::path::PathBuf;

use wordblock::datagen::{gen_dataset, make_variant_family, DatasetSpec, GlyphSource, LabelMix};

fn main() -> wordblock::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("wordblock-datagen"), PathBuf::from);
    let spec = DatasetSpec {
        samples: 24,
        seed: 11,
        mix: LabelMix { dictionary: 0.5, alphanumeric: 0.25, numeric: 0.25 },
        length_range: (1, 8),
        dictionary: ["time", "table", "Paris", "42nd", "naïve"].iter().map(|w| w.to_string()).collect(),
        glyphs: GlyphSource::Synthetic { writers: 4, variants: 2, seed: 3 },
        holdout_fraction: 0.25,
        ..DatasetSpec::default()
    };
    let entries = gen_dataset(&spec, &out)?;
    for e in entries.iter().take(8) {
        println!("{} {:?} writer {} {:?} {:?}", e.image, e.label, e.writer, e.source, e.split);
    }
    println!("{} samples in {}", entries.len(), out.display());

    let (first, _) = wordblock::image::GrayImage::load(&out.join(&entries[0].image))?;
    let family = make_variant_family(&first, &[-10.0, 0.0, 10.0], &[0.0, 0.05], 1);
    for (k, v) in family.iter().enumerate() {
        v.save_png(&out.join(format!("variant_{k}.png")))?;
    }
    println!("{} variants of {}", family.len(), entries[0].image);
    Ok(())
}
