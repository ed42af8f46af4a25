//! The blank-straddled target layout, decoding, canonical resizing, and the
//! `(2N + 1) x N_s` output shape of an untrained symbol network.

use wordblock::align::{decode_alignment, encode_alignment, resize_canonical, resize_context, ProbSequence};
use wordblock::datagen::{compose_block, synth_glyph_bank, AugmentConfig};
use wordblock::lexicon::SymbolLexicon;
use wordblock::models::{build_symbol_cnn, SymbolNet};

fn main() -> wordblock::Result<()> {
    let lexicon = SymbolLexicon::default_lexicon();
    let label = "+6091620";
    let target = encode_alignment(label, &lexicon)?;
    let shown: Vec<String> = target.classes().iter().map(|&c| lexicon.symbol(c).map_or("<b>".into(), String::from)).collect();
    println!("{label} -> {}", shown.join(" "));

    // straddle rows are ignored by the decoder whatever they hold
    let mut probs = ProbSequence::one_hot(target.classes(), lexicon.len())?;
    for r in (0..probs.rows()).step_by(2) {
        probs.row_mut(r).iter_mut().for_each(|v| *v = 1.0 / lexicon.len() as f64);
    }
    println!("decoded: {}", decode_alignment(&probs, &lexicon)?);

    let bank = synth_glyph_bank(&lexicon, 1, 1, 0)?;
    let sample = compose_block("time", 0, &bank, &AugmentConfig::default(), 42)?;
    println!("composed block {}x{}", sample.image.height(), sample.image.width());
    let block = resize_canonical(&sample.image, 4)?;
    let context = resize_context(&sample.image);
    println!("canonical block {}x{}, context {}x{}", block.height(), block.width(), context.height(), context.width());

    let net = SymbolNet::<f32>::init(build_symbol_cnn(&lexicon, 0.25)?, 0);
    for n in [1, 4, 9] {
        let out = net.forward(&resize_canonical(&sample.image, n)?, &context)?;
        println!("N = {n}: output {} x {}", out.rows(), out.symbols());
    }
    Ok(())
}
