//! Word-block composition with per-symbol and block-level augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::glyphs::GlyphBank;
use super::mix;
use crate::error::{Error, Result};
use crate::image::{Border, GrayImage};

/// Closed interval `[low, high]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn fixed(v: f64) -> Self {
        Range(v, v)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.0 <= v && v <= self.1
    }

    pub fn max_abs(&self) -> f64 {
        self.0.abs().max(self.1.abs())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-symbol offset in pixels, drawn separately for x and y.
    pub displacement: Range,
    /// Per-symbol horizontal scale factor.
    pub stretch: Range,
    /// Per-symbol rotation in degrees.
    pub rotation: Range,
    /// Gap between neighbouring symbols in pixels.
    pub spacing: Range,
    /// Block shear in degrees.
    pub skew: Range,
    /// Amplitude of uniform per-pixel noise.
    pub noise: Range,
    /// Gaussian blur sigma in pixels.
    pub blur: Range,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            displacement: Range(-2.0, 2.0),
            stretch: Range(0.9, 1.1),
            rotation: Range(-10.0, 10.0),
            spacing: Range(0.0, 3.0),
            skew: Range(-15.0, 15.0),
            noise: Range(0.0, 0.1),
            blur: Range(0.0, 1.5),
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation disabled and no spacing.
    pub fn off() -> Self {
        AugmentConfig {
            displacement: Range::fixed(0.0),
            stretch: Range::fixed(1.0),
            rotation: Range::fixed(0.0),
            spacing: Range::fixed(0.0),
            skew: Range::fixed(0.0),
            noise: Range::fixed(0.0),
            blur: Range::fixed(0.0),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("displacement", self.displacement),
            ("stretch", self.stretch),
            ("rotation", self.rotation),
            ("spacing", self.spacing),
            ("skew", self.skew),
            ("noise", self.noise),
            ("blur", self.blur),
        ];
        for (name, r) in ranges {
            if !(r.0.is_finite() && r.1.is_finite() && r.0 <= r.1) {
                return Err(Error::Config(format!("{name} range [{}, {}] is not an interval", r.0, r.1)));
            }
        }
        for (name, r) in [("spacing", self.spacing), ("noise", self.noise), ("blur", self.blur)] {
            if r.0 < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if self.stretch.0 <= 0.0 {
            return Err(Error::Config("stretch must be positive".into()));
        }
        if self.skew.max_abs() >= 80.0 || self.rotation.max_abs() >= 90.0 {
            return Err(Error::Config("skew and rotation must stay below 80 and 90 degrees".into()));
        }
        Ok(())
    }
}

/// Parameters drawn for one symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolDraw {
    pub symbol: char,
    /// Index into the writer's glyph list.
    pub glyph: usize,
    pub dx: f64,
    pub dy: f64,
    pub stretch: f64,
    pub rotation: f64,
    /// Gap after this symbol.
    pub spacing: f64,
}

/// Everything drawn while composing one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDraw {
    pub symbols: Vec<SymbolDraw>,
    pub skew: f64,
    pub noise: f64,
    pub blur: f64,
}

impl BlockDraw {
    /// True when every value lies inside `cfg`'s ranges.
    pub fn within(&self, cfg: &AugmentConfig) -> bool {
        self.symbols.iter().all(|s| {
            cfg.displacement.contains(s.dx)
                && cfg.displacement.contains(s.dy)
                && cfg.stretch.contains(s.stretch)
                && cfg.rotation.contains(s.rotation)
                && cfg.spacing.contains(s.spacing)
        }) && cfg.skew.contains(self.skew)
            && cfg.noise.contains(self.noise)
            && cfg.blur.contains(self.blur)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordBlockSample {
    pub image: GrayImage,
    pub label: String,
    pub writer: u32,
    pub seed: u64,
    pub draw: BlockDraw,
}

fn transform_glyph(g: &GrayImage, stretch: f64, rotation: f64, dy: f64) -> GrayImage {
    if stretch == 1.0 && rotation == 0.0 && dy == 0.0 {
        return g.clone();
    }
    let w = ((g.width() as f64 * stretch).round() as usize).max(1);
    let (cy, cx_out, cx_in) = (
        (g.height() as f64 - 1.0) / 2.0,
        (w as f64 - 1.0) / 2.0,
        (g.width() as f64 - 1.0) / 2.0,
    );
    let (s, c) = rotation.to_radians().sin_cos();
    g.warp(g.height(), w, Border::Zero, |y, x| {
        let u = x - cx_out;
        let v = y - cy - dy;
        let (ru, rv) = (c * u + s * v, -s * u + c * v);
        (rv + cy, ru / stretch + cx_in)
    })
}

/// Composes `label` from `writer`'s glyphs.
pub fn compose_block(label: &str, writer: u32, bank: &GlyphBank, cfg: &AugmentConfig, seed: u64) -> Result<WordBlockSample> {
    cfg.validate()?;
    if label.is_empty() {
        return Err(Error::SymbolCount(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.rng_seed, seed]));
    let mut draws = Vec::new();
    let mut pieces = Vec::new();
    for symbol in label.chars() {
        let list = bank.glyphs(writer, symbol).ok_or(Error::MissingGlyph { symbol, writer })?;
        let glyph = if list.len() == 1 { 0 } else { rng.random_range(0..list.len()) };
        let d = SymbolDraw {
            symbol,
            glyph,
            dx: cfg.displacement.draw(&mut rng),
            dy: cfg.displacement.draw(&mut rng),
            stretch: cfg.stretch.draw(&mut rng),
            rotation: cfg.rotation.draw(&mut rng),
            spacing: cfg.spacing.draw(&mut rng),
        };
        pieces.push(transform_glyph(&list[glyph], d.stretch, d.rotation, d.dy));
        draws.push(d);
    }
    let skew = cfg.skew.draw(&mut rng);
    let noise = cfg.noise.draw(&mut rng);
    let blur = cfg.blur.draw(&mut rng);

    let height = pieces.iter().map(GrayImage::height).max().unwrap_or(0);
    let skew_pad = if cfg.skew.max_abs() > 0.0 {
        (cfg.skew.max_abs().to_radians().tan() * height as f64 / 2.0).ceil() as usize + 1
    } else {
        0
    };
    let pad = cfg.displacement.max_abs().ceil() as usize + skew_pad;
    let advance: usize = pieces
        .iter()
        .zip(&draws)
        .map(|(p, d)| p.width() + d.spacing.round() as usize)
        .sum::<usize>()
        - draws.last().map_or(0, |d| d.spacing.round() as usize);
    let mut canvas = GrayImage::new(height, advance + 2 * pad);
    let mut cursor = pad as isize;
    for (p, d) in pieces.iter().zip(&draws) {
        let x0 = cursor + d.dx.round() as isize;
        for y in 0..p.height() {
            for x in 0..p.width() {
                let cx = x0 + x as isize;
                if cx >= 0 && (cx as usize) < canvas.width() {
                    let v = p.get(y, x).max(canvas.get(y, cx as usize));
                    canvas.set(y, cx as usize, v);
                }
            }
        }
        cursor += p.width() as isize + d.spacing.round() as isize;
    }

    let mut image = canvas.shear(skew, Border::Zero);
    if noise > 0.0 {
        for v in image.data_mut() {
            *v += rng.random_range(-noise..=noise) as f32;
        }
    }
    image = image.blur(blur);
    image.clamp_unit();
    Ok(WordBlockSample {
        image,
        label: label.to_string(),
        writer,
        seed,
        draw: BlockDraw { symbols: draws, skew, noise, blur },
    })
}

/// One canonical-size variant per `(slant, noise)` pair, slants outermost.
pub fn make_variant_family(image: &GrayImage, slants: &[f64], noise_levels: &[f64], seed: u64) -> Vec<GrayImage> {
    let mut out = Vec::with_capacity(slants.len() * noise_levels.len());
    for (si, &slant) in slants.iter().enumerate() {
        let sheared = image.shear(slant, Border::Clamp);
        for (ni, &level) in noise_levels.iter().enumerate() {
            let mut v = sheared.clone();
            if level > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, si as u64, ni as u64]));
                for p in v.data_mut() {
                    *p += rng.random_range(-level..=level) as f32;
                }
            }
            v.clamp_unit();
            out.push(v.resize(image.height(), image.width()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::synth_glyph_bank;
    use crate::lexicon::SymbolLexicon;
    use proptest::prelude::*;

    fn bank() -> GlyphBank {
        synth_glyph_bank(&SymbolLexicon::default_lexicon(), 2, 2, 4).unwrap()
    }

    #[test]
    fn identity_augmentation_concatenates_glyphs() {
        let b = bank();
        let s = compose_block("ab", 1, &b, &AugmentConfig::off(), 3).unwrap();
        let ga = &b.glyphs(1, 'a').unwrap()[s.draw.symbols[0].glyph];
        let gb = &b.glyphs(1, 'b').unwrap()[s.draw.symbols[1].glyph];
        assert_eq!(s.image.width(), ga.width() + gb.width());
        for y in 0..s.image.height() {
            for x in 0..ga.width() {
                assert_eq!(s.image.get(y, x), ga.get(y, x).max(0.0));
            }
            for x in 0..gb.width() {
                assert_eq!(s.image.get(y, ga.width() + x), gb.get(y, x));
            }
        }
    }

    #[test]
    fn composition_is_deterministic() {
        let b = bank();
        let cfg = AugmentConfig::default();
        let a = compose_block("(246)344-9702", 0, &b, &cfg, 11).unwrap();
        assert_eq!(a, compose_block("(246)344-9702", 0, &b, &cfg, 11).unwrap());
        assert_eq!(a.draw.symbols.len(), 13);
        assert_ne!(a.image, compose_block("(246)344-9702", 0, &b, &cfg, 12).unwrap().image);
    }

    #[test]
    fn missing_glyph_names_symbol_and_writer() {
        let b = bank();
        assert!(matches!(
            compose_block("a\u{263a}", 1, &b, &AugmentConfig::default(), 0),
            Err(Error::MissingGlyph { symbol: '\u{263a}', writer: 1 })
        ));
        assert!(matches!(
            compose_block("a", 7, &b, &AugmentConfig::default(), 0),
            Err(Error::MissingGlyph { symbol: 'a', writer: 7 })
        ));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let cfg = AugmentConfig { noise: Range(0.2, 0.1), ..AugmentConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = AugmentConfig { blur: Range(-1.0, 0.0), ..AugmentConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_families() {
        let img = GrayImage::from_fn(32, 256, |y, x| (0.5 + 0.4 * ((x as f32) / 40.0).sin() * ((y as f32) / 9.0).cos()).clamp(0.0, 1.0));
        assert_eq!(make_variant_family(&img, &[0.0], &[0.0], 1), vec![img.clone()]);
        let fam = make_variant_family(&img, &[-15.0, 0.0, 15.0], &[0.0], 1);
        assert_eq!(fam.len(), 3);
        assert!(fam.iter().all(|v| (v.height(), v.width()) == (32, 256)));
        let back = fam[2].shear(-15.0, Border::Clamp);
        assert!(back.mean_abs_diff(&img) <= 0.05);
        let flat = GrayImage::filled(32, 128, 0.3);
        let back = make_variant_family(&flat, &[15.0], &[0.0], 0)[0].shear(-15.0, Border::Clamp);
        assert!(back.mean_abs_diff(&flat) <= 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn drawn_parameters_stay_in_range(seed in any::<u64>(), label in "[a-z0-9]{1,5}") {
            let b = bank();
            let cfg = AugmentConfig::default();
            let s = compose_block(&label, 0, &b, &cfg, seed).unwrap();
            prop_assert!(s.draw.within(&cfg));
            prop_assert_eq!(&s.label, &label);
            prop_assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
