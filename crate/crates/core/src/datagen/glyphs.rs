//! Glyph banks: per-writer symbol images, either rendered from the built-in
//! stroke font or loaded from a directory tree.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::font::{skeleton, Skeleton};
use super::mix;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::lexicon::SymbolLexicon;

/// Height of every glyph image in pixels.
pub const GLYPH_HEIGHT: usize = 40;
/// Pixels per font unit.
const UNIT: f64 = 4.0;
/// Font units above the cap line.
const TOP: f64 = 0.8;
/// Horizontal margin on each side, in font units.
const MARGIN: f64 = 0.5;
/// Height of the ink box loaded glyphs are scaled to.
const LOADED_INK_HEIGHT: usize = 26;

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Synthetic { seed: u64 },
    Directory(PathBuf),
}

/// Style parameters shared by all glyphs of one synthetic writer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WriterStyle {
    pub stroke_px: f64,
    pub slant: f64,
    pub width_scale: f64,
    pub jitter: f64,
}

impl WriterStyle {
    pub fn draw(seed: u64, writer: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, writer as u64, 0x5717]));
        WriterStyle {
            stroke_px: rng.random_range(1.8..3.2),
            slant: rng.random_range(-0.15..0.15),
            width_scale: rng.random_range(0.9..1.1),
            jitter: rng.random_range(0.1..0.25),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphBank {
    glyphs: BTreeMap<(u32, char), Vec<GrayImage>>,
    provenance: Provenance,
    supplemented: Vec<(u32, char)>,
}

impl GlyphBank {
    pub fn new(provenance: Provenance) -> Self {
        GlyphBank {
            glyphs: BTreeMap::new(),
            provenance,
            supplemented: Vec::new(),
        }
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Keys filled in from the stroke font after a directory load.
    pub fn supplemented(&self) -> &[(u32, char)] {
        &self.supplemented
    }

    pub fn insert(&mut self, writer: u32, symbol: char, glyph: GrayImage) {
        self.glyphs.entry((writer, symbol)).or_default().push(glyph);
    }

    /// Number of `(writer, symbol)` keys.
    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn writers(&self) -> Vec<u32> {
        let mut w: Vec<u32> = self.glyphs.keys().map(|&(w, _)| w).collect();
        w.dedup();
        w
    }

    pub fn glyphs(&self, writer: u32, symbol: char) -> Option<&[GrayImage]> {
        self.glyphs.get(&(writer, symbol)).map(|v| v.as_slice())
    }

    /// Lexicon symbols each writer lacks; writers with full coverage are omitted.
    pub fn missing(&self, lexicon: &SymbolLexicon) -> BTreeMap<u32, Vec<char>> {
        let mut out = BTreeMap::new();
        for w in self.writers() {
            let gaps: Vec<char> = lexicon.visible().iter().copied().filter(|&c| self.glyphs(w, c).is_none()).collect();
            if !gaps.is_empty() {
                out.insert(w, gaps);
            }
        }
        out
    }

    /// Renders every gap in `lexicon` coverage from the stroke font.
    pub fn supplement(&mut self, lexicon: &SymbolLexicon, seed: u64, variants: usize) -> Result<()> {
        for (w, gaps) in self.missing(lexicon) {
            let style = WriterStyle::draw(seed, w);
            for c in gaps {
                for v in 0..variants.max(1) {
                    self.insert(w, c, render_variant(c, style, mix(&[seed, w as u64, c as u64, v as u64]))?);
                }
                self.supplemented.push((w, c));
            }
        }
        Ok(())
    }
}

/// Rasterises a skeleton as anti-aliased thick polylines.
pub fn rasterize(sk: &Skeleton, style: WriterStyle) -> GrayImage {
    let width = ((sk.width * style.width_scale + 2.0 * MARGIN + 2.0 * style.slant.abs()) * UNIT).ceil() as usize;
    let shift = MARGIN + style.slant.abs();
    let to_px = |(x, y): (f64, f64)| -> (f64, f64) {
        let x = x * style.width_scale + style.slant * (6.0 - y) + shift;
        (x * UNIT, (y + TOP) * UNIT)
    };
    let half = style.stroke_px / 2.0;
    let mut img = GrayImage::new(GLYPH_HEIGHT, width.max(1));
    for stroke in &sk.strokes {
        let pts: Vec<(f64, f64)> = stroke.iter().map(|&p| to_px(p)).collect();
        let segs: Vec<((f64, f64), (f64, f64))> = if pts.len() == 1 {
            vec![(pts[0], pts[0])]
        } else {
            pts.windows(2).map(|w| (w[0], w[1])).collect()
        };
        for (a, b) in segs {
            let pad = half + 1.0;
            let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + pad).ceil() as usize).min(img.width());
            let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + pad).ceil() as usize).min(img.height());
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = segment_distance((x as f64, y as f64), a, b);
                    let v = (half + 0.5 - d).clamp(0.0, 1.0) as f32;
                    if v > img.get(y, x) {
                        img.set(y, x, v);
                    }
                }
            }
        }
    }
    img
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn render_variant(c: char, style: WriterStyle, seed: u64) -> Result<GrayImage> {
    let mut sk = skeleton(c).ok_or(Error::UnknownSymbol { symbol: c, position: 0 })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for stroke in &mut sk.strokes {
        for p in stroke.iter_mut() {
            p.0 += rng.random_range(-style.jitter..=style.jitter);
            p.1 += rng.random_range(-style.jitter..=style.jitter);
        }
    }
    Ok(rasterize(&sk, style))
}

/// Renders `variants` jittered glyphs per symbol for writers `0..writers`.
pub fn synth_glyph_bank(lexicon: &SymbolLexicon, writers: u32, variants: usize, seed: u64) -> Result<GlyphBank> {
    if writers == 0 {
        return Err(Error::Config("writer count must be at least 1".into()));
    }
    let mut bank = GlyphBank::new(Provenance::Synthetic { seed });
    for w in 0..writers {
        let style = WriterStyle::draw(seed, w);
        for &c in lexicon.visible() {
            for v in 0..variants.max(1) {
                bank.insert(w, c, render_variant(c, style, mix(&[seed, w as u64, c as u64, v as u64]))?);
            }
        }
    }
    Ok(bank)
}

fn parse_codepoint(name: &str) -> Option<char> {
    let hex = name.strip_prefix("U+").or_else(|| name.strip_prefix("u+")).unwrap_or(name);
    char::from_u32(u32::from_str_radix(hex, 16).ok()?)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Crops to the ink box and scales it into a [`GLYPH_HEIGHT`]-tall canvas.
fn normalize_loaded(img: &GrayImage) -> Option<GrayImage> {
    let (y0, y1, x0, x1) = img.ink_bounds(0.1)?;
    let ink = img.crop(y0, y1, x0, x1);
    let scale = LOADED_INK_HEIGHT as f64 / ink.height() as f64;
    let w = ((ink.width() as f64 * scale).round() as usize).max(1);
    let ink = ink.resize(LOADED_INK_HEIGHT, w);
    let top = (GLYPH_HEIGHT - LOADED_INK_HEIGHT) / 2;
    let margin = (MARGIN * UNIT) as usize;
    let mut out = GrayImage::new(GLYPH_HEIGHT, w + 2 * margin);
    for y in 0..ink.height() {
        for x in 0..ink.width() {
            out.set(top + y, margin + x, ink.get(y, x));
        }
    }
    Some(out)
}

/// Loads `root/<writer>/<hex codepoint>/*.png|*.pgm`.
///
/// Writer directories are decimal ids; symbol directories are hexadecimal
/// code points with an optional `U+` prefix. Symbols outside `lexicon` and
/// blank images are skipped with a warning; colour images are reduced to
/// luminance with a warning.
pub fn load_glyph_bank(root: &Path, lexicon: &SymbolLexicon) -> Result<GlyphBank> {
    let mut bank = GlyphBank::new(Provenance::Directory(root.to_path_buf()));
    for wdir in sorted_entries(root)? {
        if !wdir.is_dir() {
            continue;
        }
        let Some(writer) = wdir.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse::<u32>().ok()) else {
            log::warn!("{}: not a writer id, skipped", wdir.display());
            continue;
        };
        for sdir in sorted_entries(&wdir)? {
            if !sdir.is_dir() {
                continue;
            }
            let Some(symbol) = sdir.file_name().and_then(|n| n.to_str()).and_then(parse_codepoint) else {
                log::warn!("{}: not a code point, skipped", sdir.display());
                continue;
            };
            if !lexicon.contains(symbol) {
                log::warn!("{}: symbol {symbol:?} not in lexicon, skipped", sdir.display());
                continue;
            }
            for file in sorted_entries(&sdir)? {
                let ext = file.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                if !matches!(ext.as_deref(), Some("png" | "pgm")) {
                    continue;
                }
                let (img, converted) = GrayImage::load(&file)?;
                if converted {
                    log::warn!("{}: colour image reduced to luminance", file.display());
                }
                match normalize_loaded(&img) {
                    Some(g) => bank.insert(writer, symbol, g),
                    None => log::warn!("{}: no ink, skipped", file.display()),
                }
            }
        }
    }
    if bank.is_empty() {
        return Err(Error::EmptyGlyphBank);
    }
    for (w, gaps) in bank.missing(lexicon) {
        log::info!("writer {w}: {} lexicon symbols missing", gaps.len());
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digits() -> SymbolLexicon {
        SymbolLexicon::new("0123456789".chars()).unwrap()
    }

    #[test]
    fn synthetic_bank_is_deterministic_and_total() {
        let lex = SymbolLexicon::default_lexicon();
        let a = synth_glyph_bank(&lex, 2, 1, 9).unwrap();
        let b = synth_glyph_bank(&lex, 2, 1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * lex.visible().len());
        assert!(a.missing(&lex).is_empty());
        assert_ne!(a.glyphs(0, 'a'), a.glyphs(1, 'a'));
        for g in a.glyphs.values().flatten() {
            assert!(!g.is_empty());
            assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(g.ink_bounds(0.5).is_some());
        }
        assert!(synth_glyph_bank(&lex, 0, 1, 9).is_err());
    }

    #[test]
    fn directory_bank() {
        let dir = tempfile::tempdir().unwrap();
        let synth = synth_glyph_bank(&digits(), 2, 1, 3).unwrap();
        for w in 0..2u32 {
            for c in '0'..='9' {
                let d = dir.path().join(w.to_string()).join(format!("{:04X}", c as u32));
                std::fs::create_dir_all(&d).unwrap();
                synth.glyphs(w, c).unwrap()[0].save_png(&d.join("a.png")).unwrap();
            }
        }
        let bank = load_glyph_bank(dir.path(), &digits()).unwrap();
        assert_eq!(bank.len(), 20);
        assert_eq!(bank.writers(), vec![0, 1]);
        assert_eq!(bank.provenance(), &Provenance::Directory(dir.path().to_path_buf()));

        let lex = SymbolLexicon::new("0123456789+".chars()).unwrap();
        let mut bank = load_glyph_bank(dir.path(), &lex).unwrap();
        assert_eq!(bank.missing(&lex).get(&1), Some(&vec!['+']));
        bank.supplement(&lex, 5, 1).unwrap();
        assert!(bank.missing(&lex).is_empty());
        assert_eq!(bank.supplemented(), &[(0, '+'), (1, '+')]);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_glyph_bank(dir.path(), &digits()), Err(Error::EmptyGlyphBank)));
    }

    #[test]
    fn colour_glyphs_are_reduced_to_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("0").join("U+0031");
        std::fs::create_dir_all(&d).unwrap();
        let mut rgb = image::RgbImage::from_pixel(20, 30, image::Rgb([255, 255, 255]));
        for y in 5..25 {
            rgb.put_pixel(10, y, image::Rgb([255, 0, 0]));
        }
        rgb.save(d.join("g.png")).unwrap();
        let bank = load_glyph_bank(dir.path(), &digits()).unwrap();
        let g = &bank.glyphs(0, '1').unwrap()[0];
        let peak = g.data().iter().cloned().fold(0.0f32, f32::max);
        // pure red has luminance 0.299, so ink 0.701
        assert!((peak - 0.701).abs() < 0.01, "{peak}");
    }
}
