//! Synthetic two-palette corpus of coloured shapes on a textured gray
//! background, plus its on-disk manifest.

use std::fs;
use std::path::{Path, PathBuf};

use sentigan_tensor::{RngState, Tensor};

use crate::error::{Error, Result};
use crate::image::{hsv_to_rgb, Image, ObjectMask};
use crate::io::{read_image, read_mask, read_text, resolve, write_atomic, write_image, write_mask};

#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    pub word: String,
    /// Hue range in degrees.
    pub hue: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub count: usize,
    pub image_size: usize,
    pub max_objects: usize,
    pub palettes: Vec<Palette>,
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl SyntheticCorpusSpec {
    /// Warm (hue 0–60°) and cold (hue 180–260°) palettes.
    pub fn two_palette(count: usize, image_size: usize, seed: u64) -> Self {
        Self {
            count,
            image_size,
            max_objects: 3,
            palettes: vec![
                Palette { word: "warm".into(), hue: (0.0, 60.0) },
                Palette { word: "cold".into(), hue: (180.0, 260.0) },
            ],
            texture_amplitude: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::contract("a corpus needs at least 2 samples"));
        }
        if self.image_size < 8 || self.max_objects == 0 || self.palettes.is_empty() {
            return Err(Error::contract(format!("invalid corpus spec {self:?}")));
        }
        for (i, a) in self.palettes.iter().enumerate() {
            if !(a.hue.0 < a.hue.1) {
                return Err(Error::contract(format!("palette {} has an empty hue range", a.word)));
            }
            for b in &self.palettes[i + 1..] {
                if a.hue.0 < b.hue.1 && b.hue.0 < a.hue.1 {
                    return Err(Error::contract(format!("palettes {} and {} overlap", a.word, b.word)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CorpusSample {
    pub image: Image,
    pub masks: Vec<(String, ObjectMask)>,
    /// `(adjective, noun)`.
    pub anp: (String, String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Disc,
    Rectangle,
}

impl Shape {
    fn noun(self) -> &'static str {
        match self {
            Shape::Disc => "disc",
            Shape::Rectangle => "rectangle",
        }
    }

    fn contains(self, cx: f64, cy: f64, r: f64, x: f64, y: f64) -> bool {
        match self {
            Shape::Disc => (x - cx).hypot(y - cy) <= r,
            Shape::Rectangle => (x - cx).abs() <= r && (y - cy).abs() <= r * 0.7,
        }
    }
}

/// Sample `i` uses palette `i mod P`; every object takes a hue from it.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<CorpusSample>> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    (0..spec.count).map(|i| generate_sample(spec, i, &mut root.derive(i as u64))).collect()
}

fn generate_sample(spec: &SyntheticCorpusSpec, index: usize, rng: &mut RngState) -> Result<CorpusSample> {
    let s = spec.image_size;
    let plane = s * s;
    let palette = &spec.palettes[index % spec.palettes.len()];

    let (fx, fy) = (rng.uniform_range(0.15, 0.6), rng.uniform_range(0.15, 0.6));
    let (px, py) = (rng.uniform_range(0.0, std::f64::consts::TAU), rng.uniform_range(0.0, std::f64::consts::TAU));
    let base = rng.uniform_range(0.4, 0.6);
    let mut rgb = vec![0.0f64; 3 * plane];
    for y in 0..s {
        for x in 0..s {
            let v = base + spec.texture_amplitude * (fx * x as f64 + px).sin() * (fy * y as f64 + py).sin();
            for c in 0..3 {
                rgb[c * plane + y * s + x] = v;
            }
        }
    }

    let wanted = 1 + rng.below(spec.max_objects);
    let mut occupied = vec![false; plane];
    let mut masks = Vec::new();
    for _ in 0..wanted {
        let shape = if rng.below(2) == 0 { Shape::Disc } else { Shape::Rectangle };
        let r = rng.uniform_range(s as f64 / 8.0, s as f64 / 4.0);
        let hue = rng.uniform_range(palette.hue.0, palette.hue.1);
        let sat = rng.uniform_range(0.6, 0.95);
        let val = rng.uniform_range(0.55, 0.95);
        let mut placed = None;
        for _ in 0..50 {
            let cx = rng.uniform_range(r, s as f64 - r);
            let cy = rng.uniform_range(r, s as f64 - r);
            let cover: Vec<bool> = (0..plane)
                .map(|p| shape.contains(cx, cy, r, (p % s) as f64 + 0.5, (p / s) as f64 + 0.5))
                .collect();
            // One pixel of clearance keeps objects from touching.
            let clash = (0..plane).any(|p| {
                cover[p] && {
                    let (x, y) = ((p % s) as isize, (p / s) as isize);
                    (-1..=1).any(|dy| {
                        (-1..=1).any(|dx| {
                            let (xx, yy) = (x + dx, y + dy);
                            xx >= 0 && yy >= 0 && xx < s as isize && yy < s as isize && occupied[yy as usize * s + xx as usize]
                        })
                    })
                }
            });
            if !clash && cover.iter().any(|&c| c) {
                placed = Some((cx, cy, cover));
                break;
            }
        }
        let Some((cx, cy, cover)) = placed else { continue };
        for p in 0..plane {
            if !cover[p] {
                continue;
            }
            occupied[p] = true;
            // Gentle radial shading gives the object some internal structure.
            let d = ((p % s) as f64 + 0.5 - cx).hypot((p / s) as f64 + 0.5 - cy) / r;
            let col = hsv_to_rgb(hue, sat, val * (1.0 - 0.2 * d.min(1.0)));
            for c in 0..3 {
                rgb[c * plane + p] = col[c];
            }
        }
        let m = ObjectMask::new(s, s, cover.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect())?;
        masks.push((shape.noun().to_string(), m));
    }
    if masks.is_empty() {
        return Err(Error::contract(format!("sample {index}: no object could be placed")));
    }
    let data = rgb.iter().map(|&v| (2.0 * v - 1.0).clamp(-1.0, 1.0) as f32).collect();
    let image = Image::new(Tensor::new(vec![3, s, s], data)?)?;
    let anp = (palette.word.clone(), masks[0].0.clone());
    Ok(CorpusSample { image, masks, anp })
}

/// Writes PNGs plus `corpus.tsv` into `dir` and returns the manifest path.
pub fn write_corpus(dir: &Path, samples: &[CorpusSample]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let img = format!("img_{i:04}.png");
        write_image(&dir.join(&img), &s.image)?;
        let mut fields = Vec::new();
        for (k, (noun, m)) in s.masks.iter().enumerate() {
            let mp = format!("img_{i:04}_m{k}.png");
            write_mask(&dir.join(&mp), m)?;
            fields.push(format!("{noun}={mp}"));
        }
        manifest.push_str(&format!("{img}\t{}\t{}_{}\n", fields.join(","), s.anp.0, s.anp.1));
    }
    let path = dir.join("corpus.tsv");
    write_atomic(&path, |w| w.write_all(manifest.as_bytes()).map_err(|e| Error::io(&path, e)))?;
    Ok(path)
}

/// Reads `image<TAB>noun=mask[,noun=mask...]<TAB>adjective_noun` lines.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusSample>> {
    let mut out = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format(format!("{}:{}: {what}", path.display(), n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [img, masks, anp] = cols[..] else { return Err(bad("expected three tab-separated fields")) };
        let image = read_image(&resolve(path, img.trim()))?;
        let mut ms = Vec::new();
        for entry in masks.split(',') {
            let (noun, mp) = entry.split_once('=').ok_or_else(|| bad("mask entries must be noun=path"))?;
            let m = read_mask(&resolve(path, mp.trim()))?;
            m.ensure_matches(&image, "corpus mask")?;
            ms.push((noun.trim().to_string(), m));
        }
        let (adj, noun) = anp.trim().split_once('_').ok_or_else(|| bad("ANP must be adjective_noun"))?;
        out.push(CorpusSample { image, masks: ms, anp: (adj.to_string(), noun.to_string()) });
    }
    if out.is_empty() {
        return Err(Error::format(format!("{}: empty corpus", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{hue_distance, masked_mean_hue};

    #[test]
    fn deterministic_and_sized() {
        let spec = SyntheticCorpusSpec::two_palette(6, 32, 42);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.image.tensor().bitwise_eq(y.image.tensor()));
            assert_eq!(x.masks, y.masks);
            assert_eq!(x.anp, y.anp);
        }
    }

    #[test]
    fn object_hues_follow_their_palette() {
        let spec = SyntheticCorpusSpec::two_palette(20, 32, 7);
        for s in generate_corpus(&spec).unwrap() {
            assert!(!s.masks.is_empty() && s.masks.len() <= 3);
            let (lo, hi) = if s.anp.0 == "warm" { (0.0, 60.0) } else { (180.0, 260.0) };
            for (_, m) in &s.masks {
                let h = masked_mean_hue(&s.image, m).unwrap();
                let mid = (lo + hi) / 2.0;
                assert!(hue_distance(h, mid) <= (hi - lo) / 2.0 + 0.5, "{} hue {h}", s.anp.0);
            }
            // Objects are disjoint.
            for i in 0..s.masks.len() {
                for j in i + 1..s.masks.len() {
                    let overlap = s.masks[i].1.data().iter().zip(s.masks[j].1.data()).any(|(a, b)| a * b > 0.0);
                    assert!(!overlap);
                }
            }
            assert_eq!(s.anp.1, s.masks[0].0);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_corpus(&SyntheticCorpusSpec::two_palette(3, 16, 1)).unwrap();
        let path = write_corpus(dir.path(), &samples).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.image.to_rgb8(), b.image.to_rgb8());
            assert_eq!(a.masks, b.masks);
            assert_eq!(a.anp, b.anp);
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = SyntheticCorpusSpec::two_palette(1, 32, 0);
        assert!(spec.validate().is_err());
        spec.count = 4;
        spec.palettes[1].hue = (50.0, 100.0);
        assert!(spec.validate().is_err());
    }
}
