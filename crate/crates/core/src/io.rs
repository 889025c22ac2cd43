//! File formats: 8-bit PNG rasters, attention text maps and the captions
//! manifest. Every writer goes through a temporary file and an atomic rename.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image, ObjectMask};
use crate::mask::{AttentionMap, CaptionNouns, SegmentationMap};

/// Writes `path` through a sibling temporary file renamed into place on success.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::format(format!("{}: not UTF-8 text", path.display())))
}

/// Resolves `entry` against the directory containing `manifest`.
pub fn resolve(manifest: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    manifest.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}

struct Raster {
    width: usize,
    height: usize,
    color: png::ColorType,
    data: Vec<u8>,
}

fn decode_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    buf.truncate(info.buffer_size());
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(format!("{}: expected 8-bit samples", path.display())));
    }
    Ok(Raster { width: info.width as usize, height: info.height as usize, color: info.color_type, data: buf })
}

fn png_error(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => Error::io(path, io),
        other => Error::format(format!("{}: invalid PNG: {other}", path.display())),
    }
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    write_atomic(path, |w| {
        let mut enc = png::Encoder::new(w, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let encode = |e: png::EncodingError| match e {
            png::EncodingError::IoError(io) => Error::io(path, io),
            other => Error::format(format!("{}: {other}", path.display())),
        };
        let mut writer = enc.write_header().map_err(encode)?;
        writer.write_image_data(data).map_err(encode)?;
        writer.finish().map_err(encode)
    })
}

/// Reads an RGB or RGBA PNG (alpha is discarded); grayscale is replicated.
pub fn read_image(path: &Path) -> Result<Image> {
    let r = decode_png(path)?;
    let rgb: Vec<u8> = match r.color {
        png::ColorType::Rgb => r.data,
        png::ColorType::Rgba => r.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => r.data.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => r.data.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
        png::ColorType::Indexed => return Err(Error::format(format!("{}: unexpanded palette", path.display()))),
    };
    Image::from_rgb8(r.width, r.height, &rgb)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    encode_png(path, image.width(), image.height(), png::ColorType::Rgb, &image.to_rgb8())
}

fn read_gray(path: &Path) -> Result<Raster> {
    let r = decode_png(path)?;
    if r.color != png::ColorType::Grayscale {
        return Err(Error::format(format!(
            "{}: expected single-channel PNG, got {:?}",
            path.display(),
            r.color
        )));
    }
    Ok(r)
}

pub fn read_mask(path: &Path) -> Result<ObjectMask> {
    let r = read_gray(path)?;
    ObjectMask::from_gray8(r.width, r.height, &r.data)
}

/// Written as `{0, 255}` 8-bit grayscale.
pub fn write_mask(path: &Path, mask: &ObjectMask) -> Result<()> {
    encode_png(path, mask.width(), mask.height(), png::ColorType::Grayscale, &mask.to_gray8())
}

/// Pixel values are the class labels.
pub fn read_segmentation(path: &Path) -> Result<SegmentationMap> {
    let r = read_gray(path)?;
    SegmentationMap::new(r.height, r.width, r.data)
}

pub fn write_segmentation(path: &Path, s: &SegmentationMap) -> Result<()> {
    encode_png(path, s.width(), s.height(), png::ColorType::Grayscale, s.labels())
}

/// `ATTN <rows> <cols>` followed by `rows·cols` whitespace-separated floats.
pub fn parse_attention(text: &str) -> Result<AttentionMap> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("ATTN") {
        return Err(Error::format("attention file must start with \"ATTN\""));
    }
    let mut dim = || -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::format("attention header needs two positive dimensions"))
    };
    let (h, w) = (dim()?, dim()?);
    let values = tokens
        .map(|t| t.parse::<f32>().map_err(|_| Error::format(format!("bad attention value {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != h * w {
        return Err(Error::format(format!("attention {h}×{w} needs {} values, found {}", h * w, values.len())));
    }
    AttentionMap::new(h, w, values)
}

pub fn format_attention(a: &AttentionMap) -> String {
    let mut s = format!("ATTN {} {}\n", a.height(), a.width());
    for row in a.data().chunks(a.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_attention(path: &Path) -> Result<AttentionMap> {
    parse_attention(&read_text(path)?).map_err(|e| prefix(path, e))
}

pub fn write_attention(path: &Path, a: &AttentionMap) -> Result<()> {
    let text = format_attention(a);
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}

/// One `noun<TAB>attention-path` line per occurrence; blank lines are skipped.
pub fn read_captions(path: &Path) -> Result<CaptionNouns> {
    let mut caps = CaptionNouns::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (noun, file) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(format!("{}:{}: expected noun<TAB>path", path.display(), n + 1)))?;
        let noun = noun.trim();
        if noun.is_empty() {
            return Err(Error::format(format!("{}:{}: empty noun", path.display(), n + 1)));
        }
        caps.push(noun, read_attention(&resolve(path, file.trim()))?);
    }
    if caps.is_empty() {
        return Err(Error::format(format!("{}: no caption nouns", path.display())));
    }
    Ok(caps)
}

fn prefix(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sentigan_tensor::Tensor;

    #[test]
    fn image_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.png");
        let rgb: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = Image::from_rgb8(4, 3, &rgb).unwrap();
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.to_rgb8(), rgb);
        assert!(back.tensor().bitwise_eq(img.tensor()));
    }

    #[test]
    fn mask_png_is_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = ObjectMask::new(1, 3, vec![0.0, 0.6, 1.0]).unwrap();
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap().data(), &[0.0, 1.0, 1.0]);
        assert!(matches!(read_segmentation(&dir.path().join("none.png")), Err(Error::Io { .. })));
    }

    #[test]
    fn rgb_file_is_not_a_mask() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        write_image(&p, &Image::new(Tensor::zeros(vec![3, 2, 2])).unwrap()).unwrap();
        assert!(matches!(read_mask(&p), Err(Error::Format(_))));
    }

    #[test]
    fn garbage_png_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        fs::write(&p, b"definitely not a png").unwrap();
        assert!(matches!(read_image(&p), Err(Error::Format(_))));
    }

    #[test]
    fn attention_text_round_trip() {
        let a = parse_attention("ATTN 2 3\n0 0.5 1\n0.25 0 2e-1\n").unwrap();
        assert_eq!(a.data(), &[0.0, 0.5, 1.0, 0.25, 0.0, 0.2]);
        assert_eq!(parse_attention(&format_attention(&a)).unwrap(), a);
        assert!(parse_attention("ATTN 2 2\n1 1 1").is_err());
        assert!(parse_attention("ATNN 1 1\n1").is_err());
        assert!(parse_attention("ATTN 1 1\nx").is_err());
    }

    #[test]
    fn captions_group_by_noun_and_resolve_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        fs::write(d.join("a.attn"), "ATTN 1 2\n1 0\n").unwrap();
        fs::write(d.join("b.attn"), "ATTN 1 2\n0 1\n").unwrap();
        fs::write(d.join("caps.tsv"), "bird\ta.attn\nsky\tb.attn\nbird\tb.attn\n").unwrap();
        let caps = read_captions(&d.join("caps.tsv")).unwrap();
        let e = caps.entries();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].0.as_str(), e[0].1.len()), ("bird", 2));
        assert_eq!((e[1].0.as_str(), e[1].1.len()), ("sky", 1));
    }

    #[test]
    fn atomic_write_leaves_nothing_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        let r = write_atomic(&p, |_| Err(Error::format("boom")));
        assert!(r.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
