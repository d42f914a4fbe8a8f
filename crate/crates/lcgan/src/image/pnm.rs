//! Binary PPM (P6) and PGM (P5) files, maxval 255.
//!
//! The header accepts arbitrary whitespace and `#` comments between tokens,
//! with exactly one whitespace byte separating the header from pixel data.
//! Masks are written 0/255 and must contain no other value.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{ImageRgb, MaskImage};
use crate::error::{Error, Result};

fn quantize(v: f32) -> u8 {
    (f64::from(v).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(path: impl AsRef<Path>, img: &ImageRgb) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(20 + img.data.len());
    write!(buf, "P6\n{} {}\n255\n", img.width, img.height).expect("vec write");
    buf.extend(img.data.iter().map(|&v| quantize(v)));
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: impl AsRef<Path>, mask: &MaskImage) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(20 + mask.labels.len());
    write!(buf, "P5\n{} {}\n255\n", mask.width, mask.height).expect("vec write");
    buf.extend(mask.labels.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, pixels) = parse(&bytes, b"P6", 3, "PPM", path)?;
    let mut img = ImageRgb::new(width, height);
    for (dst, &src) in img.data.iter_mut().zip(pixels) {
        *dst = f32::from(src) / 255.0;
    }
    Ok(img)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<MaskImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, pixels) = parse(&bytes, b"P5", 1, "PGM", path)?;
    let mut mask = MaskImage::new(width, height);
    for (dst, &src) in mask.labels.iter_mut().zip(pixels) {
        *dst = match src {
            0 => 0,
            255 => 1,
            other => {
                return Err(malformed("PGM", path, format!("mask value {other} is not 0 or 255")));
            }
        };
    }
    Ok(mask)
}

fn malformed(format: &'static str, path: &Path, reason: String) -> Error {
    Error::MalformedImage {
        format,
        path: path.display().to_string(),
        reason,
    }
}

/// Parses magic + three header integers + raster; returns (w, h, raster).
fn parse<'a>(
    bytes: &'a [u8],
    magic: &[u8],
    channels: usize,
    format: &'static str,
    path: &Path,
) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(malformed(format, path, "bad magic number".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed(format, path, "truncated header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(malformed(format, path, "expected integer in header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf8");
        *field = text
            .parse()
            .map_err(|_| malformed(format, path, format!("header value {text} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed(format, path, format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(malformed(format, path, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed(format, path, "missing separator before raster".into())),
    }
    let need = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(malformed(
            format,
            path,
            format!("raster holds {} bytes, need {need}", raster.len()),
        ));
    }
    if raster.len() > need {
        return Err(malformed(
            format,
            path,
            format!("{} trailing bytes after raster", raster.len() - need),
        ));
    }
    Ok((width, height, raster))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn ppm_round_trips_at_byte_precision() {
        let dir = tmp();
        let mut img = ImageRgb::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 37.0 % 256.0) / 255.0;
        }
        let path = dir.path().join("img.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!((back.width, back.height), (5, 3));
        for (a, b) in back.data.iter().zip(&img.data) {
            assert_eq!(quantize(*a), quantize(*b));
        }
    }

    #[test]
    fn writing_twice_is_byte_identical() {
        let dir = tmp();
        let mut img = ImageRgb::new(4, 4);
        img.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 / 48.0);
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        write_ppm(&p1, &img).unwrap();
        write_ppm(&p2, &img).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn header_comments_and_whitespace_are_accepted() {
        let dir = tmp();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6 # magic\n# a comment line\n  2\t1 # dims\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        std::fs::write(&path, bytes).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert!((img.pixel(1, 0)[2] - 60.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tmp();
        let cases: Vec<(&str, Vec<u8>)> = vec![
            ("magic", b"P3\n1 1\n255\n".to_vec()),
            ("maxval", b"P6\n1 1\n65535\n\0\0\0\0\0\0".to_vec()),
            ("short", b"P6\n2 2\n255\n\0\0\0".to_vec()),
            ("trailing", {
                let mut v = b"P6\n1 1\n255\n".to_vec();
                v.extend_from_slice(&[0, 0, 0, 9]);
                v
            }),
            ("zero-dim", b"P6\n0 3\n255\n".to_vec()),
            ("no-int", b"P6\nx 1\n255\n\0\0\0".to_vec()),
        ];
        for (name, bytes) in cases {
            let path = dir.path().join(format!("{name}.ppm"));
            std::fs::write(&path, bytes).unwrap();
            let res = read_ppm(&path);
            assert!(
                matches!(res, Err(Error::MalformedImage { .. })),
                "{name} should be rejected"
            );
        }
    }

    #[test]
    fn pgm_masks_round_trip_and_reject_gray() {
        let dir = tmp();
        let mut mask = MaskImage::new(3, 2);
        mask.labels = vec![0, 1, 0, 1, 1, 0];
        let path = dir.path().join("m.pgm");
        write_pgm(&path, &mask).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, mask);

        let gray = dir.path().join("gray.pgm");
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128]);
        std::fs::write(&gray, bytes).unwrap();
        match read_pgm(&gray) {
            Err(Error::MalformedImage { reason, .. }) => assert!(reason.contains("128")),
            other => panic!("expected gray rejection, got {other:?}"),
        }
    }
}
