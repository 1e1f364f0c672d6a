//! Binary PGM (P5) export.

use std::path::Path;

/// Map `[-1, 1]` to a byte: `round((v + 1) * 127.5)`, clamped.
pub fn to_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[f32]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must equal width * height");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| to_byte(v)));
    out
}

pub fn write_image(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[f32]) -> std::io::Result<()> {
    std::fs::write(path, encode_pgm(width, height, pixels))
}

/// Parse a P5 file with maxval 255 back to `(width, height, bytes)`.
pub fn read_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let payload = bytes.get(pos..)?;
    (payload.len() == w * h).then(|| (w, h, payload.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        assert!(encode_pgm(3, 1, &[-1.0; 3]).ends_with(&[0, 0, 0]));
        assert!(encode_pgm(3, 1, &[1.0; 3]).ends_with(&[255, 255, 255]));
        assert_eq!(to_byte(-7.0), 0);
        assert_eq!(to_byte(4.0), 255);
    }

    #[test]
    fn two_by_two_payload() {
        let bytes = encode_pgm(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 128, 255]);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let px: Vec<f32> = (0..12).map(|i| i as f32 / 6.0 - 1.0).collect();
        write_image(&p, 4, 3, &px).unwrap();
        let (w, h, data) = read_pgm(&std::fs::read(&p).unwrap()).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(data, px.iter().map(|&v| to_byte(v)).collect::<Vec<_>>());
    }
}
