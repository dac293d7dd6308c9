use std::path::Path;

use super::splat::DepthImage;
use crate::error::{Error, Result};

/// Grayscale PFM bytes: header `Pf\n{W} {H}\n-1.0\n` (negative scale marks
/// little-endian), then `f32` values row by row from the bottom row up,
/// which is the image's storage order.
pub fn encode_pfm(img: &DepthImage) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    out.reserve(img.values.len() * 4);
    for &v in &img.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_pfm(path: impl AsRef<Path>, img: &DepthImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

/// Parses a grayscale PFM in either byte order.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthImage> {
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: format!("pfm: {m}"),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    // magic, dimensions and scale occupy three newline-terminated lines
    for _ in 0..3 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        fields.push(
            std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not text"))?,
        );
        pos += end + 1;
    }
    if fields[0].trim() != "Pf" {
        return Err(bad("only grayscale Pf images are supported"));
    }
    let dims: Vec<usize> = fields[1]
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad("bad dimensions")))
        .collect::<Result<_>>()?;
    let [width, height] = dims[..] else {
        return Err(bad("expected two dimensions"));
    };
    let scale: f64 = fields[2].trim().parse().map_err(|_| bad("bad scale"))?;
    let body = &bytes[pos..];
    if body.len() != width * height * 4 {
        return Err(bad("payload size does not match dimensions"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            f64::from(if scale < 0.0 {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            })
        })
        .collect();
    Ok(DepthImage {
        width,
        height,
        values,
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_exact() {
        let img = DepthImage {
            width: 2,
            height: 1,
            values: vec![0.5, 1.0],
        };
        let bytes = encode_pfm(&img);
        let mut expect = b"Pf\n2 1\n-1.0\n".to_vec();
        expect.extend_from_slice(&0.5f32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip() {
        let img = DepthImage {
            width: 3,
            height: 2,
            values: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125],
        };
        assert_eq!(decode_pfm(&encode_pfm(&img)).unwrap(), img);
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut b = encode_pfm(&DepthImage {
            width: 2,
            height: 2,
            values: vec![1.0; 4],
        });
        b.pop();
        assert!(decode_pfm(&b).is_err());
    }
}
