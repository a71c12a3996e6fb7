use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Binary greymap (P5, maxval 255). Values are clamped to `[0, 1]` and
/// rounded to the nearest level.
pub fn encode_pgm(grid: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.data().iter().map(|v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    }));
    out
}

/// Parses a P5 image with maxval up to 255 into values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Grid> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Image(format!("expected P5 magic, found `{}`", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Image(format!("bad {what} `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != w * h {
        return Err(Error::Image(format!("expected {} raster bytes, found {}", w * h, raster.len())));
    }
    let scale = 1.0 / maxval as f64;
    Grid::from_vec(w, h, raster.iter().map(|&b| b as f64 * scale).collect())
}

pub fn write_pgm(grid: &Grid, path: &Path) -> Result<()> {
    write_file(path, &encode_pgm(grid))
}

pub fn read_pgm(path: &Path) -> Result<Grid> {
    decode_pgm(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_grid_has_zero_payload() {
        let bytes = encode_pgm(&Grid::zeros(3, 2));
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0u8; 6]);
    }

    #[test]
    fn one_maps_to_255_and_clamps() {
        let bytes = encode_pgm(&Grid::from_vec(3, 1, vec![1.0, 2.0, -1.0]).unwrap());
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 255, 0]);
    }

    #[test]
    fn round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid::from_vec(17, 9, (0..153).map(|_| rng.random::<f64>()).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        write_pgm(&g, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        let err = g.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 510.0 + 1e-12);
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n\0"), Err(Error::Image(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\0"), Err(Error::Image(_))));
        assert!(matches!(decode_pgm(b"P5\nx 2\n255\n\0\0"), Err(Error::Image(_))));
        assert!(matches!(decode_pgm(b"P5\n1"), Err(Error::Image(_))));
        let g = decode_pgm(b"P5\n# comment\n1 1\n255\n\xff").unwrap();
        assert_eq!(g.data(), &[1.0]);
    }
}
