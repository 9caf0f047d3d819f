//! 8-bit binary PGM (P5) images.

use std::path::Path;

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// `1×1×H×W` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Tensor::new([1, 1, self.height, self.width], data).expect("pixel count matches dims")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut token = || -> std::result::Result<String, String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err("not a binary PGM (missing P5 magic)".into());
        }
        let mut num = |what: &str| -> std::result::Result<usize, String> {
            let t = token()?;
            t.parse().map_err(|_| format!("bad {what} '{t}'"))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(format!("maxval {maxval} unsupported (8-bit only)"));
        }
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let n = width * height;
        if bytes.len() < start + n {
            return Err(format!("raster truncated: expected {n} bytes"));
        }
        let mut pixels = bytes[start..start + n].to_vec();
        if maxval != 255 {
            for p in &mut pixels {
                *p = ((*p as usize).min(maxval) * 255 / maxval) as u8;
            }
        }
        Ok(GrayImage { width, height, pixels })
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    GrayImage::decode(&bytes).map_err(|msg| Error::Image {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image.encode()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 32, 255, 13, 9],
        };
        assert_eq!(GrayImage::decode(&img.encode()).unwrap(), img);
    }

    #[test]
    fn comments_and_maxval() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n15\n".to_vec();
        bytes.extend_from_slice(&[15, 0]);
        let img = GrayImage::decode(&bytes).unwrap();
        assert_eq!(img.pixels, vec![255, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GrayImage::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::decode(b"P5\n4 4\n255\n\x00\x00").is_err());
    }

    #[test]
    fn tensor_scaling() {
        let img = GrayImage {
            width: 2,
            height: 1,
            pixels: vec![0, 255],
        };
        let t = img.to_tensor();
        assert_eq!(t.dims(), &[1, 1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0]);
    }
}
