//! 8-bit image planes: binary PGM/PPM (maxval 255) and 8-bit PNG.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("unsupported maxval {0} (only 255)")]
    UnsupportedMaxval(u32),

    #[error("unsupported bit depth {0} (only 8-bit)")]
    UnsupportedBitDepth(u8),

    #[error("unsupported color type {0}")]
    UnsupportedColor(String),

    #[error("unrecognized image format")]
    UnknownFormat,

    #[error("malformed PNG: {0}")]
    Png(String),

    #[error("{expected}-channel image required, found {actual} channels")]
    Channels { expected: usize, actual: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interleaved 8-bit samples, one or three per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if !matches!(channels, 1 | 3) {
            return Err(ImageError::UnsupportedColor(format!("{channels} channels")));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::MalformedHeader(format!("empty extent {width}x{height}")));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::Truncated {
                expected,
                actual: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        Self::new(width, height, 1, data)
    }

    pub fn require_gray(self) -> Result<Self, ImageError> {
        if self.channels != 1 {
            return Err(ImageError::Channels {
                expected: 1,
                actual: self.channels,
            });
        }
        Ok(self)
    }
}

pub fn load_image(path: &Path) -> Result<Image, ImageError> {
    decode(&std::fs::read(path)?)
}

/// Decodes by signature, not extension.
pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.first() == Some(&b'P') {
        decode_pnm(bytes)
    } else {
        Err(ImageError::UnknownFormat)
    }
}

/// Writes PNG for a `.png` extension and PGM/PPM otherwise.
pub fn save_image(path: &Path, image: &Image) -> Result<(), ImageError> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        encode_png(image)?
    } else {
        encode_pnm(image)
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::MalformedHeader(format!("{what} out of range")))
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Image, ImageError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(ImageError::MalformedHeader(
                "expected binary P5 or P6 magic".into(),
            ))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    if !h.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(ImageError::MalformedHeader("no separator after magic".into()));
    }
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader(format!("empty extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::MalformedHeader(format!("maxval {maxval} out of range")));
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !h.bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::MalformedHeader("no separator after maxval".into()));
    }
    let payload = &bytes[h.pos + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::MalformedHeader("extent overflows".into()))?;
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    Image::new(width, height, channels, payload[..expected].to_vec())
}

pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    let png_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            ImageError::Png(format!("truncated stream ({io})"))
        }
        other => ImageError::Png(other.to_string()),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let depth = reader.info().bit_depth;
    if depth == png::BitDepth::Sixteen {
        return Err(ImageError::UnsupportedBitDepth(16));
    }
    let channels = match reader.output_color_type() {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (ct, png::BitDepth::Eight) => return Err(ImageError::UnsupportedColor(format!("{ct:?}"))),
        (_, d) => return Err(ImageError::UnsupportedBitDepth(d as u8)),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    Image::new(info.width as usize, info.height as usize, channels, buf)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(if image.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| ImageError::Png(e.to_string()))?;
        w.write_image_data(&image.data)
            .map_err(|e| ImageError::Png(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_payload_maps_bytes() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 128, 255, 64]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 2, 1));
        assert_eq!(img.data, [0, 128, 255, 64]);
    }

    #[test]
    fn comments_and_odd_spacing() {
        let mut bytes = b"P5 # made by hand\n 3\t1 # width height\n255\n".to_vec();
        bytes.extend([1, 2, 3]);
        assert_eq!(decode(&bytes).unwrap().data, [1, 2, 3]);
    }

    #[test]
    fn payload_may_start_with_whitespace_bytes() {
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend([b'\n', b' ']);
        assert_eq!(decode(&bytes).unwrap().data, [b'\n', b' ']);
    }

    #[test]
    fn maxval_other_than_255_is_unsupported() {
        let err = decode(b"P5\n1 1\n65535\n\0\0").unwrap_err();
        assert!(matches!(err, ImageError::UnsupportedMaxval(65535)));
        assert!(err.to_string().contains("unsupported maxval"));
        assert!(matches!(decode(b"P5\n1 1\n15\n\0").unwrap_err(), ImageError::UnsupportedMaxval(15)));
    }

    #[test]
    fn distinct_header_and_payload_errors() {
        for bad in [&b"P2\n1 1\n255\n0"[..], b"P5\n1\n", b"P5\n0 1\n255\n", b"P51 1 255 x", b"P5\n1 1\n255"] {
            assert!(matches!(decode(bad).unwrap_err(), ImageError::MalformedHeader(_)), "{bad:?}");
        }
        let err = decode(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, ImageError::Truncated { expected: 4, actual: 2 }));
        assert!(matches!(decode(b"GIF89a").unwrap_err(), ImageError::UnknownFormat));
    }

    #[test]
    fn pnm_round_trips() {
        let gray = Image::gray(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        assert_eq!(decode(&encode_pnm(&gray)).unwrap(), gray);
        let rgb = Image::new(2, 1, 3, vec![10, 20, 30, 40, 50, 60]).unwrap();
        assert_eq!(decode(&encode_pnm(&rgb)).unwrap(), rgb);
    }

    #[test]
    fn png_round_trips() {
        let data: Vec<u8> = (0..=255).collect();
        let gray = Image::gray(16, 16, data.clone()).unwrap();
        assert_eq!(decode(&encode_png(&gray).unwrap()).unwrap(), gray);
        let rgb = Image::new(4, 4, 3, data[..48].to_vec()).unwrap();
        assert_eq!(decode(&encode_png(&rgb).unwrap()).unwrap(), rgb);
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[1, 2]).unwrap();
        }
        assert!(matches!(decode(&out).unwrap_err(), ImageError::UnsupportedBitDepth(16)));
    }

    #[test]
    fn truncated_png_is_an_error() {
        let png = encode_png(&Image::gray(8, 8, vec![7; 64]).unwrap()).unwrap();
        assert!(matches!(decode(&png[..png.len() / 2]).unwrap_err(), ImageError::Png(_)));
    }

    #[test]
    fn channel_requirement() {
        let rgb = Image::new(1, 1, 3, vec![1, 2, 3]).unwrap();
        assert!(matches!(rgb.require_gray(), Err(ImageError::Channels { expected: 1, actual: 3 })));
        assert!(Image::gray(2, 2, vec![0; 3]).is_err());
    }
}
