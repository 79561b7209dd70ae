//! Binary PPM (`P6`) with 8- or 16-bit big-endian samples.

use std::fs;
use std::path::Path;

use super::LinearImage;
use crate::error::{Error, Result};

pub fn read_ppm16(path: impl AsRef<Path>) -> Result<LinearImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

/// Writes a `P6` file with maxval 65535; samples are rounded to nearest.
pub fn write_ppm16(image: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm16(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm16(image: &LinearImage) -> Result<Vec<u8>> {
    let header = format!("P6\n{} {}\n65535\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.data().len() * 2);
    out.extend_from_slice(header.as_bytes());
    for &v in image.data() {
        let v = f64::from(v);
        if !(0.0..=65535.0).contains(&v) {
            return Err(Error::OutOfRangeSample(v));
        }
        out.extend_from_slice(&(v.round() as u16).to_be_bytes());
    }
    Ok(out)
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::MalformedHeader(format!("expected P6, found {magic:?}")));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader(format!("missing header field {i}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("header field {i} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedHeader("no whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        payload_start: pos,
    })
}

/// Decodes a binary PPM. Sample values are kept as written, without rescaling.
pub fn decode_ppm(bytes: &[u8]) -> Result<LinearImage> {
    let h = parse_header(bytes)?;
    let bytes_per_sample = match h.maxval {
        255 => 1,
        65535 => 2,
        m => return Err(Error::UnsupportedMaxval(m)),
    };
    let samples = h.width * h.height * 3;
    let expected = samples * bytes_per_sample;
    let payload = &bytes[h.payload_start..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f32> = if bytes_per_sample == 1 {
        payload[..expected].iter().map(|&b| f32::from(b)).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| f32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    LinearImage::new(h.width, h.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ppm16(w: usize, h: usize, samples: &[u16]) -> Vec<u8> {
        let mut v = format!("P6\n{w} {h}\n65535\n").into_bytes();
        for s in samples {
            v.extend_from_slice(&s.to_be_bytes());
        }
        v
    }

    #[test]
    fn decodes_16_bit() {
        let img = decode_ppm(&ppm16(1, 1, &[13584, 13584, 13584])).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [13584.0; 3]);
        assert_eq!(decode_ppm(&encode_ppm16(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn decodes_8_bit_as_is() {
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data(), &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(decode_ppm(&encode_ppm16(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P6\n# from the converter\n1 1\n# depth\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 0, 2, 0, 3]);
        assert_eq!(decode_ppm(&bytes).unwrap().data(), &[1., 2., 3.]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            decode_ppm(b"P3\n1 1\n255\n1 2 3\n"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(decode_ppm(b"P6\n1\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n4095\n\0\0\0\0\0\0"),
            Err(Error::UnsupportedMaxval(4095))
        ));
        let mut short = ppm16(2, 2, &[1; 12]);
        short.truncate(short.len() - 3);
        assert!(matches!(decode_ppm(&short), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn write_rejects_out_of_range() {
        let img = LinearImage::filled(1, 1, [70000.0, 1.0, 1.0]).unwrap();
        assert!(matches!(encode_ppm16(&img), Err(Error::OutOfRangeSample(_))));
    }

    #[test]
    fn write_rounds_to_nearest() {
        let img = LinearImage::new(1, 1, vec![1.4, 1.6, 2.5]).unwrap();
        let back = decode_ppm(&encode_ppm16(&img).unwrap()).unwrap();
        assert_eq!(back.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let img = LinearImage::new(2, 1, vec![0., 65535., 7., 8., 9., 10.]).unwrap();
        write_ppm16(&img, &path).unwrap();
        assert_eq!(read_ppm16(&path).unwrap(), img);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_random_images(
            (w, h, data) in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), prop::collection::vec(any::<u16>(), w * h * 3))
            })
        ) {
            let img = LinearImage::new(w, h, data.iter().map(|&v| f32::from(v)).collect()).unwrap();
            let bytes = encode_ppm16(&img).unwrap();
            prop_assert_eq!(&bytes, &ppm16(w, h, &data));
            prop_assert_eq!(decode_ppm(&bytes).unwrap(), img);
        }
    }
}
