//! File formats: HSC1 cubes, binary Netpbm images and CSV labelings.
//!
//! HSC1 layout (all little-endian):
//!
//! ```text
//! "HSC1" | u32 T | u32 H | u32 W | u32 B | B × f64 wavelengths (nm)
//!        | u8 kind | T·H·W·B × f64 samples in (t, h, w, b) order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{checked_volume, CubeKind, HyperCube, Labeling, Raster};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
const HEADER_LEN: usize = 4 + 4 * 4;

/// Size in bytes of the HSC1 encoding of a cube with these dimensions.
pub fn encoded_cube_len(frames: usize, height: usize, width: usize, bands: usize) -> usize {
    HEADER_LEN + 8 * bands + 1 + 8 * frames * height * width * bands
}

pub fn encode_cube(cube: &HyperCube) -> Result<Vec<u8>> {
    if let Some(i) = cube.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite sample at index {i}")));
    }
    let dims = [cube.frames(), cube.height(), cube.width(), cube.bands()];
    let mut out = Vec::with_capacity(encoded_cube_len(dims[0], dims[1], dims[2], dims[3]));
    out.extend_from_slice(CUBE_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for w in cube.wavelengths() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.push(cube.kind().code());
    for x in cube.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.buf.len() as u64,
                message: format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    if bytes.len() < 4 || &bytes[..4] != CUBE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "missing HSC1 magic".into(),
        });
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let t = r.u32("frame count")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let b = r.u32("band count")? as usize;
    let mut wavelengths = Vec::with_capacity(b.min(1 << 16));
    for i in 0..b {
        let offset = r.pos as u64;
        let x = r.f64("wavelength table")?;
        if !x.is_finite() {
            return Err(Error::Parse {
                offset,
                message: format!("wavelength {i} is not finite"),
            });
        }
        if let Some(&prev) = wavelengths.last() {
            if x <= prev {
                return Err(Error::Parse {
                    offset,
                    message: format!("wavelength {i} ({x}) not above previous ({prev})"),
                });
            }
        }
        wavelengths.push(x);
    }
    let kind_offset = r.pos as u64;
    let code = r.take(1, "kind byte")?[0];
    let kind = CubeKind::from_code(code).ok_or_else(|| Error::Parse {
        offset: kind_offset,
        message: format!("unknown cube kind {code}"),
    })?;
    let count = checked_volume(&[t, h, w, b]).map_err(|_| Error::Parse {
        offset: 4,
        message: "dimensions overflow".into(),
    })?;
    let payload_len = count.checked_mul(8).ok_or_else(|| Error::Parse {
        offset: 4,
        message: "dimensions overflow".into(),
    })?;
    let payload = r.take(payload_len, "sample payload")?;
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos as u64,
            message: format!("{} trailing bytes after payload", bytes.len() - r.pos),
        });
    }
    let base = payload_len as u64;
    let data_start = bytes.len() as u64 - base;
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let x = f64::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(Error::Parse {
                offset: data_start + 8 * i as u64,
                message: format!("sample {i} is not finite"),
            });
        }
        data.push(x);
    }
    HyperCube::new(t, h, w, wavelengths, kind, data)
}

pub fn write_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_cube(cube)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    decode_cube(&fs::read(path)?)
}

/// 8-bit quantization, `round(v·255)` with halves rounded away from zero.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round() as u8
}

/// Binary PGM (1 channel) or PPM (3 channels) encoding with maxval 255.
pub fn encode_netpbm(frame: &Raster) -> Result<Vec<u8>> {
    let magic = match frame.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("cannot encode {c}-channel image"))),
    };
    if frame.data.len() != frame.height * frame.width * frame.channels {
        return Err(Error::dims("raster data length does not match its shape"));
    }
    if let Some(i) = frame.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::OutOfRange {
            index: i / frame.channels,
            value: frame.data[i],
        });
    }
    let header = format!("{magic}\n{} {}\n255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(frame.data.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn emit_image(frame: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_netpbm(frame)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Decodes binary P5/P6 with maxval ≤ 255; samples scaled to [0, 1].
pub fn decode_netpbm(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                message: "expected binary PGM (P5) or PPM (P6) magic".into(),
            })
        }
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
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
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text.parse().map_err(|_| Error::Parse {
            offset: start as u64,
            message: "expected an unsigned integer in the header".into(),
        })?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse {
            offset: pos as u64,
            message: format!("unsupported maxval {maxval}"),
        });
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Parse {
            offset: pos as u64,
            message: "missing whitespace after header".into(),
        });
    }
    pos += 1;
    let len = height * width * channels;
    let payload = bytes.get(pos..pos + len).ok_or(Error::Parse {
        offset: bytes.len() as u64,
        message: format!("truncated pixel data, need {len} bytes"),
    })?;
    let scale = maxval as f64;
    Raster::new(
        height,
        width,
        channels,
        payload
            .iter()
            .map(|&b| (b as f64 / scale).min(1.0))
            .collect(),
    )
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Raster> {
    decode_netpbm(&fs::read(path)?)
}

pub fn labeling_to_csv(l: &Labeling) -> String {
    let mut s = String::with_capacity(l.labels.len() * 2);
    for row in l.labels.chunks(l.width.max(1)) {
        let line: Vec<String> = row.iter().map(usize::to_string).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn emit_labeling_csv(l: &Labeling, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(labeling_to_csv(l).as_bytes())?;
    Ok(())
}

/// Writes rows of comma-separated values with a header line.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Reads a single-column or row-vector CSV of reals (e.g. a target signature).
pub fn read_signature_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for field in line.split(',') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            out.push(field.parse::<f64>().map_err(|_| {
                Error::invalid(format!("line {}: cannot parse {field:?}", line_no + 1))
            })?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HyperCube {
        HyperCube::new(1, 1, 1, vec![7830.0], CubeKind::Radiance, vec![0.5]).unwrap()
    }

    #[test]
    fn minimal_cube_size() {
        // magic 4 + dims 16 + one wavelength 8 + kind 1 + one sample 8
        let bytes = encode_cube(&tiny()).unwrap();
        assert_eq!(bytes.len(), 37);
        assert_eq!(encoded_cube_len(1, 1, 1, 1), 37);
        assert_eq!(decode_cube(&bytes).unwrap().data(), &[0.5]);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_cube(&tiny()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_cube(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = encode_cube(&tiny()).unwrap();
        match decode_cube(&bytes[..bytes.len() - 3]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 34),
            other => panic!("unexpected {other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        match decode_cube(&long) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 37),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_ascending_wavelengths_reported_at_offset() {
        let c =
            HyperCube::new(1, 1, 1, vec![1.0, 2.0], CubeKind::Radiance, vec![0.0, 0.0]).unwrap();
        let mut bytes = encode_cube(&c).unwrap();
        bytes[28..36].copy_from_slice(&0.5f64.to_le_bytes());
        match decode_cube(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_kind() {
        let mut bytes = encode_cube(&tiny()).unwrap();
        bytes[28] = 9;
        match decode_cube(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn netpbm_payloads() {
        let g = Raster::gray(2, 2, vec![0.0; 4]).unwrap();
        let bytes = encode_netpbm(&g).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0, 0]);
        let rgb = Raster::new(1, 1, 3, vec![1.0; 3]).unwrap();
        let bytes = encode_netpbm(&rgb).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 255, 255]);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn netpbm_rejects_out_of_range() {
        let g = Raster::gray(1, 3, vec![0.0, 1.2, 0.1]).unwrap();
        assert!(matches!(
            encode_netpbm(&g),
            Err(Error::OutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn netpbm_decode_roundtrip() {
        let rgb = Raster::new(2, 1, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let back = decode_netpbm(&encode_netpbm(&rgb).unwrap()).unwrap();
        assert_eq!((back.height, back.width, back.channels), (2, 1, 3));
        for (a, b) in rgb.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn csv_layout() {
        let l = Labeling::new(1, 3, 3, vec![0, 1, 2]).unwrap();
        assert_eq!(labeling_to_csv(&l), "0,1,2\n");
        let l = Labeling::new(2, 1, 2, vec![1, 0]).unwrap();
        assert_eq!(labeling_to_csv(&l), "1\n0\n");
    }
}
