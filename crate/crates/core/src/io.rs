//! Binary and text file formats.
//!
//! `CSIG` holds one complex signal:
//!
//! ```text
//! "CSIG" | version u16 | layout u8 | rows u32 | cols u32 | (re f32, im f32) × rows·cols
//! ```
//!
//! `SCDT` holds a dictionary, row-major:
//!
//! ```text
//! "SCDT" | version u16 | domain u8 | rows u32 | cols u32 | geometry_hash u64 | (re f64, im f64) × rows·cols
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dictionary::{Dictionary, Domain};
use crate::error::{Error, Result};
use crate::geometry::{ComplexSignal, RadarGeometry, SignalLayout};

pub const CSIG_MAGIC: &[u8; 4] = b"CSIG";
pub const SCDT_MAGIC: &[u8; 4] = b"SCDT";
pub const FORMAT_VERSION: u16 = 1;

pub const CSIG_HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4;
pub const SCDT_HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 8;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Reader { buf, pos: 0, kind }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                kind: self.kind,
                reason: format!("truncated at byte {}", self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                kind: self.kind,
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }

    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            kind: self.kind,
            reason: reason.into(),
        })
    }
}

fn dim_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit in u32")))
}

/// Values are stored as f32, so a round trip rounds each component.
pub fn encode_csig(s: &ComplexSignal) -> Result<Vec<u8>> {
    let (rows, cols) = s.dims();
    let mut out = Vec::with_capacity(CSIG_HEADER_LEN + 8 * s.len());
    out.extend_from_slice(CSIG_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(s.layout().tag());
    out.extend_from_slice(&dim_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(cols, "cols")?.to_le_bytes());
    for v in s.values() {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_csig(bytes: &[u8]) -> Result<ComplexSignal> {
    let mut r = Reader::new(bytes, "CSIG");
    if &r.array::<4>()? != CSIG_MAGIC {
        return r.fail("bad magic");
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return r.fail(format!("unsupported version {version}"));
    }
    let tag = r.u8()?;
    let Some(layout) = SignalLayout::from_tag(tag) else {
        return r.fail(format!("unknown layout tag {tag}"));
    };
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(8) == Some(bytes.len() - CSIG_HEADER_LEN));
    let Some(n) = n else {
        return r.fail(format!("payload size does not match {rows}x{cols}"));
    };
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let re = r.f32()?;
        let im = r.f32()?;
        values.push(Complex64::new(re as f64, im as f64));
    }
    r.finish()?;
    ComplexSignal::new(values, layout, (rows, cols))
}

pub fn encode_scdt(d: &Dictionary) -> Result<Vec<u8>> {
    let (rows, cols) = (d.rows(), d.cols());
    let mut out = Vec::with_capacity(SCDT_HEADER_LEN + 16 * rows * cols);
    out.extend_from_slice(SCDT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(d.domain().tag());
    out.extend_from_slice(&dim_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(cols, "cols")?.to_le_bytes());
    out.extend_from_slice(&d.geometry_hash().to_le_bytes());
    let m = d.matrix();
    for r in 0..rows {
        for c in 0..cols {
            let v = m[(r, c)];
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    Ok(out)
}

/// Header fields of an `SCDT` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScdtHeader {
    pub domain: Domain,
    pub rows: usize,
    pub cols: usize,
    pub geometry_hash: u64,
}

fn decode_scdt_header(r: &mut Reader<'_>) -> Result<ScdtHeader> {
    if &r.array::<4>()? != SCDT_MAGIC {
        return r.fail("bad magic");
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return r.fail(format!("unsupported version {version}"));
    }
    let tag = r.u8()?;
    let Some(domain) = Domain::from_tag(tag) else {
        return r.fail(format!("unknown domain tag {tag}"));
    };
    Ok(ScdtHeader {
        domain,
        rows: r.u32()? as usize,
        cols: r.u32()? as usize,
        geometry_hash: r.u64()?,
    })
}

pub fn decode_scdt(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = Reader::new(bytes, "SCDT");
    let h = decode_scdt_header(&mut r)?;
    let expected = h.rows.checked_mul(h.cols).and_then(|n| n.checked_mul(16));
    if expected != Some(bytes.len() - SCDT_HEADER_LEN) {
        return r.fail(format!("payload size does not match {}x{}", h.rows, h.cols));
    }
    let mut m = DMatrix::zeros(h.rows, h.cols);
    for row in 0..h.rows {
        for col in 0..h.cols {
            let re = r.f64()?;
            let im = r.f64()?;
            m[(row, col)] = Complex64::new(re, im);
        }
    }
    r.finish()?;
    Ok(Dictionary::from_parts(m, h.domain, h.geometry_hash))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_csig(path: &Path, s: &ComplexSignal) -> Result<()> {
    write_file(path, &encode_csig(s)?)
}

pub fn read_csig(path: &Path) -> Result<ComplexSignal> {
    decode_csig(&read_file(path)?)
}

pub fn write_scdt(path: &Path, d: &Dictionary) -> Result<()> {
    write_file(path, &encode_scdt(d)?)
}

/// Read only the header of an `SCDT` file.
pub fn read_scdt_header(path: &Path) -> Result<ScdtHeader> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; SCDT_HEADER_LEN];
    f.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    decode_scdt_header(&mut Reader::new(&head, "SCDT"))
}

/// Load a dictionary and check it was built for `geom`.
pub fn read_scdt(path: &Path, geom: &RadarGeometry) -> Result<Dictionary> {
    let d = decode_scdt(&read_file(path)?)?;
    let expected = geom.hash64();
    if d.geometry_hash() != expected {
        return Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected,
            found: d.geometry_hash(),
        });
    }
    if d.rows() != geom.n_samples() || d.cols() != geom.n_cells() {
        return Err(Error::Format {
            kind: "SCDT",
            reason: format!("{}x{} does not match the geometry", d.rows(), d.cols()),
        });
    }
    d.with_dims((geom.n_freq, geom.n_aspect), (geom.n_x, geom.n_y))
}

/// `row,col,re,im` rows in vectorization order.
pub fn signal_to_csv(s: &ComplexSignal) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "col", "re", "im"])?;
    let cols = s.dims().1;
    for (i, v) in s.values().iter().enumerate() {
        w.serialize((i / cols, i % cols, v.re, v.im))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::build_freq_dictionary;
    use proptest::prelude::*;

    #[test]
    fn csig_layout() {
        let s = ComplexSignal::new(
            vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.25)],
            SignalLayout::ImageDomain,
            (1, 2),
        )
        .unwrap();
        let bytes = encode_csig(&s).unwrap();
        assert_eq!(&bytes[..4], b"CSIG");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[7..11], &1u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &2u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[19..23], &(-2.0f32).to_le_bytes());
        assert_eq!(bytes.len(), CSIG_HEADER_LEN + 16);
        assert_eq!(decode_csig(&bytes).unwrap(), s);
    }

    #[test]
    fn csig_rejects_corruption() {
        let s = ComplexSignal::zeros(SignalLayout::EchoFreqDomain, (2, 2));
        let bytes = encode_csig(&s).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_csig(&bad).is_err());
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(decode_csig(&bad).is_err());
        assert!(decode_csig(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_csig(&bytes[..5]).is_err());
    }

    #[test]
    fn scdt_layout_and_hash_check() {
        let g = RadarGeometry::benchmark(4).unwrap();
        let d = build_freq_dictionary(&g).unwrap();
        let bytes = encode_scdt(&d).unwrap();
        assert_eq!(&bytes[..4], b"SCDT");
        assert_eq!(bytes[6], 0);
        assert_eq!(bytes.len(), SCDT_HEADER_LEN + 16 * 16 * 16);
        assert_eq!(&bytes[15..23], &g.hash64().to_le_bytes());
        // first payload entry is (row 0, col 0), the second is (row 0, col 1)
        let v = d.matrix()[(0, 1)];
        assert_eq!(&bytes[SCDT_HEADER_LEN + 16..SCDT_HEADER_LEN + 24], &v.re.to_le_bytes());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.scdt");
        write_scdt(&path, &d).unwrap();
        assert_eq!(read_scdt_header(&path).unwrap().geometry_hash, g.hash64());
        let back = read_scdt(&path, &g).unwrap();
        assert_eq!(back, d);

        let other = RadarGeometry::benchmark(5).unwrap();
        assert!(matches!(read_scdt(&path, &other), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn csv_export() {
        let s = ComplexSignal::new(
            vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0), Complex64::new(5.0, 6.0), Complex64::new(7.0, 8.0)],
            SignalLayout::ImageDomain,
            (2, 2),
        )
        .unwrap();
        let text = signal_to_csv(&s).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "row,col,re,im");
        assert_eq!(lines[3], "1,0,5.0,6.0");
    }

    proptest! {
        #[test]
        fn csig_bytes_are_stable(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let values: Vec<Complex64> = (0..rows * cols)
                .map(|i| {
                    let x = (seed.wrapping_mul(i as u64 + 1) % 10_000) as f64 / 37.0;
                    Complex64::new(x.sin() * 1e3, x.cos())
                })
                .collect();
            let s = ComplexSignal::new(values, SignalLayout::EchoFreqDomain, (rows, cols)).unwrap();
            let first = encode_csig(&s).unwrap();
            let second = encode_csig(&decode_csig(&first).unwrap()).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
