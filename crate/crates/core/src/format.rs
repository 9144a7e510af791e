//! Text encodings shared by the dump, CSV and JSON writers.
//!
//! Every float is written with 17 significant digits so that binary doubles
//! survive a round trip through text.

use std::io;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Format a real number in scientific notation with 17 significant digits.
/// Negative zero is written as positive zero.
pub fn sci17(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

/// `re+imj` form, e.g. `1.0000000000000000e0-2.5000000000000000e-1j`.
pub fn complex17(z: C64) -> String {
    let im = if z.im == 0.0 { 0.0 } else { z.im };
    let sign = if im.is_sign_negative() { '-' } else { '+' };
    format!("{}{}{}j", sci17(z.re), sign, sci17(im.abs()))
}

/// Parse one `re+imj` entry as written by [`complex17`].
pub fn parse_complex(s: &str) -> Result<C64> {
    let s = s.trim();
    let body = s
        .strip_suffix('j')
        .ok_or_else(|| Error::InvalidArgument(format!("complex entry `{s}` lacks trailing j")))?;
    // the separator is the last sign that does not follow an exponent marker
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'))
        .ok_or_else(|| Error::InvalidArgument(format!("complex entry `{s}` has no imaginary part")))?;
    let bad = |_| Error::InvalidArgument(format!("malformed complex entry `{s}`"));
    let re: f64 = body[..split].parse().map_err(bad)?;
    let im: f64 = body[split..].parse().map_err(bad)?;
    Ok(C64::new(re, im))
}

/// serde_json formatter that writes every float at 17 significant digits.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sci17Formatter;

impl serde_json::ser::Formatter for Sci17Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(sci17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Compact JSON with a trailing newline, floats via [`Sci17Formatter`].
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sci17Formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidState(format!("json serialization failed: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

/// Serialize a complex number as a `[re, im]` pair.
pub mod complex_pair {
    use num_complex::Complex64 as C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C64::new(re, im))
    }
}

/// Serialize a complex matrix as rows of `[re, im]` pairs.
pub mod complex_matrix {
    use nalgebra::DMatrix;
    use num_complex::Complex64 as C64;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<C64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = m
            .row_iter()
            .map(|r| r.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<C64>, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
    }
}
