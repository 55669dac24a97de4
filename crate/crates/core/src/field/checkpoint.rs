//! Plain-text network checkpoints.
//!
//! ```text
//! fpflow-checkpoint v1
//! dims 3 100 100 2
//! offset 0
//! layer W1 100 3
//! -1.2e-1<TAB>-0x1.eb851eb851eb8p-4
//! ...
//! end
//! ```
//!
//! Each value line carries a shortest round-trip decimal and the exact
//! hexadecimal rendering of the same double; the reader trusts the hex
//! column and falls back to the decimal one when it is missing.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::field::mlp::Offsets;
use crate::field::{Baseline, Mlp, VelocityField};

const MAGIC: &str = "fpflow-checkpoint v1";

/// The network part of a [`VelocityField`]; the baseline is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: [usize; 4],
    pub offset: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn of(field: &VelocityField) -> Self {
        Checkpoint {
            dims: field.layer_dims(),
            offset: field.offset(),
            params: field.params().to_vec(),
        }
    }

    /// Rebuild the field on top of `baseline`.
    pub fn into_field(self, baseline: Baseline) -> Result<VelocityField> {
        VelocityField::new(Mlp::new(self.dims, self.params)?, baseline, self.offset)
    }
}

fn blocks(dims: [usize; 4]) -> Vec<(&'static str, usize, usize, usize)> {
    let [n0, h1, h2, m] = dims;
    let o = Offsets::new(dims);
    vec![
        ("W1", o.w1, h1, n0),
        ("b1", o.b1, h1, 1),
        ("W2", o.w2, h2, h1),
        ("b2", o.b2, h2, 1),
        ("W3", o.w3, m, h2),
        ("b3", o.b3, m, 1),
    ]
}

pub fn write_checkpoint<W: Write>(mut out: W, ck: &Checkpoint) -> Result<()> {
    let [n0, h1, h2, m] = ck.dims;
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "dims {n0} {h1} {h2} {m}")?;
    writeln!(out, "offset {}", ck.offset)?;
    for (name, start, rows, cols) in blocks(ck.dims) {
        writeln!(out, "layer {name} {rows} {cols}")?;
        for x in &ck.params[start..start + rows * cols] {
            writeln!(out, "{x:e}\t{}", hex_float(*x))?;
        }
    }
    writeln!(out, "end")?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Checkpoint> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = || -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i, l?.trim_end().to_string())),
            None => Err(Error::Format("checkpoint ends early".into())),
        }
    };
    let (_, magic) = next()?;
    if magic != MAGIC {
        return Err(Error::Format(format!("not a checkpoint header: {magic:?}")));
    }
    let (ln, dims_line) = next()?;
    let dims = parse_keyed(&dims_line, "dims", 4, ln)?;
    let dims = [dims[0], dims[1], dims[2], dims[3]];
    let (ln, off_line) = next()?;
    let offset = parse_keyed(&off_line, "offset", 1, ln)?[0];

    let total = Offsets::new(dims).total;
    let mut params = vec![0.0; total];
    for (name, start, rows, cols) in blocks(dims) {
        let (ln, head) = next()?;
        let expect = format!("layer {name} {rows} {cols}");
        if head != expect {
            return Err(Error::Format(format!(
                "line {ln}: expected {expect:?}, found {head:?}"
            )));
        }
        for p in &mut params[start..start + rows * cols] {
            let (ln, line) = next()?;
            *p = parse_value(&line).ok_or_else(|| {
                Error::Format(format!("line {ln}: bad value {line:?}"))
            })?;
        }
    }
    let (ln, end) = next()?;
    if end != "end" {
        return Err(Error::Format(format!("line {ln}: expected end marker")));
    }
    Ok(Checkpoint {
        dims,
        offset,
        params,
    })
}

fn parse_keyed(line: &str, key: &str, count: usize, ln: usize) -> Result<Vec<usize>> {
    let mut parts = line.split_whitespace();
    let bad = || Error::Format(format!("line {ln}: expected `{key}` with {count} integers"));
    if parts.next() != Some(key) {
        return Err(bad());
    }
    let vals: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if vals.len() != count {
        return Err(bad());
    }
    Ok(vals)
}

fn parse_value(line: &str) -> Option<f64> {
    let mut cols = line.split('\t');
    let dec = cols.next()?;
    match cols.next() {
        Some(hex) => parse_hex_float(hex.trim()),
        None => dec.trim().parse().ok(),
    }
}

/// C-style `%a` rendering: `0x1.<13 hex digits>p<exp>`, subnormals as
/// `0x0.<digits>p-1022`.
pub fn hex_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    match (exp, mant) {
        (0, 0) => format!("{sign}0x0p+0"),
        (0, _) => format!("{sign}0x0.{mant:013x}p-1022"),
        _ => format!("{sign}0x1.{mant:013x}p{:+}", exp - 1023),
    }
}

pub fn parse_hex_float(s: &str) -> Option<f64> {
    match s {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let body = body.strip_prefix("0x")?;
    let (mant, exp) = body.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if lead.len() != 1 || frac.len() > 13 {
        return None;
    }
    let lead = u64::from_str_radix(lead, 16).ok()?;
    let frac_val = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        0 if frac_val == 0 => 0,
        0 if exp == -1022 => frac_val,
        1 if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | frac_val,
        _ => return None,
    };
    let x = f64::from_bits(bits);
    Some(if neg { -x } else { x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Init;
    use proptest::prelude::*;

    #[test]
    fn hex_rendering_examples() {
        assert_eq!(hex_float(1.0), "0x1.0000000000000p+0");
        assert_eq!(hex_float(-0.5), "-0x1.0000000000000p-1");
        assert_eq!(hex_float(0.0), "0x0p+0");
        assert_eq!(hex_float(-0.0), "-0x0p+0");
        assert_eq!(parse_hex_float("0x1.8p+1"), Some(3.0));
        assert_eq!(parse_hex_float("0x1p"), None);
    }

    proptest! {
        #[test]
        fn hex_round_trip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            let y = parse_hex_float(&hex_float(x)).unwrap();
            if x.is_nan() {
                prop_assert!(y.is_nan());
            } else {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::init([3, 5, 4, 1], 42, Init::ScaledUniform).unwrap();
        let field = VelocityField::new(net, Baseline::Zero(2), 1).unwrap();
        let ck = Checkpoint::of(&field);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.dims, ck.dims);
        assert_eq!(back.offset, 1);
        for (a, b) in back.params.iter().zip(&ck.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_corrupt_checkpoints() {
        assert!(read_checkpoint("hello\n".as_bytes()).is_err());
        let net = Mlp::init([2, 2, 2, 1], 1, Init::ScaledUniform).unwrap();
        let field = VelocityField::new(net, Baseline::Zero(1), 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &Checkpoint::of(&field)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_checkpoint(truncated.as_bytes()),
            Err(Error::Format(_))
        ));
    }
}
