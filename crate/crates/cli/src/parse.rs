//! Flag value parsers and serde helpers for the printed configuration.

use fitv::tensor::OpKind;
use fitv::train::Variant;
use serde::Serializer;

/// `HxW`, e.g. `256x448`.
pub fn size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| format!("`{v}` is not a positive integer"))
    };
    Ok((dim(h)?, dim(w)?))
}

/// `A,B` of two reals.
pub fn pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

pub fn variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: fitv::Error| e.to_string())
}

pub fn op_kind(s: &str) -> Result<OpKind, String> {
    OpKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown operation `{s}` (one of {})", names.join(", "))
    })
}

pub fn display<S: Serializer>(v: &Variant, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(v.name())
}

pub fn display_opt<S: Serializer>(v: &Option<OpKind>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(k) => s.serialize_str(k.name()),
        None => s.serialize_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_pairs() {
        assert_eq!(size("256x448"), Ok((256, 448)));
        assert!(size("0x4").is_err());
        assert!(size("64").is_err());
        assert_eq!(pair("8,0"), Ok((8.0, 0.0)));
        assert_eq!(pair("-2, 1.5"), Ok((-2.0, 1.5)));
        assert!(pair("1").is_err());
    }
}
