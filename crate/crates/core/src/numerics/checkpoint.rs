//! Plain-text parameter container.
//!
//! ```text
//! dafe-params v1
//! header<TAB>key<TAB>value          (zero or more, order preserved)
//! param<TAB>id<TAB>group<TAB>d1xd2  (one per parameter, store order)
//! v0 v1 v2 ...                      (row-major values on the next line)
//! end
//! ```
//!
//! Values are written in the shortest decimal form that parses back to the
//! identical `f64`, so a save/load cycle is bit-exact for `f64` and `f32`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::param::{ParamGroup, ParamStore};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &str = "dafe-params v1";

pub type Header = Vec<(String, String)>;

fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("field {s:?} contains a tab or newline")));
    }
    Ok(())
}

pub fn write_params<T: Scalar, W: Write>(
    mut w: W,
    header: &[(String, String)],
    store: &ParamStore<T>,
) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    writeln!(w, "{MAGIC}").map_err(io)?;
    for (k, v) in header {
        check_field(k)?;
        check_field(v)?;
        writeln!(w, "header\t{k}\t{v}").map_err(io)?;
    }
    for (_, p) in store.iter() {
        check_field(p.id())?;
        let dims: Vec<String> = p.tensor().shape().iter().map(|d| d.to_string()).collect();
        writeln!(w, "param\t{}\t{}\t{}", p.id(), p.group(), dims.join("x")).map_err(io)?;
        let vals: Vec<String> = p.values().iter().map(|v| v.as_f64().to_string()).collect();
        writeln!(w, "{}", vals.join(" ")).map_err(io)?;
    }
    writeln!(w, "end").map_err(io)?;
    Ok(())
}

pub fn read_params<T: Scalar, R: BufRead>(r: R) -> Result<(Header, ParamStore<T>)> {
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::io("<checkpoint>", e))
    };
    match next()? {
        Some(l) if l == MAGIC => {}
        other => {
            return Err(Error::Format(format!(
                "expected `{MAGIC}`, found {other:?}"
            )))
        }
    }
    let mut header = Header::new();
    let mut store = ParamStore::new();
    loop {
        let line = next()?.ok_or_else(|| Error::Format("missing `end` marker".into()))?;
        if line == "end" {
            break;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["header", k, v] => header.push((k.to_string(), v.to_string())),
            ["param", id, group, dims] => {
                let group: ParamGroup = group.parse()?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Format(format!("bad shape `{dims}`: {e}")))?;
                let body = next()?
                    .ok_or_else(|| Error::Format(format!("missing values for `{id}`")))?;
                let values = body
                    .split_ascii_whitespace()
                    .map(|v| v.parse::<f64>().map(T::of))
                    .collect::<std::result::Result<Vec<T>, _>>()
                    .map_err(|e| Error::Format(format!("bad value in `{id}`: {e}")))?;
                store.add(*id, group, Tensor::new(shape, values)?)?;
            }
            _ => return Err(Error::Format(format!("unrecognised line `{line}`"))),
        }
    }
    Ok((header, store))
}
