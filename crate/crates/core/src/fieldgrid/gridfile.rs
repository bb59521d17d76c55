//! `AGCD-GRID v1`: one ASCII header line, then per state a sample-id line, a
//! time-index line and `N_v·H·W` little-endian f64 values in
//! `[variable][row][col]` order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AtmosphericState, Dataset, GridSpec, Sequence};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const GRID_MAGIC: &str = "AGCD-GRID";
const GRID_VERSION: &str = "1";

pub fn encode_grid(ds: &Dataset) -> Result<Vec<u8>> {
    let spec = &ds.spec;
    spec.validate()?;
    let n = ds.num_states();
    let mut out = format!(
        "{GRID_MAGIC} {GRID_VERSION} {} {} {} {n} {}\n",
        spec.height,
        spec.width,
        spec.num_vars(),
        spec.variables.join(",")
    )
    .into_bytes();
    out.reserve(n * (spec.num_vars() * spec.cells() * 8 + 32));
    for seq in &ds.sequences {
        for state in &seq.states {
            state.validate(spec)?;
            if state.sample_id != seq.sample_id {
                return Err(Error::Contract(format!(
                    "state {} filed under sequence {}",
                    state.sample_id, seq.sample_id
                )));
            }
            writeln!(out, "{}", state.sample_id)?;
            writeln!(out, "{}", state.time_index)?;
            for f in &state.fields {
                for v in f.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self, what: &str) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Length(format!("file ends inside {what}")))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Length(format!(
                "{what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format(format!("header field {what} missing or malformed")))
}

pub fn decode_grid(buf: &[u8]) -> Result<Dataset> {
    if !buf.starts_with(GRID_MAGIC.as_bytes()) {
        return Err(Error::Format(format!("missing {GRID_MAGIC} magic")));
    }
    let mut cur = Cursor { buf, pos: 0 };
    let header = cur.line("header")?;
    let mut toks = header.split(' ');
    if toks.next() != Some(GRID_MAGIC) {
        return Err(Error::Format(format!("missing {GRID_MAGIC} magic")));
    }
    let version: String = parse_field(toks.next(), "version")?;
    if version != GRID_VERSION {
        return Err(Error::Format(format!("unsupported grid version {version}")));
    }
    let h: usize = parse_field(toks.next(), "H")?;
    let w: usize = parse_field(toks.next(), "W")?;
    let nv: usize = parse_field(toks.next(), "N_v")?;
    let n: usize = parse_field(toks.next(), "n_samples")?;
    let vars: String = parse_field(toks.next(), "variables")?;
    if toks.next().is_some() {
        return Err(Error::Format("trailing header fields".into()));
    }
    let names: Vec<&str> = vars.split(',').collect();
    if names.len() != nv {
        return Err(Error::Format(format!("header declares {nv} variables but lists {}", names.len())));
    }
    let spec = GridSpec::equiangular(h, w, &names).map_err(|e| Error::Format(e.to_string()))?;
    let mut sequences: Vec<Sequence> = Vec::new();
    for k in 0..n {
        let sample_id = cur.line("sample id")?.to_string();
        let time_index: i64 = cur
            .line("time index")?
            .parse()
            .map_err(|_| Error::Format(format!("record {k}: bad time index")))?;
        let raw = cur.take(nv * h * w * 8, "field payload")?;
        let fields = raw
            .chunks_exact(h * w * 8)
            .map(|chunk| {
                let vals = chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect();
                Tensor::new(&[h, w], vals)
            })
            .collect::<Result<Vec<_>>>()?;
        let state = AtmosphericState {
            sample_id,
            time_index,
            fields,
        };
        match sequences.last_mut() {
            Some(seq) if seq.sample_id == state.sample_id => seq.states.push(state),
            _ => sequences.push(Sequence {
                sample_id: state.sample_id.clone(),
                states: vec![state],
            }),
        }
    }
    if cur.pos != buf.len() {
        return Err(Error::Length(format!("{} trailing bytes after last record", buf.len() - cur.pos)));
    }
    Ok(Dataset { spec, sequences })
}

pub fn write_grid_file(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_grid(ds)?)?;
    Ok(())
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_grid(&fs::read(path)?)
}
