//! `AGCD-CKPT v1`: header `AGCD-CKPT 1 <n_params> <sha256>`, one JSON
//! metadata line, then per parameter a line `<name> <trainable> <ndim> <dims...>`
//! followed by its little-endian f64 values. The hash covers everything
//! after the header line.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

pub const CKPT_MAGIC: &str = "AGCD-CKPT";
const CKPT_VERSION: &str = "1";

fn encode_body(ps: &ParamStore, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut body = serde_json::to_vec(meta)?;
    body.push(b'\n');
    for (name, e) in ps.iter() {
        if name.contains(char::is_whitespace) {
            return Err(Error::Format(format!("parameter name {name:?} contains whitespace")));
        }
        let shape = e.value.shape();
        write!(body, "{name} {} {}", u8::from(e.trainable), shape.len())?;
        for s in shape {
            write!(body, " {s}")?;
        }
        body.push(b'\n');
        for v in e.value.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(body)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ps: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let body = encode_body(ps, meta)?;
    let hash = hex::encode(Sha256::digest(&body));
    let mut out = format!("{CKPT_MAGIC} {CKPT_VERSION} {} {hash}\n", ps.len()).into_bytes();
    out.extend_from_slice(&body);
    fs::write(path, out)?;
    Ok(())
}

fn split_line<'a>(buf: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
    let rest = &buf[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Length(format!("checkpoint ends inside {what}")))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

fn num<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad {what}")))
}

/// Reads a checkpoint into a fresh store plus its metadata.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamStore, serde_json::Value)> {
    let buf = fs::read(path)?;
    let mut pos = 0;
    let header = split_line(&buf, &mut pos, "header")?;
    let mut toks = header.split(' ');
    if toks.next() != Some(CKPT_MAGIC) {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    if toks.next() != Some(CKPT_VERSION) {
        return Err(Error::Format("unsupported checkpoint version".into()));
    }
    let count: usize = num(toks.next(), "parameter count")?;
    let hash = toks.next().ok_or_else(|| Error::Format("missing content hash".into()))?;
    if hex::encode(Sha256::digest(&buf[pos..])) != hash {
        return Err(Error::Corruption("checkpoint content hash mismatch".into()));
    }
    let meta: serde_json::Value = serde_json::from_str(split_line(&buf, &mut pos, "metadata")?)?;
    let mut ps = ParamStore::new();
    for _ in 0..count {
        let line = split_line(&buf, &mut pos, "parameter header")?;
        let mut t = line.split(' ');
        let name = t.next().unwrap_or_default().to_string();
        let trainable = num::<u8>(t.next(), "trainable flag")? == 1;
        let ndim: usize = num(t.next(), "rank")?;
        let shape = (0..ndim).map(|_| num(t.next(), "dimension")).collect::<Result<Vec<usize>>>()?;
        let n: usize = shape.iter().product();
        let bytes = buf
            .get(pos..pos + 8 * n)
            .ok_or_else(|| Error::Length(format!("values of {name} truncated")))?;
        pos += 8 * n;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        ps.insert(name, Tensor::new(&shape, data)?, trainable)?;
    }
    if pos != buf.len() {
        return Err(Error::Length(format!("{} trailing bytes", buf.len() - pos)));
    }
    Ok((ps, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::numcore::layers::init_uniform;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamStore::new();
        ps.insert("a.w", init_uniform(&mut rng, &[3, 4], 3), true).unwrap();
        ps.insert("b", init_uniform(&mut rng, &[1, 2], 1), false).unwrap();
        ps
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ps = store();
        let meta = serde_json::json!({"variant": "agcd", "step": 7});
        save_checkpoint(&p, &ps, &meta).unwrap();
        let (back, m) = load_checkpoint(&p).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back.content_hash(), ps.content_hash());
        assert!(!back.entry("b").unwrap().trainable);
        let first = fs::read(&p).unwrap();
        save_checkpoint(&p, &back, &m).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &store(), &serde_json::json!({})).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Corruption(_))));
        bytes.truncate(n - 8);
        fs::write(&p, &bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
