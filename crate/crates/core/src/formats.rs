//! On-disk formats shared by every stage.
//!
//! # Tensor container
//!
//! ```text
//! ppgfusion-container 1
//! tensors <count>
//! <name> <dtype> <d0>x<d1>x... <byte-offset>
//! ...
//! end
//! <payloads: little-endian IEEE-754, concatenated in header order>
//! ```
//!
//! Offsets are relative to the first payload byte. `dtype` is `f64` or
//! `f32`; any other tag is rejected on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "ppgfusion-container 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

/// Serializes named tensors into the container layout.
pub fn encode_container(entries: &[(String, Tensor)], dtype: DType) -> Result<Vec<u8>> {
    let mut header = format!("{MAGIC}\ntensors {}\n", entries.len());
    let mut payload = Vec::new();
    for (name, t) in entries {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Input(format!("invalid tensor name {name:?}")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!(
            "{name} {} {} {}\n",
            dtype.tag(),
            dims.join("x"),
            payload.len()
        ));
        for &v in t.data() {
            match dtype {
                DType::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                DType::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses a container; `path` is only used for error messages.
pub fn decode_container(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bad = |m: String| Error::format(path, m);
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        *pos += nl + 1;
        Ok(line.to_string())
    };
    if next_line(&mut pos)? != MAGIC {
        return Err(bad("missing container magic line".into()));
    }
    let count_line = next_line(&mut pos)?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| bad(format!("bad count line {count_line:?}")))?;
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(&mut pos)?;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 4 {
            return Err(bad(format!("bad tensor line {line:?}")));
        }
        let dtype = DType::parse(fields[1])
            .ok_or_else(|| bad(format!("unknown dtype tag {:?}", fields[1])))?;
        let shape: Vec<usize> = fields[2]
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("bad shape {:?}", fields[2])))?;
        let offset: usize = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad offset {:?}", fields[3])))?;
        specs.push((fields[0].to_string(), dtype, shape, offset));
    }
    if next_line(&mut pos)? != "end" {
        return Err(bad("header not terminated by 'end'".into()));
    }
    let payload = &bytes[pos..];
    let mut out = Vec::with_capacity(count);
    for (name, dtype, shape, offset) in specs {
        let n: usize = shape.iter().product();
        let end = offset + n * dtype.width();
        if end > payload.len() {
            return Err(bad(format!("payload of {name} runs past end of file")));
        }
        let raw = &payload[offset..end];
        let data: Vec<f64> = match dtype {
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        let t = Tensor::new(&shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Writes via a temporary sibling and a rename so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_container(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    write_atomic(path, &encode_container(entries, DType::F64)?)
}

pub fn read_container(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}

/// Binary PGM (P5, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::format(path, m);
    // Header: magic, width, height, maxval separated by whitespace; '#' comments allowed.
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = &bytes[i + 1..];
    if data.len() < w * h {
        return Err(bad("truncated raster"));
    }
    Ok((w, h, data[..w * h].to_vec()))
}

/// `key = value` lines; `#` starts a comment. Keys keep their order.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {}: expected key=value", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::format(path, format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(e, _)| *e == k) {
            return Err(Error::format(path, format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}
