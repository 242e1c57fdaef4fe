use std::fmt::Write as _;
use std::path::Path;

use super::ClipTokens;
use crate::error::{Error, Result};

/// One exported record: `clip_id<TAB>S:<indices><TAB>T:<indices>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub clip_id: String,
    pub tokens: ClipTokens,
}

fn join(indices: &[u32]) -> String {
    let mut s = String::new();
    for (i, v) in indices.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("write to string");
    }
    s
}

fn split(field: &str, prefix: &str, line: usize) -> Result<Vec<u32>> {
    let body = field
        .strip_prefix(prefix)
        .ok_or_else(|| Error::format("token file", format!("line {line}: expected {prefix:?} field")))?;
    body.split_whitespace()
        .map(|v| {
            v.parse()
                .map_err(|_| Error::format("token file", format!("line {line}: bad index {v:?}")))
        })
        .collect()
}

pub fn format_tokens(records: &[TokenRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(out, "{}\tS:{}\tT:{}", r.clip_id, join(&r.tokens.spatial), join(&r.tokens.temporal))
            .expect("write to string");
    }
    out
}

pub fn parse_tokens(text: &str) -> Result<Vec<TokenRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(
                "token file",
                format!("line {}: expected 3 tab-separated fields, found {}", i + 1, fields.len()),
            ));
        }
        out.push(TokenRecord {
            clip_id: fields[0].to_string(),
            tokens: ClipTokens {
                spatial: split(fields[1], "S:", i + 1)?,
                temporal: split(fields[2], "T:", i + 1)?,
            },
        });
    }
    Ok(out)
}

pub fn read_tokens(path: &Path) -> Result<Vec<TokenRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tokens(&text)
}

pub fn write_tokens(path: &Path, records: &[TokenRecord]) -> Result<()> {
    std::fs::write(path, format_tokens(records)).map_err(|e| Error::io(path, e))
}
