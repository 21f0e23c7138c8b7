//! Plain-text edge lists: one `i j [weight]` per line, 0-based, `#` comments,
//! and an optional leading `n <count>` line declaring the node count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::SparseGraph;
use crate::error::{Error, Result};

pub fn parse_edge_list(text: &str) -> Result<SparseGraph> {
    let mut declared_n: Option<usize> = None;
    let mut edges = Vec::new();
    let mut seen_content = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        if !seen_content && fields[0] == "n" {
            seen_content = true;
            if fields.len() != 2 {
                return Err(parse_err("expected `n <count>`".into()));
            }
            declared_n = Some(
                fields[1]
                    .parse()
                    .map_err(|_| parse_err(format!("bad node count `{}`", fields[1])))?,
            );
            continue;
        }
        seen_content = true;
        if fields.len() < 2 || fields.len() > 3 {
            return Err(parse_err(format!("expected `i j [weight]`, got `{line}`")));
        }
        let index = |t: &str| -> Result<usize> {
            t.parse().map_err(|_| parse_err(format!("bad node index `{t}`")))
        };
        let i = index(fields[0])?;
        let j = index(fields[1])?;
        let w = match fields.get(2) {
            Some(t) => t
                .parse()
                .map_err(|_| parse_err(format!("bad weight `{t}`")))?,
            None => 1.0,
        };
        edges.push((i, j, w));
    }
    let n = declared_n.unwrap_or_else(|| {
        edges
            .iter()
            .map(|&(i, j, _)| i.max(j) + 1)
            .max()
            .unwrap_or(0)
    });
    SparseGraph::from_edge_list(n, &edges)
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<SparseGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_edge_list(&text).map_err(|e| match e {
        Error::Io(_) | Error::File { .. } => e,
        other => Error::File {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Canonical text form: the `n` header, then each undirected edge once with
/// `i < j` in lexicographic order.
pub fn format_edge_list(g: &SparseGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n {}", g.n());
    for (i, j, w) in g.edges() {
        let _ = writeln!(out, "{i} {j} {w:?}");
    }
    out
}

pub fn write_edge_list(g: &SparseGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_edge_list(g))?;
    Ok(())
}
