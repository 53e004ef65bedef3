//! Plain-text mesh files.
//!
//! ```text
//! caliper-mesh v1
//! nodes <N>
//! <id> <x> <y> <z>          (N lines, ids zero-based and sequential)
//! elements <E>
//! <n0> ... <n7>             (E lines)
//! nodeset <name> <count>
//! <ids...>                  (whitespace separated, any line breaks)
//! sideset <name> <count>
//! <element> <face>          (count lines)
//! ```
//! Floats are written with the shortest representation that round-trips.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::HexMesh;
use crate::error::{Error, Result};

pub const MESH_HEADER: &str = "caliper-mesh v1";

pub fn write_mesh(mesh: &HexMesh) -> String {
    let mut out = String::new();
    writeln!(out, "{MESH_HEADER}").unwrap();
    writeln!(out, "nodes {}", mesh.node_count()).unwrap();
    for (i, p) in mesh.nodes().iter().enumerate() {
        writeln!(out, "{i} {} {} {}", p.x, p.y, p.z).unwrap();
    }
    writeln!(out, "elements {}", mesh.element_count()).unwrap();
    for conn in mesh.elements() {
        let ids: Vec<String> = conn.iter().map(|n| n.to_string()).collect();
        writeln!(out, "{}", ids.join(" ")).unwrap();
    }
    for (name, set) in mesh.node_sets() {
        writeln!(out, "nodeset {name} {}", set.len()).unwrap();
        for chunk in set.chunks(16) {
            let ids: Vec<String> = chunk.iter().map(|n| n.to_string()).collect();
            writeln!(out, "{}", ids.join(" ")).unwrap();
        }
    }
    for (name, set) in mesh.side_sets() {
        writeln!(out, "sideset {name} {}", set.len()).unwrap();
        for (e, f) in set {
            writeln!(out, "{e} {f}").unwrap();
        }
    }
    out
}

pub fn save_mesh(mesh: &HexMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_mesh(mesh))?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<HexMesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
            last: 0,
        }
    }

    /// Next non-blank, non-comment line as (1-based line number, tokens).
    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let line = line.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                self.last = i + 1;
                return Some((i + 1, tokens));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let last = self.last;
        self.next().ok_or_else(|| Error::Parse {
            line: last + 1,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, token: &str, field: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| err(line, format!("invalid {field} `{token}`")))
}

fn keyword_count(lines: &mut Lines, keyword: &str) -> Result<usize> {
    let (ln, t) = lines.expect(keyword)?;
    if t.len() != 2 || t[0] != keyword {
        return Err(err(ln, format!("expected `{keyword} <count>`")));
    }
    parse_num(ln, t[1], &format!("{keyword} count"))
}

pub fn parse_mesh(text: &str) -> Result<HexMesh> {
    let mut lines = Lines::new(text);
    let (ln, header) = lines.expect("header")?;
    if header.join(" ") != MESH_HEADER {
        return Err(err(ln, format!("expected header `{MESH_HEADER}`")));
    }

    let n_nodes = keyword_count(&mut lines, "nodes")?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let (ln, t) = lines.expect("node line")?;
        if t.len() != 4 {
            return Err(err(ln, "node line must be `id x y z`"));
        }
        let id: usize = parse_num(ln, t[0], "node id")?;
        if id != i {
            return Err(err(ln, format!("node id {id} out of sequence, expected {i}")));
        }
        nodes.push(Vector3::new(
            parse_num(ln, t[1], "x")?,
            parse_num(ln, t[2], "y")?,
            parse_num(ln, t[3], "z")?,
        ));
    }

    let n_elements = keyword_count(&mut lines, "elements")?;
    let mut elements = Vec::with_capacity(n_elements);
    for _ in 0..n_elements {
        let (ln, t) = lines.expect("element line")?;
        if t.len() != 8 {
            return Err(err(ln, format!("element line needs 8 node ids, found {}", t.len())));
        }
        let mut conn = [0usize; 8];
        for (slot, tok) in conn.iter_mut().zip(&t) {
            *slot = parse_num(ln, tok, "element node id")?;
        }
        elements.push(conn);
    }

    let mut node_sets = BTreeMap::new();
    let mut side_sets = BTreeMap::new();
    while let Some((ln, t)) = lines.next() {
        if t.len() != 3 || (t[0] != "nodeset" && t[0] != "sideset") {
            return Err(err(ln, "expected `nodeset <name> <count>` or `sideset <name> <count>`"));
        }
        let name = t[1].to_string();
        let count: usize = parse_num(ln, t[2], "set count")?;
        if t[0] == "nodeset" {
            let mut ids = Vec::with_capacity(count);
            while ids.len() < count {
                let (ln, t) = lines.expect("node set ids")?;
                for tok in t {
                    ids.push(parse_num(ln, tok, "node set id")?);
                }
            }
            if ids.len() != count {
                return Err(err(lines.last, format!("node set `{name}` has more than {count} ids")));
            }
            node_sets.insert(name, ids);
        } else {
            let mut sides = Vec::with_capacity(count);
            for _ in 0..count {
                let (ln, t) = lines.expect("side set entry")?;
                if t.len() != 2 {
                    return Err(err(ln, "side set entry must be `element face`"));
                }
                sides.push((parse_num(ln, t[0], "element id")?, parse_num(ln, t[1], "face id")?));
            }
            side_sets.insert(name, sides);
        }
    }

    HexMesh::new(nodes, elements, node_sets, side_sets)
}
