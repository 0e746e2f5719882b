//! On-disk formats: the edge dump, the graph interchange file and the
//! parameter checkpoint.
//!
//! # Edge dump (`edges.tsv`)
//!
//! ```text
//! #N=<n> L=<l> alpha=<a> per_head=<0|1> [heads=<h>] [sinks=<s>]
//! layer<TAB>head<TAB>src<TAB>dst
//! ```
//!
//! `N` counts every node including sinks. `heads` is written for per-head
//! sets and `sinks` when nonzero, so empty lists survive a round trip.
//!
//! # Graph file
//!
//! ```text
//! N F C
//! <F features>      N lines
//! <label>           N lines
//! u v               one line per directed edge; both directions required
//! train i j …       index lists (also `valid`, `test`)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.
//!
//! # Checkpoint (`checkpoint.bin`)
//!
//! Little-endian throughout: magic `SACCKPT\n`, `u32` version (1), `u8`
//! dtype-tag length and tag (`f32`/`f64`), `u32` parameter count, then per
//! parameter in name order: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` dims, values in the dtype's width.

use std::fmt::Write as _;

use sac_core::edgeset::{Edge, EdgeSet};
use sac_core::tasks::GraphData;
use sac_core::{ParamStore, Real, Tensor};

use crate::error::CliError;

fn fmt_err(what: &'static str, msg: impl Into<String>) -> CliError {
    CliError::Format { what, msg: msg.into() }
}

pub fn write_edges(es: &EdgeSet) -> String {
    let mut out = format!(
        "#N={} L={} alpha={} per_head={}",
        es.num_nodes(),
        es.num_layers(),
        es.alpha(),
        u8::from(es.per_head())
    );
    if es.per_head() {
        let _ = write!(out, " heads={}", es.num_heads());
    }
    if es.num_sinks() > 0 {
        let _ = write!(out, " sinks={}", es.num_sinks());
    }
    out.push('\n');
    for l in 0..es.num_layers() {
        for h in 0..es.num_heads() {
            for &(s, d) in es.edges(l, h) {
                let _ = writeln!(out, "{l}\t{h}\t{s}\t{d}");
            }
        }
    }
    out
}

pub fn read_edges(text: &str) -> Result<EdgeSet, CliError> {
    let err = |m: String| fmt_err("edge dump", m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err("empty file".into()))?;
    let header = header.strip_prefix('#').ok_or_else(|| err("missing `#` header".into()))?;
    let (mut n, mut l, mut alpha, mut per_head, mut heads, mut sinks) = (None, None, None, None, None, 0usize);
    for field in header.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| err(format!("header field `{field}`")))?;
        let bad = |_: std::num::ParseIntError| err(format!("header value `{field}`"));
        match k {
            "N" => n = Some(v.parse::<usize>().map_err(bad)?),
            "L" => l = Some(v.parse::<usize>().map_err(bad)?),
            "alpha" => alpha = Some(v.parse::<f64>().map_err(|_| err(format!("header value `{field}`")))?),
            "per_head" => {
                per_head = Some(match v {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(format!("per_head must be 0 or 1, got `{v}`"))),
                })
            }
            "heads" => heads = Some(v.parse::<usize>().map_err(bad)?),
            "sinks" => sinks = v.parse::<usize>().map_err(bad)?,
            _ => return Err(err(format!("unknown header key `{k}`"))),
        }
    }
    let (n, l, alpha, per_head) = match (n, l, alpha, per_head) {
        (Some(n), Some(l), Some(a), Some(p)) => (n, l, a, p),
        _ => return Err(err("header needs N, L, alpha and per_head".into())),
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed: Option<Vec<usize>> = (f.len() == 4).then(|| f.iter().map(|x| x.parse().ok()).collect()).flatten();
        let v = parsed.ok_or_else(|| err(format!("line {}: expected 4 tab-separated integers", i + 2)))?;
        if v[2] >= n || v[3] >= n {
            return Err(err(format!("line {}: node outside N={n}", i + 2)));
        }
        rows.push(v);
    }
    let heads = match heads {
        Some(h) => h,
        None if per_head => rows.iter().map(|r| r[1] + 1).max().unwrap_or(1),
        None => 1,
    };
    let slots = if per_head { heads } else { 1 };
    let mut lists: Vec<Vec<Edge>> = vec![Vec::new(); l * slots];
    for r in rows {
        if r[0] >= l || r[1] >= slots {
            return Err(err(format!("layer {} head {} outside the header's shape", r[0], r[1])));
        }
        lists[r[0] * slots + r[1]].push((r[2] as u32, r[3] as u32));
    }
    if sinks > n {
        return Err(err("more sinks than nodes".into()));
    }
    let es = EdgeSet::from_lists(n - sinks, l, heads, per_head, alpha, lists).map_err(|e| err(e.to_string()))?;
    Ok(es.with_sinks(sinks))
}

pub fn write_graph(g: &GraphData) -> String {
    let mut out = format!("{} {} {}\n", g.num_nodes, g.num_features, g.num_classes);
    for row in g.features.chunks(g.num_features) {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    for l in &g.labels {
        let _ = writeln!(out, "{l}");
    }
    for (u, v) in &g.edges {
        let _ = writeln!(out, "{u} {v}");
    }
    for (name, idx) in [("train", &g.train), ("valid", &g.valid), ("test", &g.test)] {
        out.push_str(name);
        for i in idx {
            let _ = write!(out, " {i}");
        }
        out.push('\n');
    }
    out
}

/// Parses and validates a graph file; every failure is a dataset error.
pub fn read_graph(text: &str) -> Result<GraphData, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let bad = |line: usize, m: &str| CliError::Dataset(format!("graph file line {line}: {m}"));
    let (ln, header) = lines.next().ok_or_else(|| CliError::Dataset("graph file is empty".into()))?;
    let hv: Vec<usize> = header.split_whitespace().map(|x| x.parse()).collect::<Result<_, _>>().map_err(|_| bad(ln, "header must be `N F C`"))?;
    let [n, f, c] = hv[..] else { return Err(bad(ln, "header must be `N F C`")) };
    let mut features = Vec::with_capacity(n * f);
    for _ in 0..n {
        let (ln, l) = lines.next().ok_or_else(|| CliError::Dataset("graph file ends inside the feature block".into()))?;
        let row: Vec<f64> = l.split_whitespace().map(|x| x.parse()).collect::<Result<_, _>>().map_err(|_| bad(ln, "bad feature value"))?;
        if row.len() != f {
            return Err(bad(ln, &format!("expected {f} features, got {}", row.len())));
        }
        features.extend(row);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = lines.next().ok_or_else(|| CliError::Dataset("graph file ends inside the label block".into()))?;
        labels.push(l.parse::<usize>().map_err(|_| bad(ln, "bad label"))?);
    }
    let (mut edges, mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (ln, l) in lines {
        let mut parts = l.split_whitespace();
        let first = parts.next().expect("non-empty line");
        let target = match first {
            "train" => Some(&mut train),
            "valid" => Some(&mut valid),
            "test" => Some(&mut test),
            _ => None,
        };
        match target {
            Some(t) => {
                for x in parts {
                    t.push(x.parse::<usize>().map_err(|_| bad(ln, "bad index"))?);
                }
            }
            None => {
                let u: u32 = first.parse().map_err(|_| bad(ln, "expected `u v` or a split line"))?;
                let v: u32 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad(ln, "expected `u v`"))?;
                if parts.next().is_some() {
                    return Err(bad(ln, "expected `u v`"));
                }
                if u as usize >= n || v as usize >= n {
                    return Err(bad(ln, "edge endpoint outside N"));
                }
                edges.push((u, v));
            }
        }
    }
    let g = GraphData {
        num_nodes: n,
        num_features: f,
        num_classes: c,
        features,
        labels,
        edges,
        train,
        valid,
        test,
    };
    g.validate().map_err(|e| CliError::Dataset(e.to_string()))?;
    Ok(g)
}

const MAGIC: &[u8; 8] = b"SACCKPT\n";
const VERSION: u32 = 1;

pub fn write_checkpoint<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(store.num_scalars() * std::mem::size_of::<T>() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::NAME.len() as u8);
    out.extend_from_slice(T::NAME.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.values() {
            if T::NAME == "f32" {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], CliError> {
        if self.buf.len() < k {
            return Err(fmt_err("checkpoint", "truncated"));
        }
        let (head, rest) = self.buf.split_at(k);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<ParamStore<T>, CliError> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(fmt_err("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fmt_err("checkpoint", format!("unsupported version {version}")));
    }
    let tag_len = r.take(1)?[0] as usize;
    let tag = std::str::from_utf8(r.take(tag_len)?).map_err(|_| fmt_err("checkpoint", "dtype tag"))?;
    if tag != T::NAME {
        return Err(fmt_err("checkpoint", format!("stored dtype {tag}, expected {}", T::NAME)));
    }
    let width = if tag == "f32" { 4 } else { 8 };
    let count = r.u32()?;
    let mut store = ParamStore::new();
    let mut prev: Option<String> = None;
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| fmt_err("checkpoint", "parameter name"))?.to_string();
        if prev.as_ref().is_some_and(|p| p >= &name) {
            return Err(fmt_err("checkpoint", "parameters not in name order"));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| fmt_err("checkpoint", "shape overflow"))?;
        let raw = r.take(numel.checked_mul(width).ok_or_else(|| fmt_err("checkpoint", "shape overflow"))?)?;
        let values: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
                _ => T::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect();
        store.insert(&name, Tensor::new(&shape, values)?)?;
        prev = Some(name);
    }
    if !r.buf.is_empty() {
        return Err(fmt_err("checkpoint", "trailing bytes"));
    }
    Ok(store)
}

/// Copies checkpoint values into `store`, which must hold exactly the same
/// parameter names and shapes.
pub fn restore_params<T: Real>(store: &mut ParamStore<T>, loaded: &ParamStore<T>) -> Result<(), CliError> {
    let want: Vec<(&str, &[usize])> = store.iter().map(|(n, t)| (n, t.shape())).collect();
    let got: Vec<(&str, &[usize])> = loaded.iter().map(|(n, t)| (n, t.shape())).collect();
    if want != got {
        return Err(fmt_err("checkpoint", "parameters do not match the configured model"));
    }
    for (name, t) in loaded.iter() {
        store.set(name, t.values().to_vec())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sac_core::edgeset::{gen_bpt, gen_span};

    #[test]
    fn edge_dump_keeps_empty_heads_and_sinks() {
        let mut es = EdgeSet::new(3, 2, 4, true, 0.5).unwrap();
        es.push(1, 2, (0, 1));
        es.push(1, 2, (0, 1));
        let es = es.with_sinks(1);
        assert_eq!(read_edges(&write_edges(&es)).unwrap(), es);
        let bpt = gen_bpt(6).unwrap();
        assert_eq!(read_edges(&write_edges(&bpt)).unwrap(), bpt);
        let span = gen_span(8, &[1, 3]).unwrap();
        assert_eq!(read_edges(&write_edges(&span)).unwrap(), span);
    }

    #[test]
    fn edge_dump_rejects_garbage() {
        assert!(read_edges("").is_err());
        assert!(read_edges("#N=2 L=1 alpha=1 per_head=0\n0\t0\t0\t2\n").is_err());
        assert!(read_edges("#N=2 L=1 alpha=1 per_head=0\n1\t0\t0\t1\n").is_err());
        assert!(read_edges("#N=2 L=1 per_head=0\n").is_err());
    }

    #[test]
    fn graph_file_parses_with_comments() {
        let text = "# toy\n2 1 2\n0.5\n-1\n0\n1\n0 1\n1 0\ntrain 0\nvalid\ntest 1\n";
        let g = read_graph(text).unwrap();
        assert_eq!(g.labels, [0, 1]);
        assert_eq!(g.test, [1]);
        assert_eq!(read_graph(&write_graph(&g)).unwrap(), g);
        let asym = "2 1 2\n0.5\n-1\n0\n1\n0 1\ntrain 0\n";
        assert!(matches!(read_graph(asym), Err(CliError::Dataset(_))));
    }

    #[test]
    fn checkpoint_round_trips_both_dtypes() {
        let mut s = ParamStore::<f32>::new();
        s.insert("b", Tensor::new(&[2], vec![1.5, -0.1]).unwrap()).unwrap();
        s.insert("a.w", Tensor::new(&[1, 3], vec![f32::MIN_POSITIVE, 3.0, 1e30]).unwrap()).unwrap();
        let bytes = write_checkpoint(&s);
        assert_eq!(read_checkpoint::<f32>(&bytes).unwrap(), s);
        assert!(read_checkpoint::<f64>(&bytes).is_err());
        assert!(read_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }
}
