use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bundle::{GraphBundle, Split, SplitMasks, UNLABELED};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Magic prefix of the binary matrix format: 8 bytes, then rows and cols as
/// little-endian u32, then row-major little-endian f64 values.
pub const MATRIX_MAGIC: &[u8; 8] = b"UGAPMAT1";
const HEADER_LEN: usize = 16;

/// Bundles with more nodes than this store features in binary.
pub const BINARY_FEATURE_THRESHOLD: usize = 10_000;

pub fn encode_matrix(t: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols) = (t.rows(), t.cols());
    let (r32, c32) = match (u32::try_from(rows), u32::try_from(cols)) {
        (Ok(r), Ok(c)) => (r, c),
        _ => return Err(Error::InvalidArgument(format!("{rows}x{cols} matrix exceeds the u32 header"))),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.numel());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&r32.to_le_bytes());
    out.extend_from_slice(&c32.to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("missing binary matrix header".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 8 {
        return Err(bad(format!(
            "header declares {rows}x{cols} values but body holds {} bytes",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value in matrix body".into()));
    }
    Tensor::new(vec![rows, cols], data)
}

pub fn write_matrix(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_matrix(t)?)
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines of a text file with their 1-based line numbers, split on
/// commas or tabs.
fn records(path: &Path, delimiter: u8) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

/// Drops a leading header row, recognized by a non-numeric first field.
fn skip_header(mut recs: Vec<(usize, Vec<String>)>) -> Vec<(usize, Vec<String>)> {
    if recs.first().is_some_and(|(_, r)| r[0].parse::<f64>().is_err()) {
        recs.remove(0);
    }
    recs
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, rec: &[String], idx: usize, what: &str) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("missing {what} column"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {what} `{raw}`"),
    })
}

fn check_node(path: &Path, line: usize, node: usize, n: usize) -> Result<usize> {
    if node >= n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("node index {node} out of range for {n} nodes"),
        });
    }
    Ok(node)
}

fn read_feature_csv(path: &Path) -> Result<Tensor> {
    let recs = records(path, b',')?;
    let width = recs.first().map_or(0, |(_, r)| r.len());
    let mut data = Vec::with_capacity(recs.len() * width);
    for (line, rec) in &recs {
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                msg: format!("row has {} columns, expected {width}", rec.len()),
            });
        }
        for idx in 0..width {
            let v: f64 = parse_field(path, *line, rec, idx, "feature")?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    msg: "non-finite feature".into(),
                });
            }
            data.push(v);
        }
    }
    Tensor::new(vec![recs.len(), width], data)
}

/// Reads a bundle directory: `edges.csv`, `features.bin` or `features.csv`,
/// `labels.csv` and `splits.csv`. Header rows are optional.
pub fn load_bundle(dir: &Path) -> Result<GraphBundle> {
    let bin = dir.join("features.bin");
    let features = if bin.exists() {
        read_matrix(&bin)?
    } else {
        read_feature_csv(&dir.join("features.csv"))?
    };
    let n = features.rows();

    let path = dir.join("edges.csv");
    let mut edges = Vec::new();
    for (line, rec) in skip_header(records(&path, b',')?) {
        let src = check_node(&path, line, parse_field(&path, line, &rec, 0, "src")?, n)?;
        let dst = check_node(&path, line, parse_field(&path, line, &rec, 1, "dst")?, n)?;
        edges.push((src, dst));
    }

    let path = dir.join("labels.csv");
    let mut labels = vec![UNLABELED; n];
    for (line, rec) in skip_header(records(&path, b',')?) {
        let node = check_node(&path, line, parse_field(&path, line, &rec, 0, "node")?, n)?;
        labels[node] = parse_field(&path, line, &rec, 1, "label")?;
    }

    let path = dir.join("splits.csv");
    let mut assign = vec![None; n];
    for (line, rec) in skip_header(records(&path, b',')?) {
        let node = check_node(&path, line, parse_field(&path, line, &rec, 0, "node")?, n)?;
        let raw = rec.get(1).map_or("", String::as_str);
        assign[node] = Some(Split::parse(raw).ok_or_else(|| Error::Parse {
            path: path.clone(),
            line,
            msg: format!("unknown split `{raw}`"),
        })?);
    }
    GraphBundle::new(&edges, features, labels, SplitMasks::from_assignment(&assign)?)
}

/// Writes `g` in canonical form, so saving a loaded bundle reproduces the
/// original bytes.
pub fn save_bundle(g: &GraphBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = BufWriter::new(Vec::new());
    let w = |buf: &mut BufWriter<Vec<u8>>, s: std::fmt::Arguments| buf.write_fmt(s).expect("in-memory write");

    w(&mut buf, format_args!("src,dst\n"));
    for (i, j) in g.undirected_edges() {
        w(&mut buf, format_args!("{i},{j}\n"));
    }
    write_atomic(&dir.join("edges.csv"), &take(buf))?;

    let bin = dir.join("features.bin");
    let csv_path = dir.join("features.csv");
    if g.n_nodes() > BINARY_FEATURE_THRESHOLD {
        write_matrix(&bin, g.features())?;
        remove_if_present(&csv_path)?;
    } else {
        let mut buf = BufWriter::new(Vec::new());
        for r in 0..g.n_nodes() {
            let row = g.features().row(r);
            for (c, v) in row.iter().enumerate() {
                let sep = if c + 1 == row.len() { "\n" } else { "," };
                w(&mut buf, format_args!("{v}{sep}"));
            }
        }
        write_atomic(&csv_path, &take(buf))?;
        remove_if_present(&bin)?;
    }

    let mut buf = BufWriter::new(Vec::new());
    w(&mut buf, format_args!("node,label\n"));
    for (i, y) in g.labels().iter().enumerate() {
        w(&mut buf, format_args!("{i},{y}\n"));
    }
    write_atomic(&dir.join("labels.csv"), &take(buf))?;

    let mut buf = BufWriter::new(Vec::new());
    w(&mut buf, format_args!("node,split\n"));
    for i in 0..g.n_nodes() {
        if let Some(s) = g.masks().assignment(i) {
            w(&mut buf, format_args!("{i},{}\n", s.as_str()));
        }
    }
    write_atomic(&dir.join("splits.csv"), &take(buf))
}

fn take(buf: BufWriter<Vec<u8>>) -> Vec<u8> {
    buf.into_inner().expect("in-memory flush")
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

/// Maps class names to indices in sorted order.
fn class_index(names: &[String]) -> BTreeMap<String, i64> {
    let mut sorted: Vec<&String> = names.iter().collect();
    sorted.sort();
    sorted.dedup();
    sorted.into_iter().enumerate().map(|(i, s)| (s.clone(), i as i64)).collect()
}

/// Public-split style assignment: the first `per_class` nodes of each class
/// (in a seeded shuffled order) train, then `n_val` validation and `n_test`
/// test nodes from the remainder.
pub fn per_class_split(labels: &[i64], per_class: usize, n_val: usize, n_test: usize, seed: u64) -> Result<SplitMasks> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken: BTreeMap<i64, usize> = BTreeMap::new();
    let mut assign = vec![None; labels.len()];
    for &i in &order {
        let count = taken.entry(labels[i]).or_default();
        if labels[i] != UNLABELED && *count < per_class {
            *count += 1;
            assign[i] = Some(Split::Train);
        }
    }
    let rest: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| assign[i].is_none() && labels[i] != UNLABELED)
        .collect();
    for (rank, i) in rest.into_iter().enumerate() {
        if rank < n_val {
            assign[i] = Some(Split::Val);
        } else if rank < n_val + n_test {
            assign[i] = Some(Split::Test);
        }
    }
    SplitMasks::from_assignment(&assign)
}

/// Seeded fractional split over labeled nodes.
pub fn fractional_split(labels: &[i64], train: f64, val: f64, seed: u64) -> Result<SplitMasks> {
    let mut order: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != UNLABELED).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let m = order.len() as f64;
    let n_train = (train * m).round() as usize;
    let n_val = (val * m).round() as usize;
    let mut assign = vec![None; labels.len()];
    for (rank, &i) in order.iter().enumerate() {
        assign[i] = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    SplitMasks::from_assignment(&assign)
}

fn find_with_suffix(dir: &Path, suffix: &str) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    hits.sort();
    hits.into_iter().next().ok_or_else(|| {
        Error::io(
            dir.join(format!("*{suffix}")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no matching file"),
        )
    })
}

/// Reads the LINQS citation format (`*.content`: id, binary word features,
/// class name; `*.cites`: cited and citing ids, tab separated). Citations to
/// unknown ids are skipped. Splits follow the public protocol of 20 training
/// nodes per class, 500 validation and 1000 test nodes.
pub fn ingest_linqs(dir: &Path, seed: u64) -> Result<(GraphBundle, usize)> {
    let content = find_with_suffix(dir, ".content")?;
    let recs = records(&content, b'\t')?;
    let mut ids = BTreeMap::new();
    let mut class_names = Vec::with_capacity(recs.len());
    let width = recs.first().map_or(0, |(_, r)| r.len().saturating_sub(2));
    let mut data = Vec::with_capacity(recs.len() * width);
    for (line, rec) in &recs {
        if rec.len() != width + 2 {
            return Err(Error::Parse {
                path: content.clone(),
                line: *line,
                msg: format!("expected {} tab-separated fields, found {}", width + 2, rec.len()),
            });
        }
        if ids.insert(rec[0].clone(), ids.len()).is_some() {
            return Err(Error::Parse {
                path: content.clone(),
                line: *line,
                msg: format!("duplicate node id `{}`", rec[0]),
            });
        }
        for idx in 1..=width {
            data.push(parse_field::<f64>(&content, *line, rec, idx, "feature")?);
        }
        class_names.push(rec[width + 1].clone());
    }
    let classes = class_index(&class_names);
    let labels: Vec<i64> = class_names.iter().map(|c| classes[c]).collect();
    let features = Tensor::new(vec![recs.len(), width], data)?;

    let cites = find_with_suffix(dir, ".cites")?;
    let mut edges = Vec::new();
    let mut skipped = 0;
    for (line, rec) in records(&cites, b'\t')? {
        if rec.len() != 2 {
            return Err(Error::Parse {
                path: cites.clone(),
                line,
                msg: format!("expected 2 tab-separated ids, found {}", rec.len()),
            });
        }
        match (ids.get(&rec[0]), ids.get(&rec[1])) {
            (Some(&a), Some(&b)) => edges.push((b, a)),
            _ => skipped += 1,
        }
    }
    let masks = per_class_split(&labels, 20, 500, 1000, seed)?;
    Ok((GraphBundle::new(&edges, features, labels, masks)?, skipped))
}

/// Reads the WebKB layout used by heterophily benchmarks
/// (`out1_node_feature_label.txt` with `id<TAB>f1,f2,..<TAB>label` and
/// `out1_graph_edges.txt` with `src<TAB>dst`), split 48/32/20 by seed.
pub fn ingest_webkb(dir: &Path, seed: u64) -> Result<GraphBundle> {
    let path = dir.join("out1_node_feature_label.txt");
    let recs = skip_header(records(&path, b'\t')?);
    let n = recs.len();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut labels = vec![UNLABELED; n];
    for (line, rec) in &recs {
        let id = check_node(&path, *line, parse_field(&path, *line, rec, 0, "node id")?, n)?;
        let feats: Vec<String> = rec.get(1).map_or(vec![], |s| s.split(',').map(str::to_owned).collect());
        let row = (0..feats.len())
            .map(|k| parse_field(&path, *line, &feats, k, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        rows[id] = Some(row);
        labels[id] = parse_field(&path, *line, rec, 2, "label")?;
    }
    let width = rows.first().and_then(|r| r.as_ref()).map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n * width);
    for (id, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 0,
            msg: format!("node {id} has no feature row"),
        })?;
        if row.len() != width {
            return Err(Error::Parse {
                path: path.clone(),
                line: 0,
                msg: format!("node {id} has {} features, expected {width}", row.len()),
            });
        }
        data.extend(row);
    }
    let path = dir.join("out1_graph_edges.txt");
    let mut edges = Vec::new();
    for (line, rec) in skip_header(records(&path, b'\t')?) {
        let src = check_node(&path, line, parse_field(&path, line, &rec, 0, "src")?, n)?;
        let dst = check_node(&path, line, parse_field(&path, line, &rec, 1, "dst")?, n)?;
        edges.push((src, dst));
    }
    let masks = fractional_split(&labels, 0.48, 0.32, seed)?;
    GraphBundle::new(&edges, Tensor::new(vec![n, width], data)?, labels, masks)
}
