//! Readers and writers for every external data format: JSONL detection traces
//! and ground truths, VOC XML annotations, PGM grayscale images, case-label
//! CSV files and the dataset manifest tying them together.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{BBox, DetectionRecord, GeometryError, GroundTruth, RawDetection};
use crate::discriminator::CaseLabel;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {error}")]
    Io { path: PathBuf, error: io::Error },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{path}: {message}")]
    Xml { path: PathBuf, message: String },
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("dataset: {0}")]
    Dataset(String),
}

impl IngestError {
    fn line(line: usize, message: impl Into<String>) -> Self {
        IngestError::Line { line, message: message.into() }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |error| IngestError::Io { path: path.to_path_buf(), error }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    image_id: String,
    width: u32,
    height: u32,
    detections: Vec<TraceBox>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceBox {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthLine {
    image_id: String,
    width: u32,
    height: u32,
    objects: Vec<TruthObject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthObject {
    class: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

fn check_header(line: usize, image_id: &str, width: u32, height: u32) -> Result<(), IngestError> {
    if image_id.is_empty() {
        return Err(IngestError::line(line, "image_id: must be non-empty"));
    }
    if width == 0 || height == 0 {
        return Err(IngestError::line(line, format!("width/height: {width}x{height} has zero area")));
    }
    Ok(())
}

fn geometry(line: usize, field: String, e: GeometryError) -> IngestError {
    IngestError::line(line, format!("{field}: {e}"))
}

/// Iterates over the non-blank lines of a reader with 1-based numbers.
fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
}

pub fn read_traces<R: BufRead>(reader: R) -> Result<BTreeMap<String, DetectionRecord>, IngestError> {
    let mut out = BTreeMap::new();
    let mut class_count: Option<usize> = None;
    for (n, line) in numbered_lines(reader) {
        let line = line.map_err(|e| IngestError::line(n, e.to_string()))?;
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|e| IngestError::line(n, format!("malformed JSON: {e}")))?;
        check_header(n, &parsed.image_id, parsed.width, parsed.height)?;
        let mut raw = Vec::with_capacity(parsed.detections.len());
        for (i, det) in parsed.detections.into_iter().enumerate() {
            for (c, s) in det.scores.iter().enumerate() {
                if !(0.0..=1.0).contains(s) {
                    return Err(IngestError::line(
                        n,
                        format!("detections[{i}].scores[{c}]: {s} outside [0, 1]"),
                    ));
                }
            }
            match class_count {
                None => class_count = Some(det.scores.len()),
                Some(k) if k != det.scores.len() => {
                    return Err(IngestError::line(
                        n,
                        format!("detections[{i}].scores: length {} but expected {k}", det.scores.len()),
                    ))
                }
                _ => {}
            }
            if det.scores.is_empty() {
                return Err(IngestError::line(n, format!("detections[{i}].scores: empty")));
            }
            let bbox = BBox::clamped(det.bbox, parsed.width, parsed.height)
                .map_err(|e| geometry(n, format!("detections[{i}].box"), e))?;
            raw.push(RawDetection { bbox, class_scores: det.scores });
        }
        if out.contains_key(&parsed.image_id) {
            return Err(IngestError::line(n, format!("image_id: duplicate {:?}", parsed.image_id)));
        }
        out.insert(
            parsed.image_id.clone(),
            DetectionRecord { image_id: parsed.image_id, width: parsed.width, height: parsed.height, raw },
        );
    }
    Ok(out)
}

pub fn load_traces(path: &Path) -> Result<BTreeMap<String, DetectionRecord>, IngestError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_traces(BufReader::new(f))
}

pub fn write_traces<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a DetectionRecord>,
) -> io::Result<()> {
    for r in records {
        let line = TraceLine {
            image_id: r.image_id.clone(),
            width: r.width,
            height: r.height,
            detections: r
                .raw
                .iter()
                .map(|d| TraceBox { bbox: d.bbox.coords(), scores: d.class_scores.clone() })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_truths<R: BufRead>(reader: R) -> Result<BTreeMap<String, GroundTruth>, IngestError> {
    let mut out = BTreeMap::new();
    for (n, line) in numbered_lines(reader) {
        let line = line.map_err(|e| IngestError::line(n, e.to_string()))?;
        let parsed: TruthLine =
            serde_json::from_str(&line).map_err(|e| IngestError::line(n, format!("malformed JSON: {e}")))?;
        check_header(n, &parsed.image_id, parsed.width, parsed.height)?;
        let objects = parsed
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                BBox::clamped(o.bbox, parsed.width, parsed.height)
                    .map(|b| (o.class, b))
                    .map_err(|e| geometry(n, format!("objects[{i}].box"), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if out.contains_key(&parsed.image_id) {
            return Err(IngestError::line(n, format!("image_id: duplicate {:?}", parsed.image_id)));
        }
        out.insert(
            parsed.image_id.clone(),
            GroundTruth { image_id: parsed.image_id, width: parsed.width, height: parsed.height, objects },
        );
    }
    Ok(out)
}

pub fn load_truths(path: &Path) -> Result<BTreeMap<String, GroundTruth>, IngestError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_truths(BufReader::new(f))
}

pub fn write_truths<'a, W: Write>(
    mut w: W,
    truths: impl IntoIterator<Item = &'a GroundTruth>,
) -> io::Result<()> {
    for t in truths {
        let line = TruthLine {
            image_id: t.image_id.clone(),
            width: t.width,
            height: t.height,
            objects: t.objects.iter().map(|(c, b)| TruthObject { class: *c, bbox: b.coords() }).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Result of importing a directory of VOC annotation files.
#[derive(Debug, Clone, PartialEq)]
pub struct VocImport {
    pub truths: BTreeMap<String, GroundTruth>,
    /// Objects dropped because their class is not in the class list.
    pub skipped: usize,
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

/// Parses a single VOC annotation. `difficult` / `truncated` flags are ignored.
pub fn parse_voc(
    xml: &str,
    image_id: &str,
    class_names: &[String],
) -> Result<(GroundTruth, usize), String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| format!("unparseable XML: {e}"))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(format!("root element is <{}>, expected <annotation>", root.tag_name().name()));
    }
    let size = child(root, "size").ok_or("missing <size> element")?;
    let dim = |name: &str| -> Result<u32, String> {
        let text = child_text(size, name).ok_or(format!("missing <size>/<{name}>"))?;
        let v: f64 = text.parse().map_err(|_| format!("bad <size>/<{name}>: {text:?}"))?;
        if !(v.is_finite() && v >= 1.0 && v <= f64::from(u32::MAX)) {
            return Err(format!("bad <size>/<{name}>: {text:?}"));
        }
        Ok(v.round() as u32)
    };
    let (width, height) = (dim("width")?, dim("height")?);

    let mut objects = Vec::new();
    let mut skipped = 0;
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name = child_text(obj, "name").ok_or("object without <name>")?;
        let Some(class_id) = class_names.iter().position(|c| c == name) else {
            skipped += 1;
            continue;
        };
        let bnd = child(obj, "bndbox").ok_or_else(|| format!("object {name:?} without <bndbox>"))?;
        let mut coords = [0.0; 4];
        for (slot, key) in coords.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            let text = child_text(bnd, key).ok_or_else(|| format!("<bndbox> missing <{key}>"))?;
            *slot = text.parse().map_err(|_| format!("bad <bndbox>/<{key}>: {text:?}"))?;
        }
        if coords[0] >= coords[2] || coords[1] >= coords[3] {
            return Err(format!("degenerate box for {name:?}: {coords:?}"));
        }
        let bbox = BBox::clamped(coords, width, height).map_err(|e| format!("object {name:?}: {e}"))?;
        objects.push((class_id, bbox));
    }
    Ok((GroundTruth { image_id: image_id.to_string(), width, height, objects }, skipped))
}

/// Imports every `*.xml` file in `dir`; the image id is the file stem.
pub fn import_voc_xml(dir: &Path, class_names: &[String]) -> Result<VocImport, IngestError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();
    let mut truths = BTreeMap::new();
    let mut skipped = 0;
    for p in paths {
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let (gt, s) = parse_voc(&text, &stem, class_names)
            .map_err(|message| IngestError::Xml { path: p.clone(), message })?;
        skipped += s;
        truths.insert(stem, gt);
    }
    Ok(VocImport { truths, skipped })
}

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self, IngestError> {
        if width == 0 || height == 0 {
            return Err(IngestError::Pgm("zero-sized image".into()));
        }
        if pixels.len() != width * height {
            return Err(IngestError::Pgm(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        if maxval == 0 || pixels.iter().any(|&p| p > maxval) {
            return Err(IngestError::Pgm("pixel value exceeds maxval".into()));
        }
        Ok(Self { width, height, maxval, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Plain (P2) encoding, one row per line.
    pub fn to_p2(&self) -> String {
        let mut s = format!("P2\n{} {}\n{}\n", self.width, self.height, self.maxval);
        for row in self.pixels.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(u16::to_string).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }
}

struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, IngestError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(IngestError::Pgm(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IngestError::Pgm(format!("{what} out of range")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, IngestError> {
    let magic = bytes.get(..2).ok_or_else(|| IngestError::Pgm("truncated header".into()))?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(IngestError::Pgm(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut h = PgmHeader { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(IngestError::Pgm(format!("maxval {maxval} outside 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| IngestError::Pgm("image dimensions overflow".into()))?;

    let pixels: Vec<u16> = if binary {
        // exactly one whitespace byte separates the header from the raster
        if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
            return Err(IngestError::Pgm("truncated pixel data".into()));
        }
        let data = &bytes[h.pos + 1..];
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if data.len() < need {
            return Err(IngestError::Pgm(format!(
                "truncated pixel data: {} of {need} bytes",
                data.len()
            )));
        }
        if wide {
            data[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            data[..need].iter().map(|&b| u16::from(b)).collect()
        }
    } else {
        let mut px = Vec::with_capacity(count);
        for _ in 0..count {
            let v = h.number("pixel").map_err(|_| IngestError::Pgm("truncated pixel data".into()))?;
            px.push(u16::try_from(v).map_err(|_| IngestError::Pgm("pixel value out of range".into()))?);
        }
        px
    };
    GrayImage::new(width, height, maxval as u16, pixels)
}

pub fn load_pgm(path: &Path) -> Result<GrayImage, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_pgm(&bytes)
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<BTreeMap<String, CaseLabel>, IngestError> {
    let mut out = BTreeMap::new();
    for (n, line) in numbered_lines(reader) {
        let line = line.map_err(|e| IngestError::line(n, e.to_string()))?;
        if n == 1 && line.trim() == "image_id,label" {
            continue;
        }
        let (id, label) = line
            .trim()
            .split_once(',')
            .ok_or_else(|| IngestError::line(n, "expected `image_id,label`"))?;
        let label: CaseLabel = label.parse().map_err(|e: String| IngestError::line(n, e))?;
        if out.insert(id.to_string(), label).is_some() {
            return Err(IngestError::line(n, format!("image_id: duplicate {id:?}")));
        }
    }
    Ok(out)
}

pub fn write_labels<W: Write>(mut w: W, labels: &BTreeMap<String, CaseLabel>) -> io::Result<()> {
    writeln!(w, "image_id,label")?;
    for (id, l) in labels {
        writeln!(w, "{id},{l}")?;
    }
    Ok(())
}

/// On-disk description of a dataset. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub truths: String,
    pub small: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    /// Per-image upload sizes in bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_bytes: Option<BTreeMap<String, u64>>,
}

/// Everything the pipeline needs about one dataset, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub truths: BTreeMap<String, GroundTruth>,
    pub small: BTreeMap<String, DetectionRecord>,
    pub big: BTreeMap<String, DetectionRecord>,
    pub images: BTreeMap<String, GrayImage>,
    pub labels: Option<BTreeMap<String, CaseLabel>>,
    pub image_bytes: Option<BTreeMap<String, u64>>,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &String> {
        self.truths.keys()
    }

    /// Checks cross-file consistency: every trace belongs to a known image
    /// of the same size, and class ids / score vectors agree with the
    /// class list.
    pub fn validate(&self) -> Result<(), IngestError> {
        let c = self.class_count();
        if c == 0 {
            return Err(IngestError::Dataset("class list is empty".into()));
        }
        for t in self.truths.values() {
            if let Some((cls, _)) = t.objects.iter().find(|(cls, _)| *cls >= c) {
                return Err(IngestError::Dataset(format!(
                    "{}: class {cls} outside 0..{c}",
                    t.image_id
                )));
            }
        }
        for (name, traces) in [("small", &self.small), ("big", &self.big)] {
            for r in traces.values() {
                let t = self.truths.get(&r.image_id).ok_or_else(|| {
                    IngestError::Dataset(format!("{name} trace {:?} has no ground truth", r.image_id))
                })?;
                if (t.width, t.height) != (r.width, r.height) {
                    return Err(IngestError::Dataset(format!(
                        "{name} trace {:?} is {}x{} but ground truth is {}x{}",
                        r.image_id, r.width, r.height, t.width, t.height
                    )));
                }
                if let Some(d) = r.raw.iter().find(|d| d.class_scores.len() != c) {
                    return Err(IngestError::Dataset(format!(
                        "{name} trace {:?}: {} class scores but {c} classes",
                        r.image_id,
                        d.class_scores.len()
                    )));
                }
            }
        }
        for (kind, ids) in [
            ("image", self.images.keys().collect::<Vec<_>>()),
            ("label", self.labels.iter().flat_map(|l| l.keys()).collect()),
        ] {
            if let Some(id) = ids.into_iter().find(|id| !self.truths.contains_key(*id)) {
                return Err(IngestError::Dataset(format!("{kind} {id:?} has no ground truth")));
            }
        }
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| IngestError::Manifest(e.to_string()))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let truths = load_truths(&base.join(&m.truths))?;
        let small = load_traces(&base.join(&m.small))?;
        let big = match &m.big {
            Some(p) => load_traces(&base.join(p))?,
            None => BTreeMap::new(),
        };
        let mut images = BTreeMap::new();
        if let Some(dir) = &m.images {
            let dir = base.join(dir);
            for id in truths.keys() {
                let p = dir.join(format!("{id}.pgm"));
                if p.exists() {
                    images.insert(id.clone(), load_pgm(&p)?);
                }
            }
        }
        let labels = match &m.labels {
            Some(p) => {
                let p = base.join(p);
                let f = fs::File::open(&p).map_err(io_err(&p))?;
                Some(read_labels(BufReader::new(f))?)
            }
            None => None,
        };
        let ds = Dataset {
            class_names: m.class_names,
            truths,
            small,
            big,
            images,
            labels,
            image_bytes: m.image_bytes,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes `manifest.json`, `truths.jsonl`, `small.jsonl` and (when present)
    /// `big.jsonl` and `labels.csv` into `dir`. Images are not written.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, IngestError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> io::Result<()>| -> Result<(), IngestError> {
            let mut buf = Vec::new();
            let p = dir.join(name);
            f(&mut buf).map_err(io_err(&p))?;
            fs::write(&p, buf).map_err(io_err(&p))
        };
        write("truths.jsonl", &|b| write_truths(b, self.truths.values()))?;
        write("small.jsonl", &|b| write_traces(b, self.small.values()))?;
        if !self.big.is_empty() {
            write("big.jsonl", &|b| write_traces(b, self.big.values()))?;
        }
        if let Some(labels) = &self.labels {
            write("labels.csv", &|b| write_labels(b, labels))?;
        }
        let manifest = Manifest {
            class_names: self.class_names.clone(),
            truths: "truths.jsonl".into(),
            small: "small.jsonl".into(),
            big: (!self.big.is_empty()).then(|| "big.jsonl".into()),
            images: None,
            labels: self.labels.as_ref().map(|_| "labels.csv".into()),
            image_bytes: self.image_bytes.clone(),
        };
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}
