//! Document model, coordinate normalisation, reading order and corpus I/O.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of quantisation bins per axis.
pub const COORD_BINS: u16 = 1000;

/// Axis-aligned box `[x1, y1, x2, y2]`. Units depend on context: pixels in a
/// raw [`Document`], page fractions in a [`LayoutDoc`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const ZERO: BBox = BBox {
        x1: 0.0,
        y1: 0.0,
        x2: 0.0,
        y2: 0.0,
    };

    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_ordered(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn is_finite(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x1.min(other.x1),
            self.y1.min(other.y1),
            self.x2.max(other.x2),
            self.y2.max(other.y2),
        )
    }

    /// Tight union of a non-empty set of boxes.
    pub fn union_all<'a>(boxes: impl IntoIterator<Item = &'a BBox>) -> Option<BBox> {
        boxes.into_iter().fold(None, |acc, b| match acc {
            None => Some(*b),
            Some(a) => Some(a.union(b)),
        })
    }

    /// Map a `[0, 1]` box onto the integer grid `[0, COORD_BINS]`.
    pub fn quantize(&self) -> QBox {
        let q = |v: f64| (v * COORD_BINS as f64).round().clamp(0.0, COORD_BINS as f64) as u16;
        QBox([q(self.x1), q(self.y1), q(self.x2), q(self.y2)])
    }
}

/// Quantised box on the `[0, 1000]` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct QBox(pub [u16; 4]);

impl QBox {
    pub const ZERO: QBox = QBox([0; 4]);

    /// The masking placeholder `[0, 0, 0, n]`.
    pub fn pseudo(n: u16) -> Self {
        QBox([0, 0, 0, n])
    }

    pub fn x1(&self) -> u16 {
        self.0[0]
    }
    pub fn y1(&self) -> u16 {
        self.0[1]
    }
    pub fn x2(&self) -> u16 {
        self.0[2]
    }
    pub fn y2(&self) -> u16 {
        self.0[3]
    }

    pub fn width(&self) -> u16 {
        self.x2().saturating_sub(self.x1())
    }

    pub fn height(&self) -> u16 {
        self.y2().saturating_sub(self.y1())
    }

    /// Box centre in bins, rounded down.
    pub fn center(&self) -> (i32, i32) {
        (
            (self.x1() as i32 + self.x2() as i32) / 2,
            (self.y1() as i32 + self.y2() as i32) / 2,
        )
    }

    pub fn dequantize(&self) -> BBox {
        let d = |v: u16| v as f64 / COORD_BINS as f64;
        BBox::new(d(self.x1()), d(self.y1()), d(self.x2()), d(self.y2()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub words: Vec<Word>,
}

/// A single page as it appears in the corpus file, in pixel coordinates.
/// A segment's id is its index in `segments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub page_width: f64,
    pub page_height: f64,
    #[serde(rename = "class", default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub segments: Vec<Segment>,
}

impl Document {
    pub fn num_words(&self) -> usize {
        self.segments.iter().map(|s| s.words.len()).sum()
    }

    /// Check every structural and geometric invariant.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(&self.doc_id, msg));
        if self.doc_id.is_empty() {
            return fail("empty doc_id".into());
        }
        if !(self.page_width > 0.0 && self.page_height > 0.0)
            || !self.page_width.is_finite()
            || !self.page_height.is_finite()
        {
            return fail(format!(
                "page dimensions must be positive, got {}x{}",
                self.page_width, self.page_height
            ));
        }
        if self.segments.is_empty() {
            return fail("document has no segments".into());
        }
        // one quantisation bin of slack for the containment check
        let tol_x = self.page_width / COORD_BINS as f64;
        let tol_y = self.page_height / COORD_BINS as f64;
        let check_box = |what: &str, b: &BBox| -> Result<()> {
            if !b.is_finite() {
                return fail(format!("{what} has non-finite coordinates"));
            }
            if !b.is_ordered() {
                return fail(format!(
                    "{what} box [{}, {}, {}, {}] has x1 > x2 or y1 > y2",
                    b.x1, b.y1, b.x2, b.y2
                ));
            }
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > self.page_width || b.y2 > self.page_height {
                return fail(format!(
                    "{what} box [{}, {}, {}, {}] lies outside the {}x{} page",
                    b.x1, b.y1, b.x2, b.y2, self.page_width, self.page_height
                ));
            }
            Ok(())
        };
        for (si, seg) in self.segments.iter().enumerate() {
            check_box(&format!("segment {si}"), &seg.bbox)?;
            if seg.words.is_empty() {
                return fail(format!("segment {si} has no words"));
            }
            for (wi, w) in seg.words.iter().enumerate() {
                if w.text.is_empty() || w.text.chars().any(char::is_whitespace) {
                    return fail(format!(
                        "segment {si} word {wi}: text {:?} is empty or contains whitespace",
                        w.text
                    ));
                }
                check_box(&format!("segment {si} word {wi}"), &w.bbox)?;
                let b = &w.bbox;
                let s = &seg.bbox;
                if b.x1 < s.x1 - tol_x
                    || b.y1 < s.y1 - tol_y
                    || b.x2 > s.x2 + tol_x
                    || b.y2 > s.y2 + tol_y
                {
                    return fail(format!(
                        "segment {si} word {wi} box is not contained in its segment box"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parse a JSONL corpus: one [`Document`] per non-blank line, validated.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        doc.validate()?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::validation(&doc.doc_id, "duplicate doc_id in corpus"));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn corpus_to_jsonl(docs: &[Document]) -> Result<String> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let body = corpus_to_jsonl(docs)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalised documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OneDMode {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwoDMode {
    Word,
    Segment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutWord {
    pub text: String,
    pub bbox: BBox,
    pub qbox: QBox,
    pub label: Option<String>,
    /// Word-level 1D position; 0 until [`assign_positions`] runs.
    pub pos_1d: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutSegment {
    pub id: usize,
    pub bbox: BBox,
    pub qbox: QBox,
    pub words: Vec<LayoutWord>,
}

/// A normalised document. `segments[i].id == i`; `order` is the
/// serialisation order of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutDoc {
    pub doc_id: String,
    pub page_width: f64,
    pub page_height: f64,
    pub class: Option<String>,
    pub segments: Vec<LayoutSegment>,
    pub order: Vec<usize>,
    pub one_d: Option<OneDMode>,
}

impl LayoutDoc {
    pub fn num_words(&self) -> usize {
        self.segments.iter().map(|s| s.words.len()).sum()
    }

    /// Words in serialisation order as `(segment id, index in segment)`.
    pub fn serialized_words(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.order
            .iter()
            .flat_map(move |&s| (0..self.segments[s].words.len()).map(move |w| (s, w)))
    }

    pub fn word(&self, segment: usize, word: usize) -> &LayoutWord {
        &self.segments[segment].words[word]
    }
}

/// Convert pixel boxes into page fractions and quantised bins, and set the
/// serialisation order to the reading-order rule.
pub fn normalize_document(doc: &Document) -> Result<LayoutDoc> {
    if !(doc.page_width > 0.0 && doc.page_height > 0.0) {
        return Err(Error::validation(
            &doc.doc_id,
            format!(
                "page dimensions must be positive, got {}x{}",
                doc.page_width, doc.page_height
            ),
        ));
    }
    let (w, h) = (doc.page_width, doc.page_height);
    let norm = |b: &BBox| {
        BBox::new(
            (b.x1 / w).clamp(0.0, 1.0),
            (b.y1 / h).clamp(0.0, 1.0),
            (b.x2 / w).clamp(0.0, 1.0),
            (b.y2 / h).clamp(0.0, 1.0),
        )
    };
    let segments: Vec<LayoutSegment> = doc
        .segments
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let bbox = norm(&s.bbox);
            LayoutSegment {
                id,
                bbox,
                qbox: bbox.quantize(),
                words: s
                    .words
                    .iter()
                    .map(|wd| {
                        let bbox = norm(&wd.bbox);
                        LayoutWord {
                            text: wd.text.clone(),
                            bbox,
                            qbox: bbox.quantize(),
                            label: wd.label.clone(),
                            pos_1d: 0,
                        }
                    })
                    .collect(),
            }
        })
        .collect();
    let boxes: Vec<BBox> = segments.iter().map(|s| s.bbox).collect();
    let order = reading_order(&boxes);
    Ok(LayoutDoc {
        doc_id: doc.doc_id.clone(),
        page_width: w,
        page_height: h,
        class: doc.class.clone(),
        segments,
        order,
        one_d: None,
    })
}

fn same_line(a: &BBox, b: &BBox) -> bool {
    let inter = a.y2.min(b.y2) - a.y1.max(b.y1);
    let smaller = a.height().min(b.height());
    inter > 0.5 * smaller && inter > 0.0
}

/// Group boxes into text lines.
///
/// Two boxes share a line when their vertical overlap exceeds half the
/// smaller height; lines are the transitive closure of that relation.
/// Lines come back top to bottom by mean centre y, each sorted left to right.
pub fn group_lines(boxes: &[BBox]) -> Vec<Vec<usize>> {
    let n = boxes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if same_line(&boxes[i], &boxes[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut lines: Vec<Vec<usize>> = Vec::new();
    let mut root_line = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_line[r] == usize::MAX {
            root_line[r] = lines.len();
            lines.push(Vec::new());
        }
        lines[root_line[r]].push(i);
    }
    for line in &mut lines {
        line.sort_by(|&a, &b| boxes[a].x1.total_cmp(&boxes[b].x1).then(a.cmp(&b)));
    }
    let key = |line: &Vec<usize>| {
        let y = line.iter().map(|&i| boxes[i].center().1).sum::<f64>() / line.len() as f64;
        (y, boxes[line[0]].x1, line[0])
    };
    lines.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
    });
    lines
}

/// Top-down, left-to-right serialisation order of the given segment boxes.
pub fn reading_order(boxes: &[BBox]) -> Vec<usize> {
    group_lines(boxes).into_iter().flatten().collect()
}

/// Number words along `doc.order`: 1..W in global mode, restarting at 1 in
/// every segment in local mode.
pub(crate) fn number_words(doc: &mut LayoutDoc, mode: OneDMode) {
    let mut next = 1u32;
    for &s in &doc.order {
        if mode == OneDMode::Local {
            next = 1;
        }
        for w in &mut doc.segments[s].words {
            w.pos_1d = next;
            next += 1;
        }
    }
    doc.one_d = Some(mode);
}

/// Reset the serialisation order to the reading-order rule and assign
/// word-level 1D positions under `mode`.
pub fn assign_positions(doc: &LayoutDoc, mode: OneDMode) -> LayoutDoc {
    let mut out = doc.clone();
    let boxes: Vec<BBox> = out.segments.iter().map(|s| s.bbox).collect();
    out.order = reading_order(&boxes);
    number_words(&mut out, mode);
    out
}
