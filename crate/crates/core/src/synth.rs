//! Synthetic receipt-like documents with entity and class labels.
//!
//! Each document has a company name, a multi-line address, header key-value
//! lines, a date, item rows and a summary block whose total amount is
//! repeated by distractor lines (subtotal, cash). A fraction of documents
//! put values left of or above their keys, so text order alone does not
//! identify the value of a key.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc::{normalize_document, BBox, Document, Segment, Word};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRole {
    Company,
    /// Spans several segments and lines.
    Address,
    Date,
    /// Amount value repeated by unlabelled distractors.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSpec {
    pub name: String,
    pub role: EntityRole,
    /// Probability that a document contains this entity.
    #[serde(default = "one")]
    pub prob: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub doc_count: usize,
    pub seed: u64,
    /// Fractions of documents in the dev and test splits; the rest train.
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub page_width: f64,
    /// Maximum text lines per page.
    pub grid_rows: usize,
    /// Maximum segments per line.
    pub grid_cols: usize,
    pub tags: Vec<TagSpec>,
    pub classes: Vec<String>,
    /// Probability that an address-like entity spans more than one segment.
    pub multi_segment_prob: f64,
    /// Probability that the total amount is repeated by a distractor line.
    pub distractor_prob: f64,
    /// Fraction of documents whose key-value pairs put the value left of or
    /// above its key.
    pub cross_layout_prob: f64,
    /// Maximum box jitter in pixels.
    pub jitter: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            doc_count: 2000,
            seed: 17,
            dev_fraction: 0.1,
            test_fraction: 0.1,
            page_width: 1000.0,
            grid_rows: 40,
            grid_cols: 4,
            tags: vec![
                TagSpec {
                    name: "COMPANY".into(),
                    role: EntityRole::Company,
                    prob: 1.0,
                },
                TagSpec {
                    name: "ADDRESS".into(),
                    role: EntityRole::Address,
                    prob: 1.0,
                },
                TagSpec {
                    name: "DATE".into(),
                    role: EntityRole::Date,
                    prob: 1.0,
                },
                TagSpec {
                    name: "TOTAL".into(),
                    role: EntityRole::Total,
                    prob: 1.0,
                },
            ],
            classes: CATALOGUES.iter().map(|c| c.class.to_owned()).collect(),
            multi_segment_prob: 0.8,
            distractor_prob: 0.9,
            cross_layout_prob: 0.2,
            jitter: 3.0,
        }
    }
}

const LINE_HEIGHT: f64 = 24.0;
const LINE_PITCH: f64 = 40.0;
const CHAR_WIDTH: f64 = 14.0;
const WORD_GAP: f64 = 12.0;
const MARGIN: f64 = 60.0;
const MIN_ROWS: usize = 6;

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("multi_segment_prob", self.multi_segment_prob),
            ("distractor_prob", self.distractor_prob),
            ("cross_layout_prob", self.cross_layout_prob),
            ("dev_fraction", self.dev_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("corpus.{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.dev_fraction + self.test_fraction > 1.0 {
            return bad("corpus.dev_fraction + corpus.test_fraction exceeds 1".into());
        }
        if self.tags.len() < 2 {
            return bad("corpus.tags needs at least two entity tags".into());
        }
        let mut seen = HashMap::new();
        for t in &self.tags {
            if t.name.is_empty() || t.name.chars().any(char::is_whitespace) || t.name == "O" {
                return bad(format!("corpus.tags: invalid tag name {:?}", t.name));
            }
            if seen.insert(t.name.as_str(), ()).is_some() {
                return bad(format!("corpus.tags: duplicate tag {:?}", t.name));
            }
            if self.tags.iter().filter(|o| o.role == t.role).count() > 1 {
                return bad(format!("corpus.tags: role {:?} assigned twice", t.role));
            }
            if !(0.0..=1.0).contains(&t.prob) {
                return bad(format!("corpus.tags.{}: prob must lie in [0, 1]", t.name));
            }
        }
        let multi = self
            .tags
            .iter()
            .any(|t| t.role == EntityRole::Address && t.prob > 0.0)
            && self.multi_segment_prob > 0.0;
        if !multi {
            return bad("corpus.tags: an address-like tag with non-zero probability is required, \
                        and corpus.multi_segment_prob must be positive"
                .into());
        }
        if self.classes.is_empty() || self.classes.len() > CATALOGUES.len() {
            return bad(format!(
                "corpus.classes must list between 1 and {} classes",
                CATALOGUES.len()
            ));
        }
        if !(self.page_width >= 800.0 && self.page_width.is_finite()) {
            return bad("corpus.page_width must be at least 800 pixels".into());
        }
        if !(self.jitter >= 0.0 && self.jitter <= 6.0) {
            return bad("corpus.jitter must lie in [0, 6] pixels".into());
        }
        let entity_lines = self.tags.len() + 1;
        if self.grid_cols < 2 || self.grid_rows < entity_lines.max(MIN_ROWS) {
            return bad(format!(
                "infeasible grid: {} rows x {} cols cannot hold {} entity tags (need at least {} rows and 2 cols)",
                self.grid_rows,
                self.grid_cols,
                self.tags.len(),
                entity_lines.max(MIN_ROWS)
            ));
        }
        Ok(())
    }
}

struct Catalogue {
    class: &'static str,
    trade: &'static [&'static str],
    items: &'static [&'static str],
}

const CATALOGUES: [Catalogue; 4] = [
    Catalogue {
        class: "GROCERY",
        trade: &["MART", "GROCER", "MINIMARKET"],
        items: &[
            "RICE", "SUGAR", "MILK", "EGGS", "BREAD", "FLOUR", "SALT", "TEA", "COFFEE", "NOODLES", "OIL",
            "BUTTER",
        ],
    },
    Catalogue {
        class: "HARDWARE",
        trade: &["HARDWARE", "BUILDER", "TOOLS"],
        items: &[
            "SCREW", "NAIL", "HAMMER", "PAINT", "BRUSH", "TAPE", "DRILL", "HINGE", "BOLT", "CABLE", "GLUE",
            "PLIERS",
        ],
    },
    Catalogue {
        class: "RESTAURANT",
        trade: &["CAFE", "RESTAURANT", "KITCHEN"],
        items: &[
            "SATAY", "LAKSA", "ROTI", "CURRY", "SOUP", "FRIED", "CHICKEN", "FISH", "ICE", "JUICE", "BEEF",
            "TOFU",
        ],
    },
    Catalogue {
        class: "PHARMACY",
        trade: &["PHARMACY", "CLINIC", "HEALTH"],
        items: &[
            "TABLET", "SYRUP", "VITAMIN", "MASK", "PLASTER", "CREAM", "DROPS", "LOTION", "SPRAY", "GAUZE",
            "CAPSULE", "BALM",
        ],
    },
];

const COMPANY_HEAD: &[&str] = &[
    "GOLDEN", "SUNRISE", "PERFECT", "UNITED", "MEGA", "BEST", "LUCKY", "ROYAL", "GREEN", "STAR", "OCEAN", "PRIME",
];
const COMPANY_TAIL: &[&[&str]] = &[&["SDN", "BHD"], &["ENTERPRISE"], &["TRADING"], &["CO"]];
const STREET: &[&str] = &["JALAN", "LORONG", "PERSIARAN"];
const STREET_NAME: &[&str] = &["MAWAR", "MELATI", "PERDANA", "INDAH", "SETIA", "CEMPAKA", "KENANGA", "DAHLIA"];
const AREA: &[&str] = &["TAMAN", "BANDAR", "KAMPUNG"];
const AREA_NAME: &[&str] = &["JAYA", "BARU", "UTAMA", "MAJU", "DAMAI", "SENTOSA"];
const POSTCODE: &[&str] = &["81300", "48000", "53100", "41200", "47500", "80100"];
const CITY: &[&[&str]] = &[
    &["JOHOR", "BAHRU"],
    &["KUALA", "LUMPUR"],
    &["SHAH", "ALAM"],
    &["KLANG"],
    &["PETALING", "JAYA"],
    &["SKUDAI"],
];
const STATE: &[&str] = &["JOHOR", "SELANGOR", "MELAKA", "PERAK"];
const PHONES: &[&str] = &["07-5512345", "03-7781234", "03-5567788", "07-3349911", "06-2831122"];
const GST_IDS: &[&str] = &["000123456789", "001987654321", "000555123456", "002468013579"];
const CASHIERS: &[&str] = &["AMIN", "SITI", "LEE", "RAJ", "MEI", "ALI"];
const TOTAL_KEYS: &[&[&str]] = &[&["TOTAL"], &["TOTAL", "AMOUNT"], &["GRAND", "TOTAL"], &["NET", "TOTAL"]];
const FOOTERS: &[&[&str]] = &[&["THANK", "YOU"], &["PLEASE", "COME", "AGAIN"], &["GOODS", "SOLD", "ARE", "NOT", "RETURNABLE"]];

fn as_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn word_width(w: &str) -> f64 {
    w.chars().count() as f64 * CHAR_WIDTH
}

fn text_width(words: &[&str]) -> f64 {
    words.iter().map(|w| word_width(w)).sum::<f64>() + WORD_GAP * words.len().saturating_sub(1) as f64
}

fn amount(cents: u64) -> String {
    format!("{}.{:02}", cents / 100, cents % 100)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Align {
    Left(f64),
    Right(f64),
}

#[derive(Debug, Clone)]
struct SegDraft {
    words: Vec<(String, Option<String>)>,
    align: Align,
}

#[derive(Debug, Clone)]
struct LineDraft {
    segs: Vec<SegDraft>,
}

fn seg(words: &[&str], tag: Option<&str>, align: Align) -> SegDraft {
    SegDraft {
        words: words
            .iter()
            .map(|w| (w.to_string(), tag.map(str::to_owned)))
            .collect(),
        align,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum KvLayout {
    Normal,
    ValueLeft,
    ValueAbove,
}

/// Content blocks in page order; `required` blocks carry entities.
struct Block {
    lines: Vec<LineDraft>,
    required: bool,
}

struct DocBuilder<'a> {
    spec: &'a GenSpec,
    rng: ChaCha8Rng,
    right: f64,
    cross: bool,
}

impl DocBuilder<'_> {
    fn pick<'s>(&mut self, xs: &'s [&'s str]) -> &'s str {
        xs.choose(&mut self.rng).expect("non-empty list")
    }

    fn kv_layout(&mut self) -> KvLayout {
        if !self.cross {
            return KvLayout::Normal;
        }
        if self.rng.random_bool(0.5) {
            KvLayout::ValueLeft
        } else {
            KvLayout::ValueAbove
        }
    }

    /// One key-value pair as one or two lines.
    fn kv(&mut self, key: &[&str], value: &str, tag: Option<&str>, layout: KvLayout) -> Vec<LineDraft> {
        let right = self.right;
        match layout {
            KvLayout::Normal => vec![LineDraft {
                segs: vec![seg(key, None, Align::Left(MARGIN)), seg(&[value], tag, Align::Right(right))],
            }],
            KvLayout::ValueLeft => vec![LineDraft {
                segs: vec![seg(&[value], tag, Align::Left(MARGIN)), seg(key, None, Align::Right(right))],
            }],
            KvLayout::ValueAbove => vec![
                LineDraft {
                    segs: vec![seg(&[value], tag, Align::Left(MARGIN))],
                },
                LineDraft {
                    segs: vec![seg(key, None, Align::Left(MARGIN))],
                },
            ],
        }
    }

    fn company(&mut self, cat: &Catalogue, tag: Option<&str>) -> Block {
        let head = self.pick(COMPANY_HEAD).to_owned();
        let trade = self.pick(cat.trade).to_owned();
        let tail: &[&str] = COMPANY_TAIL.choose(&mut self.rng).expect("tails");
        let mut words: Vec<&str> = vec![&head, &trade];
        words.extend_from_slice(tail);
        let lines = if words.len() > 3 && self.rng.random_bool(0.5) {
            // long names wrap onto a second line
            vec![
                LineDraft {
                    segs: vec![seg(&words[..2], tag, Align::Left(MARGIN))],
                },
                LineDraft {
                    segs: vec![seg(&words[2..], tag, Align::Left(MARGIN))],
                },
            ]
        } else {
            vec![LineDraft {
                segs: vec![seg(&words, tag, Align::Left(MARGIN))],
            }]
        };
        Block {
            lines,
            required: tag.is_some(),
        }
    }

    fn address(&mut self, tag: Option<&str>, rows_left: usize) -> Block {
        let number = self.rng.random_range(1..100).to_string();
        let mut parts: Vec<Vec<String>> = vec![
            vec!["NO".into(), number, self.pick(STREET).into(), self.pick(STREET_NAME).into()],
            vec![self.pick(AREA).into(), self.pick(AREA_NAME).into()],
        ];
        let mut city: Vec<String> = vec![self.pick(POSTCODE).into()];
        city.extend(CITY.choose(&mut self.rng).expect("cities").iter().map(|s| s.to_string()));
        parts.push(city);
        if self.rng.random_bool(0.5) {
            parts.push(vec![self.pick(STATE).into()]);
        }
        let multi = self.rng.random_bool(self.spec.multi_segment_prob);
        let line_of = |segs: Vec<SegDraft>| LineDraft { segs };
        let lines = if !multi {
            // everything on one segment of one line, shortened to fit
            let words: Vec<String> = parts.concat().into_iter().take(6).collect();
            vec![line_of(vec![seg(&as_refs(&words), tag, Align::Left(MARGIN))])]
        } else {
            let n_lines = if rows_left >= 3 { self.rng.random_range(2..=3) } else { 2 };
            let mut lines = Vec::new();
            let chunks: Vec<Vec<String>> = match n_lines {
                2 => vec![[parts[0].clone(), parts[1].clone()].concat(), parts[2..].concat()],
                _ => vec![parts[0].clone(), parts[1].clone(), parts[2..].concat()],
            };
            for words in chunks {
                let refs = as_refs(&words);
                if refs.len() >= 3 && self.rng.random_bool(0.5) {
                    let cut = refs.len() / 2;
                    let x2 = MARGIN + text_width(&refs[..cut]) + 4.0 * WORD_GAP;
                    lines.push(line_of(vec![
                        seg(&refs[..cut], tag, Align::Left(MARGIN)),
                        seg(&refs[cut..], tag, Align::Left(x2)),
                    ]));
                } else {
                    lines.push(line_of(vec![seg(&refs, tag, Align::Left(MARGIN))]));
                }
            }
            lines
        };
        Block {
            lines,
            required: tag.is_some(),
        }
    }

    fn build(mut self, doc_id: String, class_idx: usize) -> Result<Document> {
        let spec = self.spec;
        let cat = &CATALOGUES[class_idx];
        let mut present = HashMap::new();
        for t in &spec.tags {
            let on = self.rng.random_bool(t.prob);
            present.insert(t.role, on.then(|| t.name.clone()));
        }
        let tag_of = |role: EntityRole| present.get(&role).cloned().flatten();
        let company_tag = tag_of(EntityRole::Company);
        let address_tag = tag_of(EntityRole::Address);
        let date_tag = tag_of(EntityRole::Date);
        let total_tag = tag_of(EntityRole::Total);

        let mut blocks = Vec::new();
        blocks.push(self.company(cat, company_tag.as_deref()));
        let reserve = spec.tags.len() + 2;
        let rows_left = spec.grid_rows.saturating_sub(reserve);
        blocks.push(self.address(address_tag.as_deref(), rows_left));

        // header
        let mut header = Vec::new();
        if self.rng.random_bool(0.7) {
            let phone = self.pick(PHONES).to_owned();
            header.extend(self.kv(&["TEL"], &phone, None, KvLayout::Normal));
        }
        if self.rng.random_bool(0.5) {
            let gst = self.pick(GST_IDS).to_owned();
            header.extend(self.kv(&["GST", "ID"], &gst, None, KvLayout::Normal));
        }
        blocks.push(Block {
            lines: header,
            required: false,
        });

        let day = self.rng.random_range(1..=28);
        let month = self.rng.random_range(1..=12);
        let year = self.rng.random_range(2015..=2019);
        let date = format!("{day:02}/{month:02}/{year}");
        let layout = self.kv_layout();
        let date_lines = self.kv(&["DATE"], &date, date_tag.as_deref(), layout);
        blocks.push(Block {
            lines: date_lines,
            required: date_tag.is_some(),
        });
        let mut meta = Vec::new();
        if self.rng.random_bool(0.6) {
            let time = format!("{:02}:{:02}", self.rng.random_range(8..23), self.rng.random_range(0..60));
            meta.extend(self.kv(&["TIME"], &time, None, KvLayout::Normal));
        }
        if self.rng.random_bool(0.6) {
            let inv = format!("CS{:05}", self.rng.random_range(0..100) * 7 + 10000);
            meta.extend(self.kv(&["INVOICE", "NO"], &inv, None, KvLayout::Normal));
        }
        if self.rng.random_bool(0.4) {
            let who = self.pick(CASHIERS).to_owned();
            meta.extend(self.kv(&["CASHIER"], &who, None, KvLayout::Normal));
        }
        blocks.push(Block {
            lines: meta,
            required: false,
        });

        // items
        let n_items = self.rng.random_range(2..=5);
        let mut item_lines = Vec::new();
        let mut subtotal = 0u64;
        let qty_x = spec.page_width * 0.55;
        for _ in 0..n_items {
            let name_len = self.rng.random_range(1..=2);
            let mut name: Vec<&str> = Vec::new();
            for _ in 0..name_len {
                name.push(self.pick(cat.items));
            }
            // prices stay below 100.00 so amounts share a small set of chunks
            let qty = self.rng.random_range(1..=3u64);
            let unit = self.rng.random_range(1..12u64) * 50 + self.rng.random_range(0..2u64) * 20;
            subtotal += qty * unit;
            let q = qty.to_string();
            let p = amount(qty * unit);
            item_lines.push(LineDraft {
                segs: vec![
                    seg(&name, None, Align::Left(MARGIN)),
                    seg(&[&q], None, Align::Left(qty_x)),
                    seg(&[&p], None, Align::Right(self.right)),
                ],
            });
        }
        blocks.push(Block {
            lines: item_lines,
            required: false,
        });

        // summary: subtotal, optional tax, total, cash, change
        let distract = self.rng.random_bool(spec.distractor_prob);
        let tax = if distract && self.rng.random_bool(0.5) {
            0
        } else {
            (subtotal * 6).div_ceil(100).max(5)
        };
        let total = subtotal + tax;
        let cash = if distract && (tax > 0 || self.rng.random_bool(0.5)) {
            total
        } else {
            (total / 1000 + 1) * 1000
        };
        let layout = self.kv_layout();
        let mut summary = Vec::new();
        summary.extend(self.kv(&["SUBTOTAL"], &amount(subtotal), None, layout));
        if tax > 0 {
            summary.extend(self.kv(&["GST", "6%"], &amount(tax), None, layout));
        }
        let total_key: &[&str] = TOTAL_KEYS.choose(&mut self.rng).expect("keys");
        summary.extend(self.kv(total_key, &amount(total), total_tag.as_deref(), layout));
        summary.extend(self.kv(&["CASH"], &amount(cash), None, layout));
        summary.extend(self.kv(&["CHANGE"], &amount(cash - total), None, layout));
        blocks.push(Block {
            lines: summary,
            required: total_tag.is_some(),
        });

        let footer: &[&str] = FOOTERS.choose(&mut self.rng).expect("footers");
        blocks.push(Block {
            lines: vec![LineDraft {
                segs: vec![seg(footer, None, Align::Left(MARGIN))],
            }],
            required: false,
        });

        // fit the grid: drop optional blocks from the bottom up, then items
        let count = |bs: &[Block]| bs.iter().map(|b| b.lines.len()).sum::<usize>();
        let mut i = blocks.len();
        while count(&blocks) > spec.grid_rows && i > 0 {
            i -= 1;
            if !blocks[i].required {
                blocks[i].lines.clear();
            }
        }
        if count(&blocks) > spec.grid_rows {
            return Err(Error::Config(format!(
                "infeasible grid: document needs {} rows, grid has {}",
                count(&blocks),
                spec.grid_rows
            )));
        }
        let lines: Vec<LineDraft> = blocks.into_iter().flat_map(|b| b.lines).collect();
        if let Some(l) = lines.iter().find(|l| l.segs.len() > spec.grid_cols) {
            return Err(Error::Config(format!(
                "infeasible grid: a line needs {} segments, grid allows {}",
                l.segs.len(),
                spec.grid_cols
            )));
        }
        self.layout(doc_id, lines, class_idx)
    }

    fn layout(&mut self, doc_id: String, lines: Vec<LineDraft>, class_idx: usize) -> Result<Document> {
        let spec = self.spec;
        let page_height = 2.0 * MARGIN + lines.len() as f64 * LINE_PITCH;
        let j = spec.jitter;
        let mut segments = Vec::new();
        for (li, line) in lines.iter().enumerate() {
            let y = MARGIN + li as f64 * LINE_PITCH;
            for s in &line.segs {
                let widths: Vec<f64> = s.words.iter().map(|(w, _)| word_width(w)).collect();
                let total = widths.iter().sum::<f64>() + WORD_GAP * (widths.len() - 1) as f64;
                let dx = if j > 0.0 { self.rng.random_range(-j..=j) } else { 0.0 };
                let dy = if j > 0.0 { self.rng.random_range(-j..=j) } else { 0.0 };
                let mut x = match s.align {
                    Align::Left(x) => x,
                    Align::Right(r) => r - total,
                } + dx;
                x = x.clamp(1.0, spec.page_width - total - 1.0);
                let mut words = Vec::new();
                for ((text, label), w) in s.words.iter().zip(&widths) {
                    let wy = if j > 0.0 { self.rng.random_range(-1.0..=1.0) } else { 0.0 };
                    let top = (y + dy + wy).max(0.0);
                    words.push(Word {
                        text: text.clone(),
                        bbox: BBox::new(x, top, x + w, top + LINE_HEIGHT),
                        label: label.clone(),
                    });
                    x += w + WORD_GAP;
                }
                let bbox = BBox::union_all(words.iter().map(|w| &w.bbox)).expect("segment has words");
                segments.push(Segment { bbox, words });
            }
        }
        let doc = Document {
            doc_id,
            page_width: spec.page_width,
            page_height,
            class: Some(spec.classes[class_idx].clone()),
            segments,
        };
        doc.validate()?;
        Ok(doc)
    }
}

fn generate_doc(spec: &GenSpec, index: usize) -> Result<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth-doc", "", index as u64));
    let class_idx = rng.random_range(0..spec.classes.len());
    let cross = rng.random_bool(spec.cross_layout_prob);
    let builder = DocBuilder {
        spec,
        rng,
        right: spec.page_width - MARGIN,
        cross,
    };
    builder.build(format!("doc-{index:05}"), class_idx)
}

/// Train, dev and test splits of one generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

impl CorpusSplits {
    pub fn all(&self) -> impl Iterator<Item = &Document> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

pub fn generate_corpus(spec: &GenSpec) -> Result<CorpusSplits> {
    spec.validate()?;
    let n = spec.doc_count;
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_dev = ((n as f64 * spec.dev_fraction).round() as usize).min(n - n_test);
    let n_train = n - n_dev - n_test;
    let mut docs = (0..n).map(|i| generate_doc(spec, i)).collect::<Result<Vec<_>>>()?;
    let test = docs.split_off(n_train + n_dev);
    let dev = docs.split_off(n_train);
    Ok(CorpusSplits { train: docs, dev, test })
}

/// Per-tag counts in a [`CorpusStats`] report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagStats {
    pub entities: usize,
    pub words: usize,
    pub multi_segment: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub docs: usize,
    pub segments: usize,
    pub words: usize,
    pub tags: BTreeMap<String, TagStats>,
    pub classes: BTreeMap<String, usize>,
    /// Entities spanning two or more segments, over all entities.
    pub multi_segment_fraction: f64,
    /// Documents in which a labelled entity's text also appears unlabelled.
    pub duplicate_distractor_fraction: f64,
}

impl CorpusStats {
    /// Tab-separated table, one row per tag.
    pub fn table(&self) -> String {
        let mut out = format!(
            "docs\t{}\nsegments\t{}\nwords\t{}\nmulti_segment_fraction\t{:.4}\nduplicate_distractor_fraction\t{:.4}\n\ntag\tentities\twords\tmulti_segment\n",
            self.docs, self.segments, self.words, self.multi_segment_fraction, self.duplicate_distractor_fraction
        );
        for (tag, s) in &self.tags {
            out.push_str(&format!("{tag}\t{}\t{}\t{}\n", s.entities, s.words, s.multi_segment));
        }
        out
    }
}

/// A tag and its words as `(segment index, word index)`.
pub type EntityRun = (String, Vec<(usize, usize)>);

/// Entities of a document as runs of equally tagged words in reading
/// order.
pub fn entity_runs(doc: &Document) -> Result<Vec<EntityRun>> {
    let layout = normalize_document(doc)?;
    let mut runs: Vec<EntityRun> = Vec::new();
    let mut prev: Option<&str> = None;
    for (s, w) in layout.serialized_words() {
        let label = layout.segments[s].words[w].label.as_deref();
        match (label, prev) {
            (Some(l), Some(p)) if l == p => runs.last_mut().expect("open run").1.push((s, w)),
            (Some(l), _) => runs.push((l.to_owned(), vec![(s, w)])),
            (None, _) => {}
        }
        prev = label;
    }
    Ok(runs)
}

/// Corpus statistics; `tags` seeds rows so absent tags report zeros.
pub fn corpus_stats<'a>(docs: impl IntoIterator<Item = &'a Document>, tags: &[String]) -> Result<CorpusStats> {
    let mut st = CorpusStats::default();
    for t in tags {
        st.tags.entry(t.clone()).or_default();
    }
    let (mut entities, mut multi, mut with_dup) = (0usize, 0usize, 0usize);
    for doc in docs {
        st.docs += 1;
        st.segments += doc.segments.len();
        st.words += doc.num_words();
        if let Some(c) = &doc.class {
            *st.classes.entry(c.clone()).or_default() += 1;
        }
        let runs = entity_runs(doc)?;
        for (tag, words) in &runs {
            let e = st.tags.entry(tag.clone()).or_default();
            e.entities += 1;
            e.words += words.len();
            entities += 1;
            let first = words[0].0;
            if words.iter().any(|&(s, _)| s != first) {
                e.multi_segment += 1;
                multi += 1;
            }
        }
        let dup = runs.iter().any(|(_, words)| {
            let text: Vec<&str> = words
                .iter()
                .map(|&(s, w)| doc.segments[s].words[w].text.as_str())
                .collect();
            doc.segments.iter().any(|seg| {
                seg.words.iter().all(|w| w.label.is_none())
                    && seg.words.len() == text.len()
                    && seg.words.iter().zip(&text).all(|(w, t)| w.text == *t)
            })
        });
        if dup {
            with_dup += 1;
        }
    }
    if st.docs == 0 {
        return Err(Error::invalid("corpus statistics need at least one document"));
    }
    st.multi_segment_fraction = if entities == 0 { 0.0 } else { multi as f64 / entities as f64 };
    st.duplicate_distractor_fraction = with_dup as f64 / st.docs as f64;
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::corpus_to_jsonl;

    fn small(n: usize) -> GenSpec {
        GenSpec {
            doc_count: n,
            ..GenSpec::default()
        }
    }

    #[test]
    fn zero_docs_give_empty_splits() {
        let c = generate_corpus(&small(0)).unwrap();
        assert!(c.train.is_empty() && c.dev.is_empty() && c.test.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small(30)).unwrap();
        let b = generate_corpus(&small(30)).unwrap();
        assert_eq!(corpus_to_jsonl(&a.train).unwrap(), corpus_to_jsonl(&b.train).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn splits_partition_ids() {
        let c = generate_corpus(&small(50)).unwrap();
        assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (40, 5, 5));
        let mut ids: Vec<&str> = c.all().map(|d| d.doc_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn infeasible_grid_is_rejected() {
        let spec = GenSpec {
            grid_rows: 3,
            ..small(5)
        };
        let err = generate_corpus(&spec).unwrap_err();
        assert!(err.is_config() && err.to_string().contains("infeasible grid"));
    }

    #[test]
    fn single_tag_schema_is_rejected() {
        let spec = GenSpec {
            tags: vec![TagSpec {
                name: "ADDRESS".into(),
                role: EntityRole::Address,
                prob: 1.0,
            }],
            ..small(5)
        };
        assert!(generate_corpus(&spec).is_err());
    }

    #[test]
    fn absent_tag_reports_zero_row() {
        let mut spec = small(20);
        spec.tags.push(TagSpec {
            name: "UNUSED".into(),
            role: EntityRole::Date,
            prob: 0.0,
        });
        // two tags share a role, which is not allowed
        assert!(spec.validate().is_err());
        let spec = small(20);
        let c = generate_corpus(&spec).unwrap();
        let st = corpus_stats(c.all(), &["UNUSED".to_owned()]).unwrap();
        assert_eq!(st.tags["UNUSED"], TagStats::default());
        assert!(st.tags["ADDRESS"].entities > 0);
    }
}
