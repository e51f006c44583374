//! On-disk formats.
//!
//! Corpora use the UCI bag-of-words `docword` layout: three header lines
//! (documents, vocabulary size, number of entries) followed by one
//! `doc word count` line per entry with 1-based ids.
//!
//! Model files start with a short text header terminated by `end\n`,
//! followed by little-endian `f64` arrays:
//!
//! ```text
//! gridcount-model 1
//! dims <D>
//! extent <E_1> ... <E_D>
//! window <W_1> ... <W_D>
//! vocab <Z>
//! gamma none | gamma discrete <L> | gamma continuous
//! end
//! pi     cells * Z      (cell-major, word fastest)
//! gamma  cells * L | cells      (only with a gamma block)
//! mass   cells                  (only with a gamma block)
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::bag::Bag;
use crate::embed::{LabelEmbedding, LabelKind, Prediction, Targets};
use crate::error::{Error, Result};
use crate::geometry::{GridField, GridGeometry};
use crate::grid::CountingGrid;

pub const MODEL_MAGIC: &str = "gridcount-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub bags: Vec<Bag>,
    pub vocab: Option<Vec<String>>,
    pub vocab_size: usize,
}

impl Corpus {
    pub fn new(bags: Vec<Bag>, vocab_size: usize) -> Result<Self> {
        for bag in &bags {
            bag.check_vocab(vocab_size)?;
        }
        Ok(Self {
            bags,
            vocab: None,
            vocab_size,
        })
    }

    pub fn with_vocab(mut self, vocab: Vec<String>) -> Result<Self> {
        if vocab.len() != self.vocab_size {
            return Err(Error::DimensionMismatch(format!(
                "vocabulary lists {} words, corpus has {}",
                vocab.len(),
                self.vocab_size
            )));
        }
        self.vocab = Some(vocab);
        Ok(self)
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(open(path)?, path)
}

/// Parse a docword corpus; `path` only labels error messages.
pub fn parse_corpus(reader: impl BufRead, path: &Path) -> Result<Corpus> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = [0usize; 3];
    for (slot, name) in header
        .iter_mut()
        .zip(["document count", "vocabulary size", "entry count"])
    {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing {name} header line")))?;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        *slot = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, no, format!("malformed {name}: {line:?}")))?;
    }
    let [docs, vocab_size, nnz] = header;

    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); docs];
    let mut seen = HashSet::new();
    let mut found = 0usize;
    for (no, line) in lines {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        found += 1;
        if found > nnz {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                no,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let doc: usize = fields[0].parse().map_err(|_| {
            Error::parse(path, no, format!("malformed document id {:?}", fields[0]))
        })?;
        let word: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, no, format!("malformed word id {:?}", fields[1])))?;
        let count: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, no, format!("malformed count {:?}", fields[2])))?;
        if doc == 0 || doc > docs {
            return Err(Error::parse(
                path,
                no,
                format!("document id {doc} out of range 1..={docs}"),
            ));
        }
        if word == 0 || word > vocab_size {
            return Err(Error::parse(
                path,
                no,
                format!("word id {word} out of range 1..={vocab_size}"),
            ));
        }
        if !count.is_finite() {
            return Err(Error::parse(
                path,
                no,
                format!("count {count} is not finite"),
            ));
        }
        if count < 0.0 {
            return Err(Error::parse(path, no, format!("negative count {count}")));
        }
        if !seen.insert((doc, word)) {
            return Err(Error::parse(
                path,
                no,
                format!("duplicate entry for document {doc}, word {word}"),
            ));
        }
        entries[doc - 1].push((word - 1, count));
    }
    if found != nnz {
        return Err(Error::parse(
            path,
            3,
            format!("expected {nnz} entries, found {found}"),
        ));
    }

    let bags = entries
        .into_iter()
        .enumerate()
        .map(|(t, e)| Bag::new(t, e))
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(bags, vocab_size)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut out = create(path)?;
    format_corpus(&mut out, corpus)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    out.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Entries are written sorted by (document, word).
pub fn format_corpus(out: &mut impl Write, corpus: &Corpus) -> std::io::Result<()> {
    let nnz: usize = corpus.bags.iter().map(|b| b.entries().len()).sum();
    writeln!(out, "{}", corpus.bags.len())?;
    writeln!(out, "{}", corpus.vocab_size)?;
    writeln!(out, "{nnz}")?;
    for (t, bag) in corpus.bags.iter().enumerate() {
        for &(w, c) in bag.entries() {
            writeln!(out, "{} {} {}", t + 1, w + 1, c)?;
        }
    }
    Ok(())
}

/// One word per line.
pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Discrete,
    Continuous,
}

/// One target per line; line `t` belongs to bag `t`.
pub fn read_targets(path: &Path, kind: TargetKind, bags: usize) -> Result<Targets> {
    parse_targets(open(path)?, path, kind, bags)
}

pub fn parse_targets(
    reader: impl BufRead,
    path: &Path,
    kind: TargetKind,
    bags: usize,
) -> Result<Targets> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let no = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let text = line.trim();
        match kind {
            TargetKind::Discrete => labels.push(text.parse::<usize>().map_err(|_| {
                Error::parse(
                    path,
                    no,
                    format!("expected a non-negative integer label, got {text:?}"),
                )
            })?),
            TargetKind::Continuous => {
                let v: f64 = text.parse().map_err(|_| {
                    Error::parse(path, no, format!("expected a number, got {text:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(
                        path,
                        no,
                        format!("target {text:?} is not finite"),
                    ));
                }
                values.push(v);
            }
        }
    }
    let found = labels.len().max(values.len());
    if found != bags {
        return Err(Error::parse(
            path,
            found,
            format!("expected {bags} targets (one per bag), found {found}"),
        ));
    }
    Ok(match kind {
        TargetKind::Discrete => Targets::discrete(labels),
        TargetKind::Continuous => Targets::Continuous(values),
    })
}

pub fn write_targets(path: &Path, targets: &Targets) -> Result<()> {
    let mut out = create(path)?;
    let res = match targets {
        Targets::Discrete { labels, .. } => labels.iter().try_for_each(|l| writeln!(out, "{l}")),
        Targets::Continuous(values) => values.iter().try_for_each(|v| writeln!(out, "{v}")),
    };
    res.and_then(|_| out.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = create(path)?;
    predictions
        .iter()
        .try_for_each(|p| writeln!(out, "{p}"))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// A trained grid with an optional label embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub grid: CountingGrid,
    pub embedding: Option<LabelEmbedding>,
}

impl Model {
    pub fn new(grid: CountingGrid) -> Self {
        Self {
            grid,
            embedding: None,
        }
    }

    pub fn with_embedding(grid: CountingGrid, embedding: LabelEmbedding) -> Result<Self> {
        if embedding.geometry() != grid.geometry() {
            return Err(Error::DimensionMismatch(
                "embedding and grid geometries differ".into(),
            ));
        }
        Ok(Self {
            grid,
            embedding: Some(embedding),
        })
    }
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let g = model.grid.geometry();
    let mut out = String::new();
    out.push_str(&format!("{MODEL_MAGIC} {MODEL_VERSION}\n"));
    out.push_str(&format!("dims {}\n", g.dims()));
    out.push_str(&format!("extent {}\n", join(g.extents())));
    out.push_str(&format!("window {}\n", join(g.window())));
    out.push_str(&format!("vocab {}\n", model.grid.vocab_size()));
    match model.embedding.as_ref().map(|e| e.kind()) {
        None => out.push_str("gamma none\n"),
        Some(LabelKind::Discrete { classes }) => {
            out.push_str(&format!("gamma discrete {classes}\n"))
        }
        Some(LabelKind::Continuous) => out.push_str("gamma continuous\n"),
    }
    out.push_str("end\n");

    let mut bytes = out.into_bytes();
    let mut push = |values: &[f64]| {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    };
    push(model.grid.pi().values());
    if let Some(e) = &model.embedding {
        push(e.gamma());
        push(e.mass());
    }
    bytes
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_model(model))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_model(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_model(&bytes)
}

struct Header<'a> {
    lines: std::str::Split<'a, char>,
}

impl<'a> Header<'a> {
    fn field(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| Error::ModelFormat(format!("missing {key:?} header line")))?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(Error::ModelFormat(format!(
                "expected {key:?} header line, got {line:?}"
            )));
        }
        Ok(parts.collect())
    }
}

fn parse_usizes(key: &str, parts: &[&str]) -> Result<Vec<usize>> {
    parts
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::ModelFormat(format!("malformed {key} value {p:?}")))
        })
        .collect()
}

fn single(key: &str, parts: &[&str]) -> Result<usize> {
    match parse_usizes(key, parts)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::ModelFormat(format!("{key} takes exactly one value"))),
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    const END: &[u8] = b"\nend\n";
    let header_len = bytes
        .windows(END.len())
        .position(|w| w == END)
        .map(|p| p + END.len())
        .ok_or_else(|| Error::ModelFormat("header is not terminated by an end line".into()))?;
    let text = std::str::from_utf8(&bytes[..header_len])
        .map_err(|_| Error::ModelFormat("header is not valid UTF-8".into()))?;
    let mut header = Header {
        lines: text.split('\n'),
    };

    let version = header
        .field(MODEL_MAGIC)
        .map_err(|_| Error::ModelFormat("not a gridcount model file".into()))?;
    let version = single("version", &version)?;
    if version != MODEL_VERSION as usize {
        return Err(Error::ModelFormat(format!(
            "unsupported model version {version} (expected {MODEL_VERSION})"
        )));
    }
    let dims = single("dims", &header.field("dims")?)?;
    let extents = parse_usizes("extent", &header.field("extent")?)?;
    let window = parse_usizes("window", &header.field("window")?)?;
    if extents.len() != dims || window.len() != dims {
        return Err(Error::ModelFormat(format!(
            "declared {dims} dims but extent has {} and window {}",
            extents.len(),
            window.len()
        )));
    }
    let geometry = GridGeometry::new(extents, window)?;
    let vocab = single("vocab", &header.field("vocab")?)?;
    if vocab == 0 {
        return Err(Error::ModelFormat("vocabulary size is zero".into()));
    }
    let gamma = header.field("gamma")?;
    let kind = match gamma.as_slice() {
        ["none"] => None,
        ["continuous"] => Some(LabelKind::Continuous),
        ["discrete", l] => Some(LabelKind::Discrete {
            classes: single("gamma classes", &[l])?,
        }),
        other => {
            return Err(Error::ModelFormat(format!(
                "malformed gamma line {other:?}"
            )))
        }
    };
    header.field("end")?;

    let cells = geometry.cells();
    let mut payload = Payload {
        bytes: &bytes[header_len..],
    };
    let pi = payload.take(
        cells
            .checked_mul(vocab)
            .ok_or_else(|| Error::ModelFormat("model too large".into()))?,
    )?;
    let embedding_arrays = match kind {
        None => None,
        Some(kind) => {
            let channels = match kind {
                LabelKind::Discrete { classes } => classes,
                LabelKind::Continuous => 1,
            };
            let gamma = payload.take(
                cells
                    .checked_mul(channels)
                    .ok_or_else(|| Error::ModelFormat("model too large".into()))?,
            )?;
            let mass = payload.take(cells)?;
            Some((kind, gamma, mass))
        }
    };
    if !payload.bytes.is_empty() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after model payload",
            payload.bytes.len()
        )));
    }

    let field = GridField::from_values(geometry.clone(), vocab, pi)
        .map_err(|e| Error::ModelFormat(format!("invalid grid: {e}")))?;
    let grid =
        CountingGrid::new(field).map_err(|e| Error::ModelFormat(format!("invalid grid: {e}")))?;
    let embedding = embedding_arrays
        .map(|(kind, gamma, mass)| LabelEmbedding::from_parts(geometry, kind, gamma, mass))
        .transpose()
        .map_err(|e| Error::ModelFormat(format!("invalid embedding: {e}")))?;
    Ok(Model { grid, embedding })
}

struct Payload<'a> {
    bytes: &'a [u8],
}

impl Payload<'_> {
    fn take(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::ModelFormat("model too large".into()))?;
        if self.bytes.len() < len {
            return Err(Error::ModelFormat("unexpected end of model payload".into()));
        }
        let (head, rest) = self.bytes.split_at(len);
        self.bytes = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}
