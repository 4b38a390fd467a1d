//! The structured-report grammar.
//!
//! Reports are at most two sentences:
//!
//! ```text
//! Global diseases: <name>, <name>. Local findings: <name> {<gx1><gy1><gx2><gy2>}, <name>.
//! ```
//!
//! with two degenerate forms: `No findings.` when the only assertion is the
//! no-finding label, and `none` in place of either list when it is empty.
//! Boxes are written as grid tokens: pixel coordinates floor-quantized onto
//! a `G x G` grid (`G = 100` by default). Serialization is canonical (global
//! names in vocabulary order) so that parse(serialize(r)) == r exactly;
//! parsing of model output is tolerant — unknown labels and malformed boxes
//! degrade to warnings, never panics.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::labelspace::{BoundingBox, BoxError, GlobalLabel, LabelVocabulary, LocalLabel};

/// Default quantization grid resolution.
pub const DEFAULT_GRID: u16 = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("grid coordinate {got} outside [0, {grid})")]
    GridOutOfRange { got: u16, grid: u16 },
    #[error("grid box corners must be ordered: ({0}, {1}) > ({2}, {3})")]
    GridUnordered(u16, u16, u16, u16),
    #[error("malformed grid-box token at byte {offset}: {msg}")]
    MalformedToken { offset: usize, msg: String },
    #[error("decoded box is degenerate (sub-cell extent): {0}")]
    DegenerateDecode(BoxError),
    #[error("report violates an invariant: {0}")]
    InvalidReport(String),
    #[error("prompt style `{style}` requires {need} context")]
    MissingContext { style: &'static str, need: &'static str },
    #[error("label index {0} not in vocabulary")]
    UnknownLabel(usize),
}

/// A box quantized onto the `G x G` grid; corners inclusive, `0 <= g < G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridBox {
    pub gx1: u16,
    pub gy1: u16,
    pub gx2: u16,
    pub gy2: u16,
}

impl GridBox {
    pub fn new(gx1: u16, gy1: u16, gx2: u16, gy2: u16, grid: u16) -> Result<Self, ReportError> {
        for g in [gx1, gy1, gx2, gy2] {
            if g >= grid {
                return Err(ReportError::GridOutOfRange { got: g, grid });
            }
        }
        if gx1 > gx2 || gy1 > gy2 {
            return Err(ReportError::GridUnordered(gx1, gy1, gx2, gy2));
        }
        Ok(GridBox { gx1, gy1, gx2, gy2 })
    }

    /// Renders as `{<gx1><gy1><gx2><gy2>}`.
    pub fn token(&self) -> String {
        format!("{{<{}><{}><{}><{}>}}", self.gx1, self.gy1, self.gx2, self.gy2)
    }

    /// Cell-center dequantization: each corner maps to `(g + 0.5) * dim / G`.
    /// Returns raw corners; they coincide on an axis when the grid extent is
    /// zero there.
    pub fn dequantize(&self, width: f64, height: f64, grid: u16) -> (f64, f64, f64, f64) {
        let g = grid as f64;
        (
            (self.gx1 as f64 + 0.5) * width / g,
            (self.gy1 as f64 + 0.5) * height / g,
            (self.gx2 as f64 + 0.5) * width / g,
            (self.gy2 as f64 + 0.5) * height / g,
        )
    }
}

/// Quantizes a pixel box onto the grid: `g = floor(G * coord / dim)`,
/// clamped to `[0, G-1]`.
pub fn encode_box(b: &BoundingBox, width: f64, height: f64, grid: u16) -> GridBox {
    let q = |coord: f64, dim: f64| -> u16 {
        let g = libm::floor(grid as f64 * coord / dim);
        (g.max(0.0) as u16).min(grid - 1)
    };
    GridBox {
        gx1: q(b.x_min, width),
        gy1: q(b.y_min, height),
        gx2: q(b.x_max, width),
        gy2: q(b.y_max, height),
    }
}

/// Parses a `{<..><..><..><..>}` token and dequantizes it back to pixel
/// coordinates. Errors carry the byte offset of the malformed input.
pub fn decode_box(
    token: &str,
    width: f64,
    height: f64,
    grid: u16,
) -> Result<BoundingBox, ReportError> {
    let (gb, used) = parse_grid_token(token, grid)?;
    if used != token.len() {
        return Err(ReportError::MalformedToken {
            offset: used,
            msg: "trailing characters after grid box".to_string(),
        });
    }
    let (x1, y1, x2, y2) = gb.dequantize(width, height, grid);
    BoundingBox::new(x1, y1, x2, y2).map_err(ReportError::DegenerateDecode)
}

/// Parses a grid token at the start of `s`; returns the box and how many
/// bytes were consumed.
pub fn parse_grid_token(s: &str, grid: u16) -> Result<(GridBox, usize), ReportError> {
    let bytes = s.as_bytes();
    let err = |offset: usize, msg: &str| ReportError::MalformedToken {
        offset,
        msg: msg.to_string(),
    };
    let mut pos = 0;
    if bytes.first() != Some(&b'{') {
        return Err(err(0, "expected `{`"));
    }
    pos += 1;
    let mut coords = [0u16; 4];
    for coord in coords.iter_mut() {
        if bytes.get(pos) != Some(&b'<') {
            return Err(err(pos, "expected `<`"));
        }
        pos += 1;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(err(pos, "expected digits"));
        }
        let digits = &s[start..pos];
        let value: u32 = digits
            .parse()
            .map_err(|_| err(start, "coordinate out of range"))?;
        if value >= grid as u32 {
            return Err(err(start, "coordinate out of grid range"));
        }
        *coord = value as u16;
        if bytes.get(pos) != Some(&b'>') {
            return Err(err(pos, "expected `>`"));
        }
        pos += 1;
    }
    if bytes.get(pos) != Some(&b'}') {
        return Err(err(pos, "expected `}`"));
    }
    pos += 1;
    let gb = GridBox::new(coords[0], coords[1], coords[2], coords[3], grid)
        .map_err(|_| err(0, "grid corners unordered"))?;
    Ok((gb, pos))
}

/// A finding as it appears in a report: boxes are optional because tolerant
/// parsing keeps labels whose box was missing or malformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportFinding {
    pub label: LocalLabel,
    pub bbox: Option<GridBox>,
}

/// The parsed/serializable form of a report: global disease set plus an
/// ordered list of localized findings in grid coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StructuredReport {
    pub globals: BTreeSet<GlobalLabel>,
    pub findings: Vec<ReportFinding>,
}

impl StructuredReport {
    pub fn no_findings(vocab: &LabelVocabulary) -> Self {
        StructuredReport {
            globals: [vocab.no_finding()].into_iter().collect(),
            findings: Vec::new(),
        }
    }

    /// True when the only assertion is the no-finding label.
    pub fn is_no_findings(&self, vocab: &LabelVocabulary) -> bool {
        self.findings.is_empty()
            && self.globals.len() == 1
            && self.globals.contains(&vocab.no_finding())
    }

    pub fn validate(&self, vocab: &LabelVocabulary, grid: u16) -> Result<(), ReportError> {
        for g in &self.globals {
            if vocab.global_name(*g).is_none() {
                return Err(ReportError::UnknownLabel(g.0));
            }
        }
        for f in &self.findings {
            if vocab.local_name(f.label).is_none() {
                return Err(ReportError::UnknownLabel(f.label.0));
            }
            if let Some(b) = f.bbox {
                GridBox::new(b.gx1, b.gy1, b.gx2, b.gy2, grid)?;
            }
        }
        if self.globals.contains(&vocab.no_finding())
            && (self.globals.len() > 1 || !self.findings.is_empty())
        {
            return Err(ReportError::InvalidReport(
                "no-finding label asserted together with disease".to_string(),
            ));
        }
        Ok(())
    }
}

fn globals_list(r: &StructuredReport, vocab: &LabelVocabulary) -> String {
    if r.globals.is_empty() {
        return "none".to_string();
    }
    // BTreeSet over label indices = vocabulary order.
    r.globals
        .iter()
        .filter_map(|g| vocab.global_name(*g))
        .collect::<Vec<_>>()
        .join(", ")
}

fn findings_list(findings: &[ReportFinding], vocab: &LabelVocabulary) -> String {
    findings
        .iter()
        .map(|f| {
            let name = vocab.local_name(f.label).unwrap_or("?");
            match f.bbox {
                Some(b) => format!("{} {}", name, b.token()),
                None => name.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Renders the first sentence (global diseases) alone.
pub fn serialize_globals_sentence(r: &StructuredReport, vocab: &LabelVocabulary) -> String {
    format!("Global diseases: {}.", globals_list(r, vocab))
}

/// Renders the second sentence (local findings) alone.
pub fn serialize_findings_sentence(r: &StructuredReport, vocab: &LabelVocabulary) -> String {
    if r.findings.is_empty() {
        "Local findings: none.".to_string()
    } else {
        format!("Local findings: {}.", findings_list(&r.findings, vocab))
    }
}

/// Canonical two-sentence serialization. `No findings.` when the report's
/// only assertion is the no-finding label; rejects invariant violations.
pub fn serialize_report(
    r: &StructuredReport,
    vocab: &LabelVocabulary,
    grid: u16,
) -> Result<String, ReportError> {
    r.validate(vocab, grid)?;
    if r.is_no_findings(vocab) {
        return Ok("No findings.".to_string());
    }
    Ok(format!(
        "{} {}",
        serialize_globals_sentence(r, vocab),
        serialize_findings_sentence(r, vocab)
    ))
}

/// A recoverable deviation found while parsing generated text.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseWarning {
    UnknownGlobalLabel(String),
    UnknownLocalLabel(String),
    MalformedBox { item: String, msg: String },
    BoxWithoutLabel(String),
    NoFindingDropped,
    UnrecognizedSentence(String),
}

impl core::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ParseWarning::UnknownGlobalLabel(name) => write!(f, "unknown label {name}"),
            ParseWarning::UnknownLocalLabel(name) => write!(f, "unknown label {name}"),
            ParseWarning::MalformedBox { item, msg } => {
                write!(f, "malformed box in `{item}`: {msg}")
            }
            ParseWarning::BoxWithoutLabel(item) => write!(f, "box without a label in `{item}`"),
            ParseWarning::NoFindingDropped => {
                write!(f, "no-finding dropped: asserted together with disease")
            }
            ParseWarning::UnrecognizedSentence(s) => write!(f, "unrecognized sentence `{s}`"),
        }
    }
}

/// Why a parse produced no report at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseFailure {
    Unparseable,
}

impl core::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ParseFailure::Unparseable => write!(f, "unparseable"),
        }
    }
}

/// Result of a tolerant parse: either a report (possibly with warnings) or
/// a fatal reason, never both.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub report: Option<StructuredReport>,
    pub warnings: Vec<ParseWarning>,
    pub fatal: Option<ParseFailure>,
}

impl ParseOutcome {
    pub fn is_fatal(&self) -> bool {
        self.fatal.is_some()
    }
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.to_ascii_lowercase();
    h.find(&needle.to_ascii_lowercase())
}

/// Tolerant parse of (possibly model-generated) report text.
///
/// Sentences are recognized by their markers — `no findings`,
/// `global diseases:`, `local findings:` — case-insensitively. Unknown
/// labels, malformed boxes, and exclusivity violations degrade to warnings;
/// text with no recognizable sentence is fatal (`unparseable`). This
/// function never panics on any input.
pub fn parse_report(text: &str, vocab: &LabelVocabulary, grid: u16) -> ParseOutcome {
    let mut warnings = Vec::new();
    let mut globals: BTreeSet<GlobalLabel> = BTreeSet::new();
    let mut findings: Vec<ReportFinding> = Vec::new();
    let mut saw_marker = false;
    let mut saw_no_findings = false;

    for raw_sentence in text.split('.') {
        let sentence = raw_sentence.trim();
        if sentence.is_empty() {
            continue;
        }
        if sentence.eq_ignore_ascii_case("no findings")
            || sentence.eq_ignore_ascii_case("no finding")
        {
            saw_marker = true;
            saw_no_findings = true;
        } else if let Some(pos) = find_ci(sentence, "global diseases") {
            saw_marker = true;
            let rest = content_after_marker(&sentence[pos..], "global diseases");
            parse_globals_list(rest, vocab, &mut globals, &mut warnings);
        } else if let Some(pos) = find_ci(sentence, "local findings") {
            saw_marker = true;
            let rest = content_after_marker(&sentence[pos..], "local findings");
            parse_findings_list(rest, vocab, grid, &mut findings, &mut warnings);
        } else {
            warnings.push(ParseWarning::UnrecognizedSentence(truncate(sentence, 60)));
        }
    }

    if !saw_marker {
        return ParseOutcome {
            report: None,
            warnings,
            fatal: Some(ParseFailure::Unparseable),
        };
    }

    if saw_no_findings {
        globals.insert(vocab.no_finding());
    }
    // Exclusivity repair: diseases win over a stray no-finding assertion.
    if globals.contains(&vocab.no_finding()) && (globals.len() > 1 || !findings.is_empty()) {
        globals.remove(&vocab.no_finding());
        warnings.push(ParseWarning::NoFindingDropped);
    }

    ParseOutcome {
        report: Some(StructuredReport { globals, findings }),
        warnings,
        fatal: None,
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

/// Strips the marker itself and an optional following colon.
fn content_after_marker<'a>(s: &'a str, marker: &str) -> &'a str {
    let rest = &s[marker.len()..];
    rest.trim_start().strip_prefix(':').unwrap_or(rest).trim()
}

fn parse_globals_list(
    list: &str,
    vocab: &LabelVocabulary,
    globals: &mut BTreeSet<GlobalLabel>,
    warnings: &mut Vec<ParseWarning>,
) {
    for item in list.split(',') {
        let name = item.trim();
        if name.is_empty() || name.eq_ignore_ascii_case("none") {
            continue;
        }
        match vocab.find_global(name) {
            Some(g) => {
                globals.insert(g); // duplicates deduplicate silently
            }
            None => warnings.push(ParseWarning::UnknownGlobalLabel(name.to_string())),
        }
    }
}

fn parse_findings_list(
    list: &str,
    vocab: &LabelVocabulary,
    grid: u16,
    findings: &mut Vec<ReportFinding>,
    warnings: &mut Vec<ParseWarning>,
) {
    for item in list.split(',') {
        let item = item.trim();
        if item.is_empty() || item.eq_ignore_ascii_case("none") {
            continue;
        }
        let (name_part, bbox) = match item.find('{') {
            Some(brace) => {
                let name = item[..brace].trim();
                match parse_grid_token(&item[brace..], grid) {
                    Ok((gb, _)) => (name, Some(gb)),
                    Err(e) => {
                        warnings.push(ParseWarning::MalformedBox {
                            item: truncate(item, 60),
                            msg: e.to_string(),
                        });
                        (name, None)
                    }
                }
            }
            None => (item, None),
        };
        if name_part.is_empty() {
            warnings.push(ParseWarning::BoxWithoutLabel(truncate(item, 60)));
            continue;
        }
        match vocab.find_local(name_part) {
            Some(label) => findings.push(ReportFinding { label, bbox }),
            None => warnings.push(ParseWarning::UnknownLocalLabel(name_part.to_string())),
        }
    }
}

/// Which half of the report the model must produce and what context the
/// prompt carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PromptStyle {
    #[default]
    Default,
    Global,
    Local,
}

impl PromptStyle {
    pub fn parse(s: &str) -> Option<PromptStyle> {
        match s {
            "default" => Some(PromptStyle::Default),
            "global" => Some(PromptStyle::Global),
            "local" => Some(PromptStyle::Local),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptStyle::Default => "default",
            PromptStyle::Global => "global",
            PromptStyle::Local => "local",
        }
    }
}

const DEFAULT_PROMPT: &str = "[radiology] please describe this image in detail with radiological \
    features. Use two sentences unless there are no findings. The first sentence should list the \
    global diseases present in the image, and the second should list local diseases with \
    localized bounding boxes.";

/// Builds the instruction text for one of the three prompting styles. The
/// global style embeds the study's local label + bounding box pairs; the
/// local style embeds its global labels; the default style takes no context.
pub fn build_prompt(
    style: PromptStyle,
    context: Option<&StructuredReport>,
    vocab: &LabelVocabulary,
) -> Result<String, ReportError> {
    match style {
        PromptStyle::Default => Ok(DEFAULT_PROMPT.to_string()),
        PromptStyle::Global => {
            let report = context.filter(|r| !r.findings.is_empty()).ok_or(
                ReportError::MissingContext {
                    style: "global",
                    need: "local label + bounding box pairs",
                },
            )?;
            Ok(format!(
                "[radiology] please describe this chest x-ray in detail with radiological \
                 features. Given that the following abnormalities are present in the image: {}. \
                 Find the global diseases present in the image.",
                findings_list(&report.findings, vocab)
            ))
        }
        PromptStyle::Local => {
            let report = context.filter(|r| !r.globals.is_empty()).ok_or(
                ReportError::MissingContext {
                    style: "local",
                    need: "global labels",
                },
            )?;
            Ok(format!(
                "[radiology] please describe this chest x-ray in detail with radiological \
                 features. Given that the patient was diagnosed with {}, find the local \
                 diseases/abnormalities with localized bounding boxes.",
                globals_list(report, vocab)
            ))
        }
    }
}
