//! Label vocabularies, annotation records, and multi-reader consensus.
//!
//! A study carries up to three independent radiologist reads. Before a study
//! enters a split, the reads are checked for the exclusion rule (one reader
//! says no-finding while another asserts disease) and merged into a single
//! [`ConsensusAnnotation`].

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

/// Index into [`LabelVocabulary::global_labels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalLabel(pub usize);

/// Index into [`LabelVocabulary::local_labels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalLabel(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary line {line}: {msg}")]
    BadLine { line: usize, msg: String },
    #[error("duplicate label name `{0}` (names are case-insensitive)")]
    DuplicateLabel(String),
    #[error("exactly one global label must carry the `!` no-finding marker")]
    NoFindingCount,
    #[error("section `[{0}]` is empty")]
    EmptySection(&'static str),
    #[error("label `{0}` contains a character reserved by the report grammar")]
    ReservedChar(String),
}

/// The global (study-level) and local (boxed abnormality) label sets.
///
/// Exactly one global label is the designated no-finding label; it is
/// mutually exclusive with every other assertion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    global_labels: Vec<String>,
    local_labels: Vec<String>,
    no_finding: GlobalLabel,
}

fn label_name_ok(name: &str) -> bool {
    !name.is_empty()
        && name.chars().all(|c| {
            c.is_ascii_alphanumeric() || matches!(c, ' ' | '-' | '/' | '(' | ')' | '\'')
        })
}

impl LabelVocabulary {
    pub fn new(
        global_labels: Vec<String>,
        local_labels: Vec<String>,
        no_finding: usize,
    ) -> Result<Self, VocabError> {
        if global_labels.is_empty() {
            return Err(VocabError::EmptySection("global"));
        }
        if local_labels.is_empty() {
            return Err(VocabError::EmptySection("local"));
        }
        if no_finding >= global_labels.len() {
            return Err(VocabError::NoFindingCount);
        }
        let mut seen = BTreeSet::new();
        for name in global_labels.iter().chain(local_labels.iter()) {
            if !label_name_ok(name) {
                return Err(VocabError::ReservedChar(name.clone()));
            }
            if !seen.insert(name.to_lowercase()) {
                return Err(VocabError::DuplicateLabel(name.clone()));
            }
        }
        Ok(LabelVocabulary {
            global_labels,
            local_labels,
            no_finding: GlobalLabel(no_finding),
        })
    }

    /// Parses the plain-text vocabulary format: one label per line under
    /// `[global]` / `[local]` section headers, `!` marking the no-finding
    /// global. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Global,
            Local,
        }
        let mut section = Section::None;
        let mut globals = Vec::new();
        let mut locals = Vec::new();
        let mut no_finding = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[global]" => section = Section::Global,
                "[local]" => section = Section::Local,
                _ => {
                    let (marked, name) = match line.strip_prefix('!') {
                        Some(rest) => (true, rest.trim()),
                        None => (false, line),
                    };
                    match section {
                        Section::None => {
                            return Err(VocabError::BadLine {
                                line: i + 1,
                                msg: "label before any [global]/[local] section".to_string(),
                            })
                        }
                        Section::Global => {
                            if marked {
                                if no_finding.is_some() {
                                    return Err(VocabError::NoFindingCount);
                                }
                                no_finding = Some(globals.len());
                            }
                            globals.push(name.to_string());
                        }
                        Section::Local => {
                            if marked {
                                return Err(VocabError::BadLine {
                                    line: i + 1,
                                    msg: "`!` marker is only valid on a global label".to_string(),
                                });
                            }
                            locals.push(name.to_string());
                        }
                    }
                }
            }
        }
        let no_finding = no_finding.ok_or(VocabError::NoFindingCount)?;
        Self::new(globals, locals, no_finding)
    }

    /// Renders back to the `parse` format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[global]\n");
        for (i, name) in self.global_labels.iter().enumerate() {
            if GlobalLabel(i) == self.no_finding {
                out.push('!');
            }
            out.push_str(name);
            out.push('\n');
        }
        out.push_str("[local]\n");
        for name in &self.local_labels {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn global_labels(&self) -> &[String] {
        &self.global_labels
    }

    pub fn local_labels(&self) -> &[String] {
        &self.local_labels
    }

    pub fn no_finding(&self) -> GlobalLabel {
        self.no_finding
    }

    pub fn global_name(&self, label: GlobalLabel) -> Option<&str> {
        self.global_labels.get(label.0).map(String::as_str)
    }

    pub fn local_name(&self, label: LocalLabel) -> Option<&str> {
        self.local_labels.get(label.0).map(String::as_str)
    }

    /// Case-insensitive lookup.
    pub fn find_global(&self, name: &str) -> Option<GlobalLabel> {
        self.global_labels
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name.trim()))
            .map(GlobalLabel)
    }

    /// Case-insensitive lookup.
    pub fn find_local(&self, name: &str) -> Option<LocalLabel> {
        self.local_labels
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name.trim()))
            .map(LocalLabel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoxError {
    #[error("box coordinates must be finite")]
    NonFinite,
    #[error("box is degenerate: min must be strictly below max on both axes")]
    Degenerate,
    #[error("box coordinates must be non-negative")]
    Negative,
}

/// Axis-aligned rectangle in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, BoxError> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if coords.iter().any(|c| *c < 0.0) {
            return Err(BoxError::Negative);
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(BoxError::Degenerate);
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Coordinates rounded to whole pixels, for duplicate detection.
    pub fn rounded_px(&self) -> (i64, i64, i64, i64) {
        (
            libm::round(self.x_min) as i64,
            libm::round(self.y_min) as i64,
            libm::round(self.x_max) as i64,
            libm::round(self.y_max) as i64,
        )
    }
}

/// A localized abnormality: a local label with its bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Finding {
    pub label: LocalLabel,
    pub bbox: BoundingBox,
}

/// One radiologist's independent annotation of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiologistRead {
    pub reader_id: String,
    pub globals: BTreeSet<GlobalLabel>,
    pub findings: Vec<Finding>,
}

impl RadiologistRead {
    /// True when this read asserts the no-finding label.
    pub fn asserts_no_finding(&self, vocab: &LabelVocabulary) -> bool {
        self.globals.contains(&vocab.no_finding())
    }

    /// True when this read asserts any disease or localized finding.
    pub fn asserts_disease(&self, vocab: &LabelVocabulary) -> bool {
        !self.findings.is_empty() || self.globals.iter().any(|g| *g != vocab.no_finding())
    }
}

/// Single reference annotation derived from the reads of a study.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConsensusAnnotation {
    pub globals: BTreeSet<GlobalLabel>,
    pub findings: Vec<Finding>,
}

/// One image with its reads and (once merged) consensus annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub study_id: String,
    pub image_ref: String,
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub window_center: Option<f64>,
    pub window_width: Option<f64>,
    pub reads: Vec<RadiologistRead>,
    pub consensus: Option<ConsensusAnnotation>,
}

/// True iff one reader asserts no-finding while another asserts any disease
/// or localized finding. Studies with fewer than two reads cannot conflict.
pub fn is_conflicting(study: &Study, vocab: &LabelVocabulary) -> bool {
    reads_conflict(&study.reads, vocab)
}

pub fn reads_conflict(reads: &[RadiologistRead], vocab: &LabelVocabulary) -> bool {
    if reads.len() < 2 {
        return false;
    }
    let any_no_finding = reads.iter().any(|r| r.asserts_no_finding(vocab));
    let any_disease = reads.iter().any(|r| r.asserts_disease(vocab));
    any_no_finding && any_disease
}

/// How multiple reads become one consensus annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeRule {
    /// Union of globals; concatenated findings with exact duplicates (same
    /// label, same box after rounding to whole pixels) removed.
    #[default]
    Union,
    /// Keep only labels/findings asserted by a strict majority of reads.
    Majority,
}

impl MergeRule {
    pub fn parse(s: &str) -> Option<MergeRule> {
        match s {
            "union" => Some(MergeRule::Union),
            "majority" => Some(MergeRule::Majority),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MergeRule::Union => "union",
            MergeRule::Majority => "majority",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MergeError {
    #[error("study has conflicting reads (no-finding vs. disease) and must be excluded")]
    ConflictingStudy,
    #[error("study has no reads to merge")]
    NoReads,
}

/// Merges a study's reads into a consensus annotation.
///
/// Duplicates are detected on (label, box rounded to 1 px). Findings come
/// out sorted by that key, which makes the merge independent of read order.
pub fn merge_reads(
    study: &Study,
    vocab: &LabelVocabulary,
    rule: MergeRule,
) -> Result<ConsensusAnnotation, MergeError> {
    merge_read_slice(&study.reads, vocab, rule)
}

pub fn merge_read_slice(
    reads: &[RadiologistRead],
    vocab: &LabelVocabulary,
    rule: MergeRule,
) -> Result<ConsensusAnnotation, MergeError> {
    if reads.is_empty() {
        return Err(MergeError::NoReads);
    }
    if reads_conflict(reads, vocab) {
        return Err(MergeError::ConflictingStudy);
    }
    let merged = match rule {
        MergeRule::Union => {
            let mut globals = BTreeSet::new();
            for read in reads {
                globals.extend(read.globals.iter().copied());
            }
            ConsensusAnnotation {
                globals,
                findings: dedup_findings(reads.iter().flat_map(|r| r.findings.iter().copied())),
            }
        }
        MergeRule::Majority => {
            let need = reads.len() / 2 + 1;
            let mut globals = BTreeSet::new();
            for read in reads {
                for g in &read.globals {
                    let votes = reads.iter().filter(|r| r.globals.contains(g)).count();
                    if votes >= need {
                        globals.insert(*g);
                    }
                }
            }
            let all = dedup_findings(reads.iter().flat_map(|r| r.findings.iter().copied()));
            let findings = all
                .into_iter()
                .filter(|f| {
                    let key = (f.label, f.bbox.rounded_px());
                    let votes = reads
                        .iter()
                        .filter(|r| {
                            r.findings
                                .iter()
                                .any(|g| (g.label, g.bbox.rounded_px()) == key)
                        })
                        .count();
                    votes >= need
                })
                .collect();
            let mut ann = ConsensusAnnotation { globals, findings };
            // A strict majority can leave nothing at all; read that as the
            // absence of disease.
            if ann.globals.is_empty() && ann.findings.is_empty() {
                ann.globals.insert(vocab.no_finding());
            }
            ann
        }
    };
    Ok(merged)
}

fn dedup_findings(findings: impl Iterator<Item = Finding>) -> Vec<Finding> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for f in findings {
        if seen.insert((f.label, f.bbox.rounded_px())) {
            out.push(f);
        }
    }
    out.sort_by_key(|f| (f.label, f.bbox.rounded_px()));
    out
}

/// A broken invariant found by [`validate_annotation`]. Violations are data,
/// not errors: callers decide whether to exclude the study or fail.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownGlobalLabel { index: usize },
    UnknownLocalLabel { finding: usize, index: usize },
    DegenerateBox { finding: usize },
    BoxOutOfBounds { finding: usize },
    NoFindingExclusivity,
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Violation::UnknownGlobalLabel { index } => {
                write!(f, "unknown global label index {index}")
            }
            Violation::UnknownLocalLabel { finding, index } => {
                write!(f, "finding {finding}: unknown local label index {index}")
            }
            Violation::DegenerateBox { finding } => write!(f, "finding {finding}: degenerate box"),
            Violation::BoxOutOfBounds { finding } => {
                write!(f, "finding {finding}: box outside image bounds")
            }
            Violation::NoFindingExclusivity => write!(f, "no-finding exclusivity"),
        }
    }
}

/// Checks an annotation against a vocabulary and image bounds. Returns every
/// violation found; an empty list means the annotation is well-formed.
pub fn validate_annotation(
    ann: &ConsensusAnnotation,
    vocab: &LabelVocabulary,
    width: usize,
    height: usize,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for g in &ann.globals {
        if vocab.global_name(*g).is_none() {
            out.push(Violation::UnknownGlobalLabel { index: g.0 });
        }
    }
    for (i, f) in ann.findings.iter().enumerate() {
        if vocab.local_name(f.label).is_none() {
            out.push(Violation::UnknownLocalLabel {
                finding: i,
                index: f.label.0,
            });
        }
        if f.bbox.validate().is_err() {
            out.push(Violation::DegenerateBox { finding: i });
        } else if f.bbox.x_max > width as f64 || f.bbox.y_max > height as f64 {
            out.push(Violation::BoxOutOfBounds { finding: i });
        }
    }
    if ann.globals.contains(&vocab.no_finding())
        && (ann.globals.len() > 1 || !ann.findings.is_empty())
    {
        out.push(Violation::NoFindingExclusivity);
    }
    out
}

/// A small vocabulary for tests and synthetic runs: 3 global labels (one of
/// them no-finding) and 4 local labels.
pub fn small_vocabulary() -> LabelVocabulary {
    LabelVocabulary::new(
        vec![
            "Pneumonia".to_string(),
            "Tuberculosis".to_string(),
            "No finding".to_string(),
        ],
        vec![
            "Pleural effusion".to_string(),
            "Aortic enlargement".to_string(),
            "Cardiomegaly".to_string(),
            "Nodule".to_string(),
        ],
        2,
    )
    .expect("small vocabulary is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> LabelVocabulary {
        small_vocabulary()
    }

    fn read(id: &str, globals: &[usize], findings: &[(usize, f64, f64, f64, f64)]) -> RadiologistRead {
        RadiologistRead {
            reader_id: id.to_string(),
            globals: globals.iter().map(|g| GlobalLabel(*g)).collect(),
            findings: findings
                .iter()
                .map(|(l, a, b, c, d)| Finding {
                    label: LocalLabel(*l),
                    bbox: BoundingBox::new(*a, *b, *c, *d).unwrap(),
                })
                .collect(),
        }
    }

    fn study(reads: Vec<RadiologistRead>) -> Study {
        Study {
            study_id: "s1".to_string(),
            image_ref: "s1.png".to_string(),
            width: 448,
            height: 448,
            bit_depth: 8,
            window_center: None,
            window_width: None,
            reads,
            consensus: None,
        }
    }

    #[test]
    fn vocab_round_trips_through_text() {
        let v = vocab();
        let parsed = LabelVocabulary::parse(&v.to_text()).unwrap();
        assert_eq!(v, parsed);
        assert_eq!(parsed.no_finding(), GlobalLabel(2));
    }

    #[test]
    fn vocab_rejects_duplicates_and_reserved_chars() {
        let text = "[global]\nA\n!No finding\n[local]\na\nA\n";
        assert!(matches!(
            LabelVocabulary::parse(text),
            Err(VocabError::DuplicateLabel(_))
        ));
        let text = "[global]\nA{b\n!No finding\n[local]\nx\n";
        assert!(matches!(
            LabelVocabulary::parse(text),
            Err(VocabError::ReservedChar(_))
        ));
        let text = "[global]\nA\nB\n[local]\nx\n";
        assert_eq!(LabelVocabulary::parse(text), Err(VocabError::NoFindingCount));
    }

    #[test]
    fn conflict_no_finding_vs_diagnosis() {
        // one reader no-finding, the other a full diagnosis
        let s = study(vec![read("r1", &[2], &[]), read("r2", &[0], &[])]);
        assert!(is_conflicting(&s, &vocab()));
    }

    #[test]
    fn conflict_no_finding_vs_finding_only() {
        let s = study(vec![
            read("r1", &[2], &[]),
            read("r2", &[], &[(0, 1.0, 1.0, 5.0, 5.0)]),
        ]);
        assert!(is_conflicting(&s, &vocab()));
    }

    #[test]
    fn unanimous_no_finding_is_not_conflicting() {
        let s = study(vec![read("r1", &[2], &[]), read("r2", &[2], &[]), read("r3", &[2], &[])]);
        assert!(!is_conflicting(&s, &vocab()));
    }

    #[test]
    fn disagreement_without_no_finding_is_not_conflicting() {
        // oracle: direct rule application — no reader asserts no-finding
        let s = study(vec![read("r1", &[0], &[]), read("r2", &[0, 1], &[])]);
        assert!(!is_conflicting(&s, &vocab()));
    }

    #[test]
    fn single_read_is_never_conflicting() {
        let s = study(vec![read("r1", &[2], &[])]);
        assert!(!is_conflicting(&s, &vocab()));
    }

    #[test]
    fn merge_removes_exact_duplicates() {
        let f = (0usize, 10.0, 10.0, 50.0, 50.0);
        let s = study(vec![read("r1", &[0], &[f]), read("r2", &[0], &[f])]);
        let c = merge_reads(&s, &vocab(), MergeRule::Union).unwrap();
        assert_eq!(c.globals.len(), 1);
        assert_eq!(c.findings.len(), 1);
    }

    #[test]
    fn merge_unions_globals() {
        // oracle: set union
        let s = study(vec![read("r1", &[0], &[]), read("r2", &[1], &[])]);
        let c = merge_reads(&s, &vocab(), MergeRule::Union).unwrap();
        let want: BTreeSet<_> = [GlobalLabel(0), GlobalLabel(1)].into_iter().collect();
        assert_eq!(c.globals, want);
    }

    #[test]
    fn merge_single_no_finding_read_is_identity() {
        let s = study(vec![read("r1", &[2], &[])]);
        let c = merge_reads(&s, &vocab(), MergeRule::Union).unwrap();
        assert_eq!(c.globals, [GlobalLabel(2)].into_iter().collect());
        assert!(c.findings.is_empty());
    }

    #[test]
    fn merge_rejects_conflicting_study() {
        let s = study(vec![read("r1", &[2], &[]), read("r2", &[0], &[])]);
        assert_eq!(
            merge_reads(&s, &vocab(), MergeRule::Union),
            Err(MergeError::ConflictingStudy)
        );
    }

    #[test]
    fn merge_rejects_empty_reads() {
        let s = study(vec![]);
        assert_eq!(
            merge_reads(&s, &vocab(), MergeRule::Union),
            Err(MergeError::NoReads)
        );
    }

    #[test]
    fn merge_near_duplicate_boxes_survive() {
        // 0.6 px apart on one corner: rounds to different pixels, both kept
        let s = study(vec![
            read("r1", &[0], &[(0, 10.0, 10.0, 50.0, 50.0)]),
            read("r2", &[0], &[(0, 10.0, 10.0, 50.6, 50.0)]),
        ]);
        let c = merge_reads(&s, &vocab(), MergeRule::Union).unwrap();
        assert_eq!(c.findings.len(), 2);
    }

    #[test]
    fn merge_majority_requires_strict_majority() {
        let f = (0usize, 10.0, 10.0, 50.0, 50.0);
        let s = study(vec![
            read("r1", &[0], &[f]),
            read("r2", &[0], &[]),
            read("r3", &[1], &[]),
        ]);
        let c = merge_reads(&s, &vocab(), MergeRule::Majority).unwrap();
        assert_eq!(c.globals, [GlobalLabel(0)].into_iter().collect());
        assert!(c.findings.is_empty(), "finding seen by 1 of 3 readers drops");
    }

    #[test]
    fn merge_majority_empty_result_becomes_no_finding() {
        let s = study(vec![read("r1", &[0], &[]), read("r2", &[1], &[])]);
        let c = merge_reads(&s, &vocab(), MergeRule::Majority).unwrap();
        assert_eq!(c.globals, [GlobalLabel(2)].into_iter().collect());
    }

    #[test]
    fn validate_flags_degenerate_box() {
        let ann = ConsensusAnnotation {
            globals: [GlobalLabel(0)].into_iter().collect(),
            findings: vec![Finding {
                label: LocalLabel(0),
                bbox: BoundingBox {
                    x_min: 5.0,
                    y_min: 5.0,
                    x_max: 5.0,
                    y_max: 9.0,
                },
            }],
        };
        let v = validate_annotation(&ann, &vocab(), 448, 448);
        assert_eq!(v, vec![Violation::DegenerateBox { finding: 0 }]);
    }

    #[test]
    fn validate_flags_no_finding_exclusivity() {
        // oracle: rule check — no-finding plus Pneumonia
        let ann = ConsensusAnnotation {
            globals: [GlobalLabel(0), GlobalLabel(2)].into_iter().collect(),
            findings: vec![],
        };
        let v = validate_annotation(&ann, &vocab(), 448, 448);
        assert_eq!(v, vec![Violation::NoFindingExclusivity]);
    }

    #[test]
    fn validate_accepts_well_formed() {
        let ann = ConsensusAnnotation {
            globals: [GlobalLabel(0)].into_iter().collect(),
            findings: vec![Finding {
                label: LocalLabel(1),
                bbox: BoundingBox::new(0.0, 0.0, 448.0, 448.0).unwrap(),
            }],
        };
        assert!(validate_annotation(&ann, &vocab(), 448, 448).is_empty());
    }

    #[test]
    fn validate_flags_out_of_bounds() {
        let ann = ConsensusAnnotation {
            globals: BTreeSet::new(),
            findings: vec![Finding {
                label: LocalLabel(0),
                bbox: BoundingBox::new(0.0, 0.0, 500.0, 40.0).unwrap(),
            }],
        };
        let v = validate_annotation(&ann, &vocab(), 448, 448);
        assert_eq!(v, vec![Violation::BoxOutOfBounds { finding: 0 }]);
    }

    #[test]
    fn merge_is_order_independent() {
        let reads = vec![
            read("r1", &[0], &[(0, 1.0, 1.0, 9.0, 9.0)]),
            read("r2", &[1], &[(2, 3.0, 3.0, 7.0, 7.0)]),
            read("r3", &[0, 1], &[(0, 1.0, 1.0, 9.0, 9.0)]),
        ];
        let a = merge_read_slice(&reads, &vocab(), MergeRule::Union).unwrap();
        let mut rev = reads.clone();
        rev.reverse();
        let b = merge_read_slice(&rev, &vocab(), MergeRule::Union).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_is_idempotent() {
        let s = study(vec![
            read("r1", &[0, 1], &[(0, 1.0, 1.0, 9.0, 9.0), (2, 3.0, 3.0, 7.0, 7.0)]),
        ]);
        let c = merge_reads(&s, &vocab(), MergeRule::Union).unwrap();
        let again = vec![
            RadiologistRead {
                reader_id: "r1".to_string(),
                globals: c.globals.clone(),
                findings: c.findings.clone(),
            },
            RadiologistRead {
                reader_id: "r2".to_string(),
                globals: c.globals.clone(),
                findings: c.findings.clone(),
            },
        ];
        assert_eq!(merge_read_slice(&again, &vocab(), MergeRule::Union).unwrap(), c);
    }
}
