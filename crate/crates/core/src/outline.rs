//! Outline representation: a tree of section headings, the markdown-heading
//! parser/serializer, and the edit-operation algebra used during refinement.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OutlineError {
    /// The input text contained no heading line at all.
    #[error("outline text contains no heading lines")]
    EmptyOutline,
    /// No line of the reply parsed as an edit operation.
    #[error("no edit operations could be parsed from the reply")]
    NoOperations,
}

/// One heading in the outline tree. A child is always exactly one level
/// deeper than its parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionNode {
    pub title: String,
    pub level: usize,
    pub children: Vec<SectionNode>,
}

impl SectionNode {
    pub fn new(title: impl Into<String>, level: usize) -> Self {
        let title: String = title.into();
        Self {
            title: clean_title(&title),
            level,
            children: Vec::new(),
        }
    }

    /// Titles of this node and all descendants, pre-order.
    pub fn titles(&self) -> Vec<&str> {
        let mut out = vec![self.title.as_str()];
        for child in &self.children {
            out.extend(child.titles());
        }
        out
    }
}

/// An ordered tree of section headings; all roots are level 1.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outline {
    pub roots: Vec<SectionNode>,
}

impl Outline {
    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// All titles at every level, document order.
    pub fn all_titles(&self) -> Vec<&str> {
        self.roots.iter().flat_map(|r| r.titles()).collect()
    }

    pub fn contains_normalized(&self, key: &str) -> bool {
        self.all_titles().iter().any(|t| normalize_title(t) == key)
    }

    /// The root section node with the given normalized title.
    pub fn root_section(&self, title: &str) -> Option<&SectionNode> {
        let key = normalize_title(title);
        self.roots.iter().find(|r| normalize_title(&r.title) == key)
    }

    /// Removes every node (at any depth) whose normalized title equals
    /// `key`, splicing the removed node's children into its place one
    /// level up. Returns how many nodes were removed.
    pub fn remove_title_promoting_children(&mut self, key: &str) -> usize {
        fn demote(mut node: SectionNode, new_level: usize) -> SectionNode {
            node.level = new_level;
            node.children = node
                .children
                .into_iter()
                .map(|c| demote(c, new_level + 1))
                .collect();
            node
        }
        fn walk(nodes: Vec<SectionNode>, key: &str, level: usize, removed: &mut usize) -> Vec<SectionNode> {
            let mut out = Vec::new();
            for node in nodes {
                if normalize_title(&node.title) == key {
                    *removed += 1;
                    for child in node.children {
                        out.push(demote(child, level));
                    }
                } else {
                    let mut node = node;
                    node.children = walk(node.children, key, level + 1, removed);
                    out.push(node);
                }
            }
            out
        }
        let mut removed = 0;
        // Splicing can surface new matches at the same depth, so iterate to a fixpoint.
        loop {
            let before = removed;
            self.roots = walk(std::mem::take(&mut self.roots), key, 1, &mut removed);
            if removed == before {
                break;
            }
        }
        if removed > 0 {
            self.roots = merge_duplicate_siblings(std::mem::take(&mut self.roots));
        }
        removed
    }
}

/// An edit proposed against the outline during refinement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOperation {
    AddSection { title: String },
    DeleteSection { title: String },
    DoNothing,
}

impl EditOperation {
    pub fn is_do_nothing(&self) -> bool {
        matches!(self, EditOperation::DoNothing)
    }
}

impl fmt::Display for EditOperation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOperation::AddSection { title } => write!(f, "-[add section] : {title}"),
            EditOperation::DeleteSection { title } => write!(f, "-[delete section] : {title}"),
            EditOperation::DoNothing => write!(f, "-[do nothing]"),
        }
    }
}

fn clean_title(raw: &str) -> String {
    raw.trim().trim_start_matches('#').trim().to_string()
}

/// Parses markdown heading lines into an outline tree.
///
/// Non-heading lines are ignored. A heading that jumps deeper than
/// (previous level + 1) is clamped to previous level + 1, so noisy level
/// skips never fail the parse. Duplicate sibling titles (after
/// normalization) are merged into the first occurrence.
pub fn parse_outline(text: &str) -> Result<Outline, OutlineError> {
    let mut roots: Vec<SectionNode> = Vec::new();
    let mut stack: Vec<SectionNode> = Vec::new();

    fn close_top(stack: &mut Vec<SectionNode>, roots: &mut Vec<SectionNode>) {
        if let Some(node) = stack.pop() {
            match stack.last_mut() {
                Some(parent) => parent.children.push(node),
                None => roots.push(node),
            }
        }
    }

    for line in text.lines() {
        let Some((raw_level, title)) = parse_heading_line(line) else {
            continue;
        };
        if title.is_empty() {
            continue;
        }
        let level = raw_level.min(stack.len() + 1);
        while stack.len() >= level {
            close_top(&mut stack, &mut roots);
        }
        stack.push(SectionNode {
            title,
            level,
            children: Vec::new(),
        });
    }
    while !stack.is_empty() {
        close_top(&mut stack, &mut roots);
    }

    if roots.is_empty() {
        return Err(OutlineError::EmptyOutline);
    }
    Ok(Outline {
        roots: merge_duplicate_siblings(roots),
    })
}

/// Returns (level, cleaned title) when the line is an ATX heading of depth 1..=6.
pub fn heading_title(line: &str) -> Option<(usize, String)> {
    parse_heading_line(line)
}

fn parse_heading_line(line: &str) -> Option<(usize, String)> {
    let trimmed = line.trim_start();
    let hashes = trimmed.chars().take_while(|&c| c == '#').count();
    if hashes == 0 || hashes > 6 {
        return None;
    }
    let rest = &trimmed[hashes..];
    Some((hashes, clean_title(rest)))
}

fn merge_duplicate_siblings(nodes: Vec<SectionNode>) -> Vec<SectionNode> {
    let mut out: Vec<SectionNode> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for node in nodes {
        let key = normalize_title(&node.title);
        match seen.get(&key) {
            Some(&idx) => out[idx].children.extend(node.children),
            None => {
                seen.insert(key, out.len());
                out.push(node);
            }
        }
    }
    for node in &mut out {
        node.children = merge_duplicate_siblings(std::mem::take(&mut node.children));
    }
    out
}

/// Serializes an outline back to markdown headings, one per line:
/// level-many `#`, a space, then the title. Inverse of [`parse_outline`].
pub fn render_outline(outline: &Outline) -> String {
    fn walk(node: &SectionNode, lines: &mut Vec<String>) {
        lines.push(format!("{} {}", "#".repeat(node.level), node.title));
        for child in &node.children {
            walk(child, lines);
        }
    }
    let mut lines = Vec::new();
    for root in &outline.roots {
        walk(root, &mut lines);
    }
    lines.join("\n")
}

/// Canonical form used for every title comparison: case-folded, heading
/// markers and leading list numbering ("1.", "IV.") stripped, whitespace
/// collapsed.
pub fn normalize_title(title: &str) -> String {
    let mut s = title.trim().to_lowercase();
    loop {
        let stripped = strip_leading_decoration(&s);
        if stripped == s {
            break;
        }
        s = stripped;
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_leading_decoration(s: &str) -> String {
    let s = s.trim_start().trim_start_matches('#').trim_start();
    if let Some(rest) = strip_list_numbering(s) {
        return rest.trim_start().to_string();
    }
    s.to_string()
}

/// Strips a leading "1." / "12)" / "iv." style marker followed by whitespace.
fn strip_list_numbering(s: &str) -> Option<&str> {
    let prefix_len = {
        let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            digits
        } else {
            s.chars()
                .take_while(|c| matches!(c, 'i' | 'v' | 'x' | 'l' | 'c' | 'd' | 'm'))
                .count()
        }
    };
    if prefix_len == 0 {
        return None;
    }
    let rest = &s[prefix_len..];
    let rest = rest.strip_prefix(['.', ')'])?;
    if rest.starts_with(char::is_whitespace) {
        Some(rest)
    } else {
        None
    }
}

/// Operations recovered from an LLM reply plus how many nonempty lines
/// were skipped as unparseable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOperations {
    pub operations: Vec<EditOperation>,
    pub skipped: usize,
}

/// Parses edit-operation lines of the form `-[add section] : Title`,
/// `-[delete section] : Title` and `-[do nothing]`. Unrecognized nonempty
/// lines are skipped and counted.
pub fn parse_operations(text: &str) -> Result<ParsedOperations, OutlineError> {
    let mut operations = Vec::new();
    let mut skipped = 0;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match parse_operation_line(line) {
            Some(op) => operations.push(op),
            None => skipped += 1,
        }
    }
    if operations.is_empty() {
        return Err(OutlineError::NoOperations);
    }
    Ok(ParsedOperations { operations, skipped })
}

fn parse_operation_line(line: &str) -> Option<EditOperation> {
    let body = line.strip_prefix('-').unwrap_or(line).trim_start();
    let rest = body.strip_prefix('[')?;
    let close = rest.find(']')?;
    let tag = rest[..close].trim().to_lowercase();
    let tail = rest[close + 1..].trim();
    match tag.as_str() {
        "do nothing" => Some(EditOperation::DoNothing),
        "add section" | "delete section" => {
            let target = tail.strip_prefix(':').unwrap_or(tail).trim();
            if target.is_empty() {
                return None;
            }
            let title = clean_title(target);
            if tag == "add section" {
                Some(EditOperation::AddSection { title })
            } else {
                Some(EditOperation::DeleteSection { title })
            }
        }
        _ => None,
    }
}

/// What actually happened while applying a batch of operations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationLog {
    pub applied: usize,
    /// Add targets already present after normalization (recorded no-ops).
    pub skipped_adds: Vec<String>,
    /// Delete targets not found anywhere in the outline (recorded no-ops).
    pub missing_deletes: Vec<String>,
}

/// Applies operations in order. AddSection appends a new level-1 section
/// when the title is absent after normalization; DeleteSection removes the
/// first normalized-title match at any depth together with its subtree;
/// DoNothing is the identity.
pub fn apply_operations(outline: &Outline, operations: &[EditOperation]) -> (Outline, OperationLog) {
    let mut result = outline.clone();
    let mut log = OperationLog::default();
    for op in operations {
        match op {
            EditOperation::DoNothing => {}
            EditOperation::AddSection { title } => {
                let key = normalize_title(title);
                if result.contains_normalized(&key) {
                    log.skipped_adds.push(title.clone());
                } else {
                    result.roots.push(SectionNode::new(title.clone(), 1));
                    log.applied += 1;
                }
            }
            EditOperation::DeleteSection { title } => {
                let key = normalize_title(title);
                if delete_first_match(&mut result.roots, &key) {
                    log.applied += 1;
                } else {
                    log.missing_deletes.push(title.clone());
                }
            }
        }
    }
    (result, log)
}

fn delete_first_match(nodes: &mut Vec<SectionNode>, key: &str) -> bool {
    for i in 0..nodes.len() {
        if normalize_title(&nodes[i].title) == key {
            nodes.remove(i);
            return true;
        }
        if delete_first_match(&mut nodes[i].children, key) {
            return true;
        }
    }
    false
}

/// Titles of the level-1 sections in document order.
pub fn first_level_sections(outline: &Outline) -> Vec<String> {
    outline.roots.iter().map(|r| r.title.clone()).collect()
}
