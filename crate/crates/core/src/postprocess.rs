//! Normalization of chat-style model output into a splice-ready completion.

use crate::model::{FimTask, Language, Subtype};

pub const DEFAULT_INDENT_UNIT: usize = 4;

/// Extraction followed by indentation repair.
pub fn postprocess(raw_text: &str, task: &FimTask) -> String {
    let extracted = extract_completion(raw_text, task);
    repair_indentation(&extracted, task)
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Strips a code fence wrapper, trims blank edge lines and, for single-line
/// tasks, keeps only the first non-empty line.
pub fn extract_completion(raw_text: &str, task: &FimTask) -> String {
    let lines: Vec<&str> = raw_text.lines().collect();
    let body: &[&str] = match lines.iter().position(|l| is_fence(l)) {
        Some(open) => {
            let rest = &lines[open + 1..];
            match rest.iter().position(|l| is_fence(l)) {
                Some(close) => &rest[..close],
                None => rest,
            }
        }
        None => &lines,
    };

    let start = body.iter().position(|l| !l.trim().is_empty());
    let end = body.iter().rposition(|l| !l.trim().is_empty());
    let body = match (start, end) {
        (Some(s), Some(e)) => &body[s..=e],
        _ => return String::new(),
    };

    if task.subtype == Some(Subtype::SingleLine) {
        return body[0].trim_end().to_owned();
    }
    body.join("\n")
}

fn expand_tabs(ws: &str, unit: usize) -> usize {
    ws.chars()
        .map(|c| if c == '\t' { unit } else { 1 })
        .sum::<usize>()
}

fn leading_ws(line: &str) -> &str {
    let trimmed = line.trim_start_matches([' ', '\t']);
    &line[..line.len() - trimmed.len()]
}

fn opens_block(line: &str, language: &Language) -> bool {
    let line = line.trim_end();
    match language {
        Language::Python => line.ends_with(':'),
        _ => line.ends_with('{'),
    }
}

/// Columns of indentation the line at the cursor should start with: the
/// indentation of the last non-blank prefix line, plus one `unit` when that
/// line opens a block. The partial cursor line is not consulted.
pub fn expected_indent(prefix: &str, language: &Language, unit: usize) -> usize {
    let complete = match prefix.rfind('\n') {
        Some(idx) => &prefix[..idx],
        None => "",
    };
    match complete.lines().rev().find(|l| !l.trim().is_empty()) {
        Some(line) => {
            let base = expand_tabs(leading_ws(line), unit);
            if opens_block(line, language) {
                base + unit
            } else {
                base
            }
        }
        None => 0,
    }
}

/// Re-indents the first completion line to the column implied by the prefix
/// and shifts later lines by the same delta. Brace languages pass through.
pub fn repair_indentation(text: &str, task: &FimTask) -> String {
    repair_indentation_with_unit(text, task, DEFAULT_INDENT_UNIT)
}

pub fn repair_indentation_with_unit(text: &str, task: &FimTask, unit: usize) -> String {
    if !task.language.is_indentation_sensitive() || text.is_empty() {
        return text.to_owned();
    }
    let cursor_line = match task.prefix.rfind('\n') {
        Some(idx) => &task.prefix[idx + 1..],
        None => task.prefix.as_str(),
    };
    if !cursor_line.trim().is_empty() {
        // Cursor sits after code on the same line; the completion continues it inline.
        return text.to_owned();
    }
    let already = expand_tabs(cursor_line, unit);
    let target = expected_indent(&task.prefix, &task.language, unit).saturating_sub(already);

    let mut lines = text.split('\n');
    let first = lines.next().unwrap_or_default();
    let current = expand_tabs(leading_ws(first), unit);
    let delta = target as isize - current as isize;

    let mut out = String::with_capacity(text.len() + 16);
    out.push_str(&" ".repeat(target));
    out.push_str(first.trim_start_matches([' ', '\t']));
    for line in lines {
        out.push('\n');
        if line.trim().is_empty() {
            out.push_str(line);
            continue;
        }
        let cols = expand_tabs(leading_ws(line), unit) as isize + delta;
        out.push_str(&" ".repeat(cols.max(0) as usize));
        out.push_str(line.trim_start_matches([' ', '\t']));
    }
    out
}
