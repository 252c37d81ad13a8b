//! Parser for the prompt grammar.
//!
//! Accepts any subset of the three segments, arbitrary whitespace, an
//! optional `<p>...</p>` wrapper, an optional `The room has` lead-in and an
//! optional trailing period. Clauses are comma-separated and classified by
//! shape: `{k}_{class}` counts, `{ref}_space_{n}` areas, and
//! `{ref} connect {ref}` connections.

use crate::prompt::{AreaEntry, Connection, ConstraintSet, PromptError, RoomRef};
use crate::raster::RoomClass;

/// A clause with its byte offset in the original input, for error reporting.
struct Clause<'a> {
    text: &'a str,
    offset: usize,
}

fn parse_error(position: usize, expected: &str) -> PromptError {
    PromptError::Parse {
        position,
        expected: expected.to_string(),
    }
}

/// Strips a prefix (plus surrounding whitespace) and advances the offset.
fn strip_prefix_tracking<'a>(s: &'a str, offset: &mut usize, prefix: &str) -> &'a str {
    let trimmed = s.trim_start();
    *offset += s.len() - trimmed.len();
    if let Some(rest) = trimmed.strip_prefix(prefix) {
        *offset += prefix.len();
        rest
    } else {
        trimmed
    }
}

/// Parses prompt text into a constraint set. Sections that contribute no
/// clause come back as `None`; malformed clauses are reported with their
/// byte position, never dropped.
pub fn parse_prompt(text: &str) -> Result<ConstraintSet, PromptError> {
    let mut offset = 0usize;
    let mut body = strip_prefix_tracking(text, &mut offset, "<p>");
    body = strip_prefix_tracking(body, &mut offset, "The room has");

    // Trim the tail: whitespace, `</p>`, an optional period before it.
    let mut tail = body.trim_end();
    if let Some(t) = tail.strip_suffix("</p>") {
        tail = t.trim_end();
    }
    if let Some(t) = tail.strip_suffix('.') {
        tail = t.trim_end();
    }
    body = tail;

    if body.trim().is_empty() {
        return Err(parse_error(
            if text.trim().is_empty() { 0 } else { offset },
            "at least one clause",
        ));
    }

    let mut clauses = Vec::new();
    let mut clause_start = offset;
    for piece in body.split(',') {
        let leading_ws = piece.len() - piece.trim_start().len();
        clauses.push(Clause {
            text: piece.trim(),
            offset: clause_start + leading_ws,
        });
        clause_start += piece.len() + 1;
    }

    let mut counts: Option<Vec<(RoomClass, u32)>> = None;
    let mut areas: Option<Vec<AreaEntry>> = None;
    let mut connections: Option<Vec<Connection>> = None;

    for clause in clauses {
        if clause.text.is_empty() {
            return Err(parse_error(clause.offset, "a non-empty clause"));
        }
        if let Some((left, right)) = split_connect(clause.text) {
            let a = parse_ref(left, clause.offset)?;
            let b = parse_ref(right, clause.offset)?;
            connections
                .get_or_insert_with(Vec::new)
                .push(Connection::new(a, b));
        } else if let Some((ref_part, num_part)) = clause.text.rsplit_once("_space_") {
            let room = parse_ref(ref_part.trim(), clause.offset)?;
            let tokens: u64 = num_part
                .trim()
                .parse()
                .map_err(|_| parse_error(clause.offset, "an integer area token"))?;
            if tokens == 0 {
                return Err(parse_error(clause.offset, "a positive area token"));
            }
            areas.get_or_insert_with(Vec::new).push(AreaEntry { room, tokens });
        } else if let Some((digits, class_part)) = clause.text.split_once('_') {
            let count: u32 = digits
                .trim()
                .parse()
                .map_err(|_| parse_error(clause.offset, "a room count"))?;
            let class = RoomClass::from_name(class_part.trim())
                .ok_or_else(|| parse_error(clause.offset, "a room class name"))?;
            counts.get_or_insert_with(Vec::new).push((class, count));
        } else {
            return Err(parse_error(
                clause.offset,
                "a count, area or connection clause",
            ));
        }
    }

    Ok(ConstraintSet {
        counts,
        areas,
        connections,
    })
}

/// Recognizes `{ref} connect {ref}`: exactly three whitespace-separated
/// words with `connect` in the middle.
fn split_connect(clause: &str) -> Option<(&str, &str)> {
    let mut words = clause.split_whitespace();
    let left = words.next()?;
    if words.next()? != "connect" {
        return None;
    }
    let right = words.next()?;
    if words.next().is_some() {
        return None;
    }
    Some((left, right))
}

/// Parses a room reference in either spelling: `bedroom`, `bedroom_2`, or
/// the glued `bedroom2`.
fn parse_ref(s: &str, offset: usize) -> Result<RoomRef, PromptError> {
    for class in RoomClass::ALL {
        let name = class.name();
        let Some(rest) = s.strip_prefix(name) else {
            continue;
        };
        if rest.is_empty() {
            return Ok(RoomRef::new(class, None));
        }
        let digits = rest.strip_prefix('_').unwrap_or(rest);
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            let index: u32 = digits
                .parse()
                .map_err(|_| parse_error(offset, "a room index"))?;
            if index == 0 {
                return Err(parse_error(offset, "a room index of at least 1"));
            }
            return Ok(RoomRef::new(class, Some(index)));
        }
    }
    Err(parse_error(offset, "a room reference"))
}
