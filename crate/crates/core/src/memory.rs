//! Textual progress memory.
//!
//! The memory is one line:
//!
//! ```text
//! done: grasp cup; place cup -> (0.4,0.2) | remaining: grasp sponge
//! ```
//!
//! Each entry is `<verb> <target>` optionally followed by ` -> (x,y)` with the
//! destination in workspace meters (at most 3 decimals). An empty side is
//! written as `-`. Primitive ids are not written; parsing assigns positional
//! ids across `done ++ remaining`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{Destination, ObjectId, PlanState, Primitive, Verb};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("malformed memory: {0}")]
    Malformed(String),
    #[error("memory references unknown object {0:?}")]
    UnknownObject(String),
}

fn malformed(msg: impl Into<String>) -> MemoryError {
    MemoryError::Malformed(msg.into())
}

fn write_coord(out: &mut String, mm: i64) {
    let sign = if mm < 0 { "-" } else { "" };
    let abs = mm.unsigned_abs();
    let mut frac = format!("{:03}", abs % 1000);
    while frac.len() > 1 && frac.ends_with('0') {
        frac.pop();
    }
    let _ = write!(out, "{sign}{}.{frac}", abs / 1000);
}

fn write_entry(out: &mut String, p: &Primitive) {
    let _ = write!(out, "{} {}", p.verb(), p.target());
    if let Some(d) = p.destination() {
        let (x, y) = d.mm();
        out.push_str(" -> (");
        write_coord(out, x);
        out.push(',');
        write_coord(out, y);
        out.push(')');
    }
}

/// Renders a single primitive in memory-entry form, e.g. `place cup -> (0.4,0.2)`.
pub fn describe(p: &Primitive) -> String {
    let mut s = String::new();
    write_entry(&mut s, p);
    s
}

fn write_list(out: &mut String, items: &[Primitive]) {
    if items.is_empty() {
        out.push('-');
        return;
    }
    for (i, p) in items.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        write_entry(out, p);
    }
}

pub fn render_memory(plan: &PlanState) -> String {
    let mut out = String::from("done: ");
    write_list(&mut out, plan.completed());
    out.push_str(" | remaining: ");
    write_list(&mut out, plan.remaining());
    out
}

fn parse_coord(s: &str) -> Result<i64, MemoryError> {
    let bad = || malformed(format!("bad coordinate {s:?}"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
    if whole.is_empty()
        || frac.len() > 3
        || !whole.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(bad());
    }
    let whole: i64 = whole.parse().map_err(|_| bad())?;
    let mut frac_mm = 0i64;
    for (i, b) in frac.bytes().enumerate() {
        frac_mm += i64::from(b - b'0') * [100, 10, 1][i];
    }
    let mm = whole
        .checked_mul(1000)
        .and_then(|w| w.checked_add(frac_mm))
        .ok_or_else(bad)?;
    Ok(if neg { -mm } else { mm })
}

fn parse_destination(s: &str) -> Result<Destination, MemoryError> {
    let inner = s
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| malformed(format!("destination must be (x,y), got {s:?}")))?;
    let (x, y) = inner
        .split_once(',')
        .ok_or_else(|| malformed(format!("destination must be (x,y), got {s:?}")))?;
    Ok(Destination::from_mm(
        parse_coord(x.trim())?,
        parse_coord(y.trim())?,
    ))
}

fn parse_entry<S: AsRef<str>>(entry: &str, scene_objects: &[S]) -> Result<Primitive, MemoryError> {
    let (head, dest) = match entry.split_once(" -> ") {
        Some((h, d)) => (h, Some(parse_destination(d.trim())?)),
        None => (entry, None),
    };
    let mut words = head.split_whitespace();
    let (Some(verb), Some(target), None) = (words.next(), words.next(), words.next()) else {
        return Err(malformed(format!("entry {entry:?} is not `<verb> <target>`")));
    };
    let verb = Verb::parse(verb).ok_or_else(|| malformed(format!("unknown verb {verb:?}")))?;
    if !scene_objects.iter().any(|o| o.as_ref() == target) {
        return Err(MemoryError::UnknownObject(target.to_string()));
    }
    let target = ObjectId::new(target).map_err(|e| malformed(e.to_string()))?;
    Primitive::new(0, verb, target, dest).map_err(|e| malformed(e.to_string()))
}

fn parse_list<S: AsRef<str>>(list: &str, scene_objects: &[S]) -> Result<Vec<Primitive>, MemoryError> {
    let list = list.trim();
    if list == "-" {
        return Ok(Vec::new());
    }
    list.split(';')
        .map(|e| {
            let e = e.trim();
            if e.is_empty() {
                Err(malformed("empty entry"))
            } else {
                parse_entry(e, scene_objects)
            }
        })
        .collect()
}

/// Parses memory text produced by [`render_memory`], checking every target
/// against `scene_objects`.
pub fn parse_memory<S: AsRef<str>>(text: &str, scene_objects: &[S]) -> Result<PlanState, MemoryError> {
    let rest = text
        .trim()
        .strip_prefix("done:")
        .ok_or_else(|| malformed("missing `done:`"))?;
    let (done, remaining) = rest
        .split_once("| remaining:")
        .ok_or_else(|| malformed("missing `| remaining:`"))?;
    let completed = parse_list(done, scene_objects)?;
    let remaining = parse_list(remaining, scene_objects)?;
    Ok(PlanState::from_parts(completed, remaining))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::*;
    use crate::model::Plan;
    use proptest::prelude::*;

    const SCENE: [&str; 3] = ["cup", "sponge", "box"];

    #[test]
    fn renders_empty_prefix() {
        let s = PlanState::from_parts([], [grasp("cup")]);
        assert_eq!(render_memory(&s), "done: - | remaining: grasp cup");
    }

    #[test]
    fn renders_destination() {
        let s = PlanState::from_parts([grasp("cup")], [place("cup", 0.4, 0.2)]);
        assert_eq!(
            render_memory(&s),
            "done: grasp cup | remaining: place cup -> (0.4,0.2)"
        );
    }

    #[test]
    fn renders_empty_suffix() {
        let plan = Plan::new([grasp("cup"), place("cup", 0.4, 0.2)]);
        let text = render_memory(&plan.split(2));
        assert!(text.ends_with("| remaining: -"), "{text}");
    }

    #[test]
    fn coordinate_forms() {
        let cases = [(0, "0.0"), (400, "0.4"), (1000, "1.0"), (-250, "-0.25"), (-5, "-0.005"), (1234, "1.234")];
        for (mm, want) in cases {
            let mut s = String::new();
            write_coord(&mut s, mm);
            assert_eq!(s, want);
            assert_eq!(parse_coord(want).unwrap(), mm);
        }
        assert!(parse_coord("0.1234").is_err());
        assert!(parse_coord(".5").is_err());
        assert!(parse_coord("1e3").is_err());
    }

    #[test]
    fn parses_example() {
        let s = parse_memory("done: - | remaining: grasp cup", &SCENE).unwrap();
        assert_eq!(s, PlanState::from_parts([], [grasp("cup")]));
    }

    #[test]
    fn grammar_violations_are_malformed() {
        for bad in [
            "done - remaining",
            "done: grasp cup",
            "remaining: - | done: -",
            "done: grasp | remaining: -",
            "done: fly cup | remaining: -",
            "done: place cup | remaining: -",
            "done: grasp cup -> (0.1,0.2) | remaining: -",
            "done: grasp cup;; grasp box | remaining: -",
            "done: - | remaining: place cup -> 0.1,0.2",
        ] {
            assert!(
                matches!(parse_memory(bad, &SCENE), Err(MemoryError::Malformed(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn unknown_target_is_reported() {
        assert_eq!(
            parse_memory("done: - | remaining: grasp mug", &SCENE),
            Err(MemoryError::UnknownObject("mug".into()))
        );
    }

    fn arb_primitive() -> impl Strategy<Value = Primitive> {
        (
            prop::sample::select(Verb::ALL.to_vec()),
            prop::sample::select(SCENE.to_vec()),
            -3000i64..3000,
            -3000i64..3000,
        )
            .prop_map(|(verb, target, x, y)| {
                let dest = verb.takes_destination().then(|| Destination::from_mm(x, y));
                Primitive::new(0, verb, oid(target), dest).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn parse_inverts_render(
            steps in prop::collection::vec(arb_primitive(), 0..8),
            k in 0usize..9,
        ) {
            let k = k.min(steps.len());
            let state = PlanState::from_parts(steps[..k].to_vec(), steps[k..].to_vec());
            let text = render_memory(&state);
            prop_assert_eq!(parse_memory(&text, &SCENE).unwrap(), state);
        }
    }
}
