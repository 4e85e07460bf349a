//! Parsers for the response grammars. Every parser is total: it returns a
//! value or a [`ParseError`] locating the offending text.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::templates::SEPARATOR;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{schema}: {message} at bytes {start}..{end}: {excerpt:?}")]
pub struct ParseError {
    pub schema: &'static str,
    pub message: String,
    pub start: usize,
    pub end: usize,
    pub excerpt: String,
}

impl ParseError {
    fn new(schema: &'static str, message: impl Into<String>, text: &str, start: usize, end: usize) -> Self {
        let end = end.min(text.len()).max(start.min(text.len()));
        let start = start.min(end);
        let mut s = start;
        while !text.is_char_boundary(s) {
            s -= 1;
        }
        let mut e = end;
        while !text.is_char_boundary(e) {
            e += 1;
        }
        let excerpt: String = text[s..e].chars().take(200).collect();
        Self {
            schema,
            message: message.into(),
            start: s,
            end: e,
            excerpt,
        }
    }
}

// ---------------------------------------------------------------- idea_list

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_]*[ \t]*\n?(.*?)```").unwrap());

/// Parses a Python-style list of string literals, bare or inside a code fence.
pub fn parse_idea_list(text: &str) -> Result<Vec<String>, ParseError> {
    const S: &str = "idea_list";
    // prefer a fenced block that holds a list
    let (body, offset) = FENCE
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .find(|m| m.as_str().contains('['))
        .map(|m| (m.as_str(), m.start()))
        .unwrap_or((text, 0));
    let open = body
        .find('[')
        .ok_or_else(|| ParseError::new(S, "no list found", text, offset, offset + body.len()))?;
    let bytes = body.as_bytes();
    let mut items = Vec::new();
    let mut i = open + 1;
    let err = |msg: &str, at: usize| ParseError::new(S, msg, text, offset + at, offset + at + 40);
    loop {
        while i < bytes.len() && (bytes[i] as char).is_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return Err(err("unterminated list", open));
        }
        match bytes[i] {
            b']' => return Ok(items),
            q @ (b'\'' | b'"') => {
                let start = i;
                i += 1;
                let mut s = String::new();
                loop {
                    if i >= bytes.len() {
                        return Err(err("unterminated string", start));
                    }
                    let c = bytes[i];
                    if c == q {
                        i += 1;
                        break;
                    }
                    if c == b'\\' && i + 1 < bytes.len() {
                        match bytes[i + 1] {
                            b'n' => s.push('\n'),
                            b't' => s.push('\t'),
                            other => s.push(other as char),
                        }
                        i += 2;
                        continue;
                    }
                    // copy one full UTF-8 character
                    let ch = body[i..].chars().next().expect("in bounds");
                    s.push(ch);
                    i += ch.len_utf8();
                }
                let s = s.trim().to_string();
                if !s.is_empty() {
                    items.push(s);
                }
                while i < bytes.len() && (bytes[i] as char).is_whitespace() {
                    i += 1;
                }
                match bytes.get(i) {
                    Some(b',') => i += 1,
                    Some(b']') => {}
                    _ => return Err(err("expected `,` or `]` after string", i)),
                }
            }
            _ => return Err(err("expected a quoted string", i)),
        }
    }
}

// ----------------------------------------------------------- solution_paths

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionPath {
    pub description: String,
    pub ideas: Vec<String>,
}

static PATH_MARK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"===SOLUTION_PATH_(\d+)===").unwrap());

pub fn parse_solution_paths(text: &str) -> Result<Vec<SolutionPath>, ParseError> {
    const S: &str = "solution_paths";
    let marks: Vec<(usize, usize)> = PATH_MARK.find_iter(text).map(|m| (m.start(), m.end())).collect();
    if marks.is_empty() {
        return Err(ParseError::new(S, "no ===SOLUTION_PATH_n=== marker", text, 0, 80));
    }
    let mut paths = Vec::new();
    for (k, &(_, body_start)) in marks.iter().enumerate() {
        let body_end = marks.get(k + 1).map_or(text.len(), |m| m.0);
        let body = &text[body_start..body_end];
        let mut description = Vec::new();
        let mut ideas = Vec::new();
        for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
                Some(idea) if !idea.trim().is_empty() => ideas.push(idea.trim().to_string()),
                Some(_) => {}
                None => description.push(line),
            }
        }
        if ideas.is_empty() {
            return Err(ParseError::new(S, "solution path has no `- ` ideas", text, marks[k].0, body_end));
        }
        paths.push(SolutionPath {
            description: description.join("\n"),
            ideas,
        });
    }
    Ok(paths)
}

// ------------------------------------------------------------ cell_response

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellResponse {
    pub goal: String,
    /// `None` signals the agent considers its work finished.
    pub code: Option<String>,
    pub validation_submission: Option<String>,
    pub submission: Option<String>,
}

fn tag<'a>(text: &'a str, name: &str) -> Option<(&'a str, usize, usize)> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let start = text.find(&open)?;
    let inner = start + open.len();
    let end = text[inner..].find(&close).map(|e| inner + e)?;
    Some((&text[inner..end], start, end + close.len()))
}

fn optional_value(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty() && !t.eq_ignore_ascii_case("none")).then(|| t.to_string())
}

fn strip_fence(code: &str) -> &str {
    let t = code.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map_or("", |(_, r)| r);
        return rest.strip_suffix("```").unwrap_or(rest).trim_end();
    }
    code
}

pub fn parse_cell_response(text: &str) -> Result<CellResponse, ParseError> {
    const S: &str = "cell_response";
    let (code, _, _) = tag(text, "code")
        .ok_or_else(|| ParseError::new(S, "missing <code>...</code>", text, 0, 80))?;
    let goal = tag(text, "goal").map(|g| g.0.trim().to_string()).unwrap_or_default();
    let code = strip_fence(code);
    let code = (!code.trim().is_empty() && code.trim() != "None").then(|| {
        code.trim_matches('\n').to_string()
    });
    let vs = tag(text, "validation_submission");
    let sub = tag(text, "submission");
    let validation_submission = vs.and_then(|v| optional_value(v.0));
    let submission = sub.and_then(|v| optional_value(v.0));
    if validation_submission.is_some() != submission.is_some() {
        let (start, end) = vs.or(sub).map_or((0, text.len()), |t| (t.1, t.2));
        return Err(ParseError::new(
            S,
            "validation_submission and submission must be both set or both empty",
            text,
            start,
            end,
        ));
    }
    Ok(CellResponse {
        goal,
        code,
        validation_submission,
        submission,
    })
}

// ----------------------------------------------------------- monitor_action

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorAction {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorDecision {
    pub action: MonitorAction,
    pub explanation: String,
}

pub fn parse_monitor_action(text: &str) -> Result<MonitorDecision, ParseError> {
    const S: &str = "monitor_action";
    let (a, start, end) =
        tag(text, "action").ok_or_else(|| ParseError::new(S, "missing <action>...</action>", text, 0, 80))?;
    let action = match a.trim().to_ascii_uppercase().as_str() {
        "CONTINUE" => MonitorAction::Continue,
        "STOP" => MonitorAction::Stop,
        _ => return Err(ParseError::new(S, "action must be CONTINUE or STOP", text, start, end)),
    };
    let explanation = tag(text, "explanation").map(|e| e.0.trim().to_string()).unwrap_or_default();
    Ok(MonitorDecision { action, explanation })
}

// ------------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub name: String,
    pub novelty: f64,
    pub feasibility: f64,
    pub effectiveness: f64,
    pub efficiency: f64,
    pub confidence: f64,
}

impl ComponentScore {
    pub fn scores(&self) -> [f64; 5] {
        [self.novelty, self.feasibility, self.effectiveness, self.efficiency, self.confidence]
    }

    pub fn scores_mut(&mut self) -> [&mut f64; 5] {
        [
            &mut self.novelty,
            &mut self.feasibility,
            &mut self.effectiveness,
            &mut self.efficiency,
            &mut self.confidence,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedReport {
    pub pipeline: String,
    pub code_abstract: String,
    pub components: Vec<ComponentScore>,
    pub weaknesses: String,
}

static SECTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[ \t\-*]*\**(pipeline|code abstract|summary|weaknesses(?: and suggestions)?)\**[ \t]*:\**[ \t]*")
        .unwrap()
});
static SCORE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^[\-*\s]*\**(novelty|feasibility|effectiveness|efficiency|confidence)\**\s*:\s*\**\s*(-?\d+(?:\.\d+)?)")
        .unwrap()
});
static COMPONENT_EQ: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^===\s*(.+?)\s*===$").unwrap());
static COMPONENT_DASH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[-*]\s+(.+?):\s*$").unwrap());

pub fn parse_report(text: &str) -> Result<ParsedReport, ParseError> {
    const S: &str = "report";
    let heads: Vec<(String, usize, usize)> = SECTION
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).unwrap();
            (c[1].to_ascii_lowercase(), m.start(), m.end())
        })
        .collect();
    let mut report = ParsedReport::default();
    let mut summary: Option<(&str, usize)> = None;
    for (k, (name, _, body_start)) in heads.iter().enumerate() {
        let body_end = heads.get(k + 1).map_or(text.len(), |h| h.1);
        let body = &text[*body_start..body_end];
        match name.as_str() {
            "pipeline" if report.pipeline.is_empty() => report.pipeline = body.trim().to_string(),
            "code abstract" => report.code_abstract = body.trim().to_string(),
            "summary" => summary = Some((body, *body_start)),
            n if n.starts_with("weaknesses") => report.weaknesses = body.trim().to_string(),
            _ => {}
        }
    }
    if let Some((body, base)) = summary {
        let mut current: Option<(String, [Option<f64>; 5], usize)> = None;
        let finish = |c: Option<(String, [Option<f64>; 5], usize)>,
                          out: &mut Vec<ComponentScore>|
         -> Result<(), ParseError> {
            let Some((name, s, at)) = c else { return Ok(()) };
            let missing: Vec<&str> = ["novelty", "feasibility", "effectiveness", "efficiency", "confidence"]
                .iter()
                .zip(s.iter())
                .filter(|(_, v)| v.is_none())
                .map(|(n, _)| *n)
                .collect();
            if !missing.is_empty() {
                return Err(ParseError::new(
                    S,
                    format!("component `{name}` lacks {}", missing.join(", ")),
                    text,
                    at,
                    at + name.len() + 8,
                ));
            }
            out.push(ComponentScore {
                name,
                novelty: s[0].unwrap(),
                feasibility: s[1].unwrap(),
                effectiveness: s[2].unwrap(),
                efficiency: s[3].unwrap(),
                confidence: s[4].unwrap(),
            });
            Ok(())
        };
        let mut offset = base;
        for raw in body.split_inclusive('\n') {
            let line = raw.trim();
            let line_at = offset;
            offset += raw.len();
            if let Some(c) = SCORE.captures(line) {
                let Some(cur) = current.as_mut() else {
                    return Err(ParseError::new(S, "score outside any component", text, line_at, line_at + raw.len()));
                };
                let idx = match c[1].to_ascii_lowercase().as_str() {
                    "novelty" => 0,
                    "feasibility" => 1,
                    "effectiveness" => 2,
                    "efficiency" => 3,
                    _ => 4,
                };
                cur.1[idx] = c[2].parse().ok();
                continue;
            }
            let name = COMPONENT_EQ
                .captures(line)
                .or_else(|| COMPONENT_DASH.captures(line))
                .map(|c| c[1].trim().trim_matches('*').to_string());
            if let Some(name) = name {
                if name.eq_ignore_ascii_case("rationale") {
                    continue;
                }
                finish(current.take(), &mut report.components)?;
                current = Some((name, [None; 5], line_at));
            }
        }
        finish(current.take(), &mut report.components)?;
    }
    if report.pipeline.is_empty() && report.components.is_empty() {
        return Err(ParseError::new(S, "no Pipeline section and no scored components", text, 0, 80));
    }
    Ok(report)
}

// --------------------------------------------------------------- draft_list

pub fn parse_draft_list(text: &str) -> Result<Vec<String>, ParseError> {
    let drafts: Vec<String> = text
        .split(SEPARATOR)
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .map(str::to_string)
        .collect();
    if drafts.is_empty() {
        return Err(ParseError::new("draft_list", "no drafts", text, 0, 80));
    }
    Ok(drafts)
}

// ---------------------------------------------------------- script_response

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptResponse {
    /// `None` when the model reports both scripts finished.
    pub current_file: Option<String>,
    pub explanation: String,
    pub code: Option<String>,
}

fn fenced<'a>(text: &'a str, lang: &str) -> Option<(&'a str, usize)> {
    let open = format!("```{lang}");
    let mut from = 0;
    while let Some(p) = text[from..].find(&open) {
        let start = from + p;
        let after = start + open.len();
        // the info string must end here
        if text[after..].starts_with('\n') || text[after..].starts_with("\r\n") {
            let body_start = after + text[after..].find('\n').unwrap() + 1;
            let end = text[body_start..].find("```")? + body_start;
            return Some((&text[body_start..end], start));
        }
        from = after;
    }
    None
}

pub fn parse_script_response(text: &str) -> Result<ScriptResponse, ParseError> {
    const S: &str = "script_response";
    let (file, at) = fenced(text, "current_file")
        .ok_or_else(|| ParseError::new(S, "missing ```current_file block", text, 0, 80))?;
    let current_file = optional_value(file);
    let explanation = fenced(text, "explanation").map(|e| e.0.trim().to_string()).unwrap_or_default();
    let code = fenced(text, "python").and_then(|c| optional_value(c.0).map(|_| c.0.to_string()));
    match (&current_file, &code) {
        (Some(f), None) => Err(ParseError::new(S, format!("no code given for {f}"), text, at, at + 40)),
        (Some(f), Some(_)) if f != "split_dataset.py" && f != "evaluate.py" => Err(ParseError::new(
            S,
            format!("unexpected file `{f}`"),
            text,
            at,
            at + 40,
        )),
        _ => Ok(ScriptResponse {
            current_file,
            explanation,
            code,
        }),
    }
}
