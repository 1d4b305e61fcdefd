//! Log pre-processing: abstracts variable content into placeholder tokens and
//! strips noise.
//!
//! Order is fixed: ANSI / section-marker pre-pass, then
//!
//! 1. URLs, file paths, directory paths, durations and versions become
//!    `<URL>`, `<FILEPATH>`, `<DIRPATH>`, `<DURATION>`, `<VERSION>`.
//! 2. Runs containing at least one letter and one digit become `<ID>`.
//! 3. Characters other than letters, digits and whitespace become spaces
//!    (placeholders are kept).
//! 4. Standalone numbers are removed, except HTTP status codes and exit codes.
//! 5. Single-letter tokens at the end of a line are removed.
//! 6. Whitespace runs collapse to one space; blank lines are dropped.
//! 7. Duplicate lines are removed, keeping the first occurrence.
//!
//! Placeholders are carried through the pipeline as private-use sentinel
//! characters so later rules treat them as atoms.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Placeholder {
    Url,
    FilePath,
    DirPath,
    Duration,
    Version,
    Id,
}

const SENTINEL_BASE: u32 = 0xE000;
const PLACEHOLDERS: [Placeholder; 6] = [
    Placeholder::Url,
    Placeholder::FilePath,
    Placeholder::DirPath,
    Placeholder::Duration,
    Placeholder::Version,
    Placeholder::Id,
];

impl Placeholder {
    fn sentinel(self) -> char {
        char::from_u32(SENTINEL_BASE + self as u32).unwrap()
    }

    fn from_sentinel(c: char) -> Option<Self> {
        let off = (c as u32).checked_sub(SENTINEL_BASE)?;
        PLACEHOLDERS.get(off as usize).copied()
    }
}

/// Replacement strings for each placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceholderTokens {
    pub url: String,
    pub filepath: String,
    pub dirpath: String,
    pub duration: String,
    pub version: String,
    pub id: String,
}

impl Default for PlaceholderTokens {
    fn default() -> Self {
        Self {
            url: "<URL>".into(),
            filepath: "<FILEPATH>".into(),
            dirpath: "<DIRPATH>".into(),
            duration: "<DURATION>".into(),
            version: "<VERSION>".into(),
            id: "<ID>".into(),
        }
    }
}

impl PlaceholderTokens {
    fn get(&self, p: Placeholder) -> &str {
        match p {
            Placeholder::Url => &self.url,
            Placeholder::FilePath => &self.filepath,
            Placeholder::DirPath => &self.dirpath,
            Placeholder::Duration => &self.duration,
            Placeholder::Version => &self.version,
            Placeholder::Id => &self.id,
        }
    }
}

/// Rule toggles and constants. Every rule is on by default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    /// Index `i` toggles rule `i + 1`.
    pub rules: [bool; 7],
    pub ansi_strip: bool,
    pub tokens: PlaceholderTokens,
    /// Keep 3-digit codes 100..=599 after `http` / `status`.
    pub protect_http_status: bool,
    /// Keep numbers right after `exit code` / `exit status`.
    pub protect_exit_codes: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            rules: [true; 7],
            ansi_strip: true,
            tokens: PlaceholderTokens::default(),
            protect_http_status: true,
            protect_exit_codes: true,
        }
    }
}

impl PrepConfig {
    /// Turns rule `n` (1-based) off. Out-of-range numbers are ignored.
    pub fn disable_rule(&mut self, n: usize) {
        if let Some(r) = n.checked_sub(1).and_then(|i| self.rules.get_mut(i)) {
            *r = false;
        }
    }

    fn rule(&self, n: usize) -> bool {
        self.rules[n - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedLog {
    pub text: String,
    pub original_bytes: usize,
    pub processed_bytes: usize,
    /// `1 - processed_bytes / original_bytes`; 0 for empty input.
    pub reduction: f64,
}

/// Runs the pre-processing pipeline on one raw log.
pub fn preprocess(raw: &str, cfg: &PrepConfig) -> ProcessedLog {
    let original_bytes = raw.len();
    let stripped;
    let mut text: &str = raw;
    if cfg.ansi_strip {
        stripped = strip_transport_noise(raw);
        text = &stripped;
    }

    let mut seen = BTreeSet::new();
    let mut out_lines: Vec<String> = Vec::new();
    for line in text.split(['\n', '\r']) {
        let mut line = encode_literal_placeholders(line, &cfg.tokens);
        if cfg.rule(1) {
            line = replace_urls(&line);
            line = replace_paths(&line);
            line = replace_durations(&line);
            line = replace_versions(&line);
        }
        if cfg.rule(2) {
            line = replace_ids(&line);
        }
        if cfg.rule(3) {
            line = drop_symbols(&line);
        } else {
            line = isolate_sentinels(&line);
        }
        let mut tokens: Vec<&str> = line.split_whitespace().collect();
        if cfg.rule(4) {
            tokens = drop_numbers(&tokens, cfg);
        }
        if cfg.rule(5) {
            while tokens.last().is_some_and(|t| is_single_letter(t)) {
                tokens.pop();
            }
        }
        let rendered = if cfg.rule(6) {
            if tokens.is_empty() {
                continue;
            }
            render(&tokens.join(" "), &cfg.tokens)
        } else {
            render(&line, &cfg.tokens)
        };
        if cfg.rule(7) && !seen.insert(rendered.clone()) {
            continue;
        }
        out_lines.push(rendered);
    }
    let text = out_lines.join("\n");
    let processed_bytes = text.len();
    let reduction = if original_bytes == 0 {
        0.0
    } else {
        1.0 - processed_bytes as f64 / original_bytes as f64
    };
    ProcessedLog { text, original_bytes, processed_bytes, reduction }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("undefined statistic: reduction over zero logs")]
pub struct EmptyLogSet;

pub fn reduction_stats(logs: &[ProcessedLog]) -> Result<ReductionStats, EmptyLogSet> {
    let r: Vec<f64> = logs.iter().map(|l| l.reduction).collect();
    let mean = crate::stats::mean(&r).ok_or(EmptyLogSet)?;
    Ok(ReductionStats {
        mean,
        median: crate::stats::median(&r).ok_or(EmptyLogSet)?,
        min: r.iter().copied().fold(f64::INFINITY, f64::min),
        max: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

// ---------------------------------------------------------------------------
// pre-pass

/// Removes ANSI escape sequences and GitLab `section_start:` / `section_end:`
/// markers. Sentinel code points in the input are blanked.
fn strip_transport_noise(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\x1b' {
            out.push(c);
            continue;
        }
        match chars.peek() {
            Some('[') => {
                chars.next();
                // parameters and intermediates, then one final byte
                while let Some(&n) = chars.peek() {
                    chars.next();
                    if ('\x40'..='\x7e').contains(&n) {
                        break;
                    }
                }
            }
            Some(']') => {
                chars.next();
                while let Some(n) = chars.next() {
                    if n == '\x07' {
                        break;
                    }
                    if n == '\x1b' && chars.peek() == Some(&'\\') {
                        chars.next();
                        break;
                    }
                }
            }
            Some(_) => {
                chars.next();
            }
            None => {}
        }
    }
    strip_section_markers(&out)
}

fn strip_section_markers(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    loop {
        let next = ["section_start:", "section_end:"]
            .iter()
            .filter_map(|m| rest.find(m).map(|i| (i, m.len())))
            .min();
        let Some((at, mlen)) = next else {
            out.push_str(rest);
            return out;
        };
        out.push_str(&rest[..at]);
        let mut tail = &rest[at + mlen..];
        // <timestamp>:<section name>[options]
        let digits = tail.bytes().take_while(u8::is_ascii_digit).count();
        tail = &tail[digits..];
        if let Some(t) = tail.strip_prefix(':') {
            let name = t
                .bytes()
                .take_while(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
                .count();
            tail = &t[name..];
            if tail.starts_with('[') {
                if let Some(close) = tail.find(']') {
                    tail = &tail[close + 1..];
                }
            }
        }
        rest = tail;
    }
}

fn encode_literal_placeholders(line: &str, tokens: &PlaceholderTokens) -> String {
    let mut s: String = line
        .chars()
        .map(|c| if Placeholder::from_sentinel(c).is_some() { ' ' } else { c })
        .collect();
    for p in PLACEHOLDERS {
        let lit = tokens.get(p);
        if !lit.is_empty() && s.contains(lit) {
            let mut buf = [0u8; 4];
            s = s.replace(lit, p.sentinel().encode_utf8(&mut buf));
        }
    }
    s
}

// ---------------------------------------------------------------------------
// rule 1

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_scheme_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '+' | '.' | '-')
}

/// `[a-zA-Z][a-zA-Z0-9+.-]*://\S+`
fn replace_urls(line: &str) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::with_capacity(line.len());
    let mut i = 0;
    while i < chars.len() {
        let Some(rel) = find_seq(&chars[i..], &[':', '/', '/']) else {
            out.extend(&chars[i..]);
            break;
        };
        let sep = i + rel;
        let mut run_start = sep;
        while run_start > i && is_scheme_char(chars[run_start - 1]) {
            run_start -= 1;
        }
        let start = (run_start..sep).find(|&k| chars[k].is_ascii_alphabetic());
        let body_ok = chars.get(sep + 3).is_some_and(|c| !c.is_whitespace());
        match start {
            Some(start) if body_ok => {
                out.extend(&chars[i..start]);
                out.push(Placeholder::Url.sentinel());
                let mut end = sep + 3;
                while end < chars.len() && !chars[end].is_whitespace() {
                    end += 1;
                }
                i = end;
            }
            _ => {
                out.extend(&chars[i..sep + 1]);
                i = sep + 1;
            }
        }
    }
    out
}

fn find_seq(hay: &[char], needle: &[char]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn is_path_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '~' | '@' | '+' | '%' | '/' | '\\')
}

/// Runs of path characters containing a separator and at least two
/// segments become `<FILEPATH>` (last segment has a dot) or `<DIRPATH>`.
fn replace_paths(line: &str) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::with_capacity(line.len());
    let mut i = 0;
    while i < chars.len() {
        let drive = chars[i].is_ascii_alphabetic()
            && chars.get(i + 1) == Some(&':')
            && chars.get(i + 2) == Some(&'\\')
            && (i == 0 || !is_path_char(chars[i - 1]));
        if !drive && !is_path_char(chars[i]) {
            out.push(chars[i]);
            i += 1;
            continue;
        }
        let start = i;
        let mut end = if drive { i + 2 } else { i };
        while end < chars.len() && is_path_char(chars[end]) {
            end += 1;
        }
        // trailing dots belong to the sentence, not the path
        let mut core_end = end;
        while core_end > start && chars[core_end - 1] == '.' {
            core_end -= 1;
        }
        match classify_path(&chars[start..core_end], drive) {
            Some(p) => {
                out.push(p.sentinel());
                out.extend(&chars[core_end..end]);
            }
            None => out.extend(&chars[start..end]),
        }
        i = end;
    }
    out
}

fn classify_path(run: &[char], drive: bool) -> Option<Placeholder> {
    let is_sep = |c: &char| *c == '/' || *c == '\\';
    if !run.iter().any(is_sep) {
        return None;
    }
    // protocol tokens such as HTTP/1.1
    let lower: String = run.iter().take(6).flat_map(|c| c.to_lowercase()).collect();
    let proto = ["http/", "https/"].iter().any(|p| {
        lower.starts_with(p) && run.get(p.len()).is_some_and(|c| c.is_ascii_digit())
    });
    if proto {
        return None;
    }
    let body = if drive { &run[2..] } else { run };
    let segments: Vec<&[char]> = body.split(is_sep).collect();
    if segments.len() < 2 {
        return None;
    }
    if !segments.iter().any(|s| s.iter().any(|c| c.is_alphabetic())) {
        return None;
    }
    let trailing_sep = body.last().is_some_and(is_sep);
    let last = segments.iter().rev().find(|s| !s.is_empty())?;
    if !trailing_sep && last.contains(&'.') {
        Some(Placeholder::FilePath)
    } else {
        Some(Placeholder::DirPath)
    }
}

const DURATION_UNITS: [&str; 7] = ["ms", "s", "sec", "m", "min", "h", "hr"];

/// Length of `\d+(\.\d+)?` at the start of `s`.
fn number_len(s: &[char]) -> usize {
    let int = s.iter().take_while(|c| c.is_ascii_digit()).count();
    if int == 0 {
        return 0;
    }
    if s.get(int) == Some(&'.') {
        let frac = s[int + 1..].iter().take_while(|c| c.is_ascii_digit()).count();
        if frac > 0 {
            return int + 1 + frac;
        }
    }
    int
}

/// Longest chain of number+unit pairs at the start of `s` that ends on a
/// word boundary.
fn duration_len(s: &[char]) -> Option<usize> {
    let n = number_len(s);
    if n == 0 {
        return None;
    }
    let mut best = None;
    for unit in DURATION_UNITS {
        let u: Vec<char> = unit.chars().collect();
        if !s[n..].starts_with(&u) {
            continue;
        }
        let end = n + u.len();
        let cand = if s.get(end).is_none_or(|&c| !is_word(c)) {
            Some(end)
        } else {
            duration_len(&s[end..]).map(|more| end + more)
        };
        best = best.max(cand);
    }
    best
}

fn at_word_start(chars: &[char], i: usize) -> bool {
    i == 0 || !is_word(chars[i - 1])
}

fn replace_durations(line: &str) -> String {
    replace_matches(line, Placeholder::Duration, |chars, i| {
        if !at_word_start(chars, i) {
            return None;
        }
        duration_len(&chars[i..])
    })
}

/// `\bv?\d+(\.\d+){1,3}\b`
fn replace_versions(line: &str) -> String {
    replace_matches(line, Placeholder::Version, |chars, i| {
        if !at_word_start(chars, i) {
            return None;
        }
        let start = if chars[i] == 'v' { i + 1 } else { i };
        let s = &chars[start..];
        let int = s.iter().take_while(|c| c.is_ascii_digit()).count();
        if int == 0 {
            return None;
        }
        // collect candidate ends after 1..=3 dotted parts, longest first
        let mut ends = Vec::new();
        let mut pos = int;
        for _ in 0..3 {
            if s.get(pos) != Some(&'.') {
                break;
            }
            let d = s[pos + 1..].iter().take_while(|c| c.is_ascii_digit()).count();
            if d == 0 {
                break;
            }
            pos += 1 + d;
            ends.push(pos);
        }
        ends.iter()
            .rev()
            .find(|&&e| s.get(e).is_none_or(|&c| !is_word(c)))
            .map(|&e| start - i + e)
    })
}

fn replace_matches(
    line: &str,
    p: Placeholder,
    matcher: impl Fn(&[char], usize) -> Option<usize>,
) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::with_capacity(line.len());
    let mut i = 0;
    while i < chars.len() {
        match matcher(&chars, i) {
            Some(len) if len > 0 => {
                out.push(p.sentinel());
                i += len;
            }
            _ => {
                out.push(chars[i]);
                i += 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// rules 2-5

fn is_id_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

fn replace_ids(line: &str) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::with_capacity(line.len());
    let mut i = 0;
    while i < chars.len() {
        if !is_id_char(chars[i]) {
            out.push(chars[i]);
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && is_id_char(chars[i]) {
            i += 1;
        }
        let run = &chars[start..i];
        if run.iter().any(|c| c.is_alphabetic()) && run.iter().any(char::is_ascii_digit) {
            out.push(Placeholder::Id.sentinel());
        } else {
            out.extend(run);
        }
    }
    out
}

fn drop_symbols(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    for c in line.chars() {
        if Placeholder::from_sentinel(c).is_some() {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else if c.is_alphabetic() || c.is_ascii_digit() || c.is_whitespace() {
            out.push(c);
        } else {
            out.push(' ');
        }
    }
    out
}

fn isolate_sentinels(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    for c in line.chars() {
        if Placeholder::from_sentinel(c).is_some() {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out
}

fn is_number(t: &str) -> bool {
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
}

fn drop_numbers<'a>(tokens: &[&'a str], cfg: &PrepConfig) -> Vec<&'a str> {
    let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut out = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        if !is_number(tok) {
            out.push(*tok);
            continue;
        }
        let prev1 = i.checked_sub(1).map(|k| lower[k].as_str());
        let prev2 = i.checked_sub(2).map(|k| lower[k].as_str());
        let exit_ctx = cfg.protect_exit_codes
            && prev2 == Some("exit")
            && matches!(prev1, Some("code" | "status"));
        let http_ctx = cfg.protect_http_status
            && [prev1, prev2].iter().any(|p| matches!(p, Some("http" | "status")))
            && tok.len() == 3
            && (100..=599).contains(&tok.parse::<u16>().unwrap_or(0));
        if exit_ctx || http_ctx {
            out.push(*tok);
        }
    }
    out
}

fn is_single_letter(t: &str) -> bool {
    let mut it = t.chars();
    matches!((it.next(), it.next()), (Some(c), None) if c.is_alphabetic())
}

fn render(line: &str, tokens: &PlaceholderTokens) -> String {
    let mut out = String::with_capacity(line.len() + 16);
    for c in line.chars() {
        match Placeholder::from_sentinel(c) {
            Some(p) => out.push_str(tokens.get(p)),
            None => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prep(s: &str) -> String {
        preprocess(s, &PrepConfig::default()).text
    }

    #[test]
    fn url_example() {
        assert_eq!(prep("fetch https://host/a?b=1 ok"), "fetch <URL> ok");
    }

    #[test]
    fn id_and_exit_code_example() {
        assert_eq!(prep("job abc123 exit code 137"), "job <ID> exit code 137");
    }

    #[test]
    fn filepath_number_and_duplicate_example() {
        assert_eq!(
            prep("error at /src/main.c line 42\nerror at /src/main.c line 42"),
            "error at <FILEPATH> line"
        );
    }

    #[test]
    fn http_status_is_protected() {
        assert_eq!(prep("HTTP 503 from server"), "HTTP 503 from server");
        assert_eq!(prep("status: 404 not found"), "status 404 not found");
        assert_eq!(prep("HTTP/1.1 502 Bad Gateway"), "HTTP <VERSION> 502 Bad Gateway");
        assert_eq!(prep("returned 404"), "returned");
        assert_eq!(prep("status 42"), "status");
        assert_eq!(prep("exit status 2"), "exit status 2");
    }

    #[test]
    fn rule1_categories() {
        assert_eq!(prep("reading ./src/lib.rs"), "reading <FILEPATH>");
        assert_eq!(prep("cd /usr/local/bin/"), "cd <DIRPATH>");
        assert_eq!(prep("cd /usr/local"), "cd <DIRPATH>");
        assert_eq!(prep(r"open C:\Users\ci\build.log"), "open <FILEPATH>");
        assert_eq!(prep("took 12.5s total"), "took <DURATION> total");
        assert_eq!(prep("took 1m30s total"), "took <DURATION> total");
        assert_eq!(prep("waited 250ms"), "waited <DURATION>");
        assert_eq!(prep("rustc v1.70.0 nightly"), "rustc <VERSION> nightly");
        assert_eq!(prep("host 10.0.0.1 down"), "host <VERSION> down");
        assert_eq!(prep("see git+ssh://git@host/repo.git now"), "see <URL> now");
    }

    #[test]
    fn url_takes_precedence_over_versions_inside() {
        assert_eq!(prep("get https://x.io/v1.2.3/pkg"), "get <URL>");
    }

    #[test]
    fn path_with_line_column_suffix() {
        assert_eq!(prep("error: src/main.rs:42:5 mismatched"), "error <FILEPATH> mismatched");
    }

    #[test]
    fn symbols_split_words() {
        assert_eq!(prep("[ERROR] (build) failed!"), "ERROR build failed");
        assert_eq!(prep("key=value;other"), "key value other");
    }

    #[test]
    fn trailing_single_letters() {
        assert_eq!(prep("compiling foo a b"), "compiling foo");
        assert_eq!(prep("a b c"), "");
        assert_eq!(prep("a test here"), "a test here");
        assert_eq!(prep("foo x 12"), "foo");
    }

    #[test]
    fn whitespace_and_blank_lines() {
        assert_eq!(prep("  a   word \n\n\t\n next   line "), "a word\nnext line");
    }

    #[test]
    fn ansi_and_sections_are_stripped() {
        let raw = "\x1b[0Ksection_start:1700000000:prepare_script[collapsed=true]\r\x1b[0K\x1b[36;1mPreparing environment\x1b[0;m\n\x1b[32;1mJob succeeded\x1b[0;m\nsection_end:1700000001:prepare_script\r\x1b[0K";
        assert_eq!(prep(raw), "Preparing environment\nJob succeeded");
        let mut keep = PrepConfig::default();
        keep.ansi_strip = false;
        assert!(preprocess(raw, &keep).text.contains("section"));
    }

    #[test]
    fn literal_placeholders_survive() {
        assert_eq!(prep("xx <URL> <ID> yy"), "xx <URL> <ID> yy");
        assert_eq!(prep("x < y > zz"), "x y zz");
        assert_eq!(prep("<<DIRPATH>>"), "<DIRPATH>");
    }

    #[test]
    fn sentinel_codepoints_in_input_are_ignored() {
        assert_eq!(prep("foo \u{E000} bar"), "foo bar");
    }

    #[test]
    fn rules_can_be_disabled() {
        let mut cfg = PrepConfig::default();
        cfg.disable_rule(7);
        assert_eq!(preprocess("xx\nxx", &cfg).text, "xx\nxx");
        let mut cfg = PrepConfig::default();
        cfg.disable_rule(4);
        assert_eq!(preprocess("count 42 items", &cfg).text, "count 42 items");
        let mut cfg = PrepConfig::default();
        cfg.disable_rule(2);
        cfg.disable_rule(4);
        assert_eq!(preprocess("job abc123", &cfg).text, "job abc123");
        cfg.disable_rule(99);
    }

    #[test]
    fn empty_input() {
        let p = preprocess("", &PrepConfig::default());
        assert_eq!(p.text, "");
        assert_eq!(p.reduction, 0.0);
    }

    #[test]
    fn very_short_matches_can_grow_the_text() {
        // placeholder expansion is longer than the token it replaces
        let p = preprocess("a1", &PrepConfig::default());
        assert_eq!(p.text, "<ID>");
        assert!(p.reduction < 0.0);
    }

    #[test]
    fn reduction_stats_examples() {
        let half = ProcessedLog { text: "ab".into(), original_bytes: 4, processed_bytes: 2, reduction: 0.5 };
        assert_eq!(reduction_stats(&[half]).unwrap().mean, 0.5);
        let gone = preprocess("12 34\n56", &PrepConfig::default());
        assert_eq!(gone.text, "");
        assert_eq!(reduction_stats(&[gone.clone(), gone]).unwrap().mean, 1.0);
        assert_eq!(reduction_stats(&[]), Err(EmptyLogSet));
    }
}
