//! Praat TextGrid reader for the long (`key = value`) and short (bare value)
//! text serializations.
//!
//! Only interval tiers are kept. Point tiers (`TextTier`) are parsed so the
//! rest of the file can be read, then dropped with a warning diagnostic.
//! A serializer for both syntaxes is provided for fixtures and round-trip
//! checks; it is not meant as an editing API.

use std::fmt;
use std::fmt::Write as _;

/// Tolerance, in seconds, for every time comparison made on parsed grids.
pub const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl Interval {
    pub fn new(start: f64, end: f64, label: impl Into<String>) -> Self {
        Interval {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Empty-label intervals are silence / spacers.
    pub fn is_spacer(&self) -> bool {
        self.label.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTier {
    pub name: String,
    pub xmin: f64,
    pub xmax: f64,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextGrid {
    pub xmin: f64,
    pub xmax: f64,
    pub tiers: Vec<IntervalTier>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    /// 1-based source line.
    pub line: usize,
    pub severity: Severity,
    pub message: String,
}

impl ParseDiagnostic {
    fn fatal(line: usize, message: impl Into<String>) -> Self {
        ParseDiagnostic {
            line: line.max(1),
            severity: Severity::Fatal,
            message: message.into(),
        }
    }

    fn warning(line: usize, message: impl Into<String>) -> Self {
        ParseDiagnostic {
            line: line.max(1),
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn is_fatal(&self) -> bool {
        self.severity == Severity::Fatal
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Fatal => "error",
        };
        write!(f, "line {}: {}: {}", self.line, sev, self.message)
    }
}

/// A successfully parsed grid together with any non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub grid: TextGrid,
    pub warnings: Vec<ParseDiagnostic>,
}

/// Parsing failed. Always holds at least one fatal diagnostic (the last one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParseError {
    pub fn fatal(&self) -> &ParseDiagnostic {
        self.diagnostics
            .iter()
            .find(|d| d.is_fatal())
            .expect("parse error without fatal diagnostic")
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.fatal())
    }
}

impl std::error::Error for ParseError {}

/// Decode raw file bytes: UTF-16 (LE/BE) when a BOM says so, UTF-8 otherwise.
pub fn decode_text(bytes: &[u8]) -> Result<String, ParseDiagnostic> {
    let utf16 = |body: &[u8], little: bool| -> Result<String, ParseDiagnostic> {
        if !body.len().is_multiple_of(2) {
            return Err(ParseDiagnostic::fatal(1, "UTF-16 content has an odd byte length"));
        }
        let units: Vec<u16> = body
            .chunks_exact(2)
            .map(|p| {
                if little {
                    u16::from_le_bytes([p[0], p[1]])
                } else {
                    u16::from_be_bytes([p[0], p[1]])
                }
            })
            .collect();
        String::from_utf16(&units).map_err(|_| ParseDiagnostic::fatal(1, "content is not valid UTF-16"))
    };
    match bytes {
        [0xEF, 0xBB, 0xBF, rest @ ..] => std::str::from_utf8(rest)
            .map(str::to_owned)
            .map_err(|e| utf8_error(rest, e)),
        [0xFF, 0xFE, rest @ ..] => utf16(rest, true),
        [0xFE, 0xFF, rest @ ..] => utf16(rest, false),
        _ => std::str::from_utf8(bytes)
            .map(str::to_owned)
            .map_err(|e| utf8_error(bytes, e)),
    }
}

fn utf8_error(bytes: &[u8], e: std::str::Utf8Error) -> ParseDiagnostic {
    let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
    ParseDiagnostic::fatal(line, "content is not valid UTF-8")
}

/// Parse TextGrid file content given as raw bytes (UTF-8 or UTF-16 with BOM).
pub fn parse_textgrid(content: &[u8]) -> Result<Parsed, ParseError> {
    let text = decode_text(content).map_err(|d| ParseError { diagnostics: vec![d] })?;
    parse_textgrid_str(&text)
}

/// Parse TextGrid content that is already decoded.
pub fn parse_textgrid_str(text: &str) -> Result<Parsed, ParseError> {
    let tokens = tokenize(text).map_err(|d| ParseError { diagnostics: vec![d] })?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        long: false,
        warnings: Vec::new(),
    };
    match parser.parse() {
        Ok(grid) => Ok(Parsed {
            grid,
            warnings: parser.warnings,
        }),
        Err(fatal) => {
            let mut diagnostics = parser.warnings;
            diagnostics.push(fatal);
            Err(ParseError { diagnostics })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Str(String),
    Word(String),
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    line: usize,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, ParseDiagnostic> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1usize;
    while let Some(&c) = chars.peek() {
        if c == '\n' {
            line += 1;
            chars.next();
        } else if c.is_whitespace() || c == '\u{feff}' {
            chars.next();
        } else if c == '!' {
            // comment to end of line
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
            }
        } else if c == '"' {
            let start_line = line;
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    None => {
                        return Err(ParseDiagnostic::fatal(start_line, "unterminated string"));
                    }
                    Some('"') => {
                        if chars.peek() == Some(&'"') {
                            chars.next();
                            s.push('"');
                        } else {
                            break;
                        }
                    }
                    Some(ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        s.push(ch);
                    }
                }
            }
            out.push(Tok {
                kind: TokKind::Str(s),
                line: start_line,
            });
        } else {
            let mut w = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() || c == '"' {
                    break;
                }
                w.push(c);
                chars.next();
            }
            out.push(Tok {
                kind: TokKind::Word(w),
                line,
            });
        }
    }
    Ok(out)
}

enum Fail {
    Eof,
    Diag(ParseDiagnostic),
}

impl From<ParseDiagnostic> for Fail {
    fn from(d: ParseDiagnostic) -> Self {
        Fail::Diag(d)
    }
}

type Step<T> = Result<T, Fail>;

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
    long: bool,
    warnings: Vec<ParseDiagnostic>,
}

fn is_decoration(w: &str) -> bool {
    w == "item" || w == "intervals" || w == "points" || w.ends_with(':') || w.starts_with('[')
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn current_line(&self) -> usize {
        self.peek().or_else(|| self.tokens.last()).map_or(1, |t| t.line)
    }

    fn next(&mut self) -> Step<Tok> {
        let t = self.tokens.get(self.pos).cloned().ok_or(Fail::Eof)?;
        self.pos += 1;
        Ok(t)
    }

    fn expect_word(&mut self, word: &str, what: &str) -> Step<usize> {
        let t = self.next()?;
        match &t.kind {
            TokKind::Word(w) if w == word => Ok(t.line),
            _ => Err(ParseDiagnostic::fatal(t.line, format!("malformed {what}: expected `{word}`")).into()),
        }
    }

    fn skip_decoration(&mut self) {
        while let Some(Tok {
            kind: TokKind::Word(w), ..
        }) = self.peek()
        {
            if is_decoration(w) {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// In long format consume `key =`; returns the line of the key.
    fn key(&mut self, keys: &[&str]) -> Step<Option<usize>> {
        if !self.long {
            return Ok(None);
        }
        self.skip_decoration();
        let t = self.next()?;
        match &t.kind {
            TokKind::Word(w) if keys.contains(&w.as_str()) => {}
            _ => return Err(ParseDiagnostic::fatal(t.line, format!("expected key `{}`", keys[0])).into()),
        }
        self.expect_word("=", "key/value pair")?;
        Ok(Some(t.line))
    }

    fn number(&mut self, keys: &[&str], what: &str) -> Step<(f64, usize)> {
        let key_line = self.key(keys)?;
        let t = self.next()?;
        let line = key_line.unwrap_or(t.line);
        match &t.kind {
            TokKind::Word(w) => match w.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok((v, line)),
                _ => Err(ParseDiagnostic::fatal(t.line, format!("non-numeric {what} `{w}`")).into()),
            },
            TokKind::Str(s) => Err(ParseDiagnostic::fatal(t.line, format!("non-numeric {what} \"{s}\"")).into()),
        }
    }

    fn count(&mut self, what: &str) -> Step<usize> {
        self.key(&["size"])?;
        let t = self.next()?;
        match &t.kind {
            TokKind::Word(w) => w
                .parse::<usize>()
                .map_err(|_| ParseDiagnostic::fatal(t.line, format!("invalid {what} count `{w}`")).into()),
            TokKind::Str(_) => Err(ParseDiagnostic::fatal(t.line, format!("invalid {what} count")).into()),
        }
    }

    fn string(&mut self, key: &str, what: &str) -> Step<(String, usize)> {
        let key_line = self.key(&[key])?;
        let t = self.next()?;
        match t.kind {
            TokKind::Str(s) => Ok((s, key_line.unwrap_or(t.line))),
            TokKind::Word(w) => {
                Err(ParseDiagnostic::fatal(t.line, format!("expected quoted {what}, found `{w}`")).into())
            }
        }
    }

    fn header(&mut self) -> Result<(), ParseDiagnostic> {
        let bad = |p: &Parser| ParseDiagnostic::fatal(p.current_line(), "malformed header");
        let expect = |p: &mut Parser, words: &[&str]| -> Result<String, ParseDiagnostic> {
            for w in words {
                match p.next() {
                    Ok(Tok {
                        kind: TokKind::Word(x), ..
                    }) if x == *w => {}
                    _ => return Err(bad(p)),
                }
            }
            match p.next() {
                Ok(Tok {
                    kind: TokKind::Str(s), ..
                }) => Ok(s),
                _ => Err(bad(p)),
            }
        };
        let file_type = expect(self, &["File", "type", "="])?;
        if !file_type.starts_with("ooTextFile") {
            return Err(ParseDiagnostic::fatal(
                1,
                format!("malformed header: unsupported file type \"{file_type}\""),
            ));
        }
        let class = expect(self, &["Object", "class", "="])?;
        if class != "TextGrid" {
            return Err(ParseDiagnostic::fatal(
                self.current_line(),
                format!("malformed header: object class \"{class}\" is not TextGrid"),
            ));
        }
        Ok(())
    }

    fn parse(&mut self) -> Result<TextGrid, ParseDiagnostic> {
        self.header()?;
        self.long = matches!(
            self.peek(),
            Some(Tok { kind: TokKind::Word(w), .. }) if w == "xmin"
        );
        let eof_header =
            |p: &Parser| ParseDiagnostic::fatal(p.current_line(), "malformed header: unexpected end of file");
        let lift = |p: &Parser, f: Fail, eof: &dyn Fn(&Parser) -> ParseDiagnostic| match f {
            Fail::Eof => eof(p),
            Fail::Diag(d) => d,
        };

        let (xmin, line) = self.number(&["xmin"], "time").map_err(|f| lift(self, f, &eof_header))?;
        let (xmax, _) = self.number(&["xmax"], "time").map_err(|f| lift(self, f, &eof_header))?;
        if xmin > xmax {
            return Err(ParseDiagnostic::fatal(
                line,
                format!("grid xmin {xmin} exceeds xmax {xmax}"),
            ));
        }
        let exists = self.tiers_flag().map_err(|f| lift(self, f, &eof_header))?;
        let declared = if exists {
            self.count("tier").map_err(|f| lift(self, f, &eof_header))?
        } else {
            0
        };

        let mut tiers = Vec::new();
        for index in 0..declared {
            let eof_tier = move |p: &Parser| {
                ParseDiagnostic::fatal(
                    p.current_line(),
                    format!(
                        "tier count mismatch: {declared} tiers declared, file ends inside tier {}",
                        index + 1
                    ),
                )
            };
            if self.peek().is_none() {
                return Err(eof_tier(self));
            }
            let tier = self.tier(xmin, xmax).map_err(|f| lift(self, f, &eof_tier))?;
            if let Some(t) = tier {
                tiers.push(t);
            }
        }
        if let Some(t) = self.peek() {
            return Err(ParseDiagnostic::fatal(
                t.line,
                format!("tier count mismatch: content found after the {declared} declared tiers"),
            ));
        }
        Ok(TextGrid { xmin, xmax, tiers })
    }

    fn tiers_flag(&mut self) -> Step<bool> {
        if self.long {
            self.skip_decoration();
            self.expect_word("tiers?", "header")?;
        }
        let t = self.next()?;
        match &t.kind {
            TokKind::Word(w) if w == "<exists>" => Ok(true),
            TokKind::Word(w) if w == "<absent>" => Ok(false),
            _ => Err(ParseDiagnostic::fatal(t.line, "malformed header: expected <exists> or <absent>").into()),
        }
    }

    fn tier(&mut self, grid_min: f64, grid_max: f64) -> Step<Option<IntervalTier>> {
        let (class, line) = self.string("class", "tier class")?;
        let (name, _) = self.string("name", "tier name")?;
        let (xmin, _) = self.number(&["xmin"], "time")?;
        let (xmax, _) = self.number(&["xmax"], "time")?;
        if xmin > xmax {
            return Err(
                ParseDiagnostic::fatal(line, format!("tier \"{name}\": xmin {xmin} exceeds xmax {xmax}")).into(),
            );
        }
        if xmin < grid_min - TIME_TOLERANCE || xmax > grid_max + TIME_TOLERANCE {
            return Err(ParseDiagnostic::fatal(
                line,
                format!("tier \"{name}\" range [{xmin}, {xmax}] lies outside the grid range [{grid_min}, {grid_max}]"),
            )
            .into());
        }
        match class.as_str() {
            "IntervalTier" => {
                let declared = self.count("interval")?;
                let mut intervals: Vec<Interval> = Vec::with_capacity(declared.min(4096));
                for i in 0..declared {
                    let read = |p: &mut Parser| -> Step<(Interval, usize)> {
                        let (start, line) = p.number(&["xmin"], "time")?;
                        let (end, _) = p.number(&["xmax"], "time")?;
                        let (label, _) = p.string("text", "interval label")?;
                        Ok((Interval { start, end, label }, line))
                    };
                    let (iv, iv_line) = read(self).map_err(|f| match f {
                        Fail::Eof => Fail::Diag(ParseDiagnostic::fatal(
                            self.current_line(),
                            format!(
                                "interval count mismatch: tier \"{name}\" declares {declared} intervals, file ends at interval {}",
                                i + 1
                            ),
                        )),
                        d => d,
                    })?;
                    check_interval(&name, &iv, intervals.last(), xmin, xmax, iv_line)?;
                    intervals.push(iv);
                }
                if self.long {
                    if let Some(Tok {
                        kind: TokKind::Word(w),
                        line,
                    }) = self.peek()
                    {
                        if w == "intervals" {
                            return Err(ParseDiagnostic::fatal(
                                *line,
                                format!(
                                    "interval count mismatch: tier \"{name}\" declares {declared} intervals but has more"
                                ),
                            )
                            .into());
                        }
                    }
                }
                Ok(Some(IntervalTier {
                    name,
                    xmin,
                    xmax,
                    intervals,
                }))
            }
            "TextTier" => {
                let declared = self.count("point")?;
                for i in 0..declared {
                    let read = |p: &mut Parser| -> Step<()> {
                        p.number(&["number", "time"], "time")?;
                        p.string("mark", "point mark")?;
                        Ok(())
                    };
                    read(self).map_err(|f| match f {
                        Fail::Eof => Fail::Diag(ParseDiagnostic::fatal(
                            self.current_line(),
                            format!(
                                "point count mismatch: tier \"{name}\" declares {declared} points, file ends at point {}",
                                i + 1
                            ),
                        )),
                        d => d,
                    })?;
                }
                self.warnings
                    .push(ParseDiagnostic::warning(line, format!("point tier \"{name}\" skipped")));
                Ok(None)
            }
            other => Err(ParseDiagnostic::fatal(line, format!("unknown tier class \"{other}\"")).into()),
        }
    }
}

fn check_interval(
    tier: &str,
    iv: &Interval,
    prev: Option<&Interval>,
    tier_min: f64,
    tier_max: f64,
    line: usize,
) -> Result<(), ParseDiagnostic> {
    if iv.start > iv.end {
        return Err(ParseDiagnostic::fatal(
            line,
            format!(
                "tier \"{tier}\": interval ends ({}) before it starts ({})",
                iv.end, iv.start
            ),
        ));
    }
    if iv.start == iv.end && !iv.is_spacer() {
        return Err(ParseDiagnostic::fatal(
            line,
            format!("tier \"{tier}\": zero-length interval labelled \"{}\"", iv.label),
        ));
    }
    if iv.start < tier_min - TIME_TOLERANCE || iv.end > tier_max + TIME_TOLERANCE {
        return Err(ParseDiagnostic::fatal(
            line,
            format!(
                "tier \"{tier}\": interval [{}, {}] outside tier range",
                iv.start, iv.end
            ),
        ));
    }
    if let Some(p) = prev {
        if iv.start < p.end - TIME_TOLERANCE {
            return Err(ParseDiagnostic::fatal(
                line,
                format!(
                    "tier \"{tier}\": interval starting at {} is out of order (previous ends at {})",
                    iv.start, p.end
                ),
            ));
        }
    }
    Ok(())
}

/// Result of a tier lookup. `warning` is set when several tiers share the name.
#[derive(Debug, Clone, Copy)]
pub struct TierMatch<'a> {
    pub tier: &'a IntervalTier,
    pub duplicates: usize,
}

impl TierMatch<'_> {
    pub fn warning(&self) -> Option<String> {
        (self.duplicates > 0).then(|| {
            format!(
                "{} tiers are named \"{}\"; using the first",
                self.duplicates + 1,
                self.tier.name
            )
        })
    }
}

impl TextGrid {
    /// Exact, case-sensitive lookup. The first tier wins on duplicate names.
    pub fn tier_by_name(&self, name: &str) -> Option<TierMatch<'_>> {
        let mut hits = self.tiers.iter().filter(|t| t.name == name);
        let tier = hits.next()?;
        let m = TierMatch {
            tier,
            duplicates: hits.count(),
        };
        if let Some(w) = m.warning() {
            log::warn!("{w}");
        }
        Some(m)
    }

    pub fn to_long_string(&self) -> String {
        let mut s = String::new();
        s.push_str("File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n");
        let _ = writeln!(s, "xmin = {} ", self.xmin);
        let _ = writeln!(s, "xmax = {} ", self.xmax);
        if self.tiers.is_empty() {
            s.push_str("tiers? <absent> \n");
            return s;
        }
        s.push_str("tiers? <exists> \n");
        let _ = writeln!(s, "size = {} ", self.tiers.len());
        s.push_str("item []: \n");
        for (i, tier) in self.tiers.iter().enumerate() {
            let _ = writeln!(s, "    item [{}]:", i + 1);
            s.push_str("        class = \"IntervalTier\" \n");
            let _ = writeln!(s, "        name = {} ", quote(&tier.name));
            let _ = writeln!(s, "        xmin = {} ", tier.xmin);
            let _ = writeln!(s, "        xmax = {} ", tier.xmax);
            let _ = writeln!(s, "        intervals: size = {} ", tier.intervals.len());
            for (j, iv) in tier.intervals.iter().enumerate() {
                let _ = writeln!(s, "        intervals [{}]:", j + 1);
                let _ = writeln!(s, "            xmin = {} ", iv.start);
                let _ = writeln!(s, "            xmax = {} ", iv.end);
                let _ = writeln!(s, "            text = {} ", quote(&iv.label));
            }
        }
        s
    }

    pub fn to_short_string(&self) -> String {
        let mut s = String::new();
        s.push_str("File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n");
        let _ = writeln!(s, "{}\n{}", self.xmin, self.xmax);
        if self.tiers.is_empty() {
            s.push_str("<absent>\n");
            return s;
        }
        let _ = writeln!(s, "<exists>\n{}", self.tiers.len());
        for tier in &self.tiers {
            let _ = writeln!(s, "\"IntervalTier\"\n{}", quote(&tier.name));
            let _ = writeln!(s, "{}\n{}\n{}", tier.xmin, tier.xmax, tier.intervals.len());
            for iv in &tier.intervals {
                let _ = writeln!(s, "{}\n{}\n{}", iv.start, iv.end, quote(&iv.label));
            }
        }
        s
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}
