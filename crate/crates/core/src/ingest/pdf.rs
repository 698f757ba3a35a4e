//! Best-effort text extraction from PDF files.
//!
//! Handles content streams stored raw or with `/FlateDecode`, and the text
//! showing operators `Tj`, `TJ`, `'` and `"`. Line moves (`Td`, `TD`, `T*`,
//! `Tm`) end a line; `ET` ends a paragraph. Strings are read as UTF-16BE when
//! they start with a byte-order mark, otherwise one byte per character.
//! Anything else (encrypted files, custom font encodings, other filters) is
//! reported as incomplete rather than guessed.

use std::io::Read;

use flate2::read::ZlibDecoder;

use super::IngestError;

const NON_CONTENT_KEYS: [&[u8]; 9] = [
    b"/Subtype/Image",
    b"/Subtype /Image",
    b"/Length1",
    b"/Length2",
    b"/Length3",
    b"/Type/XRef",
    b"/Type /XRef",
    b"/Type/ObjStm",
    b"/Type /ObjStm",
];

pub fn extract_pdf_text(bytes: &[u8]) -> Result<String, IngestError> {
    if !bytes.starts_with(b"%PDF-") {
        return Err(IngestError::DecodeError("not a PDF file".into()));
    }
    if find(bytes, b"/Encrypt", 0).is_some() {
        return Err(IngestError::ExtractionIncomplete("the PDF is encrypted".into()));
    }
    let mut text = String::new();
    let mut skipped = 0usize;
    for (dict, data) in streams(bytes) {
        if NON_CONTENT_KEYS.iter().any(|k| find(dict, k, 0).is_some()) {
            continue;
        }
        let decoded = if find(dict, b"/Filter", 0).is_none() {
            Some(data.to_vec())
        } else if only_flate(dict) {
            inflate(data)
        } else {
            None
        };
        match decoded {
            Some(content) => text.push_str(&content_text(&content)),
            None => skipped += 1,
        }
    }
    let text = tidy(&text);
    if text.is_empty() {
        let why = if skipped > 0 {
            format!("no text found; {skipped} stream(s) use unsupported encodings")
        } else {
            "no text found in content streams".to_string()
        };
        return Err(IngestError::ExtractionIncomplete(why));
    }
    let total = text.chars().count();
    let odd = text
        .chars()
        .filter(|c| (c.is_control() && *c != '\n') || *c == '\u{fffd}')
        .count();
    if odd * 10 > total {
        return Err(IngestError::ExtractionIncomplete(
            "text uses a font encoding this extractor cannot map".into(),
        ));
    }
    Ok(text)
}

fn find(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if from >= hay.len() {
        return None;
    }
    hay[from..].windows(needle.len()).position(|w| w == needle).map(|p| p + from)
}

fn rfind(hay: &[u8], needle: &[u8], before: usize) -> Option<usize> {
    hay[..before].windows(needle.len()).rposition(|w| w == needle)
}

fn only_flate(dict: &[u8]) -> bool {
    let Some(at) = find(dict, b"/Filter", 0) else { return true };
    let rest = &dict[at + 7..];
    let rest = rest.trim_ascii_start();
    let spec: &[u8] = if rest.starts_with(b"[") {
        &rest[..rest.iter().position(|&b| b == b']').unwrap_or(rest.len())]
    } else {
        let end = rest[1..]
            .iter()
            .position(|&b| b == b'/' || b == b'>' || b.is_ascii_whitespace())
            .map_or(rest.len(), |p| p + 1);
        &rest[..end]
    };
    let names: Vec<&[u8]> = spec.split(|&b| b == b'/').skip(1).map(|n| n.trim_ascii()).collect();
    !names.is_empty() && names.iter().all(|n| *n == b"FlateDecode" || *n == b"Fl")
}

fn inflate(data: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    match ZlibDecoder::new(data).read_to_end(&mut out) {
        Ok(_) => Some(out),
        // A truncated tail still yields usable text.
        Err(_) if !out.is_empty() => Some(out),
        Err(_) => None,
    }
}

/// `(dictionary, raw data)` for every stream object.
fn streams(bytes: &[u8]) -> Vec<(&[u8], &[u8])> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(kw) = find(bytes, b"stream", pos) {
        pos = kw + 6;
        if kw >= 3 && &bytes[kw - 3..kw] == b"end" {
            continue;
        }
        let mut start = kw + 6;
        if bytes.get(start) == Some(&b'\r') {
            start += 1;
        }
        if bytes.get(start) != Some(&b'\n') {
            continue;
        }
        start += 1;
        let Some(end) = find(bytes, b"endstream", start) else { break };
        let mut data_end = end;
        while data_end > start && matches!(bytes[data_end - 1], b'\r' | b'\n') {
            data_end -= 1;
        }
        let dict_start = rfind(bytes, b"obj", kw).map_or(0, |p| p + 3);
        out.push((&bytes[dict_start..kw], &bytes[start..data_end]));
        pos = end + 9;
    }
    out
}

enum Token {
    Str(Vec<u8>),
    Num(f64),
    ArrayStart,
    ArrayEnd,
    Op(String),
    Other,
}

struct Lexer<'a> {
    b: &'a [u8],
    i: usize,
}

impl Lexer<'_> {
    fn next(&mut self) -> Option<Token> {
        let b = self.b;
        while self.i < b.len() {
            match b[self.i] {
                c if c.is_ascii_whitespace() => self.i += 1,
                b'%' => {
                    while self.i < b.len() && b[self.i] != b'\n' && b[self.i] != b'\r' {
                        self.i += 1;
                    }
                }
                _ => break,
            }
        }
        let c = *b.get(self.i)?;
        self.i += 1;
        Some(match c {
            b'(' => Token::Str(self.literal()),
            b'<' if b.get(self.i) == Some(&b'<') => {
                self.i += 1;
                Token::Other
            }
            b'<' => Token::Str(self.hex()),
            b'>' => {
                if b.get(self.i) == Some(&b'>') {
                    self.i += 1;
                }
                Token::Other
            }
            b'[' => Token::ArrayStart,
            b']' => Token::ArrayEnd,
            b'{' | b'}' | b')' => Token::Other,
            b'/' => {
                self.word();
                Token::Other
            }
            b'0'..=b'9' | b'+' | b'-' | b'.' => {
                let start = self.i - 1;
                while self.i < b.len() && (b[self.i].is_ascii_digit() || b[self.i] == b'.') {
                    self.i += 1;
                }
                std::str::from_utf8(&b[start..self.i])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .map_or(Token::Other, Token::Num)
            }
            _ => {
                let start = self.i - 1;
                self.word();
                Token::Op(String::from_utf8_lossy(&b[start..self.i]).into_owned())
            }
        })
    }

    fn word(&mut self) {
        while self.i < self.b.len() {
            let c = self.b[self.i];
            if c.is_ascii_whitespace() || b"()<>[]{}/%".contains(&c) {
                break;
            }
            self.i += 1;
        }
    }

    fn literal(&mut self) -> Vec<u8> {
        let b = self.b;
        let mut out = Vec::new();
        let mut depth = 1;
        while self.i < b.len() {
            let c = b[self.i];
            self.i += 1;
            match c {
                b'\\' => {
                    let Some(&e) = b.get(self.i) else { break };
                    self.i += 1;
                    match e {
                        b'n' => out.push(b'\n'),
                        b'r' => out.push(b'\r'),
                        b't' => out.push(b'\t'),
                        b'b' => out.push(8),
                        b'f' => out.push(12),
                        b'\r' => {
                            if b.get(self.i) == Some(&b'\n') {
                                self.i += 1;
                            }
                        }
                        b'\n' => {}
                        b'0'..=b'7' => {
                            let mut v = u32::from(e - b'0');
                            for _ in 0..2 {
                                match b.get(self.i) {
                                    Some(&d @ b'0'..=b'7') => {
                                        v = v * 8 + u32::from(d - b'0');
                                        self.i += 1;
                                    }
                                    _ => break,
                                }
                            }
                            out.push((v & 0xff) as u8);
                        }
                        other => out.push(other),
                    }
                }
                b'(' => {
                    depth += 1;
                    out.push(c);
                }
                b')' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                    out.push(c);
                }
                _ => out.push(c),
            }
        }
        out
    }

    fn hex(&mut self) -> Vec<u8> {
        let mut digits = Vec::new();
        while self.i < self.b.len() {
            let c = self.b[self.i];
            self.i += 1;
            if c == b'>' {
                break;
            }
            if let Some(d) = (c as char).to_digit(16) {
                digits.push(d as u8);
            }
        }
        if digits.len() % 2 == 1 {
            digits.push(0);
        }
        digits.chunks(2).map(|p| p[0] << 4 | p[1]).collect()
    }
}

fn decode_string(bytes: &[u8]) -> String {
    if let Some(rest) = bytes.strip_prefix(&[0xfe, 0xff]) {
        let units: Vec<u16> = rest.chunks(2).map(|p| u16::from_be_bytes([p[0], *p.get(1).unwrap_or(&0)])).collect();
        return String::from_utf16_lossy(&units);
    }
    bytes.iter().map(|&b| char::from(b)).collect()
}

/// Text shown by one content stream.
fn content_text(content: &[u8]) -> String {
    let mut lexer = Lexer { b: content, i: 0 };
    let mut out = String::new();
    let mut operands: Vec<Token> = Vec::new();
    let mut array: Option<Vec<Token>> = None;
    let mut in_text = false;
    while let Some(tok) = lexer.next() {
        match tok {
            Token::ArrayStart => array = Some(Vec::new()),
            Token::ArrayEnd => {
                if let Some(items) = array.take() {
                    operands.push(Token::Other);
                    // Keep the array contents for TJ.
                    operands.extend(items);
                }
            }
            t @ (Token::Str(_) | Token::Num(_) | Token::Other) => match &mut array {
                Some(items) => items.push(t),
                None => operands.push(t),
            },
            Token::Op(op) => {
                match op.as_str() {
                    "BT" => in_text = true,
                    "ET" => {
                        in_text = false;
                        out.push_str("\n\n");
                    }
                    "Tj" if in_text => push_last_string(&operands, &mut out),
                    "'" | "\"" if in_text => {
                        out.push('\n');
                        push_last_string(&operands, &mut out);
                    }
                    "TJ" if in_text => {
                        for t in &operands {
                            match t {
                                Token::Str(s) => out.push_str(&decode_string(s)),
                                Token::Num(n) if *n < -250.0 => out.push(' '),
                                _ => {}
                            }
                        }
                    }
                    "Td" | "TD" if in_text => {
                        let ty = match operands.last() {
                            Some(Token::Num(n)) => *n,
                            _ => 0.0,
                        };
                        if ty != 0.0 {
                            out.push('\n');
                        } else if !out.ends_with([' ', '\n']) {
                            out.push(' ');
                        }
                    }
                    "T*" | "Tm" if in_text => out.push('\n'),
                    _ => {}
                }
                operands.clear();
            }
        }
    }
    out
}

fn push_last_string(operands: &[Token], out: &mut String) {
    if let Some(Token::Str(s)) = operands.iter().rev().find(|t| matches!(t, Token::Str(_))) {
        out.push_str(&decode_string(s));
    }
}

/// Trims lines, drops empty ones inside paragraphs and separates
/// paragraphs by one blank line.
fn tidy(text: &str) -> String {
    text.split("\n\n")
        .map(|para| {
            para.lines()
                .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}
