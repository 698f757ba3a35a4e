//! Bounded JSON repair: smart-quote normalization, trailing-comma removal,
//! and closing one unterminated string plus one bracket at end of input.
//! Anything beyond these three rules is left to the retry policy.

/// Applies the repair rules to `input`. Well-formed JSON passes through
/// unchanged apart from smart-quote delimiters.
pub fn repair_json(input: &str) -> String {
    let quoted = normalize_smart_quotes(input);
    let closed = close_unterminated(&quoted);
    strip_trailing_commas(&closed)
}

fn is_smart_double(c: char) -> bool {
    matches!(c, '\u{201c}' | '\u{201d}' | '\u{201e}' | '\u{201f}')
}

/// Smart double quotes acting as string delimiters become `"`. Inside a
/// string opened by a plain quote they are left as content; inside a string
/// opened by a smart quote, plain quotes are escaped. Smart single quotes
/// become `'`.
fn normalize_smart_quotes(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    // None: outside a string; Some(true): opened by a smart quote.
    let mut open: Option<bool> = None;
    let mut escaped = false;
    for c in input.chars() {
        let c = match c {
            '\u{2018}' | '\u{2019}' | '\u{201a}' | '\u{201b}' => '\'',
            other => other,
        };
        match open {
            None => {
                if c == '"' {
                    open = Some(false);
                    out.push('"');
                } else if is_smart_double(c) {
                    open = Some(true);
                    out.push('"');
                } else {
                    out.push(c);
                }
            }
            Some(smart) => {
                if escaped {
                    escaped = false;
                    out.push(c);
                } else if c == '\\' {
                    escaped = true;
                    out.push(c);
                } else if smart && is_smart_double(c) {
                    open = None;
                    out.push('"');
                } else if c == '"' {
                    if smart {
                        out.push_str("\\\"");
                    } else {
                        open = None;
                        out.push('"');
                    }
                } else {
                    out.push(c);
                }
            }
        }
    }
    out
}

fn strip_trailing_commas(input: &str) -> String {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn close_unterminated(input: &str) -> String {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for c in input.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                if stack.last() == Some(&c) {
                    stack.pop();
                }
            }
            _ => {}
        }
    }
    let mut out = input.trim_end().to_string();
    if in_string {
        if escaped {
            out.pop();
        }
        out.push('"');
    }
    if let Some(closer) = stack.pop() {
        out.push(closer);
    }
    out
}
