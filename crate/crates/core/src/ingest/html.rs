//! Markup stripping for fetched pages: script and style content is dropped,
//! block elements become paragraph breaks and whitespace is collapsed.

const SKIPPED: [&str; 5] = ["script", "style", "noscript", "template", "svg"];
const BLOCKS: [&str; 32] = [
    "address", "article", "aside", "blockquote", "dd", "details", "div", "dl", "dt", "fieldset",
    "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr",
    "li", "main", "nav", "ol", "p", "pre", "section", "table", "tr", "ul",
];

const PARAGRAPH: char = '\u{1}';
const LINE: char = '\u{2}';

/// Visible text of `html`, plus the contents of its `<title>` if any.
pub fn strip_html(html: &str) -> (String, Option<String>) {
    let chars: Vec<char> = html.chars().collect();
    let mut out = String::new();
    let mut title = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c != '<' {
            out.push(c);
            i += 1;
            continue;
        }
        if starts_with(&chars, i, "<!--") {
            i = find(&chars, i + 4, "-->").map_or(chars.len(), |p| p + 3);
            continue;
        }
        let Some(end) = tag_end(&chars, i) else {
            out.push(c);
            i += 1;
            continue;
        };
        let tag: String = chars[i + 1..end].iter().collect();
        i = end + 1;
        let closing = tag.starts_with('/');
        let name: String = tag
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if name.is_empty() {
            // Doctype, processing instruction or stray '<'.
            if !tag.starts_with('!') && !tag.starts_with('?') && !closing {
                out.push('<');
                out.extend(tag.chars());
                out.push('>');
            }
            continue;
        }
        if !closing && (name == "title" || SKIPPED.contains(&name.as_str())) {
            let close = format!("</{name}");
            let stop = find_ci(&chars, i, &close).unwrap_or(chars.len());
            if name == "title" && title.is_none() {
                let raw: String = chars[i..stop].iter().collect();
                let t = collapse(&decode_entities(&raw));
                if !t.is_empty() {
                    title = Some(t);
                }
            }
            i = tag_end(&chars, stop).map_or(chars.len(), |e| e + 1);
            continue;
        }
        if name == "br" {
            out.push(LINE);
        } else if BLOCKS.contains(&name.as_str()) || name == "body" || name == "td" || name == "th" {
            out.push(if matches!(name.as_str(), "td" | "th") { ' ' } else { PARAGRAPH });
        }
    }
    (normalize(&decode_entities(&out)), title)
}

fn starts_with(chars: &[char], at: usize, needle: &str) -> bool {
    needle.chars().enumerate().all(|(k, n)| chars.get(at + k) == Some(&n))
}

fn find(chars: &[char], from: usize, needle: &str) -> Option<usize> {
    (from..chars.len()).find(|&p| starts_with(chars, p, needle))
}

fn find_ci(chars: &[char], from: usize, needle: &str) -> Option<usize> {
    let needle: Vec<char> = needle.chars().collect();
    (from..chars.len()).find(|&p| {
        needle
            .iter()
            .enumerate()
            .all(|(k, n)| chars.get(p + k).is_some_and(|c| c.eq_ignore_ascii_case(n)))
    })
}

/// Index of the `>` closing the tag opened at `start`, honouring quotes.
fn tag_end(chars: &[char], start: usize) -> Option<usize> {
    let next = chars.get(start + 1)?;
    if !(next.is_ascii_alphabetic() || matches!(next, '/' | '!' | '?')) {
        return None;
    }
    let mut quote = None;
    for (k, &c) in chars.iter().enumerate().skip(start + 1) {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => quote = Some(c),
            None if c == '>' => return Some(k),
            None => {}
        }
    }
    None
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Paragraph markers become blank lines, line markers single newlines;
/// all other whitespace runs collapse to one space.
fn normalize(text: &str) -> String {
    text.split(PARAGRAPH)
        .map(|para| {
            para.split(LINE)
                .map(collapse)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub(crate) fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest[..rest.len().min(12)].find(';');
        let decoded = semi.and_then(|s| entity(&rest[1..s]).map(|c| (c, s)));
        match decoded {
            Some((c, s)) => {
                out.push(c);
                rest = &rest[s + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn entity(name: &str) -> Option<char> {
    if let Some(num) = name.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(code);
    }
    Some(match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => ' ',
        "ndash" => '\u{2013}',
        "mdash" => '\u{2014}',
        "hellip" => '\u{2026}',
        "lsquo" => '\u{2018}',
        "rsquo" => '\u{2019}',
        "ldquo" => '\u{201c}',
        "rdquo" => '\u{201d}',
        "copy" => '\u{a9}',
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paragraphs_become_blank_lines() {
        assert_eq!(strip_html("<p>A</p><p>B</p>").0, "A\n\nB");
    }

    #[test]
    fn scripts_styles_and_comments_vanish() {
        let html = "<html><head><title>T &amp; U</title><style>p{}</style></head>\
                    <body><script>var x = '<p>';</script><!-- c --><div>Hi <b>there</b></div></body></html>";
        let (text, title) = strip_html(html);
        assert_eq!(text, "Hi there");
        assert_eq!(title.as_deref(), Some("T & U"));
    }

    #[test]
    fn script_only_page_is_empty() {
        assert_eq!(strip_html("<script>alert(1)</script>").0, "");
    }

    #[test]
    fn entities_and_breaks() {
        assert_eq!(strip_html("<p>a&lt;b &#8212; &#x41;<br>next</p>").0, "a<b \u{2014} A\nnext");
        assert_eq!(decode_entities("AT&T &bogus;"), "AT&T &bogus;");
    }

    #[test]
    fn quoted_angle_brackets_in_attributes() {
        assert_eq!(strip_html("<p title=\"a>b\">x</p>").0, "x");
        assert_eq!(strip_html("1 < 2 and 3 > 2").0, "1 < 2 and 3 > 2");
    }
}
