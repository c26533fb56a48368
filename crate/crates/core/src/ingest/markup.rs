//! Markup stripping for HTML and Markdown sources.
//!
//! Block-level elements become paragraph breaks (`\n\n`); `script`, `style`,
//! `head`-only content and comments are dropped. Whitespace inside a block
//! collapses to single spaces.

use std::collections::BTreeMap;

/// Plain text plus whatever metadata the markup carried.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub body: String,
    pub meta: BTreeMap<String, String>,
}

const BLOCK_TAGS: &[&str] = &[
    "address",
    "article",
    "aside",
    "blockquote",
    "br",
    "dd",
    "div",
    "dl",
    "dt",
    "figcaption",
    "figure",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "header",
    "hr",
    "li",
    "main",
    "nav",
    "ol",
    "p",
    "pre",
    "section",
    "table",
    "tbody",
    "td",
    "th",
    "thead",
    "tr",
    "ul",
    "body",
    "html",
];

const SKIP_TAGS: &[&str] = &["script", "style", "noscript", "template", "svg"];

fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let Some(semi) = rest[..rest.len().min(12)].find(';') else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..semi];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" | "#39" => Some('\''),
            "nbsp" => Some(' '),
            "ndash" => Some('\u{2013}'),
            "mdash" => Some('\u{2014}'),
            _ => entity
                .strip_prefix("#x")
                .or_else(|| entity.strip_prefix("#X"))
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                .and_then(char::from_u32),
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[semi + 1..];
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

fn attribute(tag_body: &str, name: &str) -> Option<String> {
    let lower = tag_body.to_ascii_lowercase();
    let mut search = 0;
    while let Some(found) = lower[search..].find(name) {
        let at = search + found;
        search = at + name.len();
        let before_ok = at == 0 || lower.as_bytes()[at - 1].is_ascii_whitespace();
        let after = lower[search..].trim_start();
        if !before_ok || !after.starts_with('=') {
            continue;
        }
        let offset = tag_body.len() - after.len() + 1;
        let value = tag_body[offset..].trim_start();
        return Some(match value.chars().next() {
            Some(q @ ('"' | '\'')) => value[1..].split(q).next().unwrap_or("").to_string(),
            _ => value
                .split(|c: char| c.is_whitespace() || c == '>')
                .next()
                .unwrap_or("")
                .to_string(),
        });
    }
    None
}

/// Collapses whitespace within paragraphs and joins paragraphs with `\n\n`.
fn join_blocks(raw: &str) -> String {
    raw.split('\u{0}')
        .map(|block| block.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|block| !block.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn strip_html(html: &str) -> Stripped {
    // NUL marks block boundaries until the final join.
    let mut raw = String::new();
    let mut meta = BTreeMap::new();
    let mut title = String::new();
    let mut in_title = false;
    let mut skip_until: Option<String> = None;
    let mut rest = html;

    while !rest.is_empty() {
        if let Some(stripped) = rest.strip_prefix("<!--") {
            rest = stripped.find("-->").map(|end| &stripped[end + 3..]).unwrap_or("");
            continue;
        }
        if rest.starts_with('<') {
            let Some(close) = rest.find('>') else {
                break;
            };
            let tag_body = &rest[1..close];
            rest = &rest[close + 1..];
            let closing = tag_body.starts_with('/');
            let name: String = tag_body
                .trim_start_matches('/')
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase();
            if let Some(skipped) = &skip_until {
                if closing && &name == skipped {
                    skip_until = None;
                }
                continue;
            }
            if !closing && SKIP_TAGS.contains(&name.as_str()) && !tag_body.ends_with('/') {
                skip_until = Some(name);
                continue;
            }
            match name.as_str() {
                "title" => in_title = !closing,
                "meta" => {
                    let key = attribute(tag_body, "name").or_else(|| attribute(tag_body, "property"));
                    if let (Some(key), Some(content)) = (key, attribute(tag_body, "content")) {
                        meta.insert(key.to_ascii_lowercase(), decode_entities(&content));
                    }
                }
                "head" => {}
                _ if BLOCK_TAGS.contains(&name.as_str()) => raw.push('\u{0}'),
                _ => {}
            }
            continue;
        }
        let next = rest.find('<').unwrap_or(rest.len());
        let text = decode_entities(&rest[..next]);
        if skip_until.is_none() {
            if in_title {
                title.push_str(&text);
            } else {
                raw.push_str(&text);
            }
        }
        rest = &rest[next..];
    }

    let title = title.split_whitespace().collect::<Vec<_>>().join(" ");
    if !title.is_empty() {
        meta.insert("title".into(), title);
    }
    Stripped {
        body: join_blocks(&raw),
        meta,
    }
}

/// Splits a leading `---` front-matter block of `key: value` lines.
fn front_matter(text: &str) -> (BTreeMap<String, String>, &str) {
    let mut meta = BTreeMap::new();
    let Some(after) = text.strip_prefix("---\n").or_else(|| text.strip_prefix("---\r\n")) else {
        return (meta, text);
    };
    let mut consumed = text.len() - after.len();
    for line in after.split_inclusive('\n') {
        consumed += line.len();
        let trimmed = line.trim();
        if trimmed == "---" {
            return (meta, &text[consumed..]);
        }
        if let Some((key, value)) = trimmed.split_once(':') {
            let value = value.trim().trim_matches('"').trim_matches('\'');
            meta.insert(key.trim().to_ascii_lowercase(), value.to_string());
        }
    }
    (BTreeMap::new(), text)
}

fn strip_inline_markdown(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(open) = rest.find('[') {
        let (head, tail) = rest.split_at(open);
        let image = head.ends_with('!');
        out.push_str(if image { &head[..head.len() - 1] } else { head });
        match tail
            .find("](")
            .and_then(|mid| tail[mid..].find(')').map(|end| (mid, mid + end)))
        {
            Some((mid, end)) => {
                if !image {
                    out.push_str(&tail[1..mid]);
                }
                rest = &tail[end + 1..];
            }
            None => {
                if image {
                    out.push('!');
                }
                out.push('[');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out.replace("**", "").replace("__", "").replace('`', "")
}

pub fn strip_markdown(text: &str) -> Stripped {
    let (meta, body) = front_matter(text);
    let mut raw = String::new();
    for line in body.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            continue;
        }
        if trimmed.is_empty() {
            raw.push('\u{0}');
            continue;
        }
        let heading = trimmed.trim_start_matches('#');
        let is_heading = heading.len() != trimmed.len() && (heading.is_empty() || heading.starts_with(' '));
        let content = if is_heading { heading.trim() } else { trimmed };
        let content = content
            .strip_prefix("- ")
            .or_else(|| content.strip_prefix("* "))
            .unwrap_or(content);
        if is_heading {
            raw.push('\u{0}');
        }
        raw.push_str(&strip_inline_markdown(content));
        raw.push(if is_heading { '\u{0}' } else { '\n' });
    }
    Stripped {
        body: join_blocks(&raw),
        meta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_dropped_blocks_separated() {
        let s = strip_html("<p>A</p><script>x()</script><p>B</p>");
        assert_eq!(s.body, "A\n\nB");
    }

    #[test]
    fn html_meta_and_entities() {
        let html = r#"<html><head><title>Alert  &amp; notice</title>
            <meta name="date" content="2025-05-03"><meta name='geo.placename' content="Perth">
            <style>p { color: red }</style></head>
            <body><h1>Measles</h1><div>Exposure at <b>Perth&nbsp;Airport</b>.<br>Call 13&#49;.</div><!-- hidden --></body></html>"#;
        let s = strip_html(html);
        assert_eq!(s.meta["title"], "Alert & notice");
        assert_eq!(s.meta["date"], "2025-05-03");
        assert_eq!(s.meta["geo.placename"], "Perth");
        assert_eq!(s.body, "Measles\n\nExposure at Perth Airport.\n\nCall 131.");
    }

    #[test]
    fn markdown_front_matter_and_inline() {
        let md = "---\ntitle: \"Alert\"\ndate: 2025-05-03\n---\n# Heading\n\nSee [the map](http://x) and **bold** text\nsecond line.\n\n- item one\n";
        let s = strip_markdown(md);
        assert_eq!(s.meta["title"], "Alert");
        assert_eq!(s.meta["date"], "2025-05-03");
        assert_eq!(s.body, "Heading\n\nSee the map and bold text second line.\n\nitem one");
    }

    #[test]
    fn markdown_without_closing_front_matter_is_plain() {
        let s = strip_markdown("---\ntitle: x\nno close");
        assert!(s.meta.is_empty());
        assert!(s.body.contains("title: x"));
    }
}
