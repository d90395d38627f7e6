//! Reader for the SGML dialect of the Reuters-21578 distribution and the
//! ModApte train/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::warn;

use super::{tokenize_str, Corpus, Document, Split, TokenizeOptions};
use crate::error::{Error, Result};

/// One `<REUTERS>` element.
#[derive(Debug, Clone, PartialEq)]
pub struct ReutersArticle {
    pub new_id: String,
    pub has_topics: bool,
    pub lewis_split: String,
    pub topics: Vec<String>,
    /// Title and body, entity-decoded.
    pub text: String,
}

/// Parse every article in one SGML file. Articles whose entities cannot be
/// decoded are dropped and reported in the returned warnings.
pub fn parse_reuters_sgml(file: &str, bytes: &[u8]) -> Result<(Vec<ReutersArticle>, Vec<String>)> {
    // The distribution is not valid UTF-8 everywhere; treat it as Latin-1.
    let text: String = bytes.iter().map(|&b| b as char).collect();
    // Latin-1 maps bytes 1:1 to chars but not to UTF-8 offsets.
    let byte_offset = |char_pos: usize| text[..char_pos].chars().count();
    let err = |pos: usize, msg: &str| Error::Parse {
        file: file.to_string(),
        offset: byte_offset(pos),
        msg: msg.to_string(),
    };

    let mut articles = Vec::new();
    let mut warnings = Vec::new();
    let mut cursor = 0;
    while let Some(rel) = text[cursor..].find("<REUTERS") {
        let start = cursor + rel;
        let tag_end = text[start..]
            .find('>')
            .map(|i| start + i)
            .ok_or_else(|| err(start, "unterminated <REUTERS> tag"))?;
        let attrs = parse_attributes(&text[start + "<REUTERS".len()..tag_end]);
        let close = text[tag_end..]
            .find("</REUTERS>")
            .map(|i| tag_end + i)
            .ok_or_else(|| err(start, "missing </REUTERS>"))?;
        if let Some(nested) = text[tag_end..close].find("<REUTERS") {
            return Err(err(tag_end + nested, "nested <REUTERS> element"));
        }
        let inner = &text[tag_end + 1..close];
        cursor = close + "</REUTERS>".len();

        let new_id = attrs.get("NEWID").cloned().unwrap_or_default();
        let topics_block = element(inner, "TOPICS").map_err(|m| err(tag_end, &m))?;
        let topics = match topics_block {
            Some(block) => elements(block, "D").map_err(|m| err(tag_end, &m))?,
            None => Vec::new(),
        };

        let decoded = (|| -> std::result::Result<String, String> {
            let title = element(inner, "TITLE")?.map(decode_entities).transpose()?;
            let body = element(inner, "BODY")?.map(decode_entities).transpose()?;
            let mut parts: Vec<String> = title.into_iter().chain(body).collect();
            if parts.is_empty() {
                // TYPE="UNPROC" articles put raw text directly under <TEXT>.
                if let Some(raw) = element(inner, "TEXT")? {
                    parts.push(decode_entities(&strip_tags(raw))?);
                }
            }
            Ok(parts.join("\n"))
        })();
        let text = match decoded {
            Ok(t) => t,
            Err(msg) => {
                let w = format!("{file}: article NEWID={new_id} dropped: {msg}");
                warn!("{w}");
                warnings.push(w);
                continue;
            }
        };
        articles.push(ReutersArticle {
            new_id,
            has_topics: attrs.get("TOPICS").is_some_and(|v| v == "YES"),
            lewis_split: attrs.get("LEWISSPLIT").cloned().unwrap_or_default(),
            topics: topics.into_iter().map(|t| t.trim().to_string()).collect(),
            text,
        });
    }
    if cursor == 0 && text.contains("</REUTERS>") {
        return Err(err(0, "</REUTERS> without opening tag"));
    }
    Ok((articles, warnings))
}

fn parse_attributes(s: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut rest = s;
    while let Some(eq) = rest.find('=') {
        let key = rest[..eq].trim().to_string();
        let after = rest[eq + 1..].trim_start();
        let (value, next) = if let Some(stripped) = after.strip_prefix('"') {
            match stripped.find('"') {
                Some(end) => (&stripped[..end], &stripped[end + 1..]),
                None => (stripped, ""),
            }
        } else {
            let end = after.find(char::is_whitespace).unwrap_or(after.len());
            (&after[..end], &after[end..])
        };
        out.insert(key, value.to_string());
        rest = next;
    }
    out
}

/// Content of the first `<name ...>...</name>` element, if any.
fn element<'a>(s: &'a str, name: &str) -> std::result::Result<Option<&'a str>, String> {
    let open = format!("<{name}");
    let close = format!("</{name}>");
    let mut from = 0;
    while let Some(rel) = s[from..].find(&open) {
        let at = from + rel;
        let after = &s[at + open.len()..];
        // make sure we matched the whole tag name
        if after.starts_with('>') || after.starts_with(char::is_whitespace) {
            let body_start = at + open.len() + after.find('>').ok_or(format!("unterminated <{name}>"))? + 1;
            let end = s[body_start..]
                .find(&close)
                .ok_or(format!("missing {close}"))?;
            return Ok(Some(&s[body_start..body_start + end]));
        }
        from = at + open.len();
    }
    Ok(None)
}

fn elements(s: &str, name: &str) -> std::result::Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(body) = element(rest, name)? {
        out.push(body.to_string());
        // body is a subslice of rest
        let consumed = body.as_ptr() as usize - rest.as_ptr() as usize + body.len();
        rest = &rest[consumed + name.len() + 3..];
    }
    Ok(out)
}

fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            c if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

fn decode_entities(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let semi = tail
            .find(';')
            .filter(|&i| i <= 10)
            .ok_or_else(|| format!("unterminated entity near {:?}", &tail[..tail.len().min(12)]))?;
        let name = &tail[1..semi];
        let decoded = match name {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "quot" => '"',
            "apos" => '\'',
            _ => name
                .strip_prefix('#')
                .and_then(|n| n.parse::<u32>().ok())
                .and_then(char::from_u32)
                .ok_or_else(|| format!("unknown entity &{name};"))?,
        };
        out.push(decoded);
        rest = &tail[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Load the ModApte split from the directory holding `reut2-*.sgm`.
///
/// Articles with `TOPICS="YES"` are assigned to train or test by their
/// `LEWISSPLIT` attribute; unlabeled articles are dropped; only categories
/// with at least one training and one test document are kept, and documents
/// left without any kept category are dropped.
pub fn load_reuters_modapte(root: &Path, options: TokenizeOptions) -> Result<(Corpus, Corpus)> {
    let mut files: Vec<_> = fs::read_dir(root)
        .map_err(Error::at_path(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("reut2-") && n.ends_with(".sgm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Path {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no reut2-*.sgm files"),
        });
    }
    let mut warnings = Vec::new();
    if files.len() != 22 {
        warnings.push(format!("expected 22 SGML files, found {}", files.len()));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for path in &files {
        let bytes = fs::read(path).map_err(Error::at_path(path))?;
        let name = path.display().to_string();
        let (articles, w) = parse_reuters_sgml(&name, &bytes)?;
        warnings.extend(w);
        for a in articles {
            if !a.has_topics || a.topics.is_empty() {
                continue;
            }
            match a.lewis_split.as_str() {
                "TRAIN" => train.push(a),
                "TEST" => test.push(a),
                _ => {}
            }
        }
    }
    build_modapte(train, test, options, warnings)
}

pub(crate) fn build_modapte(
    train: Vec<ReutersArticle>,
    test: Vec<ReutersArticle>,
    options: TokenizeOptions,
    warnings: Vec<String>,
) -> Result<(Corpus, Corpus)> {
    let in_split = |arts: &[ReutersArticle]| -> BTreeSet<String> {
        arts.iter().flat_map(|a| a.topics.iter().cloned()).collect()
    };
    let train_cats = in_split(&train);
    let test_cats = in_split(&test);
    let categories: Vec<String> = train_cats.intersection(&test_cats).cloned().collect();
    let keep: BTreeSet<&str> = categories.iter().map(String::as_str).collect();

    let to_docs = |arts: Vec<ReutersArticle>, split: Split| -> Vec<Document> {
        arts.into_iter()
            .filter_map(|a| {
                let labels: BTreeSet<String> = a
                    .topics
                    .iter()
                    .filter(|t| keep.contains(t.as_str()))
                    .cloned()
                    .collect();
                (!labels.is_empty()).then(|| Document {
                    id: format!("reuters-{}", a.new_id),
                    tokens: tokenize_str(&a.text, options),
                    labels,
                    split,
                })
            })
            .collect()
    };
    let mut train = Corpus::new(to_docs(train, Split::Train), categories.clone())?;
    let test = Corpus::new(to_docs(test, Split::Test), categories)?;
    train.warnings = warnings;
    Ok((train, test))
}
