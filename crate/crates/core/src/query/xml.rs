//! Result-set XML. The format is fixed byte-for-byte:
//!
//! ```text
//! <resultset query-id="HEX16">
//!   <site name="a" status="ok" elapsed-ms="3"><row><f n="site">a</f>...</row></site>
//!   <site name="b" status="error" elapsed-ms="5000" message="timeout"/>
//! </resultset>
//! ```
//!
//! (shown indented; the serializer emits no whitespace between elements and
//! no XML declaration). Elements without children are self-closing.

use std::fmt::Write;

use thiserror::Error;

use super::{QueryId, ResultSet, Row, SiteOutcome, SiteResult};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XmlError {
    #[error("XML syntax error at byte {0}")]
    XmlSyntaxError(usize),
    #[error("schema error: {0}")]
    SchemaError(String),
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn serialize_resultset(r: &ResultSet) -> String {
    let mut out = format!("<resultset query-id=\"{}\"", r.query_id);
    if r.sites.is_empty() {
        out.push_str("/>");
        return out;
    }
    out.push('>');
    for site in &r.sites {
        write_site(&mut out, site);
    }
    out.push_str("</resultset>");
    out
}

/// A single `<site>` element, the payload of a remote-query response.
pub fn serialize_site_result(site: &SiteResult) -> String {
    let mut out = String::new();
    write_site(&mut out, site);
    out
}

fn write_site(out: &mut String, site: &SiteResult) {
    let _ = write!(out, "<site name=\"{}\"", escape(&site.site));
    match &site.outcome {
        SiteOutcome::Error(message) => {
            let _ = write!(
                out,
                " status=\"error\" elapsed-ms=\"{}\" message=\"{}\"/>",
                site.elapsed_ms,
                escape(message)
            );
        }
        SiteOutcome::Ok(rows) => {
            let _ = write!(out, " status=\"ok\" elapsed-ms=\"{}\"", site.elapsed_ms);
            if rows.is_empty() {
                out.push_str("/>");
                return;
            }
            out.push('>');
            for row in rows {
                out.push_str("<row>");
                for (name, value) in row.fields() {
                    let _ = write!(out, "<f n=\"{}\">{}</f>", escape(name), escape(value));
                }
                out.push_str("</row>");
            }
            out.push_str("</site>");
        }
    }
}

pub fn parse_resultset(xml: &str) -> Result<ResultSet, XmlError> {
    let root = parse_document(xml)?;
    expect_name(&root, "resultset")?;
    expect_attrs(&root, &["query-id"])?;
    no_text(&root)?;
    let query_id = attr(&root, "query-id")?
        .parse::<QueryId>()
        .map_err(|_| schema("query-id must be 16 lowercase hex characters"))?;
    let sites = root
        .children
        .iter()
        .map(site_from_element)
        .collect::<Result<Vec<_>, _>>()?;
    let mut names: Vec<&str> = sites.iter().map(|s| s.site.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(schema("site names must be unique"));
    }
    Ok(ResultSet { query_id, sites })
}

pub fn parse_site_result(xml: &str) -> Result<SiteResult, XmlError> {
    site_from_element(&parse_document(xml)?)
}

fn site_from_element(el: &Element) -> Result<SiteResult, XmlError> {
    expect_name(el, "site")?;
    no_text(el)?;
    let site = attr(el, "name")?.to_owned();
    let elapsed_ms = attr(el, "elapsed-ms")?
        .parse::<u64>()
        .ok()
        .filter(|_| attr(el, "elapsed-ms").is_ok_and(|v| v.bytes().all(|b| b.is_ascii_digit())))
        .ok_or_else(|| schema("elapsed-ms must be a non-negative integer"))?;
    let outcome = match attr(el, "status")? {
        "ok" => {
            expect_attrs(el, &["name", "status", "elapsed-ms"])?;
            let rows = el
                .children
                .iter()
                .map(row_from_element)
                .collect::<Result<Vec<_>, _>>()?;
            SiteOutcome::Ok(rows)
        }
        "error" => {
            expect_attrs(el, &["name", "status", "elapsed-ms", "message"])?;
            if !el.children.is_empty() {
                return Err(schema("error sites carry no rows"));
            }
            SiteOutcome::Error(attr(el, "message")?.to_owned())
        }
        other => return Err(schema(&format!("unknown status {other:?}"))),
    };
    Ok(SiteResult {
        site,
        outcome,
        elapsed_ms,
    })
}

fn row_from_element(el: &Element) -> Result<Row, XmlError> {
    expect_name(el, "row")?;
    expect_attrs(el, &[])?;
    no_text(el)?;
    let mut fields = Vec::with_capacity(el.children.len());
    for f in &el.children {
        expect_name(f, "f")?;
        expect_attrs(f, &["n"])?;
        if !f.children.is_empty() {
            return Err(schema("<f> holds text only"));
        }
        fields.push((attr(f, "n")?.to_owned(), f.text.clone()));
    }
    if fields.is_empty() {
        return Err(schema("<row> needs at least one field"));
    }
    Row::new(fields).map_err(|e| schema(&e))
}

fn schema(msg: &str) -> XmlError {
    XmlError::SchemaError(msg.to_owned())
}

fn expect_name(el: &Element, name: &str) -> Result<(), XmlError> {
    if el.name == name {
        Ok(())
    } else {
        Err(schema(&format!("expected <{name}>, found <{}>", el.name)))
    }
}

fn expect_attrs(el: &Element, allowed: &[&str]) -> Result<(), XmlError> {
    for (k, _) in &el.attrs {
        if !allowed.contains(&k.as_str()) {
            return Err(schema(&format!("unexpected attribute {k:?} on <{}>", el.name)));
        }
    }
    Ok(())
}

fn no_text(el: &Element) -> Result<(), XmlError> {
    if el.text.chars().all(|c| c.is_ascii_whitespace()) {
        Ok(())
    } else {
        Err(schema(&format!("<{}> does not hold text", el.name)))
    }
}

fn attr<'a>(el: &'a Element, name: &str) -> Result<&'a str, XmlError> {
    el.attrs
        .iter()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| schema(&format!("<{}> lacks attribute {name:?}", el.name)))
}

#[derive(Debug)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Element>,
    text: String,
}

/// Subset parser: elements, double-quoted attributes, text, and the five
/// predefined entities. No declarations, comments, CDATA or namespaces.
struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

fn parse_document(src: &str) -> Result<Element, XmlError> {
    let mut p = Parser { src, pos: 0 };
    p.skip_ws();
    let root = p.element()?;
    p.skip_ws();
    if p.pos != src.len() {
        return Err(XmlError::XmlSyntaxError(p.pos));
    }
    Ok(root)
}

impl<'a> Parser<'a> {
    fn err(&self) -> XmlError {
        XmlError::XmlSyntaxError(self.pos)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let n = self.rest().len() - self.rest().trim_start_matches([' ', '\t', '\r', '\n']).len();
        self.pos += n;
    }

    fn eat(&mut self, s: &str) -> Result<(), XmlError> {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else {
            Err(self.err())
        }
    }

    fn name(&mut self) -> Result<String, XmlError> {
        let n = self
            .rest()
            .bytes()
            .take_while(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
            .count();
        if n == 0 || !self.rest().as_bytes()[0].is_ascii_alphabetic() {
            return Err(self.err());
        }
        let name = self.rest()[..n].to_owned();
        self.pos += n;
        Ok(name)
    }

    fn element(&mut self) -> Result<Element, XmlError> {
        self.eat("<")?;
        let name = self.name()?;
        let mut attrs: Vec<(String, String)> = Vec::new();
        loop {
            let before = self.pos;
            self.skip_ws();
            if self.rest().starts_with("/>") {
                self.pos += 2;
                return Ok(Element {
                    name,
                    attrs,
                    children: Vec::new(),
                    text: String::new(),
                });
            }
            if self.rest().starts_with('>') {
                self.pos += 1;
                break;
            }
            if self.pos == before {
                return Err(self.err());
            }
            let key_at = self.pos;
            let key = self.name()?;
            self.skip_ws();
            self.eat("=")?;
            self.skip_ws();
            self.eat("\"")?;
            let value = self.text_until('"')?;
            self.eat("\"")?;
            if attrs.iter().any(|(k, _)| *k == key) {
                return Err(XmlError::XmlSyntaxError(key_at));
            }
            attrs.push((key, value));
        }
        let mut children = Vec::new();
        let mut text = String::new();
        loop {
            if self.rest().starts_with("</") {
                self.pos += 2;
                let close_at = self.pos;
                if self.name()? != name {
                    return Err(XmlError::XmlSyntaxError(close_at));
                }
                self.skip_ws();
                self.eat(">")?;
                return Ok(Element {
                    name,
                    attrs,
                    children,
                    text,
                });
            }
            if self.rest().starts_with('<') {
                children.push(self.element()?);
            } else if self.rest().is_empty() {
                return Err(self.err());
            } else {
                text.push_str(&self.text_until('<')?);
            }
        }
    }

    /// Reads character data up to (not including) `stop`, decoding entities.
    fn text_until(&mut self, stop: char) -> Result<String, XmlError> {
        let mut out = String::new();
        loop {
            let rest = self.rest();
            let Some(c) = rest.chars().next() else {
                return Err(self.err());
            };
            if c == stop {
                return Ok(out);
            }
            match c {
                '&' => {
                    let semi = rest.find(';').filter(|&i| i <= 6).ok_or_else(|| self.err())?;
                    out.push(match &rest[1..semi] {
                        "amp" => '&',
                        "lt" => '<',
                        "gt" => '>',
                        "quot" => '"',
                        "apos" => '\'',
                        _ => return Err(self.err()),
                    });
                    self.pos += semi + 1;
                }
                '<' => return Err(self.err()),
                c => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::Target;
    use proptest::prelude::*;

    #[test]
    fn empty_result_is_single_element() {
        let r = ResultSet {
            query_id: QueryId(0xab),
            sites: vec![],
        };
        let xml = serialize_resultset(&r);
        assert_eq!(xml, "<resultset query-id=\"00000000000000ab\"/>");
        assert_eq!(parse_resultset(&xml).unwrap(), r);
    }

    #[test]
    fn golden_document() {
        let r = ResultSet {
            query_id: QueryId(1),
            sites: vec![
                SiteResult::ok(
                    "cambridge",
                    vec![Row::for_target(
                        Target::Patients,
                        vec![
                            "cambridge".into(),
                            "0123456789abcdef".into(),
                            "F".into(),
                            "53".into(),
                        ],
                    )],
                    12,
                ),
                SiteResult::ok("oxford", vec![], 3),
                SiteResult::error("udine", "timeout", 5000),
            ],
        };
        let xml = serialize_resultset(&r);
        assert_eq!(
            xml,
            "<resultset query-id=\"0000000000000001\">\
             <site name=\"cambridge\" status=\"ok\" elapsed-ms=\"12\"><row>\
             <f n=\"site\">cambridge</f><f n=\"patient.id\">0123456789abcdef</f>\
             <f n=\"patient.sex\">F</f><f n=\"patient.age\">53</f></row></site>\
             <site name=\"oxford\" status=\"ok\" elapsed-ms=\"3\"/>\
             <site name=\"udine\" status=\"error\" elapsed-ms=\"5000\" message=\"timeout\"/>\
             </resultset>"
        );
        assert_eq!(parse_resultset(&xml).unwrap(), r);
    }

    #[test]
    fn escaping() {
        let r = ResultSet {
            query_id: QueryId(2),
            sites: vec![SiteResult::ok(
                "a",
                vec![Row::new(vec![("v".into(), "<L&R>".into())]).unwrap()],
                0,
            )],
        };
        let xml = serialize_resultset(&r);
        assert!(xml.contains("<f n=\"v\">&lt;L&amp;R&gt;</f>"));
        assert_eq!(parse_resultset(&xml).unwrap(), r);
    }

    #[test]
    fn syntax_and_schema_errors() {
        let q = "query-id=\"0000000000000001\"";
        assert!(matches!(
            parse_resultset("<resultset"),
            Err(XmlError::XmlSyntaxError(_))
        ));
        assert!(matches!(
            parse_resultset(&format!("<resultset {q}><site></resultset>")),
            Err(XmlError::XmlSyntaxError(_))
        ));
        assert!(matches!(
            parse_resultset(&format!("<resultset {q}/>trailing")),
            Err(XmlError::XmlSyntaxError(_))
        ));
        assert!(matches!(
            parse_resultset(&format!("<resultset {q}><x/></resultset>")),
            Err(XmlError::SchemaError(_))
        ));
        assert!(matches!(
            parse_resultset("<resultset query-id=\"xyz\"/>"),
            Err(XmlError::SchemaError(_))
        ));
        assert!(matches!(
            parse_resultset(&format!(
                "<resultset {q}><site name=\"a\" status=\"ok\" elapsed-ms=\"-1\"/></resultset>"
            )),
            Err(XmlError::SchemaError(_))
        ));
        assert!(matches!(
            parse_resultset(&format!(
                "<resultset {q}><site name=\"a\" status=\"ok\" elapsed-ms=\"1\"/>\
                 <site name=\"a\" status=\"ok\" elapsed-ms=\"1\"/></resultset>"
            )),
            Err(XmlError::SchemaError(_))
        ));
        assert!(matches!(
            parse_resultset(&format!("<resultset {q}>&bogus;</resultset>")),
            Err(XmlError::XmlSyntaxError(_))
        ));
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 &<>\"'.:/_-]{0,12}"
    }

    fn arb_site(name: String) -> impl Strategy<Value = SiteResult> {
        let rows = prop::collection::vec(
            prop::collection::vec(arb_text(), 1..5).prop_map(|vals| {
                Row::new(
                    vals.into_iter()
                        .enumerate()
                        .map(|(i, v)| (format!("f{i}&<'"), v))
                        .collect(),
                )
                .unwrap()
            }),
            0..4,
        );
        (rows, arb_text(), any::<bool>(), any::<u32>()).prop_map(move |(rows, msg, ok, ms)| {
            if ok {
                SiteResult::ok(name.clone(), rows, u64::from(ms))
            } else {
                SiteResult::error(name.clone(), msg, u64::from(ms))
            }
        })
    }

    fn arb_resultset() -> impl Strategy<Value = ResultSet> {
        (
            any::<u64>(),
            prop::collection::btree_set("[a-z&<>\"']{1,6}", 0..4),
        )
            .prop_flat_map(|(id, names)| {
                let sites: Vec<_> = names.into_iter().map(arb_site).collect();
                sites.prop_map(move |sites| ResultSet {
                    query_id: QueryId(id),
                    sites,
                })
            })
    }

    proptest! {
        #[test]
        fn resultset_round_trip(r in arb_resultset()) {
            let xml = serialize_resultset(&r);
            let back = parse_resultset(&xml).unwrap();
            prop_assert_eq!(serialize_resultset(&back), xml);
            prop_assert_eq!(back, r);
        }
    }
}
