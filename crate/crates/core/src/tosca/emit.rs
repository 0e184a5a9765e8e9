//! Canonical YAML serialization of the template model.
//!
//! Output is accepted by the reader in [`super::yaml`] and parses back to an
//! equal model.

use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use super::model::{PropertyValue, TemplateDocument, Value};

fn is_simple_key(k: &str) -> bool {
    !k.is_empty()
        && k.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b'/'))
        && !k.starts_with(['-', '.'])
}

fn key(k: &str) -> String {
    if is_simple_key(k) {
        String::from(k)
    } else {
        quote(k)
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 || c == '\u{feff}' || c == '\u{7f}' => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Single-line flow rendering of any value.
pub fn flow_value(v: &Value) -> String {
    match v {
        Value::Null => String::from("null"),
        Value::Bool(b) => format!("{b}"),
        Value::Int(i) => format!("{i}"),
        Value::Float(f) => {
            let s = format!("{f:?}");
            if s.contains(['.', 'e', 'E']) {
                s
            } else {
                format!("{s}.0")
            }
        }
        Value::Str(s) => quote(s),
        Value::Seq(items) => {
            let parts: alloc::vec::Vec<String> = items.iter().map(flow_value).collect();
            format!("[{}]", parts.join(", "))
        }
        Value::Map(entries) => {
            let parts: alloc::vec::Vec<String> =
                entries.iter().map(|(k, v)| format!("{}: {}", key(k), flow_value(v))).collect();
            format!("{{{}}}", parts.join(", "))
        }
    }
}

/// Serializes a template to the YAML subset.
pub fn to_yaml(doc: &TemplateDocument) -> String {
    let mut out = String::new();
    if let Some(v) = &doc.tosca_definitions_version {
        let _ = writeln!(out, "tosca_definitions_version: {}", quote(v));
    }
    if let Some(d) = &doc.description {
        let _ = writeln!(out, "description: {}", quote(d));
    }
    for (k, v) in &doc.extras {
        let _ = writeln!(out, "{}: {}", key(k), flow_value(v));
    }
    out.push_str("topology_template:\n");
    if !doc.inputs.is_empty() {
        out.push_str("  inputs:\n");
        for (name, def) in &doc.inputs {
            let _ = writeln!(out, "    {}:", key(name));
            let _ = writeln!(out, "      type: {}", quote(&def.ty));
            if let Some(d) = &def.default {
                let _ = writeln!(out, "      default: {}", flow_value(d));
            }
        }
    }
    if !doc.node_templates.is_empty() {
        out.push_str("  node_templates:\n");
        for n in &doc.node_templates {
            let _ = writeln!(out, "    {}:", key(&n.name));
            let _ = writeln!(out, "      type: {}", quote(n.kind.name()));
            if !n.properties.is_empty() {
                out.push_str("      properties:\n");
                for (k, p) in &n.properties {
                    let rendered = match p {
                        PropertyValue::Value(v) => flow_value(v),
                        PropertyValue::GetInput(i) => format!("{{get_input: {}}}", quote(i)),
                    };
                    let _ = writeln!(out, "        {}: {}", key(k), rendered);
                }
            }
            if !n.requirements.is_empty() {
                out.push_str("      requirements:\n");
                for r in &n.requirements {
                    let _ = writeln!(out, "        - {}: {}", key(r.kind_name()), quote(&r.target));
                }
            }
            for (k, v) in &n.extras {
                let _ = writeln!(out, "      {}: {}", key(k), flow_value(v));
            }
        }
    }
    if !doc.outputs.is_empty() {
        out.push_str("  outputs:\n");
        for (k, v) in &doc.outputs {
            let _ = writeln!(out, "    {}:", key(k));
            let _ = writeln!(out, "      value: {}", flow_value(v));
        }
    }
    if !doc.policies.is_empty() {
        out.push_str("  policies:\n");
        for p in &doc.policies {
            let _ = writeln!(out, "    - {}: {}", key(p.kind.name()), flow_value(&p.value));
        }
    }
    for (k, v) in &doc.topology_extras {
        let _ = writeln!(out, "  {}: {}", key(k), flow_value(v));
    }
    out
}
