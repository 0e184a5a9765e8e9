//! The examples in docs/rules.md compile, or fail, exactly as written there.

use std::path::Path;

use miniorc_core::broker::compile_rules;

fn blocks(doc: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut current: Option<(String, String)> = None;
    for line in doc.lines() {
        match (&mut current, line.strip_prefix("```")) {
            (None, Some(tag)) => current = Some((tag.to_string(), String::new())),
            (Some(_), Some("")) => out.push(current.take().expect("open block")),
            (Some((_, body)), _) => {
                body.push_str(line);
                body.push('\n');
            }
            (None, None) => {}
        }
    }
    out
}

#[test]
fn rule_examples_behave_as_documented() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/rules.md");
    let doc = std::fs::read_to_string(&path).expect("docs/rules.md");
    let (mut valid, mut invalid) = (0, 0);
    for (tag, body) in blocks(&doc) {
        match tag.as_str() {
            "rules" => {
                let compiled = compile_rules(&body).unwrap_or_else(|e| panic!("{e} in\n{body}"));
                assert_eq!(compile_rules(&compiled.to_text()).unwrap().filters, compiled.filters);
                valid += 1;
            }
            "rules-invalid" => {
                let expected = body.lines().next().and_then(|l| l.strip_prefix("# ")).expect("expected error comment");
                let err = compile_rules(&body).expect_err(&body);
                assert_eq!(err.to_string(), expected);
                invalid += 1;
            }
            _ => {}
        }
    }
    assert!(valid >= 5 && invalid >= 8, "{valid} valid, {invalid} invalid examples");
}
