//! Audit and baseline prompt templates, shipped verbatim as text assets.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::OracleError;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    AuditClassification,
    AuditGenerationWhiteBox,
    AuditGenerationBlackBox,
    BaselineClassification,
    BaselineGenerationBlackBox,
    BaselineGenerationWhiteBox,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::AuditClassification,
        TemplateId::AuditGenerationWhiteBox,
        TemplateId::AuditGenerationBlackBox,
        TemplateId::BaselineClassification,
        TemplateId::BaselineGenerationBlackBox,
        TemplateId::BaselineGenerationWhiteBox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::AuditClassification => "audit_classification",
            TemplateId::AuditGenerationWhiteBox => "audit_generation_white_box",
            TemplateId::AuditGenerationBlackBox => "audit_generation_black_box",
            TemplateId::BaselineClassification => "baseline_classification",
            TemplateId::BaselineGenerationBlackBox => "baseline_generation_black_box",
            TemplateId::BaselineGenerationWhiteBox => "baseline_generation_white_box",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::AuditClassification => {
                include_str!("../../assets/templates/audit_classification.txt")
            }
            TemplateId::AuditGenerationWhiteBox => {
                include_str!("../../assets/templates/audit_generation_white_box.txt")
            }
            TemplateId::AuditGenerationBlackBox => {
                include_str!("../../assets/templates/audit_generation_black_box.txt")
            }
            TemplateId::BaselineClassification => {
                include_str!("../../assets/templates/baseline_classification.txt")
            }
            TemplateId::BaselineGenerationBlackBox => {
                include_str!("../../assets/templates/baseline_generation_black_box.txt")
            }
            TemplateId::BaselineGenerationWhiteBox => {
                include_str!("../../assets/templates/baseline_generation_white_box.txt")
            }
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (start, end) in placeholder_spans(self.text()) {
            let name = &self.text()[start + 1..end - 1];
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Substitutes every `{name}` placeholder. Missing values are an error;
    /// extra values are ignored.
    pub fn render(self, values: &BTreeMap<&str, String>) -> Result<String, OracleError> {
        let text = self.text();
        let mut out = String::with_capacity(text.len() + 256);
        let mut last = 0;
        for (start, end) in placeholder_spans(text) {
            let name = &text[start + 1..end - 1];
            let value = values.get(name).ok_or_else(|| {
                OracleError::Template(format!("{} needs a value for {{{name}}}", self.name()))
            })?;
            out.push_str(&text[last..start]);
            out.push_str(value);
            last = end;
        }
        out.push_str(&text[last..]);
        Ok(out)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Byte spans of `{identifier}` tokens.
fn placeholder_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                spans.push((i, j + 1));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_match_assets() {
        assert_eq!(
            TemplateId::AuditClassification.placeholders(),
            vec!["formatted_context", "query_article"]
        );
        assert_eq!(
            TemplateId::AuditGenerationWhiteBox.placeholders(),
            vec!["canary", "Y1_TARGET", "Y2_CONTROL", "exemplar_context"]
        );
        assert_eq!(
            TemplateId::AuditGenerationBlackBox.placeholders(),
            vec!["canary", "Y1_TARGET", "Y2_CONTROL", "exemplar_context"]
        );
        assert_eq!(
            TemplateId::BaselineGenerationWhiteBox.placeholders(),
            vec!["canary_text"]
        );
    }

    #[test]
    fn render_substitutes_all() {
        let mut v = BTreeMap::new();
        v.insert("formatted_context", "A\n\nB".to_string());
        v.insert("query_article", "needle".to_string());
        let s = TemplateId::AuditClassification.render(&v).unwrap();
        assert!(s.contains("<context>\nA\n\nB\n</context>"));
        assert!(s.contains("<query>\nneedle\n</query>"));
        assert!(!s.contains('{'));
    }

    #[test]
    fn render_reports_missing_values() {
        let v = BTreeMap::new();
        assert!(matches!(
            TemplateId::AuditClassification.render(&v),
            Err(OracleError::Template(_))
        ));
    }

    #[test]
    fn every_template_is_nonempty() {
        for t in TemplateId::ALL {
            assert!(!t.text().trim().is_empty(), "{t}");
        }
    }
}
