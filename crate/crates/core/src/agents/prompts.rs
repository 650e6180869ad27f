//! Prompt templates. The wording lives in `templates/*.txt` and can be
//! overridden per file from a directory at run time; only the placeholders
//! and the requested answer format are contractual.

use std::collections::BTreeMap;
use std::path::Path;

const SHIPPED: [(&str, &str); 9] = [
    ("relevance", include_str!("../../templates/relevance.txt")),
    ("auditor", include_str!("../../templates/auditor.txt")),
    ("critic", include_str!("../../templates/critic.txt")),
    ("consensus", include_str!("../../templates/consensus.txt")),
    ("modeler", include_str!("../../templates/modeler.txt")),
    ("implementer", include_str!("../../templates/implementer.txt")),
    ("fixer", include_str!("../../templates/fixer.txt")),
    ("reviewer", include_str!("../../templates/reviewer.txt")),
    ("reask", include_str!("../../templates/reask.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            templates: SHIPPED.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl PromptSet {
    /// Shipped templates, with any `<name>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for name in SHIPPED.iter().map(|(k, _)| *k) {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                set.templates.insert(name.to_string(), std::fs::read_to_string(path)?);
            }
        }
        Ok(set)
    }

    /// Substitutes `{{key}}` placeholders. Unknown template names panic:
    /// every caller uses one of the shipped names.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut out = self
            .templates
            .get(name)
            .unwrap_or_else(|| panic!("no prompt template named {name:?}"))
            .clone();
        for (key, value) in vars {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }
}
