//! ISO 639-1 code to English language name, as used in prompt templates.

use std::collections::BTreeMap;

const BUILTIN: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("ca", "Catalan"),
    ("cs", "Czech"),
    ("cy", "Welsh"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("et", "Estonian"),
    ("fa", "Persian"),
    ("fr", "French"),
    ("id", "Indonesian"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("lv", "Latvian"),
    ("mn", "Mongolian"),
    ("nl", "Dutch"),
    ("pt", "Portuguese"),
    ("ro", "Romanian"),
    ("ru", "Russian"),
    ("sl", "Slovenian"),
    ("sv", "Swedish"),
    ("ta", "Tamil"),
    ("tr", "Turkish"),
    ("zh", "Chinese"),
];

/// Code-to-name lookup with user overrides layered over the built-in table.
#[derive(Debug, Clone, Default)]
pub struct LanguageNames {
    overrides: BTreeMap<String, String>,
}

impl LanguageNames {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_override(mut self, code: impl Into<String>, name: impl Into<String>) -> Self {
        self.overrides.insert(code.into().to_ascii_lowercase(), name.into());
        self
    }

    /// Unknown codes are returned unchanged so a prompt is still producible.
    pub fn name(&self, code: &str) -> String {
        let code = code.to_ascii_lowercase();
        if let Some(name) = self.overrides.get(&code) {
            return name.clone();
        }
        // Accept region-tagged codes such as "de-DE" or "zh_CN".
        let primary = code.split(['-', '_']).next().unwrap_or(&code);
        BUILTIN
            .iter()
            .find(|(c, _)| *c == primary)
            .map(|(_, n)| (*n).to_string())
            .unwrap_or(code)
    }

    pub fn pair(&self, src: &str, tgt: &str) -> LanguagePair {
        LanguagePair {
            src: self.name(src),
            tgt: self.name(tgt),
        }
    }
}

/// Human-readable source and target language names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguagePair {
    pub src: String,
    pub tgt: String,
}

impl LanguagePair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}
