use std::sync::LazyLock;

use regex::Regex;

// mteval-v13a rules, applied in order to the space-padded line.
static RULES: LazyLock<[(Regex, &'static str); 4]> = LazyLock::new(|| {
    [
        // Symbols and most ASCII punctuation except . , ' -
        (
            Regex::new(r"([\x7B-\x7E\x5B-\x60\x20-\x26\x28-\x2B\x3A-\x40/])").unwrap(),
            " ${1} ",
        ),
        // period and comma unless preceded by a digit
        (Regex::new(r"([^0-9])([\.,])").unwrap(), "${1} ${2} "),
        // period and comma unless followed by a digit
        (Regex::new(r"([\.,])([^0-9])").unwrap(), " ${1} ${2}"),
        // dash when preceded by a digit
        (Regex::new(r"([0-9])(-)").unwrap(), "${1} ${2} "),
    ]
});

/// Whitespace as understood by Python's `str.split()`, which the reference
/// scorer uses: Unicode White_Space plus the ASCII separators 0x1C-0x1F.
fn is_py_whitespace(c: char) -> bool {
    c.is_whitespace() || ('\x1c'..='\x1f').contains(&c)
}

/// The 13a-normalized line with tokens joined by single spaces.
pub fn normalize_13a(text: &str) -> String {
    let mut line = text.trim_end_matches(is_py_whitespace).to_string();
    line = line.replace("<skipped>", "");
    line = line.replace("-\n", "");
    line = line.replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, rep) in RULES.iter() {
        line = re.replace_all(&line, *rep).into_owned();
    }
    line.split(is_py_whitespace)
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case-preserving 13a tokenization.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    normalize_13a(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_split() {
        assert_eq!(tokenize_13a("Hello, world!"), ["Hello", ",", "world", "!"]);
        assert!(tokenize_13a("").is_empty());
        assert_eq!(tokenize_13a("abc"), ["abc"]);
    }

    // Expected strings produced by sacrebleu 2.0.0 `Tokenizer13a`.
    #[test]
    fn matches_reference_tokenizer() {
        let cases = [
            ("It costs $3.50, right?", "It costs $ 3.50 , right ?"),
            ("1,000 people - 2-3 days.", "1,000 people - 2 - 3 days ."),
            ("Don't stop: e.g. this", "Don't stop : e . g . this"),
            ("a &amp; b &lt;c&gt;", "a & b < c >"),
            ("Sie sagte: \u{201e}Nein\u{201c}.", "Sie sagte : \u{201e}Nein\u{201c} ."),
            ("x<skipped>y", "xy"),
            ("end.", "end ."),
            ("3.", "3 ."),
            (".5", ". 5"),
            ("well-known", "well-known"),
        ];
        for (input, expected) in cases {
            assert_eq!(normalize_13a(input), expected, "input: {input:?}");
        }
    }
}
