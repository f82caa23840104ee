use serde::{Deserialize, Serialize};

use crate::decoder::DecodeTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsingErrorReport {
    pub completions: usize,
    pub invalid_json: usize,
    pub invalid_value_format: usize,
    pub text_not_found: usize,
}

/// Percentage with two decimals; `"n/a"` when there is nothing to divide by.
pub fn format_rate(count: usize, total: usize) -> String {
    if total == 0 {
        return "n/a".into();
    }
    format!("{:.2}%", 100.0 * count as f64 / total as f64)
}

pub fn parsing_error_report<'a>(traces: impl IntoIterator<Item = &'a DecodeTrace>) -> ParsingErrorReport {
    let mut r = ParsingErrorReport { completions: 0, invalid_json: 0, invalid_value_format: 0, text_not_found: 0 };
    for t in traces {
        r.completions += t.completions;
        r.invalid_json += t.totals.invalid_json;
        r.invalid_value_format += t.totals.invalid_value_format;
        r.text_not_found += t.totals.text_not_found;
    }
    r
}

impl ParsingErrorReport {
    /// Rates as `(category, formatted rate)` in table order.
    pub fn rates(&self) -> [(&'static str, String); 3] {
        [
            ("Invalid JSON", format_rate(self.invalid_json, self.completions)),
            ("Invalid Entity Value Format", format_rate(self.invalid_value_format, self.completions)),
            ("Entity Text Not Found", format_rate(self.text_not_found, self.completions)),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("Parsing errors over {} completions\n", self.completions);
        for (name, rate) in self.rates() {
            out.push_str(&format!("{name:<28}{rate:>8}\n"));
        }
        out
    }
}
