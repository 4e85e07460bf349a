//! Small text utilities shared by prompts, parsers, and transcripts.

/// Default character budget for execution output fed back into prompts.
pub const DEFAULT_TRUNCATION_CHARS: usize = 20_000;

/// Keeps the head and tail halves of `text` when it exceeds `limit` characters.
///
/// Returns the (possibly shortened) text and whether anything was elided.
pub fn truncate_middle(text: &str, limit: usize) -> (String, bool) {
    let total = text.chars().count();
    if total <= limit {
        return (text.to_string(), false);
    }
    let head_len = limit / 2;
    let tail_len = limit - head_len;
    let head: String = text.chars().take(head_len).collect();
    let tail: String = text.chars().skip(total - tail_len).collect();
    let elided = total - head_len - tail_len;
    (
        format!("{head}\n...[{elided} characters truncated]...\n{tail}"),
        true,
    )
}

/// Lowercases and collapses whitespace; the equality key for idea dedup.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// First `n` characters of `text`, for error messages.
pub fn head(text: &str, n: usize) -> String {
    let mut out: String = text.chars().take(n).collect();
    if text.chars().count() > n {
        out.push_str("...");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_text_untouched() {
        assert_eq!(truncate_middle("abc", 10), ("abc".to_string(), false));
    }

    #[test]
    fn long_text_keeps_head_and_tail() {
        let text: String = (0..100).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let (out, cut) = truncate_middle(&text, 20);
        assert!(cut);
        assert!(out.starts_with(&text[..10]));
        assert!(out.ends_with(&text[90..]));
        assert!(out.contains("[80 characters truncated]"));
    }

    #[test]
    fn multibyte_safe() {
        let text = "é".repeat(50);
        let (out, cut) = truncate_middle(&text, 10);
        assert!(cut);
        assert!(out.starts_with("ééééé"));
    }

    #[test]
    fn normalization_collapses_case_and_space() {
        assert_eq!(normalize("  Use  LightGBM\n baseline "), "use lightgbm baseline");
    }
}
