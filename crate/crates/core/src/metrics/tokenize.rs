/// Splits source text into tokens.
///
/// Runs of letters, digits and `_` form one token; string and character
/// literals (`"..."`, `'...'`, with backslash escapes) form one token; every
/// other non-whitespace character is its own token.
pub fn tokenize_code(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if is_word_char(c) {
            let mut end = start;
            while let Some(&(i, c)) = chars.peek() {
                if !is_word_char(c) {
                    break;
                }
                end = i + c.len_utf8();
                chars.next();
            }
            tokens.push(text[start..end].to_string());
        } else if c == '"' || c == '\'' {
            chars.next();
            let mut end = start + 1;
            let mut escaped = false;
            for (i, ch) in chars.by_ref() {
                end = i + ch.len_utf8();
                if escaped {
                    escaped = false;
                } else if ch == '\\' {
                    escaped = true;
                } else if ch == c {
                    break;
                }
            }
            tokens.push(text[start..end].to_string());
        } else {
            chars.next();
            tokens.push(c.to_string());
        }
    }
    tokens
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub(crate) fn is_identifier(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
}

pub(crate) fn is_number(token: &str) -> bool {
    token.chars().next().is_some_and(|c| c.is_ascii_digit())
}

pub(crate) fn is_string_literal(token: &str) -> bool {
    token.starts_with('"') || token.starts_with('\'')
}
