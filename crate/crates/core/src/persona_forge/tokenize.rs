//! Deterministic sub-word token counter used for lexical statistics.
//!
//! Text is pre-split into letter runs, digit runs and single non-space
//! symbols. A letter run of length `n` counts as `ceil(n / 5)` tokens, a digit
//! run as `ceil(n / 3)`, each symbol as one token. The rule approximates
//! byte-pair tokenizers on English prose without shipping a vocabulary.

pub fn count_tokens(text: &str) -> usize {
    #[derive(PartialEq, Clone, Copy)]
    enum Run {
        None,
        Letters,
        Digits,
    }
    let mut total = 0;
    let mut run = Run::None;
    let mut len = 0usize;
    let flush = |run: Run, len: usize| match run {
        Run::None => 0,
        Run::Letters => len.div_ceil(5),
        Run::Digits => len.div_ceil(3),
    };
    for c in text.chars() {
        let kind = if c.is_alphabetic() {
            Run::Letters
        } else if c.is_ascii_digit() {
            Run::Digits
        } else {
            Run::None
        };
        if kind != run {
            total += flush(run, len);
            run = kind;
            len = 0;
        }
        match kind {
            Run::None if !c.is_whitespace() => total += 1,
            Run::None => {}
            _ => len += 1,
        }
    }
    total + flush(run, len)
}

#[cfg(test)]
mod tests {
    use super::count_tokens;

    #[test]
    fn counting_rule() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("cat"), 1);
        assert_eq!(count_tokens("hello"), 1);
        assert_eq!(count_tokens("background"), 2);
        assert_eq!(count_tokens("self-expression"), 1 + 1 + 2);
        assert_eq!(count_tokens("born 1984."), 1 + 2 + 1);
        assert_eq!(count_tokens("  a  b "), 2);
    }
}
