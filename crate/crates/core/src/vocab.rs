//! Shared token vocabulary for prompts, responses and critiques.
//!
//! Layout (64 ids): digits `0`..`9`, letters `a`..`p`, arithmetic operators,
//! control tokens, critique words, and a reserved tail that no task emits.

pub type Token = u32;

pub const VOCAB_SIZE: usize = 64;

pub const DIGIT_0: Token = 0;
pub const LETTER_A: Token = 10;
pub const NUM_LETTERS: u32 = 16;
pub const PLUS: Token = 26;
pub const MINUS: Token = 27;
pub const TIMES: Token = 28;
pub const EQ: Token = 29;
pub const BOS: Token = 30;
pub const EOS: Token = 31;
pub const SEP: Token = 32;
pub const FAIL: Token = 33;
pub const OK: Token = 34;
/// Precedes the reference answer inside a critique.
pub const GT: Token = 35;
/// Precedes the observed count in a constraint report.
pub const HAVE: Token = 36;
/// Precedes the required count in a constraint report.
pub const NEED: Token = 37;
pub const TASK_UNIQ: Token = 38;
pub const TASK_SORT: Token = 39;

pub fn digit(d: u32) -> Token {
    debug_assert!(d < 10);
    DIGIT_0 + d
}

pub fn is_digit(t: Token) -> bool {
    t < 10
}

pub fn letter(i: u32) -> Token {
    debug_assert!(i < NUM_LETTERS);
    LETTER_A + i
}

pub fn is_letter(t: Token) -> bool {
    (LETTER_A..LETTER_A + NUM_LETTERS).contains(&t)
}

/// Decimal digits of `n`, most significant first.
pub fn number(n: u64) -> Vec<Token> {
    n.to_string()
        .bytes()
        .map(|b| digit(u32::from(b - b'0')))
        .collect()
}

/// Human-readable rendering, mostly for logs and the CLI.
pub fn render(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|&t| match t {
            0..=9 => char::from(b'0' + t as u8).to_string(),
            10..=25 => char::from(b'a' + (t - LETTER_A) as u8).to_string(),
            PLUS => "+".into(),
            MINUS => "-".into(),
            TIMES => "*".into(),
            EQ => "=".into(),
            BOS => "<bos>".into(),
            EOS => "<eos>".into(),
            SEP => "|".into(),
            FAIL => "<fail>".into(),
            OK => "<ok>".into(),
            GT => "<gt>".into(),
            HAVE => "<have>".into(),
            NEED => "<need>".into(),
            TASK_UNIQ => "<uniq>".into(),
            TASK_SORT => "<sort>".into(),
            other => format!("<r{other}>"),
        })
        .collect::<Vec<_>>()
        .join("")
}
