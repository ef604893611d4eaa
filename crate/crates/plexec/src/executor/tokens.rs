/// Number of maximal runs of non-whitespace characters.
///
/// A stand-in for a model tokenizer: stable across platforms and cheap,
/// and adequate for comparing how context size grows.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}
