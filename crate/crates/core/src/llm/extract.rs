const FENCE: &str = "```";

/// Contents of the last well-formed fenced code block in `raw`.
///
/// Fences are matched pairwise in order of appearance. The opening fence
/// may carry an info string (`python`); the block body starts after the
/// opening line and loses one trailing newline. An unclosed final fence is
/// ignored.
pub fn extract_code_block(raw: &str) -> Option<String> {
    let fences: Vec<usize> = raw.match_indices(FENCE).map(|(i, _)| i).collect();
    let mut last = None;
    for pair in fences.chunks_exact(2) {
        let (open, close) = (pair[0] + FENCE.len(), pair[1]);
        let inner = &raw[open..close];
        let Some(newline) = inner.find('\n') else {
            continue;
        };
        let info = &inner[..newline];
        if info.trim().contains(char::is_whitespace) {
            continue;
        }
        let body = &inner[newline + 1..];
        last = Some(body.strip_suffix('\n').unwrap_or(body).to_string());
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_block() {
        assert_eq!(extract_code_block("```\nA\n```").as_deref(), Some("A"));
    }

    #[test]
    fn last_block_wins() {
        let raw = "plan...```\nA\n``` then ```\nB\n```";
        assert_eq!(extract_code_block(raw).as_deref(), Some("B"));
    }

    #[test]
    fn no_block() {
        assert_eq!(extract_code_block("no code here"), None);
    }

    #[test]
    fn info_string_is_dropped() {
        let raw = "Strategy: tile it.\n```python\nimport triton\n```\n";
        assert_eq!(extract_code_block(raw).as_deref(), Some("import triton"));
    }

    #[test]
    fn unclosed_trailing_fence_is_ignored() {
        let raw = "```\nA\n```\nand then ```python\nB";
        assert_eq!(extract_code_block(raw).as_deref(), Some("A"));
    }

    proptest! {
        #[test]
        fn interior_of_a_lone_block_is_verbatim(body in "[a-z \n=+()#.]{0,40}") {
            let raw = format!("```\n{body}\n```");
            prop_assert_eq!(extract_code_block(&raw), Some(body));
        }
    }
}
