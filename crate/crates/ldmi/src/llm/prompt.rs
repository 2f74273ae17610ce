use crate::error::{Error, Result};

/// Bumped whenever the template wording changes, so cached responses can be
/// regenerated; part of the cache key via the prompt text itself.
pub const PROMPT_VERSION: &str = "v1";

/// A fully rendered analysis prompt. Deterministic function of the title list
/// and the template version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub system_text: String,
    pub user_text: String,
}

/// Render the multi-interest analysis prompt for an ordered title list.
/// Empty titles (after whitespace normalization) are replaced by
/// `item <position>` so every line is non-empty.
pub fn build_prompt(titles: &[String]) -> Result<PromptText> {
    if titles.is_empty() {
        return Err(Error::EmptyTitleList);
    }
    let system_text = format!(
        "You are an expert at analyzing user shopping behavior. \
         Group the user's items into distinct interest clusters, where each \
         cluster reflects one coherent interest. (template {PROMPT_VERSION})"
    );
    let mut user_text = String::from(
        "Below is a numbered list of items a user engaged with, in order.\n\n",
    );
    for (pos, title) in titles.iter().enumerate() {
        let t = title.split_whitespace().collect::<Vec<_>>().join(" ");
        let t = if t.is_empty() {
            format!("item {}", pos + 1)
        } else {
            t
        };
        user_text.push_str(&format!("{}. {}\n", pos + 1, t));
    }
    user_text.push_str(
        "\nGroup these items into distinct semantic interest clusters, each \
         reflecting a different user interest. Give every cluster a short \
         descriptive label. Refer to items strictly by their numbers.\n\
         Answer with a single JSON object and nothing else, mapping each \
         cluster label to the list of item numbers it contains, e.g.\n\
         {\"Hair Care\": [1, 4], \"Board Games\": [2, 3]}\n",
    );
    Ok(PromptText {
        system_text,
        user_text,
    })
}
