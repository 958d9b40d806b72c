use super::Role;
use crate::taxonomy::TraitSet;

/// The judge's fixed trait list.
pub fn judge_traits() -> TraitSet {
    TraitSet::new(["fair", "ethical"], true).expect("static judge traits")
}

fn article_for(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Persona system prompt shared by every agent, judge included.
///
/// Advocates get "a"/"an" by the first letter of the trait list. The judge
/// prompt is reproduced exactly as the fixed judge wording, which always
/// uses "an" and lists "responses, or decisions" among contributions.
pub fn render_system_prompt(traits: &TraitSet, role: Role) -> String {
    let names = traits.traits.join(", ");
    let (article, contribution) = match role {
        Role::Judge => ("an", "arguments, responses, or decisions"),
        Role::Prosecution | Role::Defense => (article_for(&names), "arguments"),
    };
    format!(
        "You are {article} {names} {role_cap} Agent in a court case. \
         Your role is to contribute to the trial by providing {contribution} based on the context of the case. \
         Adopt a tone that reflects your personality as {article} {names} {role_lower}. \
         Be super concise.",
        role_cap = role.capitalized(),
        role_lower = role.as_str(),
    )
}
