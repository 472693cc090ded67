use std::fmt::Write as _;

use super::parse::Section;
use crate::domain::{Instance, TaskSpec};

/// Builds the single prompt that asks for self-examples, step-by-step
/// reasoning, a verdict and a per-category distribution, each in its own
/// delimited section. Output depends only on the inputs.
pub fn build_prompt(spec: &TaskSpec, instance: &Instance) -> String {
    let k = spec.category_count();
    let mut p = String::new();
    let _ = writeln!(p, "You are assisting human annotators with a subjective classification task: {}.", spec.name);
    let _ = writeln!(p, "\nTASK\n{}", spec.description.trim());
    let _ = writeln!(p, "\nGUIDELINES\n{}", spec.guidelines.trim());
    p.push_str("\nCATEGORIES\n");
    for cat in &spec.categories {
        let _ = writeln!(
            p,
            "- {} ({}): {}",
            cat.category_id,
            cat.display_name,
            cat.definition.trim()
        );
    }
    if let Some(ctx) = instance.context.as_deref().filter(|c| !c.trim().is_empty()) {
        let _ = writeln!(p, "\nPRECEDING TURNS\n{}", ctx.trim());
    }
    let _ = writeln!(p, "\nUTTERANCE\n{}", instance.text.trim());
    let _ = writeln!(
        p,
        "\nWork through these steps in one response.\n\
         1. Write exactly {k} short example utterances of your own, one for each category, that clearly belong to it.\n\
         2. Analyse the utterance step by step. Cover lexical cues (such as hedging or intensifiers), \
         pragmatic signals (such as indirect complaints), dependencies on the preceding turns, and what \
         separates the closest competing categories. Do not state your final choice in this section.\n\
         3. Name the single category that fits best.\n\
         4. Give a probability for every category. The probabilities must sum to 1.\n\
         \nAnswer with exactly these four sections, each introduced by its header line:"
    );
    let _ = writeln!(p, "\n{}", Section::Examples.header());
    for cat in &spec.categories {
        let _ = writeln!(p, "{}: <example utterance>", cat.category_id);
    }
    let _ = writeln!(p, "{}\n<step-by-step analysis>", Section::Reasoning.header());
    let _ = writeln!(p, "{}\n<one category id>", Section::Verdict.header());
    let _ = writeln!(p, "{}", Section::Distribution.header());
    for cat in &spec.categories {
        let _ = writeln!(p, "{}: <probability>", cat.category_id);
    }
    p
}
