use crate::cultural_space::{CulturalConfiguration, CulturalSchema};

use super::ParseError;

pub(crate) const CONDITIONING_HEADER: &str = "Conditioning:";

/// Renders the generation prompt. Only the conditioning block depends on the
/// configuration; everything after it is fixed per schema.
pub fn render_persona_prompt(schema: &CulturalSchema, config: &CulturalConfiguration) -> String {
    let n = number_word(schema.len());
    let mut out = String::new();
    out.push_str(CONDITIONING_HEADER);
    out.push('\n');
    for (var, level) in config.assignments(schema) {
        out.push_str(&format!("- {}: {}\n", var.label, level.label));
    }
    out.push_str(&format!(
        "\nTask:\n\
         You are asked to generate a single detailed persona profile that is consistent with the \
         conditioning above. The persona must be coherent, realistic, and explicitly tie behaviors, \
         life choices, and attitudes back to each of the {n} cultural variables listed. Use a \
         professional-but-readable tone.\n\
         \n\
         Deliverables (strict order):\n\
         1. Profile metadata: name, age, gender (optional), occupation, country/region (plausible \
         given the cultural profile).\n\
         2. Short bio: 2-4 sentences describing life situation and background.\n\
         3. Cultural variable mapping: for each of the {n} variables, 1-2 sentences explaining how \
         the variable manifests in attitudes and daily behavior (numbered list matching variable \
         names).\n\
         \n\
         Constraints:\n\
         - Each sentence in the cultural mapping must explicitly reference the corresponding \
         conditioning variable.\n\
         - No contradiction of the conditioning is allowed (e.g., `never_justifiable` must be \
         reflected).\n\
         - The persona must remain within plausible real-world bounds.\n\
         - Output length must be between approximately 250 and 500 words.\n"
    ));
    out
}

pub fn repair_instruction(err: &ParseError, schema: &CulturalSchema) -> String {
    let names: Vec<&str> = schema.variables().iter().map(|v| v.label.as_str()).collect();
    format!(
        "Your previous reply could not be used ({err}). Reply again with the complete persona \
         profile using exactly three sections titled \"Profile metadata\" (lines Name:, Age:, \
         Gender:, Occupation:, Country/Region:), \"Short bio\" and \"Cultural variable mapping\". \
         The mapping must be a numbered list with one entry per variable, each starting with the \
         variable name: {}.",
        names.join(", ")
    )
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 21] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
        "twenty",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cultural_space::ConfigId;

    fn conditioning_block(prompt: &str) -> &str {
        let end = prompt.find("\nTask:").unwrap();
        &prompt[..end]
    }

    #[test]
    fn every_variable_label_appears_once_in_conditioning() {
        let schema = CulturalSchema::default_schema();
        for id in [0u64, 4_321, 93_311] {
            let c = schema.decode(ConfigId(id)).unwrap();
            let prompt = render_persona_prompt(&schema, &c);
            let block = conditioning_block(&prompt);
            for var in schema.variables() {
                assert_eq!(block.matches(var.label.as_str()).count(), 1, "{}", var.label);
            }
            assert!(prompt.contains("between approximately 250 and 500 words"));
            assert!(prompt.contains("each of the ten cultural variables"));
        }
    }

    #[test]
    fn distinct_configs_differ_only_in_conditioning() {
        let schema = CulturalSchema::default_schema();
        let a = render_persona_prompt(&schema, &schema.decode(ConfigId(17)).unwrap());
        let b = render_persona_prompt(&schema, &schema.decode(ConfigId(90_000)).unwrap());
        assert_ne!(conditioning_block(&a), conditioning_block(&b));
        assert_eq!(&a[conditioning_block(&a).len()..], &b[conditioning_block(&b).len()..]);
        let (la, lb): (Vec<_>, Vec<_>) = (a.lines().collect(), b.lines().collect());
        assert_eq!(la.len(), lb.len());
        let header_lines = 1 + schema.len();
        for (i, (x, y)) in la.iter().zip(&lb).enumerate() {
            if i >= header_lines {
                assert_eq!(x, y);
            }
        }
    }
}
