use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetId;
use crate::error::{Error, Result};

pub const DIRECTIVE_SELECTING: &str = "Begin your response by selecting one of the valid options, then provide a concise explanation for your rating.";
pub const DIRECTIVE_MENTIONING: &str = "Begin your response by mentioning one of the valid options, then provide a concise explanation for your rating.";

/// The question human annotators saw, the raw options it offers, and the
/// answer-format directive appended for models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub dataset: DatasetId,
    pub instruction: String,
    pub options: Vec<i64>,
    pub directive: String,
}

impl PromptTemplate {
    pub fn new(dataset: DatasetId, instruction: &str, options: Vec<i64>, directive: &str) -> Result<Self> {
        let t = PromptTemplate {
            dataset,
            instruction: instruction.to_string(),
            options,
            directive: directive.to_string(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruction.trim().is_empty() {
            return Err(Error::Config(format!("empty instruction in the {} template", self.dataset)));
        }
        if self.options.is_empty() {
            return Err(Error::Config(format!("no valid options in the {} template", self.dataset)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: PromptTemplate = toml::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// The prompt used for each of the five source datasets.
    pub fn builtin(dataset: &DatasetId) -> Option<PromptTemplate> {
        let (instruction, options, directive): (&str, &[i64], &str) = match dataset.as_str() {
            "awa" => (
                "How much could this post be seen as toxic/hateful/disrespectful or offensive to anyone, on a scale from 1 (not at all) to 5 (very much so)? Valid options: 1, 2, 3, 4, 5.",
                &[1, 2, 3, 4, 5],
                DIRECTIVE_SELECTING,
            ),
            "mhsc" => (
                "Does this comment contain hate speech, defined as \u{201c}bias-motivated, hostile and malicious language targeted at a person/group because of their actual or perceived innate characteristics, especially when the group is unnecessarily labeled (e.g., \u{201c}jew bankers\u{201d}, \u{201c}n\u{2013} hooligans\u{201d}).\u{201d} The comment contains hate speech if slurs or derogatory language are used toward any person or group regardless of whether or not the target is a member of the slur-target group. (e.g. a comment calling Trump a faggot or a n***** still contains hate speech). Valid options are 1 (Yes), 2 (Unclear), 3 (No).",
                &[1, 2, 3],
                DIRECTIVE_MENTIONING,
            ),
            "nlpos" => (
                "Do you think this post is hateful speech? Valid options are 1 (Yes), 2 (Not sure), 3 (No).",
                &[1, 2, 3],
                DIRECTIVE_MENTIONING,
            ),
            "popq" => (
                "Consider you read the above comment on Reddit. How offensive do you think it is, on a scale from 1 (not offensive at all) to 5 (very offensive)? Valid options: 1, 2, 3, 4, 5.",
                &[1, 2, 3, 4, 5],
                DIRECTIVE_SELECTING,
            ),
            "sbic" => (
                "Could this post be considered offensive, disrespectful, or toxic to anyone/someone? Valid options are: 1 (Yes, this could be offensive), 2 (Maybe, I'm not sure), 3 (No, this is harmless), 4 (I don't understand the post).",
                &[1, 2, 3, 4],
                DIRECTIVE_MENTIONING,
            ),
            _ => return None,
        };
        Some(PromptTemplate {
            dataset: dataset.clone(),
            instruction: instruction.to_string(),
            options: options.to_vec(),
            directive: directive.to_string(),
        })
    }
}

/// Document text, a blank line, then the question and the directive.
pub fn render_prompt(text: &str, template: &PromptTemplate) -> Result<String> {
    template.validate()?;
    if text.trim().is_empty() {
        return Err(Error::Precondition("document text is empty".into()));
    }
    let mut out = String::with_capacity(text.len() + template.instruction.len() + template.directive.len() + 3);
    out.push_str(text.trim_end());
    out.push_str("\n\n");
    out.push_str(template.instruction.trim());
    if !template.directive.is_empty() {
        out.push(' ');
        out.push_str(template.directive.trim());
    }
    Ok(out)
}

/// First integer token in `response` that is one of `options`. A token is a
/// maximal run of ASCII digits not glued to a letter, digit, or decimal point.
pub fn extract_label(response: &str, options: &[i64]) -> Result<i64> {
    let chars: Vec<char> = response.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let before_ok = start == 0 || {
            let p = chars[start - 1];
            !p.is_alphanumeric()
                && !(p == '.' && start >= 2 && chars[start - 2].is_ascii_digit())
                && p != '-'
        };
        let after_ok = i == chars.len() || {
            let n = chars[i];
            !n.is_alphanumeric() && !(n == '.' && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit()))
        };
        if before_ok && after_ok {
            let token: String = chars[start..i].iter().collect();
            if let Ok(v) = token.parse::<i64>() {
                if options.contains(&v) {
                    return Ok(v);
                }
            }
        }
    }
    Err(Error::UnparseableResponse(response.chars().take(80).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(s: &str) -> DatasetId {
        DatasetId::new(s).unwrap()
    }

    #[test]
    fn popq_prompt_ending() {
        let t = PromptTemplate::builtin(&ds("popq")).unwrap();
        let p = render_prompt("you people are the worst", &t).unwrap();
        assert!(p.starts_with("you people are the worst\n\n"));
        assert!(p.ends_with("Valid options: 1, 2, 3, 4, 5. Begin your response by selecting one of the valid options, then provide a concise explanation for your rating."));
    }

    #[test]
    fn nlpos_and_sbic_options() {
        let t = PromptTemplate::builtin(&ds("nlpos")).unwrap();
        let p = render_prompt("text", &t).unwrap();
        assert!(p.contains("1 (Yes), 2 (Not sure), 3 (No)"));
        assert!(p.ends_with(DIRECTIVE_MENTIONING));
        let s = PromptTemplate::builtin(&ds("sbic")).unwrap();
        assert_eq!(s.options, vec![1, 2, 3, 4]);
        for d in crate::data::DatasetId::KNOWN {
            let t = PromptTemplate::builtin(&ds(d)).unwrap();
            assert_eq!(t.options, crate::data::LabelScale::preset(&ds(d)).unwrap().raw_options());
        }
    }

    #[test]
    fn empty_instruction_is_config_error() {
        let mut t = PromptTemplate::builtin(&ds("awa")).unwrap();
        t.instruction = "  ".into();
        assert!(matches!(render_prompt("x", &t), Err(Error::Config(_))));
        assert!(matches!(render_prompt(" ", &PromptTemplate::builtin(&ds("awa")).unwrap()), Err(Error::Precondition(_))));
    }

    #[test]
    fn extraction_examples() {
        let five = [1, 2, 3, 4, 5];
        assert_eq!(extract_label("3. The comment is mildly rude", &five).unwrap(), 3);
        assert_eq!(extract_label("I would rate this 2 (Unclear) because…", &[1, 2, 3]).unwrap(), 2);
        assert!(matches!(extract_label("This is offensive.", &five), Err(Error::UnparseableResponse(_))));
        assert_eq!(extract_label("**4** - offensive", &five).unwrap(), 4);
        assert_eq!(extract_label("Rating: 10/10 no, 2", &five).unwrap(), 2);
        assert_eq!(extract_label("2.5 is between; final 3", &five).unwrap(), 3);
        assert_eq!(extract_label("  \n\t5", &five).unwrap(), 5);
        assert!(extract_label("top3 and x4y", &five).is_err());
    }

    #[test]
    fn first_match_by_exhaustive_position_scan() {
        // Place a valid option at each token position among distractor tokens;
        // the earliest valid option must always be returned.
        let distractors = ["the", "7", "rating", "0", "is"];
        for pos in 0..=distractors.len() {
            let mut tokens: Vec<String> = distractors.iter().map(|s| s.to_string()).collect();
            tokens.insert(pos, "2".into());
            tokens.push("3".into());
            let text = tokens.join(" ");
            assert_eq!(extract_label(&text, &[1, 2, 3]).unwrap(), 2, "{text}");
        }
    }

    #[test]
    fn template_from_toml() {
        let t = PromptTemplate::from_toml(
            "dataset = \"synth\"\ninstruction = \"Rate it.\"\noptions = [1, 2]\ndirective = \"Answer first.\"\n",
        )
        .unwrap();
        assert_eq!(render_prompt("doc", &t).unwrap(), "doc\n\nRate it. Answer first.");
        assert!(PromptTemplate::from_toml("dataset = \"x\"\ninstruction = \"\"\noptions = [1]\ndirective = \"\"\n").is_err());
    }
}
