use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::{describe_low_level, Property, PropertyLevel, PropertyLevels};

use PropertyLevel::*;

const CHOICE_LETTERS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

/// A worked example shown to the model: a description and its answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    pub description: String,
    pub answers: PropertyLevels,
}

impl IclExample {
    pub fn new(description: impl Into<String>, answers: PropertyLevels) -> Self {
        Self {
            description: description.into(),
            answers,
        }
    }
}

/// The six default worked examples: the extremes, the middle, and mixes
/// including two partial descriptions whose missing property is `Medium`.
pub fn default_icl_examples() -> Vec<IclExample> {
    let full = |l: PropertyLevels| IclExample::new(describe_low_level(&l), l);
    vec![
        full(PropertyLevels::uniform(VeryLow)),
        full(PropertyLevels::uniform(VeryHigh)),
        full(PropertyLevels::uniform(Medium)),
        full(PropertyLevels::new(High, Low, VeryHigh, VeryLow)),
        IclExample::new(
            "This environment has low restitution when collision, very high friction, and high damping.",
            PropertyLevels::new(Low, VeryHigh, Medium, High),
        ),
        IclExample::new(
            "This environment has no restitution when collision, medium friction, and very low stiffness.",
            PropertyLevels::new(VeryLow, Medium, VeryLow, Medium),
        ),
    ]
}

/// The five-section prompt sent to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorPrompt {
    pub task_instruction: String,
    pub property_definitions: String,
    pub icl_examples: Vec<IclExample>,
    pub input_description: String,
    pub output_format: String,
}

const TASK_INSTRUCTION: &str = "You are helping a legged robot understand the terrain it walks on. \
A human observer describes the environment in natural language. For each terrain property, \
choose the level that best matches the description by answering a multiple-choice question. \
When a property is not mentioned, infer it from common sense about the described surface and \
weather; if nothing suggests a level, choose Medium.";

const PROPERTY_DEFINITIONS: &str = "\
- restitution: how much the ground bounces the feet back after a collision. Ice and rubber are bouncy; sand and mud are not.
- friction: how well the feet grip the surface. Running tracks and dry rock grip well; ice and wet surfaces are slippery.
- stiffness: how hard the ground is. Concrete and rock are very stiff; sand, snow and soft grass let the feet sink in.
- damping: how much the ground absorbs motion. Sand, mud and wet soil absorb a lot; concrete absorbs little.";

const OUTPUT_FORMAT: &str = "\
Answer with exactly four lines and nothing else, one per property, in this form:
restitution=<LEVEL>
friction=<LEVEL>
stiffness=<LEVEL>
damping=<LEVEL>
where <LEVEL> is one of VERY_LOW, LOW, MEDIUM, HIGH, VERY_HIGH (choices A to E respectively).";

pub fn build_prompt(description: &str, icl_examples: &[IclExample]) -> Result<TranslatorPrompt> {
    if description.trim().is_empty() {
        return Err(Error::Argument("description must not be empty".into()));
    }
    Ok(TranslatorPrompt {
        task_instruction: TASK_INSTRUCTION.to_string(),
        property_definitions: PROPERTY_DEFINITIONS.to_string(),
        icl_examples: icl_examples.to_vec(),
        input_description: description.trim().to_string(),
        output_format: OUTPUT_FORMAT.to_string(),
    })
}

fn write_questions(out: &mut String) {
    for (i, p) in Property::QUALITATIVE.iter().enumerate() {
        let _ = write!(out, "Q{}. What is the {} level of this terrain?", i + 1, p.name());
        for (letter, level) in CHOICE_LETTERS.iter().zip(PropertyLevel::ALL) {
            let _ = write!(out, " {letter}) {}", level.words());
        }
        out.push('\n');
    }
}

/// Answer lines in the strict `property=LEVEL` grammar.
pub fn render_answers(levels: &PropertyLevels) -> String {
    Property::QUALITATIVE
        .iter()
        .map(|&p| format!("{}={}", p.name(), levels.get(p).token()))
        .collect::<Vec<_>>()
        .join("\n")
}

impl TranslatorPrompt {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("## 1. Task\n");
        out.push_str(&self.task_instruction);
        out.push_str("\n\n## 2. Terrain properties\n");
        out.push_str(&self.property_definitions);
        out.push_str("\n\n## 3. Examples\n");
        for (i, ex) in self.icl_examples.iter().enumerate() {
            let _ = writeln!(out, "### Example {}", i + 1);
            let _ = writeln!(out, "Description: {}", ex.description);
            write_questions(&mut out);
            out.push_str("Answers:\n");
            for (j, &p) in Property::QUALITATIVE.iter().enumerate() {
                let level = ex.answers.get(p);
                let _ = writeln!(
                    out,
                    "Q{}: {} -> {}={}",
                    j + 1,
                    CHOICE_LETTERS[level.ordinal()],
                    p.name(),
                    level.token()
                );
            }
            out.push('\n');
        }
        out.push_str("## 4. Input\n");
        let _ = writeln!(out, "Description: {}", self.input_description);
        write_questions(&mut out);
        out.push_str("\n## 5. Output\n");
        out.push_str(&self.output_format);
        out.push('\n');
        out
    }
}
