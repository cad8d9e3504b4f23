use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Dimension, ScoreScale, Speaker};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantId {
    S4,
    S4ex,
    S5,
    S5ex,
}

impl VariantId {
    pub const ALL: [VariantId; 4] = [Self::S4, Self::S4ex, Self::S5, Self::S5ex];

    pub fn tag(self) -> &'static str {
        match self {
            Self::S4 => "s4",
            Self::S4ex => "s4ex",
            Self::S5 => "s5",
            Self::S5ex => "s5ex",
        }
    }

    pub fn scale(self) -> ScoreScale {
        match self {
            Self::S4 | Self::S4ex => ScoreScale::ONE_TO_FOUR,
            Self::S5 | Self::S5ex => ScoreScale::ONE_TO_FIVE,
        }
    }

    pub fn with_examples(self) -> bool {
        matches!(self, Self::S4ex | Self::S5ex)
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown prompt variant `{s}`")))
    }
}

pub const CONVERSATION_OPEN: &str = "<<<CONVERSATION";
pub const CONVERSATION_CLOSE: &str = "CONVERSATION>>>";
pub const EXEMPLARS_OPEN: &str = "=== EXAMPLES ===";
pub const EXEMPLARS_CLOSE: &str = "=== END EXAMPLES ===";

const BASE_TEMPLATE: &str = "You are rating one quality dimension of an assistant reply.\n\
Dimension: {dimension}\n\
Definition: {dimension_definition}\n\
Rate the final assistant turn on a scale from {scale_lo} (worst) to {scale_hi} (best).\n\
{exemplars}\
<<<CONVERSATION\n{conversation}CONVERSATION>>>\n\
Answer in exactly this format:\n\
SCORE: <integer from {scale_lo} to {scale_hi}>\n\
ASSESSMENT: <why the reply deserves this score>\n\
CONFIDENCE: <how certain you are and why>\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub id: VariantId,
    pub scale: ScoreScale,
    pub with_examples: bool,
    pub template: String,
}

impl PromptVariant {
    /// The shipped template for `id`. Example-free variants carry no
    /// `{exemplars}` slot.
    pub fn standard(id: VariantId) -> Self {
        let template = if id.with_examples() {
            BASE_TEMPLATE.to_string()
        } else {
            BASE_TEMPLATE.replace("{exemplars}", "")
        };
        PromptVariant {
            id,
            scale: id.scale(),
            with_examples: id.with_examples(),
            template,
        }
    }

    pub fn all() -> Vec<PromptVariant> {
        VariantId::ALL.into_iter().map(Self::standard).collect()
    }
}

pub fn serialize_conversation(conv: &Conversation) -> String {
    let mut out = String::new();
    for t in &conv.turns {
        let who = match t.speaker {
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        };
        out.push_str(who);
        out.push_str(": ");
        out.push_str(&t.text);
        out.push('\n');
    }
    out
}

fn exemplar_block(dim: Dimension, scale: ScoreScale) -> String {
    let (good, bad) = match dim {
        Dimension::Naturalness => (
            "the museum opens at nine and the cafe is on the second floor .",
            "um the museum um opens um at nine um .",
        ),
        Dimension::Comprehensiveness => (
            "user asked for price and size ; the reply gives both .",
            "user asked for price and size ; the reply gives only the size .",
        ),
        Dimension::OnTopic => (
            "user asked about trains ; the reply only discusses train times .",
            "user asked about trains ; the reply drifts into cooking recipes .",
        ),
    };
    format!(
        "{EXEMPLARS_OPEN}\nexample rated {hi}: {good}\nexample rated {lo}: {bad}\n{EXEMPLARS_CLOSE}\n",
        hi = scale.hi,
        lo = scale.lo
    )
}

/// Fills every `{name}` placeholder in one pass; inserted text is never
/// rescanned.
pub fn render_prompt(variant: &PromptVariant, conv: &Conversation, dim: Dimension) -> Result<String> {
    let t = &variant.template;
    let mut out = String::with_capacity(t.len() + 256);
    let mut rest = t.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::UnresolvedPlaceholder(after.chars().take(24).collect()))?;
        let name = &after[..close];
        let value = match name {
            "conversation" => serialize_conversation(conv),
            "dimension" => dim.tag().to_string(),
            "dimension_definition" => dim.definition().to_string(),
            "scale_lo" => variant.scale.lo.to_string(),
            "scale_hi" => variant.scale.hi.to_string(),
            "exemplars" if variant.with_examples => exemplar_block(dim, variant.scale),
            _ => return Err(Error::UnresolvedPlaceholder(name.to_string())),
        };
        out.push_str(&value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The serialized conversation inside a rendered prompt.
pub fn conversation_segment(prompt: &str) -> Option<&str> {
    let start = prompt.find(CONVERSATION_OPEN)? + CONVERSATION_OPEN.len() + 1;
    let end = prompt[start..].find(CONVERSATION_CLOSE)? + start;
    Some(&prompt[start..end])
}

/// The `lo`, `hi` integers of the "scale from .. to .." line.
pub fn prompt_scale(prompt: &str) -> Option<ScoreScale> {
    let at = prompt.find("scale from ")? + "scale from ".len();
    let mut nums = prompt[at..]
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .take(2)
        .map(|s| s.parse::<i32>());
    let lo = nums.next()?.ok()?;
    let hi = nums.next()?.ok()?;
    ScoreScale::new(lo, hi).ok()
}
