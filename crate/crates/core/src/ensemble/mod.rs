//! Judge ensemble: prompt variants, endpoints, reply parsing, the three merge
//! strategies and golden-set calibration.

mod calibrate;
mod collect;
mod judge;
mod merge;
mod parse;
mod prompt;
mod store;

pub use calibrate::{
    calibrate, calibration_report, Agreement, CalibrationReport, CalibrationRow, REPORTED_REFERENCE, TABLE_ROWS,
};
pub use collect::{collect_judgments, CollectConfig, Collected, FailurePolicy, RawJudgment};
pub use judge::{
    first_sentence, format_reply, sentences, truth_key, CommandJudge, GroundTruth, JudgeEndpoint, JudgeReply,
    JudgeRequest, MockJudge,
};
pub use merge::{
    listed_explanations, listed_scores, merge_average, merge_explanation_prompt, merge_explanations, merge_llm,
    merge_mode, merge_record, merge_score, merge_score_prompt, merge_texts, MergeStrategy, LLM_MERGE_SCALE,
};
pub use parse::{parse_judgment, ParsedJudgment};
pub use prompt::{
    conversation_segment, prompt_scale, render_prompt, serialize_conversation, PromptVariant, VariantId,
    CONVERSATION_CLOSE, CONVERSATION_OPEN, EXEMPLARS_CLOSE, EXEMPLARS_OPEN,
};
pub use store::{judgments_from_jsonl, judgments_to_jsonl, load_judgments, save_judgments};
