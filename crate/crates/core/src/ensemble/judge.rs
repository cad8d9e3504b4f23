//! Judge endpoints. A judge turns a prompt into reply text; transport is up
//! to the implementation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::{conversation_segment, prompt_scale};
use crate::corpus::ScoreScale;
use crate::text::{derive_seed, sha256_hex};

/// Wire request: `{"judge_id": str, "prompt": str}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub judge_id: String,
    pub prompt: String,
}

/// Wire reply: `{"text": str}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeReply {
    pub text: String,
}

pub trait JudgeEndpoint: Send + Sync {
    fn judge_id(&self) -> &str;

    /// One attempt. Errors are transport-level messages; retries are the
    /// caller's business.
    fn invoke(&self, prompt: &str) -> std::result::Result<String, String>;

    fn timeout(&self) -> Duration {
        Duration::from_secs(60)
    }
}

/// What a grounded mock knows about one conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub score_norm: f64,
    pub assessment: String,
    pub confidence: String,
}

type ReplyFn = dyn Fn(&str) -> std::result::Result<String, String> + Send + Sync;

/// Deterministic judge: every reply is a pure function of (seed, judge id,
/// prompt).
#[derive(Clone)]
pub struct MockJudge {
    id: String,
    reply: Arc<ReplyFn>,
}

impl std::fmt::Debug for MockJudge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockJudge")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

pub fn format_reply(score: i32, assessment: &str, confidence: &str) -> String {
    format!("SCORE: {score}\nASSESSMENT: {assessment}\nCONFIDENCE: {confidence}\n")
}

fn prompt_rng(seed: u64, id: &str, prompt: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{id}:{}", sha256_hex(prompt.as_bytes()))))
}

impl MockJudge {
    pub fn scripted<F>(id: impl Into<String>, f: F) -> Self
    where
        F: Fn(&str) -> std::result::Result<String, String> + Send + Sync + 'static,
    {
        MockJudge {
            id: id.into(),
            reply: Arc::new(f),
        }
    }

    pub fn constant(id: impl Into<String>, reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::scripted(id, move |_| Ok(reply.clone()))
    }

    pub fn failing(id: impl Into<String>) -> Self {
        Self::scripted(id, |_| Err("endpoint unavailable".into()))
    }

    /// Uniform random scores on the prompt's scale.
    pub fn random(id: impl Into<String>, seed: u64) -> Self {
        let id = id.into();
        let tag = id.clone();
        Self::scripted(id, move |prompt| {
            let scale = prompt_scale(prompt).unwrap_or(ScoreScale::ONE_TO_FIVE);
            let mut rng = prompt_rng(seed, &tag, prompt);
            let s = rng.gen_range(scale.lo..=scale.hi);
            Ok(format_reply(s, &format!("the reply earns a {s} ."), "i am unsure ."))
        })
    }

    /// Looks the prompt's conversation up in `truth` (keyed by
    /// [`truth_key`]) and reports its score on the prompt's scale, off by one
    /// point with probability `noise`.
    pub fn grounded(id: impl Into<String>, seed: u64, noise: f64, truth: Arc<BTreeMap<String, GroundTruth>>) -> Self {
        let id = id.into();
        let tag = id.clone();
        Self::scripted(id, move |prompt| {
            let scale = prompt_scale(prompt).ok_or("prompt has no scale line")?;
            let seg = conversation_segment(prompt).ok_or("prompt has no conversation block")?;
            let t = truth.get(&truth_key(seg)).ok_or("conversation unknown to mock")?;
            let mut rng = prompt_rng(seed, &tag, prompt);
            let mut s = scale.denormalize(t.score_norm);
            if rng.gen_bool(noise.clamp(0.0, 1.0)) {
                s = if rng.gen_bool(0.5) { s + 1 } else { s - 1 }.clamp(scale.lo, scale.hi);
            }
            Ok(format_reply(s, &t.assessment, &t.confidence))
        })
    }

    /// Score merger: answers with the point of the merge scale nearest the
    /// mean of the listed normalized scores.
    pub fn merger(id: impl Into<String>) -> Self {
        Self::scripted(id, |prompt| {
            let listed = super::merge::listed_scores(prompt);
            if listed.is_empty() {
                return Err("no scores listed".into());
            }
            let mut norms: Vec<f64> = listed.iter().map(|(raw, s)| s.normalize(*raw)).collect();
            norms.sort_by(f64::total_cmp);
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            let s = super::merge::LLM_MERGE_SCALE.denormalize(mean);
            Ok(format_reply(s, "the listed ratings centre on this value .", ""))
        })
    }

    /// Summarizer for explanation merging: returns a single listed
    /// explanation verbatim, otherwise the first sentence of each.
    pub fn summarizer(id: impl Into<String>) -> Self {
        Self::scripted(id, |prompt| {
            let items = super::merge::listed_explanations(prompt);
            let text = match items.as_slice() {
                [] => return Err("no explanations listed".into()),
                [one] => one.clone(),
                many => {
                    // first sentence of each, repeats dropped
                    let mut seen = std::collections::HashSet::new();
                    let firsts: Vec<String> = many
                        .iter()
                        .map(|e| first_sentence(e))
                        .filter(|s| seen.insert(s.clone()))
                        .collect();
                    firsts.join(" ")
                }
            };
            Ok(format_reply(1, &text, ""))
        })
    }
}

impl JudgeEndpoint for MockJudge {
    fn judge_id(&self) -> &str {
        &self.id
    }

    fn invoke(&self, prompt: &str) -> std::result::Result<String, String> {
        (self.reply)(prompt)
    }
}

/// Key of a serialized conversation in a grounded mock's table.
pub fn truth_key(serialized_conversation: &str) -> String {
    sha256_hex(serialized_conversation.as_bytes())
}

/// Sentences end at `.`, `!` or `?` followed by whitespace or end of text.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let at_end = chars.get(k + 1).is_none_or(|(_, n)| n.is_whitespace());
        if matches!(c, '.' | '!' | '?') && at_end {
            let s = text[start..i + c.len_utf8()].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + c.len_utf8();
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

pub fn first_sentence(text: &str) -> String {
    sentences(text).first().map(|s| s.to_string()).unwrap_or_default()
}

/// Runs an external program per call: the JSON request on stdin, the JSON
/// reply on stdout. Credentials, if any, reach the program through its
/// environment.
#[derive(Debug, Clone)]
pub struct CommandJudge {
    pub id: String,
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl JudgeEndpoint for CommandJudge {
    fn judge_id(&self) -> &str {
        &self.id
    }

    fn timeout(&self) -> Duration {
        self.timeout
    }

    fn invoke(&self, prompt: &str) -> std::result::Result<String, String> {
        let request = serde_json::to_vec(&JudgeRequest {
            judge_id: self.id.clone(),
            prompt: prompt.to_string(),
        })
        .map_err(|e| e.to_string())?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.program))?;
        child
            .stdin
            .take()
            .expect("piped")
            .write_all(&request)
            .map_err(|e| e.to_string())?;
        let started = Instant::now();
        loop {
            match child.try_wait().map_err(|e| e.to_string())? {
                Some(status) if status.success() => break,
                Some(status) => return Err(format!("judge exited with {status}")),
                None if started.elapsed() > self.timeout => {
                    let _ = child.kill();
                    return Err(format!("timed out after {:?}", self.timeout));
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        }
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("piped")
            .read_to_string(&mut out)
            .map_err(|e| e.to_string())?;
        let reply: JudgeReply = serde_json::from_str(&out).map_err(|e| format!("bad reply: {e}"))?;
        Ok(reply.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split() {
        assert_eq!(sentences("one . two! three"), vec!["one .", "two!", "three"]);
        assert_eq!(sentences("v1.2 is out. ok"), vec!["v1.2 is out.", "ok"]);
        assert!(sentences("  ").is_empty());
    }

    #[test]
    fn random_mock_is_deterministic() {
        let j = MockJudge::random("a", 4);
        let p = "Rate ... on a scale from 1 (worst) to 4 (best).";
        assert_eq!(j.invoke(p), j.invoke(p));
        let replies: std::collections::BTreeSet<String> =
            (0..20).map(|k| j.invoke(&format!("{p} #{k}")).unwrap()).collect();
        assert!(replies.len() > 1);
    }

    #[test]
    fn command_judge_round_trip() {
        let j = CommandJudge {
            id: "cat".into(),
            program: "sh".into(),
            args: vec!["-c".into(), r#"cat >/dev/null; printf '{"text":"SCORE: 3"}'"#.into()],
            timeout: Duration::from_secs(10),
        };
        assert_eq!(j.invoke("hello").unwrap(), "SCORE: 3");
    }
}
