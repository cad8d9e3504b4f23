use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::CommandFactory;
use serde_json::json;

use super::config::{CommandJudgeConfig, ExperimentConfig};
use super::*;
use crate::analyze::{entropy_table, lora_diff, BlockGrouping};
use crate::artifact::{
    config_hash, fmt_f64, fmt_opt, write_atomic, CsvTable, CALIBRATION_HEADER, CODE_VERSION, ENTROPY_HEADER,
    EVAL_HEADER, LENGTH_HEADER, LOSS_HEADER, PROFILE_HEADER, RANK_HEADER, SCORE_DIST_HEADER, WEIGHT_DIFF_HEADER,
    WORD_FREQ_HEADER,
};
use crate::augment::{build_vocab_profile, substitute_explanations, LengthPolicy};
use crate::corpus::{
    build_mixed, load_corpus, nonstopword_profile, score_distribution, synth_fixture, token_length_histogram, Corpus,
    DefectRates, Explanations, LoadOptions, Record, SynthConfig,
};
use crate::ensemble::{
    calibration_report, collect_judgments, load_judgments, merge_record, save_judgments, serialize_conversation,
    truth_key, CollectConfig, CommandJudge, FailurePolicy, GroundTruth, JudgeEndpoint, MockJudge, PromptVariant,
    RawJudgment,
};
use crate::error::{Error, Result};
use crate::model::checkpoint::{BaseStorage, Checkpoint};
use crate::model::{Adapters, BaseWeights, QuantizedBase};
use crate::params::ParamSet;
use crate::text::{truncate_explanation, WordList, WordSet};
use crate::train::{cross_eval, prepare_examples, pretrain, pretrain_sequences, train, EvalModel, Scorer, Tokenizer};

pub(super) fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Dataset(DatasetCommand::Build(a)) => build(a)?,
        Command::Dataset(DatasetCommand::Merge(a)) => merge(a)?,
        Command::Dataset(DatasetCommand::Augment(a)) => augment(a)?,
        Command::Dataset(DatasetCommand::Mix(a)) => mix(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Eval(a) => eval_cmd(a, "eval")?,
        Command::CrossEval(a) => eval_cmd(a, "cross-eval")?,
        Command::Analyze(AnalyzeCommand::Entropy(a)) => analyze_entropy(a)?,
        Command::Analyze(AnalyzeCommand::LoraDiff(a)) => analyze_lora_diff(a)?,
        Command::Analyze(AnalyzeCommand::Rank(a)) => analyze_rank(a)?,
        Command::Calibrate(a) => calibrate_cmd(a)?,
        Command::Report(a) => report(a)?,
    }
    Ok(())
}

fn usage(kind: clap::error::ErrorKind, msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(Cli::command().error(kind, msg))
}

/// One invocation's resolved configuration and the artifacts it has written.
struct Run {
    command: &'static str,
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
    artifacts: BTreeMap<String, String>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl Run {
    fn new(command: &'static str, common: &Common, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if common.strict_schema {
            cfg.strict_schema = true;
        }
        edit(&mut cfg);
        if let Some(n) = common.threads {
            // a second call in one process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
        let hash = config_hash(&cfg)?;
        Ok(Run {
            command,
            cfg,
            hash,
            out: common.out.clone(),
            artifacts: BTreeMap::new(),
            extra: serde_json::Map::new(),
        })
    }

    fn load_opts(&self) -> LoadOptions {
        if self.cfg.strict_schema {
            LoadOptions::strict()
        } else {
            LoadOptions::default()
        }
    }

    fn corpus(&self, path: &Path) -> Result<Corpus> {
        load_corpus(path, self.load_opts())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.insert(name.to_string(), crate::text::sha256_hex(bytes));
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(name), bytes)?;
        self.record(name, bytes);
        Ok(())
    }

    fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        let bytes = table.render(&self.hash)?;
        self.write(name, &bytes)
    }

    fn jsonl(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("# config_hash={} code_version={CODE_VERSION}\n{body}", self.hash);
        self.write(name, text.as_bytes())
    }

    fn checkpoint(&mut self, name: &str, ck: &Checkpoint) -> Result<String> {
        let path = self.out.join(name);
        let hash = ck.save(&path)?;
        self.artifacts.insert(name.to_string(), hash.clone());
        Ok(hash)
    }

    fn finish(mut self) -> Result<()> {
        let manifest = json!({
            "command": self.command,
            "config_hash": self.hash,
            "code_version": CODE_VERSION,
            "config": self.cfg,
            "artifacts": self.artifacts,
            "details": serde_json::Value::Object(std::mem::take(&mut self.extra)),
        });
        let bytes = serde_json::to_vec_pretty(&manifest)?;
        write_atomic(&self.out.join("manifest.json"), &bytes)
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

/// Dataset label of a corpus file: its parent directory for generic names
/// such as `corpus.jsonl`, else the file stem.
fn dataset_label(path: &Path) -> String {
    let s = stem(path);
    if s == "corpus" {
        if let Some(p) = path.parent().and_then(|p| p.file_name()) {
            return p.to_string_lossy().into_owned();
        }
    }
    s
}

fn score_table(run: &Run, dataset: &str, corpus: &Corpus, t: &mut CsvTable) {
    let _ = run;
    for dim in Dimension::ALL {
        for (score, count) in score_distribution(corpus, dim) {
            t.push(vec![
                dataset.into(),
                dim.tag().into(),
                fmt_f64(score),
                count.to_string(),
            ]);
        }
    }
}

fn build(a: BuildArgs) -> Result<()> {
    let mut run = Run::new("dataset build", &a.common, |c| {
        if let Some(n) = a.n {
            c.fixture.n = n;
        }
        if let Some(s) = a.source {
            c.fixture.source = s;
        }
        if let Some(p) = a.noise {
            c.fixture.score_noise = p;
        }
        if let Some(w) = a.min_words {
            c.fixture.min_assessment_words = w;
        }
    })?;
    let corpus = match &a.input {
        Some(p) => run.corpus(p)?,
        None => {
            let f = &run.cfg.fixture;
            if !(0.0..=1.0).contains(&f.defect_rate) || !(0.0..=1.0).contains(&f.score_noise) {
                return Err(Error::invalid("defect_rate and score_noise must lie in [0, 1]"));
            }
            synth_fixture(&SynthConfig {
                seed: run.cfg.seed,
                n: f.n,
                defect_rates: DefectRates::uniform(f.defect_rate),
                source: f.source,
                min_assessment_words: f.min_assessment_words,
                score_noise: f.score_noise,
            })
        }
    };
    run.jsonl("corpus.jsonl", &corpus.to_jsonl())?;
    let label = a
        .input
        .as_deref()
        .map(dataset_label)
        .unwrap_or_else(|| run.cfg.fixture.source.tag().to_string());
    let mut t = CsvTable::new(&SCORE_DIST_HEADER);
    score_table(&run, &label, &corpus, &mut t);
    run.csv("score_distribution.csv", &t)?;
    run.extra.insert("records".into(), json!(corpus.len()));
    run.extra.insert("corpus_hash".into(), json!(corpus.content_hash()));
    run.finish()
}

fn command_judge(c: &CommandJudgeConfig) -> Arc<dyn JudgeEndpoint> {
    Arc::new(CommandJudge {
        id: c.id.clone(),
        program: c.program.clone(),
        args: c.args.clone(),
        timeout: Duration::from_secs(c.timeout_secs),
    })
}

/// Judges for one dimension. Mock judges answer from the scores and
/// explanations already present in `corpus`.
fn judges_for(cfg: &ExperimentConfig, corpus: &Corpus, dim: Dimension) -> Vec<Arc<dyn JudgeEndpoint>> {
    if !cfg.judges.commands.is_empty() {
        return cfg.judges.commands.iter().map(command_judge).collect();
    }
    let truth: BTreeMap<String, GroundTruth> = corpus
        .iter()
        .filter_map(|r| {
            let s = r.scores.get(dim)?;
            Some((
                truth_key(&serialize_conversation(&r.conversation())),
                GroundTruth {
                    score_norm: s,
                    assessment: r.assessment(dim).to_string(),
                    confidence: r.confidence(dim).to_string(),
                },
            ))
        })
        .collect();
    let truth = Arc::new(truth);
    cfg.judges
        .mock_ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let seed = crate::text::derive_seed(cfg.judges.mock_seed, &format!("judge-{k}"));
            Arc::new(MockJudge::grounded(
                id.clone(),
                seed,
                cfg.judges.mock_noise,
                truth.clone(),
            )) as Arc<dyn JudgeEndpoint>
        })
        .collect()
}

fn merge(a: MergeArgs) -> Result<()> {
    let mut run = Run::new("dataset merge", &a.common, |c| {
        if let Some(s) = a.strategy {
            c.merge = s;
        }
    })?;
    let corpus = run.corpus(&a.corpus)?;
    let judgments: Vec<RawJudgment> = match &a.judgments {
        Some(p) => load_judgments(p)?,
        None => {
            let collect = CollectConfig {
                retry_budget: run.cfg.judges.retry_budget,
                backoff_ms: run.cfg.judges.backoff_ms,
                policy: match run.cfg.judges.min_judgments {
                    Some(min) => FailurePolicy::DropTo { min },
                    None => FailurePolicy::FailRecord,
                },
            };
            let variants = PromptVariant::all();
            let mut all = Vec::new();
            let mut warnings = Vec::new();
            for dim in Dimension::ALL {
                let judges = judges_for(&run.cfg, &corpus, dim);
                for r in corpus.iter() {
                    if run.cfg.judges.commands.is_empty() && r.scores.get(dim).is_none() {
                        continue;
                    }
                    let c = collect_judgments(&r.conversation(), dim, &judges, &variants, &collect)?;
                    all.extend(c.judgments);
                    warnings.extend(c.warnings);
                }
            }
            run.extra.insert("warnings".into(), json!(warnings));
            all
        }
    };
    let merger: Arc<dyn JudgeEndpoint> = match &run.cfg.judges.merger {
        Some(c) => command_judge(c),
        None => Arc::new(MockJudge::merger("merger")),
    };
    let summarizer: Arc<dyn JudgeEndpoint> = match &run.cfg.judges.summarizer {
        Some(c) => command_judge(c),
        None => Arc::new(MockJudge::summarizer("summarizer")),
    };
    let mut groups: BTreeMap<(String, Dimension), Vec<RawJudgment>> = BTreeMap::new();
    for j in &judgments {
        groups
            .entry((j.conversation_id.clone(), j.dimension))
            .or_default()
            .push(j.clone());
    }
    let mut records: Vec<Record> = Vec::with_capacity(corpus.len());
    for r in corpus.iter() {
        let mut out = Record::new(r.conversation());
        for dim in Dimension::ALL {
            let Some(js) = groups.get(&(r.id.clone(), dim)) else {
                continue;
            };
            let m = merge_record(js, run.cfg.merge, Some(merger.as_ref()), summarizer.as_ref())?;
            out.scores.set(dim, m.score_norm);
            out.explanations.insert(
                dim,
                Explanations {
                    assessment: m.assessment_explanation,
                    confidence: m.confidence_explanation,
                },
            );
            out.provenance.extend(m.provenance);
        }
        records.push(out);
    }
    let merged = Corpus::new(records)?;
    if a.judgments.is_none() {
        let path = run.out.join("judgments.jsonl");
        save_judgments(&path, &judgments)?;
        run.record(
            "judgments.jsonl",
            &std::fs::read(&path).map_err(|e| Error::io(&path, e))?,
        );
    }
    run.jsonl("corpus.jsonl", &merged.to_jsonl())?;
    let mut t = CsvTable::new(&SCORE_DIST_HEADER);
    score_table(&run, &dataset_label(&a.corpus), &merged, &mut t);
    run.csv("score_distribution.csv", &t)?;
    run.extra.insert("judgments".into(), json!(judgments.len()));
    run.finish()
}

fn stopwords(path: Option<&Path>) -> Result<WordSet> {
    match path {
        Some(p) => Ok(WordSet::parse(
            &std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Ok(WordSet::stopwords_v1()),
    }
}

fn augment(a: AugmentArgs) -> std::result::Result<(), Failure> {
    let mut run = Run::new("dataset augment", &a.common, |c| {
        if let Some(m) = a.random {
            c.augment.random = Some(m);
        }
        if let Some(d) = &a.dictionary {
            c.augment.dictionary = Some(d.clone());
        }
        if let Some(h) = &a.dictionary_sha256 {
            c.augment.dictionary_sha256 = Some(h.clone());
        }
        if let Some(s) = &a.stopwords {
            c.augment.stopwords = Some(s.clone());
        }
        if let Some(n) = a.n_words {
            c.augment.n_words = Some(n);
        }
        if let Some(d) = a.dimension {
            c.dimension = d;
        }
    })?;
    let Some(mode) = run.cfg.augment.random else {
        return Err(usage(
            clap::error::ErrorKind::MissingRequiredArgument,
            "dataset augment needs --random",
        ));
    };
    let dictionary = match (&run.cfg.augment.dictionary, mode.needs_dictionary()) {
        (Some(p), _) => WordList::load(p, run.cfg.augment.dictionary_sha256.as_deref())?,
        (None, true) => {
            return Err(usage(
                clap::error::ErrorKind::MissingRequiredArgument,
                format!("--dictionary is required with --random {mode}"),
            ))
        }
        (None, false) => WordList {
            words: Vec::new(),
            digest: String::new(),
        },
    };
    let corpus = run.corpus(&a.corpus)?;
    let stop = stopwords(run.cfg.augment.stopwords.as_deref())?;
    let dim = run.cfg.dimension;
    let profile = build_vocab_profile(&corpus, dim, &stop)?;
    let length = run.cfg.augment.n_words.map(LengthPolicy::Fixed).unwrap_or_default();
    let out = substitute_explanations(&corpus, dim, mode, &profile, &dictionary, length, run.cfg.seed)?;
    run.jsonl("corpus.jsonl", &out.to_jsonl())?;
    run.extra.insert("dictionary_sha256".into(), json!(dictionary.digest));
    run.extra.insert("stopwords_sha256".into(), json!(stop.digest()));
    run.finish()?;
    Ok(())
}

fn mix(a: MixArgs) -> Result<()> {
    let mut run = Run::new("dataset mix", &a.common, |c| {
        if let Some(n) = a.per_source {
            c.mix.per_source = n;
        }
        if let Some(w) = a.min_words {
            c.mix.min_expl_words = w;
        }
        if let Some(t) = a.trunc {
            c.trunc = Some(t);
        }
        if let Some(d) = a.dimension {
            c.dimension = d;
        }
    })?;
    let corpora = a.corpora.iter().map(|p| run.corpus(p)).collect::<Result<Vec<_>>>()?;
    let dim = run.cfg.dimension;
    let mut mixed = build_mixed(
        &corpora,
        dim,
        run.cfg.mix.per_source,
        run.cfg.mix.min_expl_words,
        run.cfg.seed,
    )?;
    if let Some(n) = run.cfg.trunc {
        for r in &mut mixed.records {
            if let Some(e) = r.explanations.get_mut(&dim) {
                e.assessment = truncate_explanation(&e.assessment, n);
            }
        }
    }
    run.jsonl("corpus.jsonl", &mixed.to_jsonl())?;
    let label = "mixed";
    let stop = stopwords(a.stopwords.as_deref())?;

    let mut t = CsvTable::new(&SCORE_DIST_HEADER);
    score_table(&run, label, &mixed, &mut t);
    run.csv("score_distribution.csv", &t)?;

    let mut t = CsvTable::new(&PROFILE_HEADER);
    if !mixed.is_empty() {
        for (i, p) in nonstopword_profile(&mixed, dim, &stop, run.cfg.mix.max_pos)?
            .iter()
            .enumerate()
        {
            t.push(vec![label.into(), dim.tag().into(), (i + 1).to_string(), fmt_opt(*p)]);
        }
    }
    run.csv("nonstopword_profile.csv", &t)?;

    let tok = Tokenizer::build(&mixed, run.cfg.model.vocab_size, run.cfg.tokenizer.oov_buckets)?;
    let hist = token_length_histogram(&mixed, dim, &tok, run.cfg.mix.bin_width)?;
    let mut t = CsvTable::new(&LENGTH_HEADER);
    for (k, c) in hist.counts.iter().enumerate() {
        t.push(vec![
            label.into(),
            (k * hist.bin_width).to_string(),
            ((k + 1) * hist.bin_width).to_string(),
            c.to_string(),
        ]);
    }
    run.csv("token_length_histogram.csv", &t)?;

    let mut t = CsvTable::new(&WORD_FREQ_HEADER);
    if let Ok(profile) = build_vocab_profile(&mixed, dim, &stop) {
        let mut freq: Vec<(&String, &u64)> = profile.global.iter().collect();
        freq.sort_by(|x, y| y.1.cmp(x.1).then(x.0.cmp(y.0)));
        for (w, c) in freq {
            t.push(vec![label.into(), dim.tag().into(), w.clone(), c.to_string()]);
        }
    }
    run.csv("word_frequencies.csv", &t)?;
    run.extra.insert("records".into(), json!(mixed.len()));
    run.finish()
}

/// Adapter-only checkpoint metadata keys.
const META_BASE_FILE: &str = "base_file";
const META_BASE_HASH: &str = "base_hash";

fn load_base_checkpoint(path: &Path) -> Result<(BaseWeights, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let base = ck
        .base
        .as_ref()
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no base weights", path.display())))?
        .weights()?;
    Ok((base, ck))
}

/// A checkpoint turned into a scorer. Adapter-only checkpoints take their base
/// from `base` or from the base file named in their metadata.
fn scorer_for(path: &Path, base: Option<&Path>) -> Result<(Scorer, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    if ck.base.is_some() {
        return Ok((Scorer::from_checkpoint(&ck, None)?, ck));
    }
    let base_path = match base {
        Some(p) => p.to_path_buf(),
        None => {
            let name = ck
                .meta
                .get(META_BASE_FILE)
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("{} has no base; pass --base", path.display())))?;
            path.parent().unwrap_or(Path::new(".")).join(name)
        }
    };
    let (b, bck) = load_base_checkpoint(&base_path)?;
    if bck.vocab != ck.vocab || bck.config != ck.config {
        return Err(Error::Checkpoint(format!(
            "{} does not match base {}",
            path.display(),
            base_path.display()
        )));
    }
    if let Some(want) = ck.meta.get(META_BASE_HASH).and_then(|v| v.as_str()) {
        if want != b.content_hash() {
            return Err(Error::Checkpoint(format!(
                "base {} differs from the one trained on",
                base_path.display()
            )));
        }
    }
    Ok((Scorer::from_checkpoint(&ck, Some(&b))?, ck))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut run = Run::new("train", &a.common, |c| {
        if let Some(m) = a.mode {
            c.mode = m;
        }
        if let Some(t) = a.trunc {
            c.trunc = Some(t);
        }
        if let Some(d) = a.dimension {
            c.dimension = d;
        }
    })?;
    let tcfg = run.cfg.effective_train();
    let mcfg = run.cfg.model.clone();
    let corpus = run.corpus(&a.corpus)?;
    let (train_corpus, eval_corpus) = match &a.eval_corpus {
        Some(p) => {
            let (t, _) = corpus.split_at(tcfg.train_size);
            let (e, _) = run.corpus(p)?.split_at(tcfg.test_size);
            (t, e)
        }
        None => {
            let (t, rest) = corpus.split_at(tcfg.train_size);
            let (e, _) = rest.split_at(tcfg.test_size);
            (t, e)
        }
    };

    let (mut base, tok, base_name, base_hash) = match &a.base {
        Some(p) => {
            let (b, ck) = load_base_checkpoint(p)?;
            if ck.config != mcfg {
                return Err(Error::Checkpoint(format!(
                    "{} was built for a different model config",
                    p.display()
                )));
            }
            let tok = Tokenizer::from_vocab(ck.vocab.clone())?;
            let h = b.content_hash();
            (b, tok, None, h)
        }
        None => {
            let pre_corpus = match &a.pretrain_corpus {
                Some(p) => run.corpus(p)?,
                None => train_corpus.clone(),
            };
            let tok = Tokenizer::build(&pre_corpus, mcfg.vocab_size, run.cfg.tokenizer.oov_buckets)?;
            let seqs = pretrain_sequences(&pre_corpus, &tok, mcfg.context_len, run.cfg.pretrain.seed);
            let (b, losses) = pretrain(&run.cfg.pretrain, &mcfg, &seqs)?;
            run.extra.insert("pretrain_final_loss".into(), json!(losses.last()));
            let h = b.content_hash();
            (b, tok, Some("base.ckpt"), h)
        }
    };
    let storage = if a.nf4 {
        let q = QuantizedBase::quantize(&base);
        base = q.dequantize()?;
        BaseStorage::Nf4(q)
    } else {
        BaseStorage::Full(base.clone())
    };
    let base_hash = if a.nf4 { base.content_hash() } else { base_hash };
    let base_name = match (base_name, a.nf4) {
        (Some(n), _) => Some(n),
        (None, true) => Some("base.ckpt"),
        (None, false) => None,
    };
    if let Some(name) = base_name {
        run.checkpoint(
            name,
            &Checkpoint {
                config: mcfg.clone(),
                vocab: tok.vocab().to_vec(),
                base: Some(storage),
                adapters: None,
                meta: json!({ "role": "base" }),
            },
        )?;
    }

    let trunc = tcfg.trunc;
    let train_set = prepare_examples(&train_corpus, tcfg.dimension, tcfg.mode, &tok, trunc, mcfg.context_len)?;
    let eval_set = prepare_examples(&eval_corpus, tcfg.dimension, tcfg.mode, &tok, trunc, mcfg.context_len)?;
    let out = train(&tcfg, &mcfg, &base, &train_set, &eval_set)?;
    run.csv("loss.csv", &out.loss_table())?;

    let label = a.label.clone().unwrap_or_else(|| dataset_label(&a.corpus));
    let base_file = match (base_name, &a.base) {
        (Some(n), _) => n.to_string(),
        (None, Some(p)) => std::fs::canonicalize(p)
            .unwrap_or_else(|_| p.clone())
            .to_string_lossy()
            .into_owned(),
        (None, None) => unreachable!("a base is either loaded or built"),
    };
    let ck = Checkpoint {
        config: mcfg.clone(),
        vocab: tok.vocab().to_vec(),
        base: None,
        adapters: Some(out.adapters.clone()),
        meta: json!({
            "role": "adapters",
            "train_corpus": label,
            "mode": tcfg.mode,
            "dimension": tcfg.dimension,
            META_BASE_FILE: base_file,
            META_BASE_HASH: base_hash,
            "config_hash": run.hash,
        }),
    };
    let ck_hash = run.checkpoint("adapters.ckpt", &ck)?;
    let mut manifest = out.manifest.clone();
    manifest
        .corpus_hashes
        .insert("train".into(), train_corpus.content_hash());
    manifest.corpus_hashes.insert("eval".into(), eval_corpus.content_hash());
    manifest.checkpoint_hashes.insert("adapters.ckpt".into(), ck_hash);
    run.extra.insert("run".into(), serde_json::to_value(&manifest)?);
    run.finish()
}

fn mode_of(ck: &Checkpoint) -> ExplanationMode {
    ck.meta
        .get("mode")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or(ExplanationMode::None)
}

fn eval_cmd(a: EvalArgs, command: &'static str) -> Result<()> {
    let mut run = Run::new(command, &a.common, |c| {
        if let Some(d) = a.dimension {
            c.dimension = d;
        }
    })?;
    if command == "eval" && a.checkpoints.len() != 1 {
        return Err(Error::invalid(
            "eval takes exactly one --checkpoint; use cross-eval for several",
        ));
    }
    let loaded = a
        .checkpoints
        .iter()
        .map(|p| scorer_for(p, a.base.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let corpora = a
        .corpora
        .iter()
        .map(|p| Ok((dataset_label(p), run.corpus(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<EvalModel<'_>> = loaded
        .iter()
        .zip(&a.checkpoints)
        .map(|((s, ck), p)| EvalModel {
            train_corpus: ck
                .meta
                .get("train_corpus")
                .and_then(|v| v.as_str())
                .map(String::from)
                .unwrap_or_else(|| stem(p)),
            mode: mode_of(ck),
            scorer: s,
        })
        .collect();
    let refs: Vec<(String, &Corpus)> = corpora.iter().map(|(n, c)| (n.clone(), c)).collect();
    let report = cross_eval(&models, &refs, run.cfg.dimension)?;
    debug_assert_eq!(report.table().header, EVAL_HEADER);
    run.csv("eval.csv", &report.table())?;
    run.finish()
}

fn analyze_entropy(a: PairArgs) -> Result<()> {
    let mut run = Run::new("analyze entropy", &a.common, |c| {
        if let Some(d) = a.dimension {
            c.dimension = d;
        }
    })?;
    let corpus_path = a
        .corpus
        .as_deref()
        .ok_or_else(|| Error::invalid("analyze entropy needs --corpus"))?;
    let corpus = run.corpus(corpus_path)?;
    let (se, _) = scorer_for(&a.explained, a.base.as_deref())?;
    let (sn, _) = scorer_for(&a.plain, a.base.as_deref())?;
    if se.config != sn.config {
        return Err(Error::invalid("checkpoints differ in architecture"));
    }
    let dim = run.cfg.dimension;
    let te = se.traces_all(&corpus, dim)?;
    let tn = sn.traces_all(&corpus, dim)?;
    let table = entropy_table(&te, &tn, &BlockGrouping::toy(se.config.n_blocks))?;
    let dataset = a.dataset.clone().unwrap_or_else(|| dataset_label(corpus_path));
    let mut t = CsvTable::new(&ENTROPY_HEADER);
    for r in &table.rows {
        t.push(vec![
            dataset.clone(),
            dim.tag().into(),
            r.label.clone(),
            fmt_f64(r.raw_diff),
            fmt_opt(r.normalized),
        ]);
    }
    run.csv("entropy.csv", &t)?;
    run.extra
        .insert("normalization_undefined".into(), json!(table.normalization_undefined));
    run.finish()
}

fn adapters_of(path: &Path) -> Result<(Adapters, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let ad = ck
        .adapters
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no adapters", path.display())))?;
    Ok((ad, ck))
}

fn analyze_lora_diff(a: PairArgs) -> Result<()> {
    let mut run = Run::new("analyze lora-diff", &a.common, |c| {
        if let Some(d) = a.dimension {
            c.dimension = d;
        }
    })?;
    let (ae, cke) = adapters_of(&a.explained)?;
    let (an, ckn) = adapters_of(&a.plain)?;
    if cke.config != ckn.config {
        return Err(Error::invalid("checkpoints differ in architecture"));
    }
    let report = lora_diff(&ae, &an, &cke.config)?;
    let dataset = a.dataset.clone().unwrap_or_else(|| {
        cke.meta
            .get("train_corpus")
            .and_then(|v| v.as_str())
            .unwrap_or("unknown")
            .to_string()
    });
    let dim = run.cfg.dimension;
    let mut t = CsvTable::new(&WEIGHT_DIFF_HEADER);
    for (k, (target, raw)) in report.raw.iter().enumerate() {
        let norm = report.normalized.as_ref().map(|n| n[k]);
        t.push(vec![
            dataset.clone(),
            dim.tag().into(),
            target.tag().into(),
            fmt_f64(*raw),
            fmt_opt(norm),
        ]);
    }
    run.csv("weight_diff.csv", &t)?;
    run.finish()
}

fn analyze_rank(a: RankArgs) -> Result<()> {
    let mut run = Run::new("analyze rank", &a.common, |c| {
        if let Some(d) = a.dimension {
            c.dimension = d;
        }
    })?;
    let corpus = run.corpus(&a.corpus)?;
    let (s, _) = scorer_for(&a.checkpoint, a.base.as_deref())?;
    let dim = run.cfg.dimension;
    let dataset = a.dataset.clone().unwrap_or_else(|| dataset_label(&a.corpus));
    let mut t = CsvTable::new(&RANK_HEADER);
    for rt in s.traces_all(&corpus, dim)? {
        for tr in &rt.traces {
            t.push(vec![
                dataset.clone(),
                dim.tag().into(),
                rt.id.clone(),
                tr.block.to_string(),
                tr.target_rank.map(|r| r.to_string()).unwrap_or_default(),
                fmt_f64(tr.entropy),
            ]);
        }
    }
    run.csv("rank.csv", &t)?;
    run.finish()
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let mut run = Run::new("calibrate", &a.common, |_| {})?;
    let judgments = load_judgments(&a.judgments)?;
    let golden = run.corpus(&a.golden)?;
    let merger: Arc<dyn JudgeEndpoint> = match &run.cfg.judges.merger {
        Some(c) => command_judge(c),
        None => Arc::new(MockJudge::merger("merger")),
    };
    let report = calibration_report(&judgments, &golden, Some(merger.as_ref()))?;
    debug_assert_eq!(report.table().header, CALIBRATION_HEADER);
    run.csv("calibration.csv", &report.table())?;
    let text = format!(
        "# config_hash={} code_version={CODE_VERSION}\n{}",
        run.hash,
        report.render()
    );
    run.write("calibration.txt", text.as_bytes())?;
    run.finish()
}

/// Known artifact tables and the figure each one feeds.
const TABLES: [(&str, &[&str], &str); 10] = [
    ("loss.csv", &LOSS_HEADER, "loss_curve"),
    ("eval.csv", &EVAL_HEADER, "eval_matrix"),
    ("entropy.csv", &ENTROPY_HEADER, "entropy_heatmap"),
    ("weight_diff.csv", &WEIGHT_DIFF_HEADER, "weight_diff_bars"),
    ("score_distribution.csv", &SCORE_DIST_HEADER, "score_distribution"),
    ("nonstopword_profile.csv", &PROFILE_HEADER, "nonstopword_profile"),
    ("token_length_histogram.csv", &LENGTH_HEADER, "token_length_histogram"),
    ("word_frequencies.csv", &WORD_FREQ_HEADER, "word_frequencies"),
    ("rank.csv", &RANK_HEADER, "token_rank"),
    ("calibration.csv", &CALIBRATION_HEADER, "calibration_table"),
];

fn report(a: ReportArgs) -> Result<()> {
    let mut run = Run::new("report", &a.common, |_| {})?;
    let mut md = String::from("# Experiment report\n");
    let mut figures = Vec::new();
    for dir in &a.inputs {
        for (name, header, kind) in TABLES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let t = CsvTable::read(&path, header)?;
            md.push_str(&format!(
                "\n## {} / {name}\n\n| {} |\n|{}\n",
                dir.display(),
                t.header.join(" | "),
                "---|".repeat(t.header.len())
            ));
            for r in &t.rows {
                md.push_str(&format!("| {} |\n", r.join(" | ")));
            }
            let label = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            figures.push(json!({
                "inputs": [path],
                "kind": kind,
                "output": format!("{label}_{kind}.png"),
                "title": format!("{label}: {kind}"),
            }));
        }
    }
    run.write("report.md", md.as_bytes())?;
    let spec = serde_json::to_vec_pretty(&json!({ "figures": figures }))?;
    run.write("figures.json", &spec)?;
    run.finish()
}
