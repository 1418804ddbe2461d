//! Configuration, artifacts and stage sequencing for the full workflow:
//! generate or ingest data, train the summarizer and tagger, tune the
//! boundary, run the head analyses, select heads, summarize and evaluate.
//!
//! Configuration precedence, lowest first: built-in defaults, the TOML config
//! file, command-line flags. Every stage reads its inputs from and writes its
//! outputs to `out_dir`, so stages can also be run one at a time.
//!
//! Each artifact carries a [`Header`] with the tool version, a hash of the
//! result-affecting configuration, the seed, and hashes of the input
//! artifacts it was derived from. JSON reports embed it under `"header"`,
//! checkpoints in their container header, and JSONL files in a
//! `<file>.header.json` sidecar. Nothing time- or host-dependent is written,
//! so identical inputs reproduce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    attention_focus, content_selection_effect, decode_set, masks_from_labels, synergy_analysis, Attention,
    ContentSelectionEffect, FocusTally, SynergyReport,
};
use crate::checkpoint::Container;
use crate::corpus::{generate_corpus, ingest, Corpus, Example, GeneratorSpec, Split};
use crate::decode::DecodeParams;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::rouge::RougeScores;
use crate::saliency::{tune_boundary, DecisionBoundary, TaggerParams};
use crate::selection::{greedy_select_heads, system_labels, HeadSelectionResult, LayerMask};
use crate::train::{train_summarizer, train_tagger, write_log, TrainConfig};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// JSONL corpus to ingest; the generator is used when absent. Lines
    /// without a `split` key are assigned to `train`.
    pub input: Option<PathBuf>,
    pub generator: GeneratorSpec,
}

/// Model shape; the vocabulary size comes from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_enc_layers: m.n_enc_layers,
            n_dec_layers: m.n_dec_layers,
            d_ff: m.d_ff,
            max_positions: m.max_positions,
        }
    }
}

impl ModelSection {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            d_ff: self.d_ff,
            max_positions: self.max_positions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaggerSection {
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for TaggerSection {
    fn default() -> Self {
        TaggerSection {
            hidden: 64,
            train: TrainConfig::tagger(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub split: Split,
    pub decode: DecodeParams,
    /// Also write flattened `.csv` copies of the analysis reports.
    pub csv: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            split: Split::Analysis,
            decode: DecodeParams {
                beam_size: 1,
                min_len: 1,
                max_len: 64,
                length_penalty: 2.0,
            },
            csv: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub block: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { block: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub split: Split,
    pub decode: DecodeParams,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            split: Split::Test,
            decode: DecodeParams::EVALUATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Run seed: the generator uses it as is, the summarizer `seed + 1`, the
    /// tagger `seed + 2`.
    pub seed: u64,
    /// Worker threads for decoding; results do not depend on it.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelSection,
    pub summarizer: TrainConfig,
    pub tagger: TaggerSection,
    pub analysis: AnalysisConfig,
    pub selection: SelectionConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 17,
            threads: 1,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelSection::default(),
            summarizer: TrainConfig::summarizer(),
            tagger: TaggerSection::default(),
            analysis: AnalysisConfig::default(),
            selection: SelectionConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(t) = overrides.threads {
            cfg.threads = t;
        }
        if let Some(d) = &overrides.out_dir {
            cfg.out_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.tagger.hidden == 0 {
            return Err(Error::Config("tagger hidden width must be at least 1".into()));
        }
        if self.selection.block == 0 {
            return Err(Error::Config("selection block must be at least 1".into()));
        }
        self.summarizer.validate()?;
        self.tagger.train.validate()?;
        let max_pos = self.model.max_positions;
        self.analysis.decode.validate(max_pos)?;
        self.evaluation.decode.validate(max_pos)?;
        if self.data.input.is_none() {
            self.data.generator.validate()?;
        }
        Ok(())
    }

    /// The settings that influence results: everything except the output
    /// directory and thread count, with the seed made explicit.
    pub fn result_config(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        obj.remove("out_dir");
        obj.remove("threads");
        v
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.result_config().to_string().as_bytes())
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            seed: self.seed,
            ..self.data.generator.clone()
        }
    }

    pub fn summarizer_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(1),
            ..self.summarizer
        }
    }

    pub fn tagger_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(2),
            ..self.tagger.train
        }
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts {
            dir: self.out_dir.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Provenance block carried by every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input artifact name → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

impl Header {
    pub fn new(cfg: &PipelineConfig, stage: &str, inputs: &[(&str, &Path)]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|(name, p)| Ok((name.to_string(), file_hash(p)?)))
            .collect::<Result<_>>()?;
        Ok(Header {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            stage: stage.into(),
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            inputs,
        })
    }
}

/// A JSON artifact: header, echoed configuration, then the payload's fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub header: Header,
    pub config: serde_json::Value,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(cfg: &PipelineConfig, header: Header, body: T) -> Self {
        Report {
            header,
            config: cfg.result_config(),
            body,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

pub fn read_report<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Report<T>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_sidecar(path: &Path, header: &Header) -> Result<()> {
    let mut text = serde_json::to_string_pretty(header)?;
    text.push('\n');
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("artifact has a file name").to_os_string();
    name.push(".header.json");
    path.with_file_name(name)
}

/// File names of every artifact under the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn corpus(&self) -> PathBuf {
        self.file("corpus.jsonl")
    }
    pub fn summarizer(&self) -> PathBuf {
        self.file("summarizer.ckpt")
    }
    pub fn summarizer_log(&self) -> PathBuf {
        self.file("summarizer.log.jsonl")
    }
    pub fn tagger(&self) -> PathBuf {
        self.file("tagger.ckpt")
    }
    pub fn tagger_log(&self) -> PathBuf {
        self.file("tagger.log.jsonl")
    }
    pub fn boundary(&self) -> PathBuf {
        self.file("boundary.json")
    }
    pub fn effect(&self) -> PathBuf {
        self.file("effect.json")
    }
    pub fn effect_csv(&self) -> PathBuf {
        self.file("effect.csv")
    }
    pub fn synergy(&self) -> PathBuf {
        self.file("synergy.json")
    }
    pub fn synergy_csv(&self) -> PathBuf {
        self.file("synergy.csv")
    }
    pub fn focus(&self) -> PathBuf {
        self.file("focus.json")
    }
    pub fn focus_csv(&self) -> PathBuf {
        self.file("focus.csv")
    }
    pub fn selection(&self) -> PathBuf {
        self.file("selection.json")
    }
    pub fn mask(&self) -> PathBuf {
        self.file("mask.json")
    }
    pub fn summaries(&self, mode: SummarizeMode, split: Split) -> PathBuf {
        self.file(&format!("summaries.{}.{split}.json", mode.as_str()))
    }
    pub fn evaluation(&self) -> PathBuf {
        self.file("evaluation.json")
    }

    /// Every report whose bytes must be reproducible.
    pub fn reports(&self) -> Vec<PathBuf> {
        vec![
            self.boundary(),
            self.effect(),
            self.synergy(),
            self.focus(),
            self.selection(),
            self.mask(),
            self.evaluation(),
        ]
    }
}

/// Loads the corpus artifact written by [`gen_data`].
pub fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    Ok(ingest(&cfg.artifacts().corpus(), Split::Train)?.0)
}

fn split_or_err(corpus: &Corpus, split: Split) -> Result<Vec<Example>> {
    let ex = corpus.split(split);
    if ex.is_empty() {
        return Err(Error::Input(format!("{split} split is empty")));
    }
    Ok(ex)
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

/// Generates (or ingests and re-serializes) the corpus.
pub fn gen_data(cfg: &PipelineConfig) -> Result<Corpus> {
    ensure_out_dir(cfg)?;
    let a = cfg.artifacts();
    let (corpus, header) = match &cfg.data.input {
        Some(path) => {
            let (corpus, _) = ingest(path, Split::Train)?;
            (corpus, Header::new(cfg, "gen-data", &[("input", path)])?)
        }
        None => (
            generate_corpus(&cfg.generator_spec())?,
            Header::new(cfg, "gen-data", &[])?,
        ),
    };
    corpus.write_jsonl(&a.corpus())?;
    write_sidecar(&a.corpus(), &header)?;
    Ok(corpus)
}

fn save_container(mut c: Container, header: &Header, path: &Path) -> Result<()> {
    c.header = serde_json::to_string(header)?;
    c.save(path)
}

pub fn train(cfg: &PipelineConfig) -> Result<ModelParams> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let model_cfg = cfg.model.with_vocab(corpus.vocab.len());
    let trained = train_summarizer(&corpus, model_cfg, &cfg.summarizer_train())?;
    let header = Header::new(cfg, "train", &[("corpus", &a.corpus())])?;
    save_container(trained.params.to_container(), &header, &a.summarizer())?;
    write_log(&trained.log, &a.summarizer_log())?;
    write_sidecar(&a.summarizer_log(), &header)?;
    Ok(trained.params)
}

pub fn load_summarizer(cfg: &PipelineConfig) -> Result<ModelParams> {
    ModelParams::load(&cfg.artifacts().summarizer())
}

pub fn train_tagger_stage(cfg: &PipelineConfig) -> Result<TaggerParams> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let encoder = load_summarizer(cfg)?;
    let trained = train_tagger(
        &encoder,
        &split_or_err(&corpus, Split::Train)?,
        &split_or_err(&corpus, Split::Validation)?,
        cfg.tagger.hidden,
        &cfg.tagger_train(),
    )?;
    let header = Header::new(
        cfg,
        "train-tagger",
        &[("corpus", &a.corpus()), ("summarizer", &a.summarizer())],
    )?;
    save_container(trained.params.to_container(), &header, &a.tagger())?;
    write_log(&trained.log, &a.tagger_log())?;
    write_sidecar(&a.tagger_log(), &header)?;
    Ok(trained.params)
}

pub fn load_tagger(cfg: &PipelineConfig) -> Result<TaggerParams> {
    TaggerParams::load(&cfg.artifacts().tagger())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub boundary: DecisionBoundary,
    pub f1: f64,
    pub n_examples: usize,
}

pub fn tune_boundary_stage(cfg: &PipelineConfig) -> Result<BoundaryReport> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let tagger = load_tagger(cfg)?;
    let val = split_or_err(&corpus, Split::Validation)?;
    let pairs: Vec<(&[u32], &[bool])> = val.iter().map(|e| (e.source.as_slice(), e.labels.as_slice())).collect();
    let (boundary, f1) = tune_boundary(&tagger, &pairs)?;
    let body = BoundaryReport {
        boundary,
        f1,
        n_examples: val.len(),
    };
    let header = Header::new(
        cfg,
        "tune-boundary",
        &[("corpus", &a.corpus()), ("tagger", &a.tagger())],
    )?;
    Report::new(cfg, header, body).write(&a.boundary())?;
    Ok(body)
}

pub fn load_boundary(cfg: &PipelineConfig) -> Result<DecisionBoundary> {
    Ok(read_report::<BoundaryReport>(&cfg.artifacts().boundary())?
        .body
        .boundary)
}

fn analysis_set(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<Example>> {
    split_or_err(corpus, cfg.analysis.split)
}

fn model_inputs(a: &Artifacts) -> [(&'static str, PathBuf); 2] {
    [("corpus", a.corpus()), ("summarizer", a.summarizer())]
}

fn header_with(cfg: &PipelineConfig, stage: &str, inputs: &[(&'static str, PathBuf)]) -> Result<Header> {
    let refs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
    Header::new(cfg, stage, &refs)
}

pub fn analyze_effect(cfg: &PipelineConfig) -> Result<ContentSelectionEffect> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let model = load_summarizer(cfg)?;
    let set = analysis_set(cfg, &corpus)?;
    let effect = content_selection_effect(&model, &set, &cfg.analysis.decode, cfg.threads)?;
    let header = header_with(cfg, "analyze-effect", &model_inputs(&a))?;
    Report::new(cfg, header, effect.clone()).write(&a.effect())?;
    if cfg.analysis.csv {
        fs::write(a.effect_csv(), effect.to_csv())?;
    }
    Ok(effect)
}

pub fn load_effect(cfg: &PipelineConfig) -> Result<ContentSelectionEffect> {
    Ok(read_report(&cfg.artifacts().effect())?.body)
}

pub fn analyze_synergy(cfg: &PipelineConfig) -> Result<SynergyReport> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let model = load_summarizer(cfg)?;
    let effect = load_effect(cfg)?;
    let set = analysis_set(cfg, &corpus)?;
    let report = synergy_analysis(&model, &set, &effect, &cfg.analysis.decode, cfg.threads)?;
    let mut inputs = model_inputs(&a).to_vec();
    inputs.push(("effect", a.effect()));
    let header = header_with(cfg, "analyze-synergy", &inputs)?;
    Report::new(cfg, header, report.clone()).write(&a.synergy())?;
    if cfg.analysis.csv {
        fs::write(a.synergy_csv(), report.to_csv())?;
    }
    Ok(report)
}

pub fn analyze_focus(cfg: &PipelineConfig) -> Result<FocusTally> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let model = load_summarizer(cfg)?;
    let set = analysis_set(cfg, &corpus)?;
    let tally = attention_focus(&model, &set, &corpus.vocab, &cfg.analysis.decode, cfg.threads)?;
    let header = header_with(cfg, "analyze-focus", &model_inputs(&a))?;
    Report::new(cfg, header, tally.clone()).write(&a.focus())?;
    if cfg.analysis.csv {
        fs::write(a.focus_csv(), tally.to_csv())?;
    }
    Ok(tally)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    #[serde(flatten)]
    pub result: HeadSelectionResult,
    /// Unmasked decoding on the same set, for comparison.
    pub unmasked: RougeScores,
    pub unmasked_score: f64,
    pub boundary: DecisionBoundary,
}

pub fn select_heads(cfg: &PipelineConfig) -> Result<SelectionReport> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let model = load_summarizer(cfg)?;
    let tagger = load_tagger(cfg)?;
    let boundary = load_boundary(cfg)?;
    let effect = load_effect(cfg)?;
    let set = analysis_set(cfg, &corpus)?;
    let dp = &cfg.analysis.decode;
    let result = greedy_select_heads(
        &model,
        &tagger,
        boundary,
        &set,
        &effect,
        cfg.selection.block,
        dp,
        cfg.threads,
    )?;
    let unmasked = decode_set(&model, &set, Attention::Unmasked, dp, cfg.threads)?.mean;
    let report = SelectionReport {
        result,
        unmasked,
        unmasked_score: unmasked.r1_plus_r2(),
        boundary,
    };
    let mut inputs = model_inputs(&a).to_vec();
    inputs.extend([
        ("tagger", a.tagger()),
        ("boundary", a.boundary()),
        ("effect", a.effect()),
    ]);
    let header = header_with(cfg, "select-heads", &inputs)?;
    Report::new(cfg, header.clone(), report.clone()).write(&a.selection())?;
    Report::new(cfg, header, report.result.mask()).write(&a.mask())?;
    Ok(report)
}

/// Reads `layer` and `heads` from a mask file or a selection report.
pub fn load_mask(path: &Path) -> Result<LayerMask> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let get = |k: &str| {
        v.get(k)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{}: missing {k:?}", path.display())))
    };
    Ok(LayerMask {
        layer: serde_json::from_value(get("layer")?)?,
        heads: serde_json::from_value(get("heads")?)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummarizeMode {
    Unmasked,
    /// Selected heads masked with labels aligned from the reference.
    Oracle,
    /// Selected heads masked with labels predicted by the tagger.
    Tagger,
}

impl SummarizeMode {
    pub const ALL: [SummarizeMode; 3] = [SummarizeMode::Unmasked, SummarizeMode::Oracle, SummarizeMode::Tagger];

    pub fn as_str(&self) -> &'static str {
        match self {
            SummarizeMode::Unmasked => "unmasked",
            SummarizeMode::Oracle => "oracle",
            SummarizeMode::Tagger => "tagger",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummariesReport {
    pub mode: SummarizeMode,
    pub split: Split,
    pub mask: Option<LayerMask>,
    /// Every label set to salient instead of the mode's labels.
    pub all_salient: bool,
    pub decode: DecodeParams,
    pub rouge: RougeScores,
    /// Examples decoded unmasked because their labels selected nothing.
    pub fallbacks: usize,
    pub summaries: Vec<Summary>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummarizeOptions {
    pub split: Option<Split>,
    /// Defaults to the selection artifact.
    pub mask_from: Option<PathBuf>,
    pub all_salient: bool,
}

pub fn summarize(cfg: &PipelineConfig, mode: SummarizeMode, opts: &SummarizeOptions) -> Result<SummariesReport> {
    let a = cfg.artifacts();
    let corpus = load_corpus(cfg)?;
    let model = load_summarizer(cfg)?;
    let split = opts.split.unwrap_or(cfg.evaluation.split);
    let examples = split_or_err(&corpus, split)?;
    let dp = &cfg.evaluation.decode;
    let mut inputs = model_inputs(&a).to_vec();

    let (mask, run) = if mode == SummarizeMode::Unmasked {
        (
            None,
            decode_set(&model, &examples, Attention::Unmasked, dp, cfg.threads)?,
        )
    } else {
        let mask_path = opts.mask_from.clone().unwrap_or_else(|| a.selection());
        let mask = load_mask(&mask_path)?;
        inputs.push(("mask", mask_path));
        let mc = model.config();
        let mask_cfg = mask.to_config(mc.n_dec_layers, mc.n_heads)?;
        let labels: Vec<Vec<bool>> = if opts.all_salient {
            examples.iter().map(|e| vec![true; e.source.len()]).collect()
        } else if mode == SummarizeMode::Oracle {
            examples.iter().map(|e| e.labels.clone()).collect()
        } else {
            inputs.extend([("tagger", a.tagger()), ("boundary", a.boundary())]);
            system_labels(&load_tagger(cfg)?, load_boundary(cfg)?, &examples, cfg.threads)?
        };
        let masks = masks_from_labels(labels.iter().map(Vec::as_slice));
        let run = decode_set(
            &model,
            &examples,
            Attention::Masked {
                mask_cfg: &mask_cfg,
                masks: &masks,
            },
            dp,
            cfg.threads,
        )?;
        (Some(mask), run)
    };
    let summaries = examples
        .iter()
        .zip(&run.hypotheses)
        .map(|(e, h)| Summary {
            id: e.id.clone(),
            tokens: corpus.vocab.decode(h.body()),
        })
        .collect();
    let report = SummariesReport {
        mode,
        split,
        mask,
        all_salient: opts.all_salient,
        decode: *dp,
        rouge: run.mean,
        fallbacks: run.fallbacks,
        summaries,
    };
    let header = header_with(cfg, "summarize", &inputs)?;
    Report::new(cfg, header, report.clone()).write(&a.summaries(mode, split))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScores {
    pub mode: SummarizeMode,
    pub rouge: RougeScores,
    pub r1_plus_r2: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: Split,
    pub mask: LayerMask,
    pub modes: Vec<ModeScores>,
}

/// Summarizes the evaluation split in all three modes and scores them.
pub fn evaluate(cfg: &PipelineConfig) -> Result<EvaluationReport> {
    let a = cfg.artifacts();
    let opts = SummarizeOptions::default();
    let mut modes = Vec::new();
    let mut inputs = Vec::new();
    for mode in SummarizeMode::ALL {
        let r = summarize(cfg, mode, &opts)?;
        let path = a.summaries(mode, r.split);
        inputs.push((mode.as_str(), path));
        modes.push(ModeScores {
            mode,
            rouge: r.rouge,
            r1_plus_r2: r.rouge.r1_plus_r2(),
            fallbacks: r.fallbacks,
        });
    }
    let report = EvaluationReport {
        split: cfg.evaluation.split,
        mask: load_mask(&a.selection())?,
        modes,
    };
    let header = header_with(cfg, "evaluate", &inputs)?;
    Report::new(cfg, header, report.clone()).write(&a.evaluation())?;
    Ok(report)
}

/// Runs every stage in order, tagging failures with the stage name.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvaluationReport> {
    gen_data(cfg).map_err(|e| e.in_stage("gen-data"))?;
    train(cfg).map_err(|e| e.in_stage("train"))?;
    train_tagger_stage(cfg).map_err(|e| e.in_stage("train-tagger"))?;
    tune_boundary_stage(cfg).map_err(|e| e.in_stage("tune-boundary"))?;
    analyze_effect(cfg).map_err(|e| e.in_stage("analyze-effect"))?;
    analyze_synergy(cfg).map_err(|e| e.in_stage("analyze-synergy"))?;
    analyze_focus(cfg).map_err(|e| e.in_stage("analyze-focus"))?;
    select_heads(cfg).map_err(|e| e.in_stage("select-heads"))?;
    evaluate(cfg).map_err(|e| e.in_stage("evaluate"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(PipelineConfig::from_toml("sed = 3"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("[summarizer]\nseed = 3").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 5\nthreads = 2\n[selection]\nblock = 2\n").unwrap();
        let cfg = PipelineConfig::load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((cfg.seed, cfg.threads, cfg.selection.block), (5, 2, 2));
        let ov = Overrides {
            seed: Some(9),
            threads: None,
            out_dir: Some("elsewhere".into()),
        };
        let cfg = PipelineConfig::load(Some(&path), &ov).unwrap();
        assert_eq!((cfg.seed, cfg.threads), (9, 2));
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn hash_ignores_output_location_and_threads() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            out_dir: "x".into(),
            threads: 4,
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = PipelineConfig { seed: 3, ..a.clone() };
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn stage_seeds_derive_from_the_run_seed() {
        let cfg = PipelineConfig {
            seed: 40,
            ..Default::default()
        };
        assert_eq!(cfg.generator_spec().seed, 40);
        assert_eq!(cfg.summarizer_train().seed, 41);
        assert_eq!(cfg.tagger_train().seed, 42);
    }

    #[test]
    fn mask_loads_from_plain_or_report_files() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("m.json");
        fs::write(&plain, r#"{"layer": 2, "heads": [1, 3]}"#).unwrap();
        assert_eq!(
            load_mask(&plain).unwrap(),
            LayerMask {
                layer: 2,
                heads: vec![1, 3]
            }
        );
        let report = dir.path().join("r.json");
        fs::write(&report, r#"{"header": {}, "layer": 0, "heads": [0], "score": 1.0}"#).unwrap();
        assert_eq!(load_mask(&report).unwrap().layer, 0);
        fs::write(&plain, r#"{"heads": [1]}"#).unwrap();
        assert!(matches!(load_mask(&plain), Err(Error::Config(_))));
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar_path(Path::new("o/corpus.jsonl")),
            PathBuf::from("o/corpus.jsonl.header.json")
        );
    }
}
