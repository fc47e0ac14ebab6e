//! `guidedec run`: batch generation to JSON lines.

use std::fs;
use std::io::Write;

use guidedec::metrics::{
    conditional_perplexity, repetition, result_success_rate, RunMeasures, DEFAULT_NGRAM,
};
use guidedec::{
    DecodingConfig, GenerationResult, GuidedDecoder, InsertionRecord, StepDiagnostics, StopReason,
    Storyline, Strategy, TokenId, WordNormalizer,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::RunArgs;
use crate::backend::{self, Models, Selection};
use crate::tasks::{read_tasks, Task, TaskRecord};
use crate::{normalizer, Failure};

/// One line of the output file.
#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub task_id: String,
    pub sample_id: usize,
    pub strategy: Strategy,
    /// Only set for the boosted strategy.
    pub lambda0: Option<f64>,
    pub k: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub prompt: String,
    pub guide_phrases: Vec<String>,
    pub text: String,
    pub generated_text: String,
    pub prompt_ids: Vec<TokenId>,
    pub generated_ids: Vec<TokenId>,
    pub insertion_log: Vec<InsertionRecord>,
    pub stop_reason: Option<StopReason>,
    pub unmet_phrases: Vec<usize>,
    /// Missing when nothing was generated or the run failed.
    pub measures: Option<RunMeasures>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StepDiagnostics>>,
}

/// A single generation to perform.
#[derive(Debug, Clone)]
pub struct Job {
    pub task: usize,
    pub sample_id: usize,
    pub config: DecodingConfig,
    pub lambda0: Option<f64>,
}

/// Expands tasks into jobs in output order: task, then strategy and λ₀,
/// then sample.
pub fn plan_jobs(tasks: &[Task], args: &RunArgs) -> Result<Vec<Job>, Failure> {
    let mut jobs = Vec::new();
    for (t, task) in tasks.iter().enumerate() {
        let r = &task.record;
        let strategies = r
            .strategy
            .map_or_else(|| args.strategy.clone(), |s| vec![s]);
        let lambdas = r.lambda0.map_or_else(|| args.lambda0.clone(), |l| vec![l]);
        let seed = r.seed.unwrap_or(args.seed);
        let samples = r.samples.unwrap_or(args.samples);
        for &strategy in &strategies {
            let sweep: Vec<Option<f64>> = match strategy {
                Strategy::FusionBoost => lambdas.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            for lambda0 in sweep {
                let base = DecodingConfig {
                    strategy,
                    k: r.k.unwrap_or(args.top_k),
                    lambda0: lambda0.unwrap_or(DecodingConfig::default().lambda0),
                    max_new_tokens: r.max_tokens.unwrap_or(args.max_tokens),
                    temperature: args.temperature,
                    ..Default::default()
                };
                base.validate()
                    .map_err(|e| Failure::usage(format!("task {}: {e}", task.id)))?;
                for sample_id in 0..samples {
                    let config = DecodingConfig {
                        seed: seed.wrapping_add(sample_id as u64),
                        ..base.clone()
                    };
                    jobs.push(Job {
                        task: t,
                        sample_id,
                        config,
                        lambda0,
                    });
                }
            }
        }
    }
    Ok(jobs)
}

pub fn measure(
    result: &GenerationResult,
    storyline: &Storyline,
    models: &Models,
    norm: &dyn WordNormalizer,
) -> guidedec::Result<Option<RunMeasures>> {
    if result.generated_ids.is_empty() {
        return Ok(None);
    }
    let ppl = conditional_perplexity(&result.prompt_ids, &result.generated_ids, models.scorer())?;
    let sr = result_success_rate(result, storyline, norm);
    Ok(Some(RunMeasures {
        ppl,
        rep: repetition(&result.generated_ids, DEFAULT_NGRAM),
        sr: sr.sr,
        per_phrase: sr.per_phrase,
        empty_storyline: sr.empty_storyline,
    }))
}

fn execute_job(
    job: &Job,
    task: &Task,
    storyline: &Result<Storyline, String>,
    models: &Models,
    norm: &dyn WordNormalizer,
    trace: bool,
) -> OutputRecord {
    let r = &task.record;
    let mut rec = OutputRecord {
        task_id: task.id.clone(),
        sample_id: job.sample_id,
        strategy: job.config.strategy,
        lambda0: job.lambda0,
        k: job.config.k,
        max_tokens: job.config.max_new_tokens,
        seed: job.config.seed,
        prompt: r.prompt.clone(),
        guide_phrases: r.guide_phrases.clone(),
        text: String::new(),
        generated_text: String::new(),
        prompt_ids: Vec::new(),
        generated_ids: Vec::new(),
        insertion_log: Vec::new(),
        stop_reason: None,
        unmet_phrases: (0..r.guide_phrases.len()).collect(),
        measures: None,
        error: None,
        trace: None,
    };
    let storyline = match storyline {
        Ok(s) => s,
        Err(e) => {
            rec.error = Some(format!("guide phrases: {e}"));
            return rec;
        }
    };
    let decoder = match GuidedDecoder::new(
        models.backends(),
        storyline.clone(),
        job.config.clone(),
        norm,
    ) {
        Ok(d) => d,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let (result, error) = match decoder.generate(&r.prompt, trace) {
        Ok(res) => (res, None),
        Err(failure) => {
            let failure = *failure;
            (failure.partial, Some(failure.error.to_string()))
        }
    };
    rec.error = error;
    if rec.error.is_none() {
        rec.stop_reason = Some(result.stop_reason);
        match measure(&result, storyline, models, norm) {
            Ok(m) => rec.measures = m,
            Err(e) => rec.error = Some(format!("measures: {e}")),
        }
    }
    rec.text = result.text;
    rec.generated_text = result.generated_text;
    rec.prompt_ids = result.prompt_ids;
    rec.generated_ids = result.generated_ids;
    rec.insertion_log = result.insertion_log;
    rec.unmet_phrases = result.unmet_phrases;
    if trace {
        rec.trace = Some(result.trace);
    }
    rec
}

/// Runs every job and returns the records in job order.
pub fn run_jobs(
    tasks: &[Task],
    jobs: &[Job],
    models: &Models,
    norm: &dyn WordNormalizer,
    trace: bool,
) -> Vec<OutputRecord> {
    let tokenizer = models.ar.tokenizer.as_ref();
    let storylines: Vec<Result<Storyline, String>> = tasks
        .iter()
        .map(|t| {
            Storyline::from_surfaces(&t.record.guide_phrases, tokenizer, norm)
                .map_err(|e| e.to_string())
        })
        .collect();
    jobs.par_iter()
        .map(|job| {
            execute_job(
                job,
                &tasks[job.task],
                &storylines[job.task],
                models,
                norm,
                trace,
            )
        })
        .collect()
}

pub fn to_jsonl(records: &[OutputRecord]) -> Result<String, Failure> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Failure::io(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let tasks = match (&args.tasks, &args.prompt) {
        (Some(path), None) => read_tasks(path)?,
        (None, Some(prompt)) => vec![Task {
            id: "0".into(),
            record: TaskRecord::inline(prompt, args.phrases.clone()),
        }],
        (Some(_), Some(_)) => {
            return Err(Failure::usage("use either --tasks or --prompt, not both"))
        }
        (None, None) => return Err(Failure::usage("nothing to run; give --tasks or --prompt")),
    };
    if args.samples == 0 {
        return Err(Failure::usage("--samples must be at least 1"));
    }
    let jobs = plan_jobs(&tasks, args)?;
    let need_mlm = jobs.iter().any(|j| j.config.strategy != Strategy::ArOnly);
    let models = backend::load(&Selection {
        ar: args
            .backends
            .ar_backend
            .clone()
            .or_else(|| args.backends.backend.clone()),
        mlm: args
            .backends
            .mlm_backend
            .clone()
            .or_else(|| args.backends.backend.clone()),
        scorer: args.scorer_backend.clone(),
        default_url: args.backends.backend_url.clone(),
        need_mlm,
    })?;
    let norm = normalizer(args.lemmas.as_deref())?;
    let records = run_jobs(&tasks, &jobs, &models, norm.as_ref(), args.trace);
    let body = to_jsonl(&records)?;
    match &args.out {
        Some(path) => {
            fs::write(path, body).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?
        }
        None => stdout
            .write_all(body.as_bytes())
            .map_err(|e| Failure::io(e.to_string()))?,
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    eprintln!("{} records, {failed} failed", records.len());
    Ok(())
}
