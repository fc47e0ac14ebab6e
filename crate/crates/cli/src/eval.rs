//! `guidedec eval`: recompute measures from run outputs and aggregate them.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use guidedec::metrics::{
    aggregate, conditional_perplexity, phrase_success_rate, render_table, repetition,
    word_repetition, ReportRow, RunMeasures,
};
use guidedec::{InsertionRecord, Strategy, TokenId, WordNormalizer};
use serde::{Deserialize, Serialize};

use crate::args::{EvalArgs, RepUnit, ReportFormat};
use crate::backend::{self, Selection};
use crate::tasks::{read_tasks, Task};
use crate::{normalizer, Failure};

/// The fields of an output record that evaluation reads.
#[derive(Debug, Clone, Deserialize)]
pub struct StoredRecord {
    pub task_id: String,
    pub sample_id: usize,
    pub strategy: Strategy,
    pub lambda0: Option<f64>,
    #[serde(default)]
    pub prompt_ids: Vec<TokenId>,
    pub generated_ids: Vec<TokenId>,
    pub generated_text: String,
    #[serde(default)]
    pub insertion_log: Vec<InsertionRecord>,
    pub measures: Option<RunMeasures>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Failed or empty generations left out of the aggregates.
    pub skipped: usize,
}

pub fn read_outputs(paths: &[impl AsRef<Path>]) -> Result<Vec<StoredRecord>, Failure> {
    let mut records = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line)
                .map_err(|e| Failure::usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(rec);
        }
    }
    if records.is_empty() {
        return Err(Failure::usage("no output records to evaluate"));
    }
    Ok(records)
}

type GroupKey = (Strategy, Option<f64>);

type Scorer<'a> = Option<&'a dyn guidedec::AutoregressiveModel>;

/// How repetition is counted.
#[derive(Debug, Clone, Copy)]
pub struct RepSpec {
    pub n: usize,
    pub unit: RepUnit,
}

fn measures_for(
    rec: &StoredRecord,
    task: &Task,
    scorer: Scorer<'_>,
    rep: RepSpec,
    norm: &dyn WordNormalizer,
) -> Result<RunMeasures, Failure> {
    let ppl = match (scorer, &rec.measures) {
        (Some(s), _) => {
            conditional_perplexity(&rec.prompt_ids, &rec.generated_ids, s).map_err(|e| {
                Failure::backend(format!(
                    "task {} sample {}: {e}",
                    rec.task_id, rec.sample_id
                ))
            })?
        }
        (None, Some(m)) => m.ppl,
        (None, None) => {
            return Err(Failure::usage(format!(
                "task {} sample {} has no stored perplexity; pass --scorer-backend",
                rec.task_id, rec.sample_id
            )))
        }
    };
    let sr = phrase_success_rate(
        &rec.generated_text,
        &rec.insertion_log,
        &task.record.guide_phrases,
        norm,
    );
    Ok(RunMeasures {
        ppl,
        rep: match rep.unit {
            RepUnit::Token => repetition(&rec.generated_ids, rep.n),
            RepUnit::Word => word_repetition(&rec.generated_text, rep.n, norm),
        },
        sr: sr.sr,
        per_phrase: sr.per_phrase,
        empty_storyline: sr.empty_storyline,
    })
}

/// Groups runs by strategy and λ₀, in strategy order then ascending λ₀.
pub fn evaluate(
    records: &[StoredRecord],
    tasks: &[Task],
    scorer: Scorer<'_>,
    rep: RepSpec,
    norm: &dyn WordNormalizer,
) -> Result<Report, Failure> {
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut groups: Vec<(GroupKey, Vec<RunMeasures>)> = Vec::new();
    let mut skipped = 0;
    for rec in records {
        let task = by_id.get(rec.task_id.as_str()).ok_or_else(|| {
            Failure::usage(format!("task id {:?} is not in the task file", rec.task_id))
        })?;
        if rec.error.is_some() || rec.generated_ids.is_empty() {
            skipped += 1;
            continue;
        }
        let m = measures_for(rec, task, scorer, rep, norm)?;
        let key = (rec.strategy, rec.lambda0);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, runs)) => runs.push(m),
            None => groups.push((key, vec![m])),
        }
    }
    let order = |s: Strategy| Strategy::ALL.iter().position(|&x| x == s);
    groups.sort_by(|((sa, la), _), ((sb, lb), _)| {
        order(*sa)
            .cmp(&order(*sb))
            .then(la.partial_cmp(lb).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut rows = Vec::new();
    for ((strategy, lambda0), runs) in groups {
        rows.push(ReportRow {
            strategy,
            lambda0,
            summary: aggregate(&runs).map_err(|e| Failure::usage(e.to_string()))?,
        });
    }
    Ok(Report { rows, skipped })
}

pub fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let tasks = read_tasks(&args.tasks)?;
    let records = read_outputs(&args.outputs)?;
    let models = match &args.scorer_backend {
        None => None,
        Some(spec) => Some(backend::load(&Selection {
            ar: Some(spec.clone()),
            mlm: None,
            scorer: None,
            default_url: None,
            need_mlm: false,
        })?),
    };
    let norm = normalizer(args.lemmas.as_deref())?;
    let report = evaluate(
        &records,
        &tasks,
        models.as_ref().map(|m| m.scorer()),
        RepSpec {
            n: args.ngram,
            unit: args.rep_unit,
        },
        norm.as_ref(),
    )?;
    if report.rows.is_empty() {
        return Err(Failure::usage("every output record failed or is empty"));
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::io(e.to_string()))?;
    if let Some(path) = &args.report {
        fs::write(path, format!("{json}\n"))
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    }
    let body = match args.format {
        ReportFormat::Text => render_table(&report.rows),
        ReportFormat::Json => format!("{json}\n"),
    };
    stdout
        .write_all(body.as_bytes())
        .map_err(|e| Failure::io(e.to_string()))?;
    if report.skipped > 0 {
        eprintln!("{} failed or empty records skipped", report.skipped);
    }
    Ok(())
}
