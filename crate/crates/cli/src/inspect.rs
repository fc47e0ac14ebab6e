//! `guidedec inspect`: one step's scores laid out for reading or plotting.

use std::io::Write;

use guidedec::decoder::StepPlan;
use guidedec::{AlignmentMap, DecodingConfig, GuidePhrase, GuidedDecoder, Storyline, TokenId};

use crate::args::InspectArgs;
use crate::backend::{self, Models, Selection};
use crate::{normalizer, Failure};

/// Per-token scores of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub token_id: TokenId,
    pub token: String,
    pub ar: f64,
    /// `None` for tokens the masked model does not share.
    pub mlm: Option<f64>,
    pub fused: f64,
}

fn row(
    plan: &StepPlan,
    models: &Models,
    alignment: Option<&AlignmentMap>,
    id: TokenId,
) -> ScoreRow {
    let shared = alignment.is_some_and(|a| a.get(id).is_some());
    ScoreRow {
        token_id: id,
        token: models
            .ar
            .model
            .vocabulary()
            .token(id)
            .unwrap_or_default()
            .to_string(),
        ar: plan.ar[id],
        mlm: plan.mlm.as_ref().filter(|_| shared).map(|m| m[id]),
        fused: plan.fused[id],
    }
}

/// Top `n` tokens by fused score.
pub fn top_rows(plan: &StepPlan, models: &Models, n: usize) -> Vec<ScoreRow> {
    let alignment = models.alignment.as_ref();
    plan.fused
        .ranking()
        .into_iter()
        .take(n)
        .map(|id| row(plan, models, alignment, id))
        .collect()
}

/// Top `n` tokens known to both models, ordered by AR score.
pub fn shared_rows(plan: &StepPlan, models: &Models, n: usize) -> Vec<ScoreRow> {
    let alignment = models.alignment.as_ref();
    plan.ar
        .ranking()
        .into_iter()
        .filter(|&id| alignment.is_none_or(|a| a.get(id).is_some()))
        .take(n)
        .map(|id| row(plan, models, alignment, id))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn render_rows(rows: &[ScoreRow]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            [
                (i + 1).to_string(),
                format!("{:?}", r.token),
                format!("{:.4}", r.ar),
                fmt_opt(r.mlm),
                format!("{:.4}", r.fused),
            ]
        })
        .collect();
    let header = ["#", "token", "ar_score", "mlm_score", "fused"];
    let mut widths = header.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let line = |c: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in c.iter().zip(widths).enumerate() {
            let pad = w - cell.chars().count();
            if i == 1 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
            s.push_str("  ");
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&header.map(String::from));
    for c in &cells {
        out.push_str(&line(c));
    }
    out
}

pub fn write_csv(rows: &[ScoreRow], w: impl Write) -> csv::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["token", "ar_score", "mlm_score", "fused"])?;
    for r in rows {
        csv.write_record([
            r.token.clone(),
            r.ar.to_string(),
            r.mlm.map(|m| m.to_string()).unwrap_or_default(),
            r.fused.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn cmd_inspect(args: &InspectArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
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
        scorer: None,
        default_url: args.backends.backend_url.clone(),
        need_mlm: args.phrase.is_some(),
    })?;
    let norm = normalizer(None)?;
    let config = DecodingConfig {
        strategy: args.strategy,
        k: args.top_k,
        lambda0: args.lambda0,
        ..Default::default()
    };
    let tokenizer = models.ar.tokenizer.as_ref();
    let context = tokenizer
        .encode(&args.context)
        .map_err(|e| Failure::usage(format!("context: {e}")))?;
    if context.is_empty() {
        return Err(Failure::usage("context must be at least one token"));
    }
    let phrase = args
        .phrase
        .as_deref()
        .map(|p| GuidePhrase::new(p, tokenizer, norm.as_ref()))
        .transpose()
        .map_err(|e| Failure::usage(format!("phrase: {e}")))?;
    if args.step == 0 || args.last_insertion >= args.step {
        return Err(Failure::usage("need 0 <= --last-insertion < --step"));
    }
    let storyline = Storyline::new(phrase.iter().cloned().collect());
    let decoder = GuidedDecoder::new(models.backends(), storyline, config, norm.as_ref())
        .map_err(|e| Failure::usage(e.to_string()))?;
    let plan = decoder
        .score_step(&context, phrase.as_ref(), args.step, args.last_insertion)
        .map_err(|e| Failure::backend(e.to_string()))?;

    let io = |e: std::io::Error| Failure::io(e.to_string());
    writeln!(
        stdout,
        "context: {:?} ({} tokens)",
        args.context,
        context.len()
    )
    .map_err(io)?;
    if let Some(p) = &phrase {
        writeln!(
            stdout,
            "pending phrase: {:?} -> token ids {:?}",
            p.surface, p.token_ids
        )
        .map_err(io)?;
    }
    stdout
        .write_all(render_rows(&top_rows(&plan, &models, args.top)).as_bytes())
        .map_err(io)?;
    if let Some(b) = plan.boost {
        let name = models
            .ar
            .model
            .vocabulary()
            .token(b.token_id)
            .unwrap_or_default();
        writeln!(
            stdout,
            "boost {name:?}: lambda={:.4} alpha={:.4} delta={:.4} s_k={:.4} s_min={:.4} s_max={:.4} score {:.4} -> {:.4}{}",
            b.lambda,
            b.alpha,
            b.delta,
            b.s_k,
            b.s_min,
            b.s_max,
            b.pre_boost_score,
            b.post_boost_score,
            if b.applied { "" } else { " (kept natural score)" },
        )
        .map_err(io)?;
    }
    let picks: Vec<String> = plan
        .distribution
        .ids
        .iter()
        .zip(&plan.distribution.probs)
        .map(|(&id, p)| {
            format!(
                "{:?}={p:.4}",
                models.ar.model.vocabulary().token(id).unwrap_or_default()
            )
        })
        .collect();
    writeln!(
        stdout,
        "top-{} sampling: {}",
        plan.distribution.ids.len(),
        picks.join(" ")
    )
    .map_err(io)?;

    if let Some(path) = &args.dump_csv {
        let rows = shared_rows(&plan, &models, args.dump_top);
        let file = std::fs::File::create(path)
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        write_csv(&rows, file).map_err(|e| Failure::io(e.to_string()))?;
    }
    Ok(())
}
