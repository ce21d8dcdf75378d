use std::fmt::Write as _;

use super::budget::allocate_head_budgets;
use super::cache::{decode_step, prefill, CacheState, CompressionEvent};
use super::config::CompressionConfig;
use crate::attention::{output_error, vanilla_attention};
use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor::{dot, Matrix};

/// Query/key/value streams for one head: the prompt followed by decode tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadInput {
    pub prompt_q: Matrix,
    pub prompt_k: Matrix,
    pub prompt_v: Matrix,
    pub decode_q: Matrix,
    pub decode_k: Matrix,
    pub decode_v: Matrix,
}

impl HeadInput {
    /// Splits full-length q/k/v at `prompt_len`; the remaining rows are decoded.
    pub fn split(q: &Matrix, k: &Matrix, v: &Matrix, prompt_len: usize) -> Result<Self> {
        let n = k.rows();
        if q.rows() != n || v.rows() != n {
            return Err(Error::dim(format!(
                "stream rows disagree: q {}, k {n}, v {}",
                q.rows(),
                v.rows()
            )));
        }
        if prompt_len == 0 || prompt_len > n {
            return Err(Error::dim(format!(
                "prompt length {prompt_len} invalid for a stream of {n} tokens"
            )));
        }
        Ok(HeadInput {
            prompt_q: q.slice_rows(0..prompt_len),
            prompt_k: k.slice_rows(0..prompt_len),
            prompt_v: v.slice_rows(0..prompt_len),
            decode_q: q.slice_rows(prompt_len..n),
            decode_k: k.slice_rows(prompt_len..n),
            decode_v: v.slice_rows(prompt_len..n),
        })
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_k.rows()
    }

    pub fn decode_len(&self) -> usize {
        self.decode_k.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    None,
    Compress,
}

impl StepEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepEvent::None => "none",
            StepEvent::Compress => "compress",
        }
    }
}

/// One row of the transcript. Step 0 is the prefill.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub head: usize,
    /// Cache length after the step, including any compression it triggered.
    pub len: usize,
    /// Longest the cache got during the step, before compression.
    pub peak_len: usize,
    pub event: StepEvent,
    pub approx_norm: f64,
    pub oracle_norm: f64,
    pub l2_error: f64,
    pub linf_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionRecord {
    pub step: usize,
    pub head: usize,
    pub event: CompressionEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub budgets: Vec<usize>,
    pub records: Vec<StepRecord>,
    pub compressions: Vec<CompressionRecord>,
    pub similarity_evals: u64,
}

impl Transcript {
    pub const CSV_HEADER: &'static str =
        "step,head,s,event,l2_error,linf_error,approx_norm,oracle_norm";

    pub fn peak_len(&self, head: usize) -> usize {
        self.for_head(head).map(|r| r.peak_len).max().unwrap_or(0)
    }

    pub fn final_len(&self, head: usize) -> usize {
        self.for_head(head).last().map_or(0, |r| r.len)
    }

    pub fn for_head(&self, head: usize) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(move |r| r.head == head)
    }

    /// Mean l2 error over decode steps (prefill is exact).
    pub fn mean_l2_error(&self) -> f64 {
        let decode: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.step > 0)
            .map(|r| r.l2_error)
            .collect();
        if decode.is_empty() {
            0.0
        } else {
            decode.iter().sum::<f64>() / decode.len() as f64
        }
    }

    pub fn max_l2_error(&self) -> f64 {
        self.records.iter().map(|r| r.l2_error).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
                r.step,
                r.head,
                r.len,
                r.event.as_str(),
                r.l2_error,
                r.linf_error,
                r.approx_norm,
                r.oracle_norm
            )
            .unwrap();
        }
        s
    }
}

struct HeadRun {
    records: Vec<StepRecord>,
    compressions: Vec<CompressionRecord>,
}

fn run_head(
    head: usize,
    input: &HeadInput,
    budget: usize,
    cfg: &CompressionConfig,
) -> Result<HeadRun> {
    let head_dim = cfg.scale_dim(input.prompt_k.cols());
    let mut records = Vec::with_capacity(input.decode_len() + 1);
    let mut compressions = Vec::new();

    let p = prefill(
        &input.prompt_q,
        &input.prompt_k,
        &input.prompt_v,
        cfg,
        Some(budget),
    )?;
    let mut state: CacheState = p.state;
    records.push(StepRecord {
        step: 0,
        head,
        len: state.len(),
        peak_len: input.prompt_len(),
        event: if p.event.is_some() {
            StepEvent::Compress
        } else {
            StepEvent::None
        },
        approx_norm: 0.0,
        oracle_norm: 0.0,
        l2_error: 0.0,
        linf_error: 0.0,
    });
    if let Some(event) = p.event {
        compressions.push(CompressionRecord {
            step: 0,
            head,
            event,
        });
    }

    let mut full_k = input.prompt_k.clone();
    let mut full_v = input.prompt_v.clone();
    for t in 0..input.decode_len() {
        let (q, k, v) = (
            input.decode_q.row(t),
            input.decode_k.row(t),
            input.decode_v.row(t),
        );
        full_k.push_row(k)?;
        full_v.push_row(v)?;
        let oracle = vanilla_attention(q, &full_k, &full_v, head_dim)?.out;
        let peak_len = state.len() + 1;
        let step = decode_step(&mut state, q, k, v, cfg)?;
        let err = output_error(&oracle, &step.out)?;
        records.push(StepRecord {
            step: t + 1,
            head,
            len: state.len(),
            peak_len,
            event: if step.event.is_some() {
                StepEvent::Compress
            } else {
                StepEvent::None
            },
            approx_norm: dot(&step.out, &step.out).sqrt(),
            oracle_norm: dot(&oracle, &oracle).sqrt(),
            l2_error: err.l2,
            linf_error: err.linf,
        });
        if let Some(event) = step.event {
            compressions.push(CompressionRecord {
                step: t + 1,
                head,
                event,
            });
        }
    }
    Ok(HeadRun {
        records,
        compressions,
    })
}

/// Prefill plus decode for every head, alongside an uncompressed exact-attention oracle.
///
/// Heads listed in `outliers` keep their full cache; the shared budget is
/// reallocated across the others.
pub fn run_pipeline(
    heads: &[HeadInput],
    cfg: &CompressionConfig,
    outliers: &[usize],
) -> Result<Transcript> {
    cfg.validate()?;
    let Some(first) = heads.first() else {
        return Err(Error::dim("no heads to run"));
    };
    if heads.len() != cfg.head_count {
        return Err(Error::config(format!(
            "config declares {} heads but {} were supplied",
            cfg.head_count,
            heads.len()
        )));
    }
    let (n, d) = (first.prompt_len(), first.prompt_k.cols());
    for (h, input) in heads.iter().enumerate() {
        if input.prompt_len() != n || input.prompt_k.cols() != d {
            return Err(Error::dim(format!("head {h} shape differs from head 0")));
        }
        if input.decode_len() > cfg.max_decode {
            return Err(Error::config(format!(
                "head {h} decodes {} tokens but max_decode is {}",
                input.decode_len(),
                cfg.max_decode
            )));
        }
    }
    let budget = cfg.budget(n)?;
    let budgets = allocate_head_budgets(
        budget,
        heads.len(),
        outliers,
        n + cfg.max_decode,
        cfg.min_budget(),
    )?;

    let before = metrics::snapshot();
    let mut records = Vec::new();
    let mut compressions = Vec::new();
    for (h, (input, &b)) in heads.iter().zip(&budgets).enumerate() {
        let run = run_head(h, input, b, cfg)?;
        records.extend(run.records);
        compressions.extend(run.compressions);
    }
    records.sort_by_key(|r| (r.step, r.head));
    Ok(Transcript {
        budgets,
        records,
        compressions,
        similarity_evals: metrics::snapshot().since(&before).similarity_evals,
    })
}
