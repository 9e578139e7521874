//! Final OOD score, bits-per-dimension, AUROC, and hard-threshold
//! classification, plus the score CSV format.
//!
//! The score of a sample is
//! `[-log p_U(u) - log p_V(v) - log|det Df(x)|] + lambda * C(x, x_rec)`
//! minus, when enabled, the compression complexity `bits / D`; with the
//! complexity term active the NLL bracket is expressed in bits per dimension
//! so both terms share units. Higher scores are more out-of-distribution.

use crate::complexity::{complexity_bits, quantize, Codec};
use crate::error::{Error, Result};
use crate::huber::{lambda_coefficient, FittedScale};
use crate::manifold::ManifoldFlowModel;
use crate::nn::Tensor;
use std::io::{BufRead, Write};

/// Per-sample scoring record. `combined` is recomputable from the stored
/// fields bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub id: usize,
    pub nll_nats: f64,
    pub penalty: f64,
    pub lambda: f64,
    pub ic_bits: Option<u64>,
    pub score: f64,
    pub valid: bool,
}

/// Scores with binary labels: in-distribution = 0, out-of-distribution = 1.
#[derive(Clone, Debug)]
pub struct EvalLabeling {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl EvalLabeling {
    pub fn auroc(&self) -> Result<f64> {
        auroc(&self.id_scores, &self.ood_scores)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScoreOptions {
    pub c_const: f64,
    pub use_ic: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            c_const: 1.0,
            use_ic: false,
        }
    }
}

/// Combine the pieces of one record into the final score.
pub fn combine(nll_nats: f64, penalty: f64, lambda: f64, ic_bits: Option<u64>, dim: usize) -> f64 {
    match ic_bits {
        Some(bits) => bpd(nll_nats, dim) + lambda * penalty - bits as f64 / dim as f64,
        None => nll_nats + lambda * penalty,
    }
}

/// Scores a batch. Samples whose evaluation produces non-finite values are
/// flagged invalid (NaN score) rather than dropped, so callers can report the
/// exclusion count.
pub fn score_batch(
    model: &ManifoldFlowModel,
    data: &Tensor,
    fit: &FittedScale,
    options: &ScoreOptions,
    codec: Option<&dyn Codec>,
) -> Result<Vec<ScoreRecord>> {
    if data.shape().len() != 2 || data.cols() != model.dim() {
        return Err(Error::Config(format!(
            "score data width {:?} does not match model dimension {}",
            data.shape(),
            model.dim()
        )));
    }
    if options.use_ic && codec.is_none() {
        return Err(Error::Config("complexity scoring requested without a codec".into()));
    }
    let lambda = lambda_coefficient(fit, options.c_const);
    let dim = model.dim();
    let mut out = Vec::with_capacity(data.rows());
    for i in 0..data.rows() {
        let row = Tensor::from_parts(vec![1, dim], data.row(i).to_vec());
        let evaluated = (|| -> Result<(f64, f64)> {
            let parts = model.nll_parts(&row)?;
            Ok((parts[0].nll(), parts[0].penalty))
        })();
        match evaluated {
            Ok((nll, pen)) if nll.is_finite() && pen.is_finite() => {
                let ic = if options.use_ic {
                    let q = quantize(row.data(), &[dim]);
                    Some(complexity_bits(&q, codec.unwrap())?)
                } else {
                    None
                };
                out.push(ScoreRecord {
                    id: i,
                    nll_nats: nll,
                    penalty: pen,
                    lambda,
                    ic_bits: ic,
                    score: combine(nll, pen, lambda, ic, dim),
                    valid: true,
                });
            }
            _ => out.push(ScoreRecord {
                id: i,
                nll_nats: f64::NAN,
                penalty: f64::NAN,
                lambda,
                ic_bits: None,
                score: f64::NAN,
                valid: false,
            }),
        }
    }
    Ok(out)
}

/// Bits per dimension: `nll / (D ln 2)`.
pub fn bpd(nll_nats: f64, dim: usize) -> f64 {
    assert!(dim > 0);
    nll_nats / (dim as f64 * std::f64::consts::LN_2)
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(score_ood > score_id) + 0.5 P(equal)`, computed by rank summation with
/// average ranks for ties.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::Eval(
            "AUROC needs both an ID and an OOD class".into(),
        ));
    }
    if id_scores
        .iter()
        .chain(ood_scores.iter())
        .any(|s| !s.is_finite())
    {
        return Err(Error::Eval("AUROC scores must be finite".into()));
    }
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_ood = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the average rank.
        let avg = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_ood += avg;
            }
        }
        i = j;
    }
    let n1 = ood_scores.len() as f64;
    let n0 = id_scores.len() as f64;
    let u = rank_sum_ood - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n0))
}

/// Hard decision threshold: the maximum ID score. Everything strictly above
/// it classifies as OOD.
pub fn hard_threshold(id_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() {
        return Err(Error::Eval("threshold needs at least one ID score".into()));
    }
    Ok(id_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Strict-inequality rule: `true` (OOD) iff `score > threshold`.
pub fn classify(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

/// Provenance header of a score file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFileMeta {
    pub dim: usize,
    pub penalty: String,
    pub delta: f64,
    pub lambda: f64,
    pub c_const: f64,
    pub use_ic: bool,
    pub codec: Option<String>,
    /// Fitted scale, e.g. `k=0.0213` or `sigma=0.017`.
    pub scale: String,
    /// `-log C_{d',k}` of the fitted Huber density: uniform across samples,
    /// omitted from scores, recorded for transparency.
    pub log_norm_const: Option<f64>,
    pub checkpoint: String,
}

pub const SCORE_CSV_COLUMNS: &str = "id,nll_nats,bpd,penalty,lambda,ic_bits,score,valid";

pub fn write_scores<W: Write>(
    w: &mut W,
    meta: &ScoreFileMeta,
    records: &[ScoreRecord],
) -> Result<()> {
    writeln!(w, "# oodflow scores v1")?;
    writeln!(w, "# dim = {}", meta.dim)?;
    writeln!(w, "# penalty = {}", meta.penalty)?;
    writeln!(w, "# delta = {}", meta.delta)?;
    writeln!(w, "# lambda = {}", meta.lambda)?;
    writeln!(w, "# c_const = {}", meta.c_const)?;
    writeln!(w, "# use_ic = {}", meta.use_ic)?;
    writeln!(w, "# units = {}", if meta.use_ic { "bpd" } else { "nats" })?;
    writeln!(w, "# codec = {}", meta.codec.as_deref().unwrap_or("none"))?;
    writeln!(w, "# scale = {}", meta.scale)?;
    if let Some(lnc) = meta.log_norm_const {
        writeln!(w, "# log_norm_const = {lnc}")?;
    }
    writeln!(w, "# checkpoint = {}", meta.checkpoint)?;
    writeln!(w, "{SCORE_CSV_COLUMNS}")?;
    for r in records {
        let ic = r.ic_bits.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.id,
            r.nll_nats,
            if r.valid {
                bpd(r.nll_nats, meta.dim).to_string()
            } else {
                f64::NAN.to_string()
            },
            r.penalty,
            r.lambda,
            ic,
            r.score,
            u8::from(r.valid),
        )?;
    }
    Ok(())
}

pub fn read_scores(path: &std::path::Path) -> Result<(ScoreFileMeta, Vec<ScoreRecord>)> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut meta = ScoreFileMeta {
        dim: 0,
        penalty: String::new(),
        delta: f64::NAN,
        lambda: f64::NAN,
        c_const: f64::NAN,
        use_ic: false,
        codec: None,
        scale: String::new(),
        log_norm_const: None,
        checkpoint: String::new(),
    };
    let mut records = Vec::new();
    let mut saw_header = false;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                let (k, v) = (k.trim(), v.trim());
                let parse_f64 = |v: &str| {
                    v.parse::<f64>().map_err(|_| {
                        Error::Format(format!("{}:{}: bad number {v:?}", path.display(), ln + 1))
                    })
                };
                match k {
                    "dim" => {
                        meta.dim = v.parse().map_err(|_| {
                            Error::Format(format!("{}:{}: bad dim", path.display(), ln + 1))
                        })?
                    }
                    "penalty" => meta.penalty = v.to_string(),
                    "delta" => meta.delta = parse_f64(v)?,
                    "lambda" => meta.lambda = parse_f64(v)?,
                    "c_const" => meta.c_const = parse_f64(v)?,
                    "use_ic" => meta.use_ic = v == "true",
                    "codec" => meta.codec = (v != "none").then(|| v.to_string()),
                    "scale" => meta.scale = v.to_string(),
                    "log_norm_const" => meta.log_norm_const = Some(parse_f64(v)?),
                    "checkpoint" => meta.checkpoint = v.to_string(),
                    _ => {}
                }
            }
            continue;
        }
        if !saw_header {
            if line != SCORE_CSV_COLUMNS {
                return Err(Error::Format(format!(
                    "{}:{}: unexpected column header {line:?}",
                    path.display(),
                    ln + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "{}:{}: expected 8 fields, got {}",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("{}:{}: bad float {s:?}", path.display(), ln + 1)))
        };
        records.push(ScoreRecord {
            id: fields[0].parse().map_err(|_| {
                Error::Format(format!("{}:{}: bad id", path.display(), ln + 1))
            })?,
            nll_nats: f(fields[1])?,
            penalty: f(fields[3])?,
            lambda: f(fields[4])?,
            ic_bits: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse().map_err(|_| {
                    Error::Format(format!("{}:{}: bad ic_bits", path.display(), ln + 1))
                })?)
            },
            score: f(fields[6])?,
            valid: fields[7] == "1",
        });
    }
    if !saw_header {
        return Err(Error::Format(format!(
            "{}: missing column header",
            path.display()
        )));
    }
    Ok((meta, records))
}

/// Per-variant score vectors for evaluation: NLL only, penalty only, the
/// combined score, and (when every valid record carries bits) the combined
/// score with the complexity correction. Invalid records are skipped; the
/// second return is the exclusion count.
pub struct VariantScores {
    pub nll: Vec<f64>,
    pub penalty: Vec<f64>,
    pub combined: Vec<f64>,
    pub combined_ic: Option<Vec<f64>>,
}

pub fn variant_scores(records: &[ScoreRecord], dim: usize) -> (VariantScores, usize) {
    let valid: Vec<&ScoreRecord> = records.iter().filter(|r| r.valid).collect();
    let excluded = records.len() - valid.len();
    let nll = valid.iter().map(|r| r.nll_nats).collect();
    let penalty = valid.iter().map(|r| r.penalty).collect();
    let combined = valid
        .iter()
        .map(|r| combine(r.nll_nats, r.penalty, r.lambda, None, dim))
        .collect();
    let combined_ic = if !valid.is_empty() && valid.iter().all(|r| r.ic_bits.is_some()) {
        Some(
            valid
                .iter()
                .map(|r| combine(r.nll_nats, r.penalty, r.lambda, r.ic_bits, dim))
                .collect(),
        )
    } else {
        None
    };
    (
        VariantScores {
            nll,
            penalty,
            combined,
            combined_ic,
        },
        excluded,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeededRng;

    /// O(n^2) pairwise oracle with half credit for ties.
    fn auroc_pairwise(id: &[f64], ood: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &o in ood {
            for &i in id {
                if o > i {
                    acc += 1.0;
                } else if o == i {
                    acc += 0.5;
                }
            }
        }
        acc / (id.len() as f64 * ood.len() as f64)
    }

    #[test]
    fn auroc_trivial_cases() {
        assert_eq!(auroc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn auroc_matches_pairwise_oracle_including_ties() {
        let mut rng = SeededRng::new(13);
        for case in 0..100 {
            let n_id = 1 + rng.index(40);
            let n_ood = 1 + rng.index(40);
            // Draw from a small integer grid to force ties.
            let id: Vec<f64> = (0..n_id).map(|_| rng.index(10) as f64).collect();
            let ood: Vec<f64> = (0..n_ood).map(|_| rng.index(10) as f64 + 2.0).collect();
            let fast = auroc(&id, &ood).unwrap();
            let slow = auroc_pairwise(&id, &ood);
            assert_eq!(fast, slow, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn auroc_swap_symmetry_without_ties() {
        let mut rng = SeededRng::new(19);
        let id: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let ood: Vec<f64> = (0..20).map(|_| rng.normal() + 0.7).collect();
        let a = auroc(&id, &ood).unwrap();
        let b = auroc(&ood, &id).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        let mut rng = SeededRng::new(23);
        let id: Vec<f64> = (0..25).map(|_| rng.normal()).collect();
        let ood: Vec<f64> = (0..25).map(|_| rng.normal() + 1.0).collect();
        let base = auroc(&id, &ood).unwrap();
        let f = |x: f64| (3.0 * x).tanh() * 2.0 + x / 10.0; // strictly increasing
        let idt: Vec<f64> = id.iter().map(|&x| f(x)).collect();
        let oodt: Vec<f64> = ood.iter().map(|&x| f(x)).collect();
        assert_eq!(auroc(&idt, &oodt).unwrap(), base);
    }

    #[test]
    fn bpd_values() {
        let d = 17;
        assert!((bpd(d as f64 * std::f64::consts::LN_2, d) - 1.0).abs() < 1e-15);
        assert_eq!(bpd(0.0, 5), 0.0);
    }

    #[test]
    fn threshold_and_classify() {
        let thr = hard_threshold(&[1.0, 5.0, 3.0]).unwrap();
        assert_eq!(thr, 5.0);
        assert_eq!(classify(&[5.0, 5.0 + 1e-12, 4.9], thr), vec![false, true, false]);
        // All-equal ID scores: nothing at the threshold classifies OOD.
        let thr = hard_threshold(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(classify(&[2.0, 2.0], thr), vec![false, false]);
        assert!(hard_threshold(&[]).is_err());
    }

    #[test]
    fn classification_invariant_under_joint_monotone_transform() {
        let mut rng = SeededRng::new(31);
        let scores: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let thr = 0.3;
        let base = classify(&scores, thr);
        let f = |x: f64| x.exp() + 0.5 * x;
        let ts: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
        assert_eq!(classify(&ts, f(thr)), base);
    }

    #[test]
    fn combine_decomposition_recomputes_bit_exactly() {
        let mut rng = SeededRng::new(37);
        for _ in 0..100 {
            let nll = rng.normal() * 10.0;
            let pen = rng.next_f64();
            let lambda = rng.uniform(0.0, 100.0);
            let dim = 1 + rng.index(64);
            let ic = if rng.next_f64() < 0.5 {
                Some(rng.index(10_000) as u64)
            } else {
                None
            };
            let s = combine(nll, pen, lambda, ic, dim);
            assert_eq!(s, combine(nll, pen, lambda, ic, dim));
        }
    }

    #[test]
    fn adding_constant_leaves_auroc_unchanged() {
        let mut rng = SeededRng::new(41);
        let id: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let ood: Vec<f64> = (0..30).map(|_| rng.normal() + 0.5).collect();
        let base = auroc(&id, &ood).unwrap();
        let ids: Vec<f64> = id.iter().map(|x| x + 3.25).collect();
        let oods: Vec<f64> = ood.iter().map(|x| x + 3.25).collect();
        assert_eq!(auroc(&ids, &oods).unwrap(), base);
    }

    #[test]
    fn bpd_of_standard_normal_draws() {
        // Identity flow on standard-normal data, D=2: the expected per-sample
        // BPD is (log(2 pi) + 1) / (2 ln 2) = 2.047.
        let mut rng = SeededRng::new(47);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (a, b) = (rng.normal(), rng.normal());
            let nll = 0.5 * (a * a + b * b) + crate::numeric::LN_2PI;
            acc += bpd(nll, 2);
        }
        let mean = acc / n as f64;
        let want = (crate::numeric::LN_2PI + 1.0) / (2.0 * std::f64::consts::LN_2);
        assert!((mean - want).abs() < 0.05, "mean BPD {mean} vs {want}");
    }

    #[test]
    fn zero_lambda_scores_rank_like_log_prob() {
        use crate::flow::FlowModel;
        use crate::huber::{FittedScale, ScaleKind};
        use crate::manifold::{LatentSplit, ManifoldFlowModel, PenaltySpec};
        let mut model = FlowModel::dense(3, 2, &[8], 3).unwrap();
        let mut rng = SeededRng::new(8);
        let mut p = model.params_flat();
        for v in p.iter_mut() {
            *v += rng.uniform(-0.2, 0.2);
        }
        model.set_params_flat(&p);
        let manifold = ManifoldFlowModel::new(
            model,
            LatentSplit::new(1, 3).unwrap(),
            None,
            PenaltySpec::huber(0.1, 1.0).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(vec![6, 3], (0..18).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let fit = FittedScale {
            kind: ScaleKind::Huber {
                k: 1.0,
                delta_prime: 0.1,
            },
            n: 10,
        };
        // c_const = 0 turns the penalty weight off entirely.
        let records = score_batch(
            &manifold,
            &x,
            &fit,
            &ScoreOptions {
                c_const: 0.0,
                use_ic: false,
            },
            None,
        )
        .unwrap();
        let lp = manifold.flow.log_prob(&x).unwrap();
        for (r, l) in records.iter().zip(&lp) {
            assert!((r.score + l).abs() < 1e-10, "score {} vs -log_prob {}", r.score, -l);
        }

        // Degenerate d = D: the penalty term is exactly zero.
        let full = ManifoldFlowModel::new(
            manifold.flow.clone(),
            LatentSplit::new(3, 3).unwrap(),
            None,
            PenaltySpec::huber(0.1, 1.0).unwrap(),
        )
        .unwrap();
        let recs = score_batch(
            &full,
            &x,
            &fit,
            &ScoreOptions {
                c_const: 1.0,
                use_ic: false,
            },
            None,
        )
        .unwrap();
        assert!(recs.iter().all(|r| r.penalty == 0.0));
    }

    #[test]
    fn score_csv_round_trip() {
        let meta = ScoreFileMeta {
            dim: 2,
            penalty: "huber".into(),
            delta: 0.1,
            lambda: 250.0,
            c_const: 1.0,
            use_ic: true,
            codec: Some("deflate:9".into()),
            scale: "k=0.02".into(),
            log_norm_const: Some(1.234),
            checkpoint: "model.ckpt".into(),
        };
        let records = vec![
            ScoreRecord {
                id: 0,
                nll_nats: 2.25,
                penalty: 0.001,
                lambda: 250.0,
                ic_bits: Some(812),
                score: combine(2.25, 0.001, 250.0, Some(812), 2),
                valid: true,
            },
            ScoreRecord {
                id: 1,
                nll_nats: f64::NAN,
                penalty: f64::NAN,
                lambda: 250.0,
                ic_bits: None,
                score: f64::NAN,
                valid: false,
            },
        ];
        let mut buf = Vec::new();
        write_scores(&mut buf, &meta, &records).unwrap();
        let dir = std::env::temp_dir().join("oodflow_score_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scores.csv");
        std::fs::write(&path, &buf).unwrap();
        let (meta2, recs2) = read_scores(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(recs2.len(), 2);
        assert_eq!(recs2[0].id, 0);
        assert_eq!(recs2[0].nll_nats, 2.25);
        assert_eq!(recs2[0].ic_bits, Some(812));
        // Stored combined score recomputes bit-exactly from parsed fields.
        assert_eq!(
            recs2[0].score,
            combine(recs2[0].nll_nats, recs2[0].penalty, recs2[0].lambda, recs2[0].ic_bits, meta2.dim)
        );
        assert!(!recs2[1].valid);
        let (variants, excluded) = variant_scores(&recs2, meta2.dim);
        assert_eq!(excluded, 1);
        assert_eq!(variants.nll.len(), 1);
        assert!(variants.combined_ic.is_some());
    }
}
