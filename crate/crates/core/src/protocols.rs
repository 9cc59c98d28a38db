//! Episodic evaluation and the support-size, limited-data and
//! task-diversity studies.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{resize_to_input, Dataset, Example};
use crate::decoder::threshold;
use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::metrics::{score, MetricRecord, ASD_UNDEFINED};
use crate::model::Predictor;
use crate::prompt::{simulate_prompts, PromptSet};
use crate::rng::{derive_seed, Rng};
use crate::train::{train, TrainConfig};

pub const EPISODE_HEADER: &str = "task_id,image_id,seed,support_n,dice,jaccard,asd";
pub const SWEEP_HEADER: &str = "protocol,cell,param,ensembled,count,mean,std,variance,min,max";
/// Support sizes above this are also scored with ensembling.
pub const ENSEMBLE_ABOVE: usize = 6;
pub const ENSEMBLE_THRESHOLD: f64 = 0.5;

/// How prompts are simulated from a query's ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptPolicy {
    pub k_points: usize,
    pub with_box: bool,
    pub box_offset_frac: f64,
}

impl Default for PromptPolicy {
    fn default() -> Self {
        Self {
            k_points: 1,
            with_box: true,
            box_offset_frac: crate::prompt::DEFAULT_BOX_OFFSET_FRAC,
        }
    }
}

impl PromptPolicy {
    pub fn draw(&self, ex: &Example, rng: &mut Rng) -> Result<PromptSet> {
        simulate_prompts(&ex.mask, self.k_points, self.with_box, self.box_offset_frac, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub task_id: String,
    pub image_id: usize,
    pub seed: u64,
    pub support_n: usize,
    pub replicate_seed: u64,
    pub ensembled: bool,
    pub metrics: MetricRecord,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn episode_row(r: &EpisodeResult) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.task_id,
        r.image_id,
        r.seed,
        r.support_n,
        fmt_f(r.metrics.dice),
        fmt_f(r.metrics.jaccard),
        fmt_f(r.metrics.asd.unwrap_or(ASD_UNDEFINED))
    )
}

pub fn episodes_csv(rows: &[EpisodeResult]) -> String {
    let mut out = String::from(EPISODE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&episode_row(r));
        out.push('\n');
    }
    out
}

/// One parsed row of the episode CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub task_id: String,
    pub image_id: usize,
    pub seed: u64,
    pub support_n: usize,
    pub dice: f64,
    pub jaccard: f64,
    pub asd: Option<f64>,
}

pub fn parse_episodes_csv(text: &str) -> Result<Vec<EpisodeRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(EPISODE_HEADER) {
        return Err(Error::Data("episode CSV header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Data(format!("bad episode row {line:?}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let asd = num(f[6])?;
            Ok(EpisodeRow {
                task_id: f[0].to_string(),
                image_id: f[1].parse().map_err(|_| bad())?,
                seed: f[2].parse().map_err(|_| bad())?,
                support_n: f[3].parse().map_err(|_| bad())?,
                dice: num(f[4])?,
                jaccard: num(f[5])?,
                asd: (asd >= 0.0).then_some(asd),
            })
        })
        .collect()
}

/// Query examples at the predictor's input size with their ids.
fn queries(size: usize, data: &Dataset) -> Result<Vec<(String, usize, Example)>> {
    data.tasks
        .iter()
        .flat_map(|t| t.examples.iter().enumerate().map(move |(i, ex)| (t.id.clone(), i, ex)))
        .map(|(id, i, ex)| Ok((id, i, resize_to_input(ex, size)?)))
        .collect::<Result<Vec<_>>>()
        .and_then(|q| {
            if q.is_empty() {
                Err(Error::Data("dataset has no query images".into()))
            } else {
                Ok(q)
            }
        })
}

fn binarize_and_score(prob: &Image, ex: &Example) -> Result<MetricRecord> {
    score(&threshold(prob, ENSEMBLE_THRESHOLD), &ex.mask)
}

/// Per-image scores with one simulated prompt set each. Image `j` (in
/// dataset order) draws its prompts from stream `j` of `seed`.
pub fn evaluate<P: Predictor>(predictor: &P, data: &Dataset, policy: &PromptPolicy, seed: u64) -> Result<Vec<EpisodeResult>> {
    Ok(evaluate_with_masks(predictor, data, policy, seed)?.into_iter().map(|(r, _)| r).collect())
}

/// [`evaluate`], also returning each thresholded prediction.
pub fn evaluate_with_masks<P: Predictor>(
    predictor: &P,
    data: &Dataset,
    policy: &PromptPolicy,
    seed: u64,
) -> Result<Vec<(EpisodeResult, Mask)>> {
    let qs = queries(predictor.input_size(), data)?;
    qs.par_iter()
        .enumerate()
        .map(|(j, (task_id, image_id, ex))| {
            let replicate_seed = derive_seed(seed, j as u64);
            let ps = policy.draw(ex, &mut Rng::new(replicate_seed))?;
            let prob = predictor.predict(ex, std::slice::from_ref(&ps))?.remove(0);
            let pred = threshold(&prob, ENSEMBLE_THRESHOLD);
            let row = EpisodeResult {
                task_id: task_id.clone(),
                image_id: *image_id,
                seed,
                support_n: 1,
                replicate_seed,
                ensembled: false,
                metrics: score(&pred, &ex.mask)?,
            };
            Ok((row, pred))
        })
        .collect()
}

/// Pixel-wise mean of probability maps.
pub fn ensemble(maps: &[Image]) -> Result<Image> {
    let first = maps.first().ok_or_else(|| Error::Argument("nothing to ensemble".into()))?;
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let mut acc = first.clone();
    for m in &maps[1..] {
        if !m.same_dims(first) {
            return Err(Error::Argument("probability maps differ in size".into()));
        }
        for (a, v) in acc.data_mut().iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    Ok(acc.map(|v| v / n))
}

/// Summary statistics of one protocol cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub cell: String,
    pub param: f64,
    pub ensembled: bool,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// population variance
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl SweepCell {
    pub fn from_values(cell: impl Into<String>, param: f64, ensembled: bool, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("empty protocol cell".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            cell: cell.into(),
            param,
            ensembled,
            count: values.len(),
            mean,
            std: variance.sqrt(),
            variance,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub protocol: String,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, name: &str) -> Result<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.cell == name)
            .ok_or_else(|| Error::Lookup(format!("cell {name} of {}", self.protocol)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.protocol,
                c.cell,
                c.param,
                c.ensembled,
                c.count,
                fmt_f(c.mean),
                fmt_f(c.std),
                fmt_f(c.variance),
                fmt_f(c.min),
                fmt_f(c.max)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<protocol>.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.protocol));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}

/// Output of [`support_sweep`]: the summary plus every scored episode.
#[derive(Debug, Clone)]
pub struct SupportSweep {
    pub report: SweepReport,
    pub single: Vec<EpisodeResult>,
    pub ensembled: Vec<EpisodeResult>,
}

/// For each query, replicate and support size `N`: `N` independent prompt
/// sets from the query's ground truth. The first is scored alone; for
/// `N > 6` the mean probability map of all `N` is scored as well.
pub fn support_sweep<P: Predictor>(
    predictor: &P,
    data: &Dataset,
    n_list: &[usize],
    replicates: usize,
    policy: &PromptPolicy,
    seed: u64,
) -> Result<SupportSweep> {
    if n_list.is_empty() || n_list.contains(&0) || replicates == 0 {
        return Err(Error::Argument("support sizes and replicates must be positive".into()));
    }
    let qs = queries(predictor.input_size(), data)?;
    let cells: Vec<(usize, usize, usize)> = (0..qs.len())
        .flat_map(|q| (0..replicates).flat_map(move |r| (0..n_list.len()).map(move |ni| (q, r, ni))))
        .collect();
    let scored = cells
        .par_iter()
        .enumerate()
        .map(|(job, &(q, _, ni))| {
            let (task_id, image_id, ex) = &qs[q];
            let n = n_list[ni];
            let replicate_seed = derive_seed(seed, job as u64);
            let mut rng = Rng::new(replicate_seed);
            let sets = (0..n).map(|_| policy.draw(ex, &mut rng)).collect::<Result<Vec<_>>>()?;
            let maps = predictor.predict(ex, &sets)?;
            let row = |metrics, ensembled| EpisodeResult {
                task_id: task_id.clone(),
                image_id: *image_id,
                seed,
                support_n: n,
                replicate_seed,
                ensembled,
                metrics,
            };
            let single = row(binarize_and_score(&maps[0], ex)?, false);
            let ens = if n > ENSEMBLE_ABOVE {
                Some(row(binarize_and_score(&ensemble(&maps)?, ex)?, true))
            } else {
                None
            };
            Ok((ni, single, ens))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = SweepReport {
        protocol: "support".into(),
        cells: Vec::new(),
    };
    for (ni, &n) in n_list.iter().enumerate() {
        let single: Vec<f64> = scored.iter().filter(|s| s.0 == ni).map(|s| s.1.metrics.dice).collect();
        report
            .cells
            .push(SweepCell::from_values(format!("N{n}"), n as f64, false, &single)?);
        let ens: Vec<f64> = scored
            .iter()
            .filter(|s| s.0 == ni)
            .filter_map(|s| s.2.as_ref().map(|e| e.metrics.dice))
            .collect();
        if !ens.is_empty() {
            report
                .cells
                .push(SweepCell::from_values(format!("N{n}_ensemble"), n as f64, true, &ens)?);
        }
    }
    let single = scored.iter().map(|s| s.1.clone()).collect();
    let ensembled = scored.iter().filter_map(|s| s.2.clone()).collect();
    Ok(SupportSweep {
        report,
        single,
        ensembled,
    })
}

/// For each pool size `n` and replicate, a random `n`-subset of the labeled
/// pool is the evaluation set; the replicate's value is its mean Dice.
/// Every pool image is scored once with prompts from its own stream, so
/// replicates differ only in which images they draw.
pub fn limited_data_study<P: Predictor>(
    predictor: &P,
    pool: &Dataset,
    n_list: &[usize],
    replicates: usize,
    policy: &PromptPolicy,
    seed: u64,
) -> Result<SweepReport> {
    let episodes = evaluate(predictor, pool, policy, derive_seed(seed, 0))?;
    limited_data_from_scores(&episodes.iter().map(|e| e.metrics.dice).collect::<Vec<_>>(), n_list, replicates, seed)
}

/// The subset-resampling part of [`limited_data_study`] on precomputed
/// per-image Dice scores.
pub fn limited_data_from_scores(dice: &[f64], n_list: &[usize], replicates: usize, seed: u64) -> Result<SweepReport> {
    if replicates == 0 || n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::Argument("pool sizes and replicates must be positive".into()));
    }
    if let Some(&n) = n_list.iter().find(|&&n| n > dice.len()) {
        return Err(Error::Argument(format!("pool of {} images is smaller than n = {n}", dice.len())));
    }
    let root = derive_seed(seed, 1);
    let mut cells = Vec::new();
    for (ni, &n) in n_list.iter().enumerate() {
        let values: Vec<f64> = (0..replicates)
            .map(|r| {
                let mut rng = Rng::stream(root, (ni * replicates + r) as u64);
                let mut pick = rng.choose_distinct(dice.len(), n);
                pick.sort_unstable();
                pick.iter().map(|&i| dice[i]).sum::<f64>() / n as f64
            })
            .collect();
        cells.push(SweepCell::from_values(format!("n{n}"), n as f64, false, &values)?);
    }
    Ok(SweepReport {
        protocol: "limited_data".into(),
        cells,
    })
}

/// One trained model of the diversity study.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityRun {
    pub fraction: f64,
    pub model_index: usize,
    pub tasks: Vec<String>,
    pub mean_dice: f64,
}

#[derive(Debug, Clone)]
pub struct DiversityStudy {
    pub report: SweepReport,
    pub runs: Vec<DiversityRun>,
}

/// Number of training tasks used at `fraction` of `available`.
pub fn tasks_for_fraction(fraction: f64, available: usize) -> Result<usize> {
    let k = (fraction * available as f64).round() as usize;
    if k == 0 || !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "fraction {fraction} of {available} tasks selects no tasks"
        )));
    }
    Ok(k.min(available))
}

/// Trains one model per random task subset per fraction and scores each on
/// the held-out set.
pub fn task_diversity_study(
    base: &TrainConfig,
    train_pool: &Dataset,
    heldout: &Dataset,
    fractions: &[f64],
    models_per_fraction: usize,
    policy: &PromptPolicy,
    seed: u64,
) -> Result<DiversityStudy> {
    let available = train_pool.tasks.len();
    if available < 8 {
        return Err(Error::Argument(format!("need at least 8 training tasks, have {available}")));
    }
    if models_per_fraction == 0 || fractions.is_empty() {
        return Err(Error::Argument("need at least one fraction and one model".into()));
    }
    let counts = fractions
        .iter()
        .map(|&f| tasks_for_fraction(f, available))
        .collect::<Result<Vec<_>>>()?;
    let eval_seed = derive_seed(seed, 0);
    let mut runs = Vec::new();
    for (fi, (&fraction, &k)) in fractions.iter().zip(&counts).enumerate() {
        for m in 0..models_per_fraction {
            let job = (fi * models_per_fraction + m) as u64;
            let mut rng = Rng::stream(derive_seed(seed, 1), job);
            let mut pick = rng.choose_distinct(available, k);
            pick.sort_unstable();
            let tasks: Vec<String> = pick.iter().map(|&i| train_pool.tasks[i].id.clone()).collect();
            let cfg = TrainConfig {
                train_tasks: tasks.clone(),
                seed: derive_seed(seed, 2 + job),
                ..base.clone()
            };
            let outcome = train(&cfg, train_pool, |_, _| {})?;
            let eps = evaluate(&outcome.model, heldout, policy, eval_seed)?;
            let mean_dice = eps.iter().map(|e| e.metrics.dice).sum::<f64>() / eps.len() as f64;
            runs.push(DiversityRun {
                fraction,
                model_index: m,
                tasks,
                mean_dice,
            });
        }
    }
    let cells = fractions
        .iter()
        .map(|&f| {
            let v: Vec<f64> = runs.iter().filter(|r| r.fraction == f).map(|r| r.mean_dice).collect();
            SweepCell::from_values(format!("f{:.0}", f * 100.0), f, false, &v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiversityStudy {
        report: SweepReport {
            protocol: "diversity".into(),
            cells,
        },
        runs,
    })
}
