use lseg::data::{generate_dataset, Dataset, DatasetSpec, Example};
use lseg::model::{GroundTruthPredictor, Predictor};
use lseg::prompt::PromptSet;
use lseg::protocols::{
    ensemble, episodes_csv, evaluate, limited_data_from_scores, parse_episodes_csv, support_sweep,
    task_diversity_study, PromptPolicy, SweepCell, EPISODE_HEADER, SWEEP_HEADER,
};
use lseg::rng::Rng;
use lseg::train::TrainConfig;
use lseg::{Grid, Image, Result};
use proptest::prelude::*;

fn data(tasks: usize, per_task: usize) -> Dataset {
    generate_dataset(&DatasetSpec {
        root_seed: 21,
        num_tasks: tasks,
        examples_per_task: per_task,
        image_size: 32,
    })
    .unwrap()
}

/// Confident only inside the box prompt; each point adds a small bump.
struct BoxPredictor;

impl Predictor for BoxPredictor {
    fn input_size(&self) -> usize {
        32
    }

    fn predict(&self, ex: &Example, sets: &[PromptSet]) -> Result<Vec<Image>> {
        Ok(sets
            .iter()
            .map(|ps| {
                let b = ps.bbox.expect("policy draws a box");
                Grid::from_fn(ex.size(), ex.size(), |r, c| {
                    let inside = (b.row_min..=b.row_max).contains(&r) && (b.col_min..=b.col_max).contains(&c);
                    let near = ps.points.iter().any(|p| p.row.abs_diff(r) + p.col.abs_diff(c) <= 2);
                    if inside && (*ex.mask.get(r, c) || near) {
                        0.9
                    } else if inside {
                        0.45
                    } else {
                        0.0
                    }
                })
            })
            .collect())
    }
}

proptest! {
    #[test]
    fn ensemble_is_pixel_mean(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let maps: Vec<Image> = (0..n).map(|_| Grid::from_fn(3, 4, |_, _| rng.uniform())).collect();
        let e = ensemble(&maps).unwrap();
        for i in 0..12 {
            let want = maps.iter().map(|m| m.data()[i]).sum::<f64>() / n as f64;
            prop_assert!((e.data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_statistics(values in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let c = SweepCell::from_values("x", 1.0, false, &values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        prop_assert!((c.mean - mean).abs() < 1e-12);
        prop_assert!((c.variance - values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).abs() < 1e-12);
        prop_assert!(c.min <= c.mean + 1e-12 && c.mean <= c.max + 1e-12);
    }
}

#[test]
fn perfect_predictor_scores_one() {
    let d = data(4, 2);
    let rows = evaluate(&GroundTruthPredictor { size: 32 }, &d, &PromptPolicy::default(), 3).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.metrics.dice == 1.0 && r.metrics.asd == Some(0.0)));
}

#[test]
fn episode_csv_round_trip() {
    let d = data(4, 2);
    let rows = evaluate(&BoxPredictor, &d, &PromptPolicy::default(), 9).unwrap();
    let text = episodes_csv(&rows);
    assert!(text.starts_with(EPISODE_HEADER));
    let parsed = parse_episodes_csv(&text).unwrap();
    assert_eq!(parsed.len(), rows.len());
    for (p, r) in parsed.iter().zip(&rows) {
        assert_eq!((&p.task_id, p.image_id, p.seed), (&r.task_id, r.image_id, r.seed));
        assert!((p.dice - r.metrics.dice).abs() < 1e-6);
    }
    assert_eq!(text, episodes_csv(&evaluate(&BoxPredictor, &d, &PromptPolicy::default(), 9).unwrap()));
    assert!(parse_episodes_csv("wrong\n").is_err());
    let undefined = format!("{EPISODE_HEADER}\nt,0,1,1,0.0,0.0,-1.000000\n");
    assert_eq!(parse_episodes_csv(&undefined).unwrap()[0].asd, None);
}

#[test]
fn support_sweep_cells() {
    let d = data(4, 2);
    let s = support_sweep(&BoxPredictor, &d, &[1, 4, 8], 2, &PromptPolicy::default(), 5).unwrap();
    let names: Vec<&str> = s.report.cells.iter().map(|c| c.cell.as_str()).collect();
    assert_eq!(names, ["N1", "N4", "N8", "N8_ensemble"]);
    assert_eq!(s.report.cell("N1").unwrap().count, 16);
    assert_eq!(s.ensembled.len(), 16);
    assert!(s.ensembled.iter().all(|e| e.ensembled && e.support_n == 8));
    assert!(s.report.to_csv().starts_with(SWEEP_HEADER));
    assert!(support_sweep(&BoxPredictor, &d, &[0], 1, &PromptPolicy::default(), 5).is_err());

    let dir = tempfile::tempdir().unwrap();
    s.report.write(dir.path()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["protocol"], "support");
    assert!(dir.path().join("support.csv").exists());
}

#[test]
fn larger_subsets_vary_less() {
    let mut rng = Rng::new(1);
    let dice: Vec<f64> = (0..100).map(|_| rng.uniform()).collect();
    let r = limited_data_from_scores(&dice, &[1, 4, 16, 64], 200, 2).unwrap();
    let v: Vec<f64> = r.cells.iter().map(|c| c.variance).collect();
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    assert_eq!(r, limited_data_from_scores(&dice, &[1, 4, 16, 64], 200, 2).unwrap());
    assert!(limited_data_from_scores(&dice, &[101], 1, 0).is_err());
}

#[test]
fn diversity_needs_enough_tasks() {
    let small = data(4, 1);
    let r = task_diversity_study(&TrainConfig::default(), &small, &small, &[0.5], 1, &PromptPolicy::default(), 0);
    assert!(r.is_err());
}
