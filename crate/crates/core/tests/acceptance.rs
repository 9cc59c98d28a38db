//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any fails.

use std::error::Error as StdError;
use std::time::Instant;

use lseg::check::{end_to_end_gradcheck, small_config, GRADCHECK_TOLERANCE};
use lseg::checkpoint;
use lseg::data::{build_task, decode_pgm, encode_pgm, generate_dataset, generate_task, Dataset, DatasetSpec, Family};
use lseg::encoder::{loose_descriptors, Bypass, EncoderConfig, ADAPTED_PROJECTIONS};
use lseg::grid::{Grid, Mask};
use lseg::lora::{adapter_param_count, expand_loose, lora_forward, param_budget, FactorRole, LoraLinear, LoraVars};
use lseg::loss::{combined_loss_terms, dice_loss_value, focal_loss_value, LossConfig};
use lseg::metrics::{average_surface_distance, dice_score, jaccard};
use lseg::prompt::{make_box_prompt, sample_point_prompts, tight_box, PromptSet};
use lseg::protocols::{episodes_csv, evaluate, limited_data_study, support_sweep, task_diversity_study, PromptPolicy};
use lseg::rng::Rng;
use lseg::train::{train, TrainConfig};
use lseg::Model;
use lseg_autograd::{avg_pool_1d, expand_windows, grad_check, Tape, Tensor, TensorError, Var, DEFAULT_EPS};

type Outcome = Result<(bool, String), Box<dyn StdError>>;

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_in(-1.0, 1.0))
}

fn max_diff(a: &Tensor, b: &Tensor) -> Result<f64, TensorError> {
    Ok(a.sub(b)?.max_abs())
}

fn random_mask(rng: &mut Rng, size: usize) -> Mask {
    let density = rng.uniform_in(0.05, 0.7);
    Grid::from_fn(size, size, |_, _| rng.uniform() < density)
}

fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let w = tape.constant(random_tensor(&mut Rng::new(seed ^ 0x5eed), tape.value(y).shape()));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type OpCase = (&'static str, Tensor, Box<dyn Fn(&mut Tape, Var) -> Result<Var, TensorError>>);

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = Rng::new(seed);
    let x = random_tensor(&mut rng, &[3, 4]);
    let sq = random_tensor(&mut rng, &[3, 3]);
    let other = random_tensor(&mut rng, &[3, 4]).map(|v| v.abs() + 0.5);
    let positive = x.map(|v| v.abs() + 0.2);
    let right = random_tensor(&mut rng, &[4, 2]);
    let col = random_tensor(&mut rng, &[3]);
    let gamma = random_tensor(&mut rng, &[4]).map(|v| v + 1.5);
    let beta = random_tensor(&mut rng, &[4]);
    let c = |t: &Tensor| t.clone();
    vec![
        ("add", c(&x), { let o = c(&other); Box::new(move |t, v| { let k = t.constant(o.clone()); t.add(v, k) }) }),
        ("sub", c(&x), { let o = c(&other); Box::new(move |t, v| { let k = t.constant(o.clone()); t.sub(k, v) }) }),
        ("mul", c(&x), { let o = c(&other); Box::new(move |t, v| { let k = t.constant(o.clone()); t.mul(v, k) }) }),
        ("div", c(&positive), { let o = c(&x); Box::new(move |t, v| { let k = t.constant(o.clone()); t.div(k, v) }) }),
        ("affine", c(&x), Box::new(|t, v| Ok(t.affine(v, 1.5, -0.25)))),
        ("matmul", c(&x), { let o = c(&right); Box::new(move |t, v| { let k = t.constant(o.clone()); t.matmul(v, k) }) }),
        ("transpose", c(&x), Box::new(|t, v| t.transpose(v))),
        ("add_column", c(&x), { let o = c(&col); Box::new(move |t, v| { let k = t.constant(o.clone()); t.add_column(v, k) }) }),
        ("softmax0", c(&sq), Box::new(|t, v| t.softmax(v, 0))),
        ("softmax1", c(&sq), Box::new(|t, v| t.softmax(v, 1))),
        ("layer_norm", c(&x), { let (g, b) = (c(&gamma), c(&beta)); Box::new(move |t, v| { let g = t.constant(g.clone()); let b = t.constant(b.clone()); t.layer_norm(v, g, b, 1e-5) }) }),
        ("gelu", x.map(|v| v * 3.0), Box::new(|t, v| Ok(t.gelu(v)))),
        ("sigmoid", x.map(|v| v * 3.0), Box::new(|t, v| Ok(t.sigmoid(v)))),
        ("log", c(&positive), Box::new(|t, v| Ok(t.log(v)))),
        ("powf", c(&positive), Box::new(|t, v| Ok(t.powf(v, 2.0)))),
        ("clamp", c(&x), Box::new(|t, v| Ok(t.clamp(v, -0.5, 0.5)))),
        ("mean", c(&x), Box::new(|t, v| Ok(t.mean(v)))),
        ("reshape", c(&x), Box::new(|t, v| t.reshape(v, vec![12]))),
        ("slice_rows", c(&x), Box::new(|t, v| t.slice_rows(v, 1, 3))),
        ("slice_cols", c(&x), Box::new(|t, v| t.slice_cols(v, 1, 3))),
        ("concat_rows", c(&x), Box::new(|t, v| { let s = t.scale(v, 2.0); t.concat_rows(&[v, s]) })),
        ("concat_cols", c(&x), Box::new(|t, v| { let s = t.scale(v, 2.0); t.concat_cols(&[s, v]) })),
        ("avg_pool_1d", random_tensor(&mut rng, &[11]), Box::new(|t, v| t.avg_pool_1d(v, 4))),
        ("expand_windows", random_tensor(&mut rng, &[4]), Box::new(|t, v| t.expand_windows(v, 11))),
    ]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst_op = 0.0f64;
    for seed in 0..10 {
        for (_, input, f) in op_cases(seed) {
            let err = grad_check(|t, v| { let y = f(t, v)?; weighted_sum(t, y, seed) }, &input, DEFAULT_EPS)?;
            worst_op = worst_op.max(err);
        }
    }
    let mut worst_e2e = 0.0f64;
    let mut groups = Vec::new();
    for loose in [false, true] {
        let report = end_to_end_gradcheck(&small_config(loose), 7, 4)?;
        worst_e2e = worst_e2e.max(report.max_rel_err());
        for prefix in ["block", "loose/M", "prompt/label", "dec/"] {
            if let Some(e) = report.group_max(prefix) {
                groups.push(format!("{prefix}={e:.1e}"));
            }
        }
    }
    let covered = ["block", "loose/M", "prompt/label", "dec/"]
        .iter()
        .all(|p| groups.iter().any(|g| g.starts_with(p)));
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst_op < 1e-6 && worst_e2e < GRADCHECK_TOLERANCE && covered && secs < 120.0,
        format!("ops max {worst_op:.2e}, end-to-end max {worst_e2e:.2e} [{}], {secs:.1}s", groups.join(" ")),
    ))
}

fn criterion_2() -> Outcome {
    let cfg = EncoderConfig::default();
    let model = Model::new(cfg, 3)?;
    let mut rng = Rng::new(2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let image = Grid::from_fn(cfg.image_size, cfg.image_size, |_, _| rng.uniform());
        let adapted = model.embed(&image, Bypass::Enabled)?;
        let base = model.embed(&image, Bypass::Disabled)?;
        worst = worst.max(max_diff(&adapted.grid, &base.grid)?);
        let ps = PromptSet::parse("P 20 30 1\nB 10 12 40 50\n")?;
        let a = model.decode(&adapted, &ps)?;
        let b = model.decode(&base, &ps)?;
        worst = worst.max(max_diff(&a.logits, &b.logits)?);
    }
    Ok((worst <= 1e-12, format!("max |adapted - base| = {worst:.1e} over 10 images")))
}

fn tiny_dataset() -> lseg::Result<Dataset> {
    generate_dataset(&DatasetSpec {
        root_seed: 5,
        num_tasks: 4,
        examples_per_task: 4,
        image_size: 64,
    })
}

fn criterion_3() -> Outcome {
    let data = tiny_dataset()?;
    let cfg = TrainConfig {
        steps: 200,
        ..TrainConfig::default()
    };
    let before = Model::new(cfg.encoder, cfg.init_seed())?;
    let out = train(&cfg, &data, |_, _| {})?;
    let (h0, h1) = (before.params.frozen_digest(), out.model.params.frozen_digest());
    let moved = max_diff(before.params.tensor("loose/M")?, out.model.params.tensor("loose/M")?)?;
    Ok((
        h0 == h1 && moved > 0.0,
        format!("frozen digest {} ({}); trainable moved by {moved:.2e}", hex(&h1[..8]), if h0 == h1 { "unchanged" } else { "CHANGED" }),
    ))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for loose in [false, true] {
        let cfg = EncoderConfig {
            use_loose_embedding: loose,
            ..EncoderConfig::default()
        };
        let model = Model::new(cfg, 0)?;
        let budget = param_budget(&cfg);
        let adapted = ADAPTED_PROJECTIONS.len() * cfg.num_blocks;
        let bypass = if loose {
            let m = model.params.tensor("loose/M")?;
            ok &= m.shape() == [loose_descriptors(&cfg).len(), cfg.pooled_len];
            ok &= m.len() == 2 * adapted * cfg.pooled_len;
            m.len()
        } else {
            let mut total = 0;
            for b in 0..cfg.num_blocks {
                for proj in ADAPTED_PROJECTIONS {
                    let a = model.params.tensor(&format!("block{b}/{proj}/A"))?.len();
                    let bb = model.params.tensor(&format!("block{b}/{proj}/B"))?.len();
                    ok &= a + bb == adapter_param_count(cfg.embed_dim, cfg.embed_dim, 4);
                    total += a + bb;
                }
            }
            total
        };
        ok &= cfg.lora_rank == 4;
        ok &= bypass == budget.bypass_trainable;
        ok &= model.params.trainable_count() == budget.trainable_count;
        ok &= model.params.frozen_count() == budget.frozen_count;
        ok &= budget.encoder_fraction() < 0.15 && budget.trainable_fraction < 0.15;
        lines.push(format!(
            "{}: bypass {bypass}, encoder share {:.4}, overall {:.4}",
            if loose { "loose" } else { "factors" },
            budget.encoder_fraction(),
            budget.trainable_fraction
        ));
    }
    Ok((ok, lines.join("; ")))
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d_in = 1 + rng.below(12);
        let d_out = 1 + rng.below(12);
        let rank = 1 + rng.below(d_in.min(d_out));
        let n = 1 + rng.below(6);
        let bias = rng.coin().then(|| random_tensor(&mut rng, &[d_out]));
        let layer = LoraLinear::from_parts(
            random_tensor(&mut rng, &[d_out, d_in]),
            bias.clone(),
            random_tensor(&mut rng, &[rank, d_in]),
            random_tensor(&mut rng, &[d_out, rank]),
        )?;
        let f = random_tensor(&mut rng, &[d_in, n]);
        let mut tape = Tape::new();
        let fv = tape.constant(f.clone());
        let y = layer.forward(&mut tape, fv)?;
        let mut dense = layer.merge().matmul(&f)?;
        if let Some(b) = &bias {
            for r in 0..d_out {
                for c in 0..n {
                    dense.data_mut()[r * n + c] += b.data()[r];
                }
            }
        }
        worst = worst.max(max_diff(tape.value(y), &dense)?);
    }
    Ok((worst <= 1e-12, format!("max |bypass - merged| = {worst:.1e} over 100 layers")))
}

fn criterion_6() -> Outcome {
    let mut rng = Rng::new(6);
    let mut worst_trip = 0.0f64;
    for _ in 0..200 {
        let p = 1 + rng.below(16);
        let n = p * (1 + rng.below(10));
        let row = random_tensor(&mut rng, &[p]);
        let back = avg_pool_1d(&expand_windows(&row, n)?, p)?;
        worst_trip = worst_trip.max(max_diff(&back, &row)?);
    }

    let cfg = small_config(true);
    let model = Model::new(cfg, 1)?;
    let descriptors = loose_descriptors(&cfg);
    let mut m0 = model.params.tensor("loose/M")?.clone();
    for v in m0.data_mut() {
        *v += 0.3 * rng.normal();
    }
    let w = model.params.tensor("block0/v/W")?.clone();
    let f = random_tensor(&mut rng, &[cfg.embed_dim, 5]);
    let grad_err = grad_check(
        |t, m| {
            let a = expand_loose(t, m, &descriptors, "block0/v", FactorRole::A).map_err(to_tensor_err)?;
            let b = expand_loose(t, m, &descriptors, "block0/v", FactorRole::B).map_err(to_tensor_err)?;
            let vars = LoraVars {
                weight: t.constant(w.clone()),
                bias: None,
                a,
                b,
            };
            let fv = t.constant(f.clone());
            let y = lora_forward(t, &vars, fv).map_err(to_tensor_err)?;
            weighted_sum(t, y, 6)
        },
        &m0,
        DEFAULT_EPS,
    )?;
    Ok((
        worst_trip <= 1e-12 && grad_err < 1e-5,
        format!("round trip max {worst_trip:.1e}; dL/dM rel err {grad_err:.1e}"),
    ))
}

fn to_tensor_err(e: lseg::Error) -> TensorError {
    match e {
        lseg::Error::Tensor(t) => t,
        other => TensorError::Dimension(other.to_string()),
    }
}

fn brute_boundary(m: &Mask) -> Vec<(i64, i64)> {
    let (h, w) = (m.rows() as i64, m.cols() as i64);
    let at = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && *m.get(r as usize, c as usize);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if at(r, c) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| !at(r + dr, c + dc)) {
                out.push((r, c));
            }
        }
    }
    out
}

fn brute_asd(a: &Mask, b: &Mask) -> f64 {
    let (ba, bb) = (brute_boundary(a), brute_boundary(b));
    let nearest = |p: &(i64, i64), set: &[(i64, i64)]| {
        set.iter()
            .map(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let total: f64 = ba.iter().map(|p| nearest(p, &bb)).sum::<f64>() + bb.iter().map(|p| nearest(p, &ba)).sum::<f64>();
    total / (ba.len() + bb.len()) as f64
}

fn criterion_7() -> Outcome {
    let mut rng = Rng::new(7);
    let mut overlap_ok = true;
    let mut worst_identity = 0.0f64;
    for _ in 0..50 {
        let (p, g) = (random_mask(&mut rng, 16), random_mask(&mut rng, 16));
        let (mut inter, mut np, mut ng, mut union) = (0usize, 0usize, 0usize, 0usize);
        for r in 0..16 {
            for c in 0..16 {
                let (a, b) = (*p.get(r, c), *g.get(r, c));
                inter += (a && b) as usize;
                union += (a || b) as usize;
                np += a as usize;
                ng += b as usize;
            }
        }
        let d = dice_score(&p, &g)?;
        let j = jaccard(&p, &g)?;
        overlap_ok &= d == 2.0 * inter as f64 / (np + ng) as f64 && j == inter as f64 / union as f64;
        worst_identity = worst_identity.max((2.0 * j / (1.0 + j) - d).abs());
    }
    let mut worst_asd = 0.0f64;
    for i in 0..25 {
        let size = 8 + 4 * (i % 4);
        let (p, g) = (random_mask(&mut rng, size), random_mask(&mut rng, size));
        if p.is_empty_mask() || g.is_empty_mask() {
            continue;
        }
        let fast = average_surface_distance(&p, &g, 1.0)?.ok_or("undefined ASD on non-empty masks")?;
        worst_asd = worst_asd.max((fast - brute_asd(&p, &g)).abs());
    }
    Ok((
        overlap_ok && worst_asd <= 1e-9 && worst_identity <= 1e-12,
        format!(
            "dice/jaccard {} on 50 pairs; ASD max err {worst_asd:.1e}; identity max err {worst_identity:.1e}",
            if overlap_ok { "exact" } else { "MISMATCH" }
        ),
    ))
}

fn criterion_8() -> Outcome {
    let cfg = LossConfig::default();
    let mut rng = Rng::new(8);
    let target = Tensor::from_fn(vec![8, 8], |_| if rng.coin() { 1.0 } else { 0.0 });
    let inverse = target.map(|v| 1.0 - v);
    let perfect = dice_loss_value(&target, &target, &cfg)?;
    let disjoint = dice_loss_value(&inverse, &target, &cfg)?;
    let focal = focal_loss_value(&Tensor::full(vec![1], 0.5), &Tensor::ones(vec![1]), &cfg)?;
    let focal_expected = 0.25 * 0.5f64.powi(2) * 2f64.ln();

    let mut exact = true;
    for s in 0..5 {
        let mut rng = Rng::new(80 + s);
        let gt = Grid::from_fn(16, 16, |r, c| (r as f64 - 7.5).powi(2) + (c as f64 - 7.5).powi(2) < rng.uniform_in(10.0, 40.0));
        let mut tape = Tape::new();
        let logits = tape.constant(random_tensor(&mut rng, &[4, 4]).map(|v| 3.0 * v));
        let terms = combined_loss_terms(&mut tape, logits, &gt, 4, &cfg)?;
        let (f, d, t) = (tape.value(terms.focal).item()?, tape.value(terms.dice).item()?, tape.value(terms.total).item()?);
        exact &= t == cfg.mu1 * f + cfg.mu2 * d;
    }
    Ok((
        perfect.abs() <= 1e-6
            && (disjoint - 1.0).abs() <= 1e-6
            && (focal - 0.0433).abs() <= 1e-4
            && (focal - focal_expected).abs() <= 1e-12
            && exact
            && cfg.mu1 == 1.0
            && cfg.mu2 == 1.0,
        format!(
            "dice perfect {perfect:.1e}, disjoint {disjoint:.7}; focal {focal:.5}; combined {}",
            if exact { "exact" } else { "INEXACT" }
        ),
    ))
}

fn criterion_9() -> Outcome {
    let mut rng = Rng::new(9);
    let (mut in_fg, mut tight_eq, mut nested) = (true, true, true);
    let mut tested = 0;
    while tested < 1000 {
        let size = 4 + rng.below(29);
        let m = random_mask(&mut rng, size);
        if m.is_empty_mask() {
            continue;
        }
        tested += 1;
        let k = 1 + rng.below(5);
        for p in sample_point_prompts(&m, k, &mut rng)? {
            in_fg &= *m.get(p.row, p.col);
        }
        let fg = m.foreground();
        let (rmin, rmax) = (fg.iter().map(|p| p.0).min().unwrap(), fg.iter().map(|p| p.0).max().unwrap());
        let (cmin, cmax) = (fg.iter().map(|p| p.1).min().unwrap(), fg.iter().map(|p| p.1).max().unwrap());
        let zero = make_box_prompt(&m, 0.0, &mut rng)?;
        let tight = tight_box(&m)?;
        tight_eq &= zero == tight && (tight.row_min, tight.row_max, tight.col_min, tight.col_max) == (rmin, rmax, cmin, cmax);
        let loose = make_box_prompt(&m, rng.uniform_in(0.0, 0.5), &mut rng)?;
        nested &= loose.contains_box(&tight) && loose.row_max < size && loose.col_max < size;
    }
    Ok((
        in_fg && tight_eq && nested,
        format!("1000 masks: points in foreground {in_fg}, zero offset is tight {tight_eq}, tight inside offset {nested}"),
    ))
}

/// Single task of large ellipses used for the overfit check.
fn overfit_task() -> lseg::Result<Dataset> {
    let mut spec = generate_task(11, Family::Ellipse, 64);
    spec.size_min = 0.3;
    spec.size_max = 0.42;
    spec.min_aspect = 0.8;
    Ok(Dataset {
        tasks: vec![build_task("overfit_ellipse".into(), spec, 8)?],
    })
}

fn mean_dice(model: &Model, data: &Dataset, policy: &PromptPolicy, seed: u64) -> lseg::Result<f64> {
    let eps = evaluate(model, data, policy, seed)?;
    Ok(eps.iter().map(|e| e.metrics.dice).sum::<f64>() / eps.len() as f64)
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let data = overfit_task()?;
    let cfg = TrainConfig::default();
    let ok_cfg = cfg.steps == 2000
        && cfg.encoder.image_size == 64
        && cfg.encoder.embed_dim == 64
        && cfg.encoder.num_blocks == 4;
    let out = train(&cfg, &data, |_, _| {})?;
    let dice = mean_dice(&out.model, &data, &PromptPolicy::default(), 5)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        ok_cfg && dice > 0.95 && secs < 900.0,
        format!("held-in Dice {dice:.4} after {} steps, {secs:.0}s", cfg.steps),
    ))
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let policy = PromptPolicy::default();
    let train_data = generate_dataset(&DatasetSpec::default())?;
    let model = train(&TrainConfig::default(), &train_data, |_, _| {})?.model;

    let queries = generate_dataset(&DatasetSpec {
        root_seed: 101,
        num_tasks: 4,
        examples_per_task: 6,
        image_size: 64,
    })?;
    let sweep = support_sweep(&model, &queries, &[1, 16], 3, &policy, 11)?;
    let n1 = sweep.report.cell("N1")?.mean;
    let n16 = sweep.report.cell("N16_ensemble")?.mean;
    let a = n16 >= n1 - 0.01;

    let pool = generate_dataset(&DatasetSpec {
        root_seed: 102,
        num_tasks: 16,
        examples_per_task: 8,
        image_size: 64,
    })?;
    let limited = limited_data_study(&model, &pool, &[1, 64], 50, &policy, 12)?;
    let (v1, v64) = (limited.cell("n1")?.variance, limited.cell("n64")?.variance);
    let b = v64 < v1;

    let heldout = generate_dataset(&DatasetSpec {
        root_seed: 103,
        num_tasks: 4,
        examples_per_task: 6,
        image_size: 64,
    })?;
    let diversity_pool = generate_dataset(&DatasetSpec {
        root_seed: 104,
        num_tasks: 20,
        examples_per_task: 8,
        image_size: 64,
    })?;
    let base = TrainConfig {
        steps: 600,
        ..TrainConfig::default()
    };
    let study = task_diversity_study(&base, &diversity_pool, &heldout, &[0.1, 1.0], 2, &policy, 13)?;
    let (f10, f100) = (study.report.cell("f10")?.mean, study.report.cell("f100")?.mean);
    let c = f100 >= f10;

    let secs = start.elapsed().as_secs_f64();
    Ok((
        a && b && c && queries.num_examples() >= 20,
        format!(
            "(a) N1 {n1:.4} vs N16 ensembled {n16:.4} {}; (b) var n1 {v1:.2e} vs n64 {v64:.2e} {}; (c) 10% {f10:.4} vs 100% {f100:.4} {}; {secs:.0}s",
            verdict(a),
            verdict(b),
            verdict(c)
        ),
    ))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn criterion_12() -> Outcome {
    let mut rng = Rng::new(12);
    let mut pgm_ok = true;
    for _ in 0..50 {
        let (h, w) = (1 + rng.below(40), 1 + rng.below(40));
        let g = Grid::from_fn(h, w, |_, _| rng.below(256) as u8);
        let bytes = encode_pgm(&g);
        let back = decode_pgm(&bytes)?;
        pgm_ok &= back == g && encode_pgm(&back) == bytes;
    }

    let spec = DatasetSpec {
        root_seed: 42,
        num_tasks: 4,
        examples_per_task: 3,
        image_size: 64,
    };
    let dir = tempfile::tempdir()?;
    let (d1, d2) = (dir.path().join("a"), dir.path().join("b"));
    let first = generate_dataset(&spec)?;
    first.save(&d1)?;
    generate_dataset(&spec)?.save(&d2)?;
    let mut data_ok = Dataset::load(&d1)? == first;
    for entry in walk(&d1)? {
        let rel = entry.strip_prefix(&d1)?;
        data_ok &= std::fs::read(&entry)? == std::fs::read(d2.join(rel))?;
    }

    let cfg = TrainConfig {
        steps: 30,
        ..TrainConfig::default()
    };
    let model = train(&cfg, &first, |_, _| {})?.model;
    let path = dir.path().join("model.lseg");
    checkpoint::save(&model, &path)?;
    let loaded = checkpoint::load(&path)?;
    let policy = PromptPolicy::default();
    let csv_a = episodes_csv(&evaluate(&model, &first, &policy, 3)?);
    let csv_b = episodes_csv(&evaluate(&loaded, &first, &policy, 3)?);
    let csv_c = episodes_csv(&evaluate(&checkpoint::load(&path)?, &first, &policy, 3)?);
    let ckpt_ok = checkpoint::to_bytes(&loaded) == std::fs::read(&path)? && csv_a == csv_b && csv_b == csv_c;
    Ok((
        pgm_ok && data_ok && ckpt_ok,
        format!(
            "PGM round trip {}, dataset regeneration {}, checkpoint/eval CSV {}",
            verdict(pgm_ok),
            verdict(data_ok),
            verdict(ckpt_ok)
        ),
    ))
}

fn walk(dir: &std::path::Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            out.extend(walk(&path)?);
        } else {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("gradient suite", criterion_1),
        ("zero-init identity", criterion_2),
        ("freeze contract", criterion_3),
        ("parameter budget", criterion_4),
        ("merge equivalence", criterion_5),
        ("loose round trip", criterion_6),
        ("metric oracles", criterion_7),
        ("loss values", criterion_8),
        ("prompt contracts", criterion_9),
        ("single-task overfit", criterion_10),
        ("protocol trends", criterion_11),
        ("IO bit-exactness", criterion_12),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let (ok, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!("criterion {n:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
