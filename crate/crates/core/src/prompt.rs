//! Simulated user prompts and the prompt encoder.
//!
//! Prompts are derived from the ground-truth mask only, never from image
//! pixels: a handful of foreground clicks and a loosened bounding box.

use std::fmt;

use lseg_autograd::{Tape, Tensor, Var};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::params::{Binding, ParamStore};
use crate::rng::Rng;

pub const DEFAULT_BOX_OFFSET_FRAC: f64 = 0.1;
const LABEL_EMBED_STD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointLabel {
    Foreground,
    Background,
}

impl PointLabel {
    fn code(self) -> u8 {
        match self {
            PointLabel::Foreground => 1,
            PointLabel::Background => 0,
        }
    }

    /// Column of the label-embedding table.
    fn embedding_index(self) -> usize {
        match self {
            PointLabel::Foreground => 0,
            PointLabel::Background => 1,
        }
    }
}

const BOX_MIN_INDEX: usize = 2;
const BOX_MAX_INDEX: usize = 3;
const NUM_LABEL_EMBEDDINGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointPrompt {
    pub row: usize,
    pub col: usize,
    pub label: PointLabel,
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoxPrompt {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoxPrompt {
    pub fn contains_box(&self, other: &BoxPrompt) -> bool {
        self.row_min <= other.row_min
            && self.col_min <= other.col_min
            && self.row_max >= other.row_max
            && self.col_max >= other.col_max
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub points: Vec<PointPrompt>,
    pub bbox: Option<BoxPrompt>,
}

impl PromptSet {
    pub fn new(points: Vec<PointPrompt>, bbox: Option<BoxPrompt>) -> Result<Self> {
        if points.is_empty() && bbox.is_none() {
            return Err(Error::Argument("a prompt set needs at least one prompt".into()));
        }
        Ok(Self { points, bbox })
    }

    pub fn num_tokens(&self) -> usize {
        self.points.len() + if self.bbox.is_some() { 2 } else { 0 }
    }

    /// Parses the line format written by `Display`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut bbox = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Argument(format!("bad prompt field {s:?} in {line:?}")))
            };
            match fields.as_slice() {
                ["P", r, c, l] => points.push(PointPrompt {
                    row: int(r)?,
                    col: int(c)?,
                    label: match *l {
                        "1" => PointLabel::Foreground,
                        "0" => PointLabel::Background,
                        _ => return Err(Error::Argument(format!("bad point label in {line:?}"))),
                    },
                }),
                ["B", a, b, c, d] => {
                    bbox = Some(BoxPrompt {
                        row_min: int(a)?,
                        col_min: int(b)?,
                        row_max: int(c)?,
                        col_max: int(d)?,
                    })
                }
                _ => return Err(Error::Argument(format!("unrecognized prompt line {line:?}"))),
            }
        }
        Self::new(points, bbox)
    }
}

/// One line per prompt: `P row col label` (label 1 = foreground) and
/// `B rmin cmin rmax cmax`.
impl fmt::Display for PromptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.points {
            writeln!(f, "P {} {} {}", p.row, p.col, p.label.code())?;
        }
        if let Some(b) = &self.bbox {
            writeln!(f, "B {} {} {} {}", b.row_min, b.col_min, b.row_max, b.col_max)?;
        }
        Ok(())
    }
}

/// `k` foreground clicks drawn uniformly without replacement (with
/// replacement once `k` exceeds the foreground size).
pub fn sample_point_prompts(mask: &Mask, k: usize, rng: &mut Rng) -> Result<Vec<PointPrompt>> {
    if k == 0 {
        return Err(Error::Argument("need at least one point".into()));
    }
    let fg = mask.foreground();
    if fg.is_empty() {
        return Err(Error::EmptyForeground);
    }
    let picks: Vec<usize> = if k <= fg.len() {
        rng.choose_distinct(fg.len(), k)
    } else {
        (0..k).map(|_| rng.below(fg.len())).collect()
    };
    Ok(picks
        .into_iter()
        .map(|i| PointPrompt {
            row: fg[i].0,
            col: fg[i].1,
            label: PointLabel::Foreground,
        })
        .collect())
}

/// Tight bounding box of the foreground.
pub fn tight_box(mask: &Mask) -> Result<BoxPrompt> {
    let mut it = mask.foreground().into_iter();
    let (r0, c0) = it.next().ok_or(Error::EmptyForeground)?;
    let mut b = BoxPrompt {
        row_min: r0,
        col_min: c0,
        row_max: r0,
        col_max: c0,
    };
    for (r, c) in it {
        b.row_min = b.row_min.min(r);
        b.row_max = b.row_max.max(r);
        b.col_min = b.col_min.min(c);
        b.col_max = b.col_max.max(c);
    }
    Ok(b)
}

/// Tight box with every edge pushed outward by an independent draw from
/// `[0, offset_frac · max(height, width)]`, rounded and clamped to the image.
pub fn make_box_prompt(mask: &Mask, offset_frac: f64, rng: &mut Rng) -> Result<BoxPrompt> {
    if !(offset_frac >= 0.0) {
        return Err(Error::Argument(format!("offset fraction {offset_frac} must be >= 0")));
    }
    let t = tight_box(mask)?;
    let longest = (t.row_max - t.row_min + 1).max(t.col_max - t.col_min + 1) as f64;
    let reach = offset_frac * longest;
    let mut draw = || (rng.uniform() * reach).round() as usize;
    let (up, left, down, right) = (draw(), draw(), draw(), draw());
    Ok(BoxPrompt {
        row_min: t.row_min.saturating_sub(up),
        col_min: t.col_min.saturating_sub(left),
        row_max: (t.row_max + down).min(mask.rows() - 1),
        col_max: (t.col_max + right).min(mask.cols() - 1),
    })
}

/// Points then (optionally) a box, all drawn from `rng`.
pub fn simulate_prompts(
    mask: &Mask,
    k_points: usize,
    with_box: bool,
    offset_frac: f64,
    rng: &mut Rng,
) -> Result<PromptSet> {
    let points = if k_points > 0 {
        sample_point_prompts(mask, k_points, rng)?
    } else {
        Vec::new()
    };
    let bbox = if with_box {
        Some(make_box_prompt(mask, offset_frac, rng)?)
    } else {
        None
    };
    PromptSet::new(points, bbox)
}

/// (trainable, frozen) scalar counts of the prompt encoder.
pub fn param_counts(embed_dim: usize) -> (usize, usize) {
    (embed_dim * NUM_LABEL_EMBEDDINGS, embed_dim)
}

pub fn init_prompt_encoder(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut Rng) {
    let d = cfg.embed_dim;
    store.insert(
        "prompt/freq",
        Tensor::from_fn(vec![d / 2, 2], |_| rng.normal()),
        false,
    );
    store.insert(
        "prompt/label",
        Tensor::from_fn(vec![d, NUM_LABEL_EMBEDDINGS], |_| rng.normal() * LABEL_EMBED_STD),
        true,
    );
}

/// Random Fourier features of a point with coordinates in `[0, 1]²`,
/// mapped to `[-1, 1]²` first: `[sin(2π G c); cos(2π G c)]`.
pub fn fourier_features(freq: &Tensor, u: f64, v: f64) -> Vec<f64> {
    let half = freq.shape()[0];
    let (x, y) = (2.0 * u - 1.0, 2.0 * v - 1.0);
    let mut out = vec![0.0; 2 * half];
    for i in 0..half {
        let z = std::f64::consts::TAU * (freq.at2(i, 0) * x + freq.at2(i, 1) * y);
        out[i] = z.sin();
        out[half + i] = z.cos();
    }
    out
}

/// Positional encoding of pixel `(row, col)` sampled at its center.
pub fn pixel_encoding(freq: &Tensor, row: usize, col: usize, size: usize) -> Vec<f64> {
    let s = size as f64;
    fourier_features(freq, (row as f64 + 0.5) / s, (col as f64 + 0.5) / s)
}

/// Encoding of every patch-token center, `[d × g²]`.
pub fn dense_encoding(freq: &Tensor, grid: usize) -> Tensor {
    let n = grid * grid;
    let d = freq.shape()[0] * 2;
    let mut out = vec![0.0; d * n];
    let g = grid as f64;
    for t in 0..n {
        let f = fourier_features(freq, ((t / grid) as f64 + 0.5) / g, ((t % grid) as f64 + 0.5) / g);
        for (r, v) in f.into_iter().enumerate() {
            out[r * n + t] = v;
        }
    }
    Tensor::new(vec![d, n], out).expect("positive dims")
}

fn check_bounds(ps: &PromptSet, size: usize) -> Result<()> {
    let oob = |r: usize, c: usize| r >= size || c >= size;
    for p in &ps.points {
        if oob(p.row, p.col) {
            return Err(Error::Argument(format!(
                "point ({}, {}) outside {size}x{size} image",
                p.row, p.col
            )));
        }
    }
    if let Some(b) = &ps.bbox {
        if oob(b.row_max, b.col_max) || b.row_min > b.row_max || b.col_min > b.col_max {
            return Err(Error::Argument(format!("invalid box {b:?} for {size}x{size} image")));
        }
    }
    Ok(())
}

/// Prompt tokens `[d × n_prompt]`: frozen Fourier encoding of each location
/// plus the trainable embedding of its label (box corners get their own).
pub fn encode_prompts(tape: &mut Tape, b: &Binding, store: &ParamStore, ps: &PromptSet, cfg: &EncoderConfig) -> Result<Var> {
    let size = cfg.image_size;
    check_bounds(ps, size)?;
    let freq = store.tensor("prompt/freq")?;
    let mut sites: Vec<(usize, usize, usize)> = ps
        .points
        .iter()
        .map(|p| (p.row, p.col, p.label.embedding_index()))
        .collect();
    if let Some(bx) = &ps.bbox {
        sites.push((bx.row_min, bx.col_min, BOX_MIN_INDEX));
        sites.push((bx.row_max, bx.col_max, BOX_MAX_INDEX));
    }
    let n = sites.len();
    let d = cfg.embed_dim;
    let mut pe = vec![0.0; d * n];
    for (j, &(r, c, _)) in sites.iter().enumerate() {
        for (i, v) in pixel_encoding(freq, r, c, size).into_iter().enumerate() {
            pe[i * n + j] = v;
        }
    }
    let pe = tape.constant(Tensor::new(vec![d, n], pe)?);
    let table = b.var("prompt/label")?;
    let cols = sites
        .iter()
        .map(|&(_, _, l)| tape.slice_cols(table, l, l + 1))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let labels = tape.concat_cols(&cols)?;
    Ok(tape.add(pe, labels)?)
}
