//! Overlap and surface-distance metrics on binary masks.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Value written to CSV when the surface distance is undefined.
pub const ASD_UNDEFINED: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub dice: f64,
    pub jaccard: f64,
    /// `None` when either mask is empty.
    pub asd: Option<f64>,
}

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Argument(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn overlap(pred: &Mask, gt: &Mask) -> (usize, usize, usize) {
    let inter = pred.data().iter().zip(gt.data()).filter(|(p, g)| **p && **g).count();
    (inter, pred.count(), gt.count())
}

/// `2|P∩G|/(|P|+|G|)`; 1 when both masks are empty.
pub fn dice_score(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_dims(pred, gt)?;
    let (i, p, g) = overlap(pred, gt);
    Ok(if p + g == 0 { 1.0 } else { 2.0 * i as f64 / (p + g) as f64 })
}

/// `|P∩G|/|P∪G|`; 1 when both masks are empty.
pub fn jaccard(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_dims(pred, gt)?;
    let (i, p, g) = overlap(pred, gt);
    let union = p + g - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbour that is background or off-image.
pub fn boundary(mask: &Mask) -> Mask {
    let (h, w) = (mask.rows(), mask.cols());
    Grid::from_fn(h, w, |r, c| {
        if !*mask.get(r, c) {
            return false;
        }
        r == 0
            || c == 0
            || r + 1 == h
            || c + 1 == w
            || !*mask.get(r - 1, c)
            || !*mask.get(r + 1, c)
            || !*mask.get(r, c - 1)
            || !*mask.get(r, c + 1)
    })
}

/// Lower-envelope squared distance transform of one sampled line.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            out.fill(f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel.
pub fn squared_distance_transform(sites: &Mask) -> Grid<f64> {
    let (h, w) = (sites.rows(), sites.cols());
    let mut g = sites.map(|&s| if s { 0.0 } else { f64::INFINITY });
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for c in 0..w {
        for (r, v) in col_in.iter_mut().enumerate() {
            *v = *g.get(r, c);
        }
        edt_1d(&col_in, &mut col_out);
        for (r, &v) in col_out.iter().enumerate() {
            g.set(r, c, v);
        }
    }
    let mut row_out = vec![0.0; w];
    for r in 0..h {
        let row = &g.data()[r * w..(r + 1) * w];
        edt_1d(row, &mut row_out);
        g.data_mut()[r * w..(r + 1) * w].copy_from_slice(&row_out);
    }
    g
}

/// Symmetric average surface distance in units of `spacing`.
///
/// Distances from every boundary pixel of either mask to the other mask's
/// boundary are pooled into one mean. `None` when either mask is empty.
pub fn average_surface_distance(pred: &Mask, gt: &Mask, spacing: f64) -> Result<Option<f64>> {
    check_dims(pred, gt)?;
    if pred.is_empty_mask() || gt.is_empty_mask() {
        return Ok(None);
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (dp, dg) = (squared_distance_transform(&bp), squared_distance_transform(&bg));
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, d) in [(&bp, &dg), (&bg, &dp)] {
        for (on, sq) in b.data().iter().zip(d.data()) {
            if *on {
                total += sq.sqrt();
                count += 1;
            }
        }
    }
    Ok(Some(spacing * total / count as f64))
}

pub fn score(pred: &Mask, gt: &Mask) -> Result<MetricRecord> {
    Ok(MetricRecord {
        dice: dice_score(pred, gt)?,
        jaccard: jaccard(pred, gt)?,
        asd: average_surface_distance(pred, gt, 1.0)?,
    })
}

/// Mean of the defined values, `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}
