//! Row-major 2-d grids for images and masks.

use lseg_autograd::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Grayscale image, intensities nominally in `[0, 1]`.
pub type Image = Grid<f64>;
/// Binary segmentation mask.
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn flip_horizontal(&mut self) {
        for row in self.data.chunks_mut(self.cols) {
            row.reverse();
        }
    }

    pub fn flip_vertical(&mut self) {
        let cols = self.cols;
        for r in 0..self.rows / 2 {
            let other = self.rows - 1 - r;
            for c in 0..cols {
                self.data.swap(r * cols + c, other * cols + c);
            }
        }
    }
}

impl Grid<f64> {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.data.clone()).expect("grid dims are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Option<Self> {
        let (r, c) = t.dims2().ok()?;
        Self::from_vec(r, c, t.data().to_vec())
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// `(row, col)` of every foreground pixel in row-major order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.cols, i % self.cols))
            .collect()
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }
}

/// Bilinear resampling with pixel-center alignment: output pixel `y`
/// samples source coordinate `(y + 0.5)·in/out − 0.5`, clamped to the edge.
pub fn resize_bilinear(src: &Grid<f64>, rows: usize, cols: usize) -> Grid<f64> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|y| {
                let s = ((y as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = axis(rows, src.rows());
    let xs = axis(cols, src.cols());
    Grid::from_fn(rows, cols, |r, c| {
        let (y0, y1, wy) = ys[r];
        let (x0, x1, wx) = xs[c];
        let top = (1.0 - wx) * src.get(y0, x0) + wx * src.get(y0, x1);
        let bottom = (1.0 - wx) * src.get(y1, x0) + wx * src.get(y1, x1);
        (1.0 - wy) * top + wy * bottom
    })
}

/// Nearest-neighbor resampling (pixel-center alignment).
pub fn resize_nearest<T: Clone>(src: &Grid<T>, rows: usize, cols: usize) -> Grid<T> {
    let pick = |y: usize, out: usize, inp: usize| ((y * inp) / out).min(inp - 1);
    Grid::from_fn(rows, cols, |r, c| {
        src.get(pick(r, rows, src.rows()), pick(c, cols, src.cols())).clone()
    })
}
