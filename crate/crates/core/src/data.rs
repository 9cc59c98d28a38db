//! Synthetic segmentation tasks, augmentation, PGM IO and the on-disk
//! dataset layout.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, resize_nearest, Grid, Image, Mask};
use crate::rng::{derive_seed, Rng};

pub const MIN_FG_FRACTION: f64 = 0.02;
pub const MAX_FG_FRACTION: f64 = 0.6;
pub const MAX_RENDER_ATTEMPTS: u64 = 100;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Ellipse,
    Annulus,
    Ribbon,
    MultiBlob,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Ellipse, Family::Annulus, Family::Ribbon, Family::MultiBlob];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ellipse => "ellipse",
            Family::Annulus => "annulus",
            Family::Ribbon => "ribbon",
            Family::MultiBlob => "multiblob",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown task family {s:?}")))
    }
}

/// Appearance and geometry statistics shared by every image of one task.
/// Sizes are fractions of the image side.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub family: Family,
    pub image_size: usize,
    pub fg_mean: f64,
    pub bg_mean: f64,
    pub texture_sigma: f64,
    pub size_min: f64,
    pub size_max: f64,
    /// Smallest minor/major axis ratio.
    pub min_aspect: f64,
    pub task_seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.image_size >= 4
            && (0.0..=1.0).contains(&self.fg_mean)
            && (0.0..=1.0).contains(&self.bg_mean)
            && self.texture_sigma >= 0.0
            && self.size_min > 0.0
            && self.size_min <= self.size_max
            && self.min_aspect > 0.0
            && self.min_aspect <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("invalid task spec {self:?}")))
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "family={}\nimage_size={}\nfg_mean={}\nbg_mean={}\ntexture_sigma={}\nsize_min={}\nsize_max={}\nmin_aspect={}\ntask_seed={}\n",
            self.family,
            self.image_size,
            self.fg_mean,
            self.bg_mean,
            self.texture_sigma,
            self.size_min,
            self.size_max,
            self.min_aspect,
            self.task_seed
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = crate::config::parse_pairs(text).map_err(|e| Error::Data(e.to_string()))?;
        let get = |key: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Data(format!("task spec is missing {key}")))
        };
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Data(format!("bad task spec value {v:?} for {key}")))
        }
        let spec = TaskSpec {
            family: get("family")?.parse()?,
            image_size: num("image_size", get("image_size")?)?,
            fg_mean: num("fg_mean", get("fg_mean")?)?,
            bg_mean: num("bg_mean", get("bg_mean")?)?,
            texture_sigma: num("texture_sigma", get("texture_sigma")?)?,
            size_min: num("size_min", get("size_min")?)?,
            size_max: num("size_max", get("size_max")?)?,
            min_aspect: num("min_aspect", get("min_aspect")?)?,
            task_seed: num("task_seed", get("task_seed")?)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Draws the appearance and geometry ranges of a new task.
pub fn generate_task(seed: u64, family: Family, image_size: usize) -> TaskSpec {
    let mut rng = Rng::new(seed);
    let bright = rng.uniform_in(0.6, 0.9);
    let dark = rng.uniform_in(0.1, 0.4);
    let (fg_mean, bg_mean) = if rng.coin() { (bright, dark) } else { (dark, bright) };
    let texture_sigma = rng.uniform_in(0.02, 0.08);
    let (lo, hi) = match family {
        Family::Ellipse => (0.12, 0.32),
        Family::Annulus => (0.2, 0.36),
        Family::Ribbon => (0.04, 0.09),
        Family::MultiBlob => (0.07, 0.14),
    };
    let span = hi - lo;
    let size_min = lo + rng.uniform() * 0.3 * span;
    let size_max = hi - rng.uniform() * 0.3 * span;
    TaskSpec {
        family,
        image_size,
        fg_mean,
        bg_mean,
        texture_sigma,
        size_min,
        size_max,
        min_aspect: rng.uniform_in(0.5, 0.9),
        task_seed: seed,
    }
}

/// Analytic foreground region in pixel coordinates (row, col), with pixel
/// `(r, c)` sampled at `(r + 0.5, c + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ellipse {
        cy: f64,
        cx: f64,
        a: f64,
        b: f64,
        theta: f64,
    },
    Annulus {
        outer: Box<Shape>,
        inner: Box<Shape>,
    },
    Ribbon {
        offset: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
        theta: f64,
        half_width: f64,
        center: f64,
    },
    Union(Vec<Shape>),
}

impl Shape {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, a, b, theta } => {
                let (dy, dx) = (y - cy, x - cx);
                let (s, c) = theta.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Annulus { outer, inner } => outer.contains(y, x) && !inner.contains(y, x),
            Shape::Ribbon {
                offset,
                amplitude,
                omega,
                phase,
                theta,
                half_width,
                center,
            } => {
                let (dy, dx) = (y - center, x - center);
                let (s, c) = theta.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (v - offset - amplitude * (omega * u + phase).sin()).abs() <= *half_width
            }
            Shape::Union(parts) => parts.iter().any(|p| p.contains(y, x)),
        }
    }

    pub fn rasterize(&self, size: usize) -> Mask {
        Grid::from_fn(size, size, |r, c| self.contains(r as f64 + 0.5, c as f64 + 0.5))
    }
}

fn draw_ellipse(ts: &TaskSpec, rng: &mut Rng, scale: f64) -> Shape {
    let s = ts.image_size as f64;
    let a = rng.uniform_in(ts.size_min, ts.size_max) * s * scale;
    Shape::Ellipse {
        cy: rng.uniform_in(0.3, 0.7) * s,
        cx: rng.uniform_in(0.3, 0.7) * s,
        a,
        b: a * rng.uniform_in(ts.min_aspect, 1.0),
        theta: rng.uniform() * std::f64::consts::PI,
    }
}

fn draw_shape(ts: &TaskSpec, rng: &mut Rng) -> Shape {
    let s = ts.image_size as f64;
    match ts.family {
        Family::Ellipse => draw_ellipse(ts, rng, 1.0),
        Family::Annulus => {
            let outer = draw_ellipse(ts, rng, 1.0);
            let ratio = rng.uniform_in(0.4, 0.65);
            let inner = match &outer {
                Shape::Ellipse { cy, cx, a, b, theta } => Shape::Ellipse {
                    cy: *cy,
                    cx: *cx,
                    a: a * ratio,
                    b: b * ratio,
                    theta: *theta,
                },
                _ => unreachable!(),
            };
            Shape::Annulus {
                outer: Box::new(outer),
                inner: Box::new(inner),
            }
        }
        Family::Ribbon => Shape::Ribbon {
            offset: rng.uniform_in(-0.15, 0.15) * s,
            amplitude: rng.uniform_in(0.05, 0.2) * s,
            omega: std::f64::consts::TAU * rng.uniform_in(0.5, 1.5) / s,
            phase: rng.uniform() * std::f64::consts::TAU,
            theta: rng.uniform() * std::f64::consts::PI,
            half_width: rng.uniform_in(ts.size_min, ts.size_max) * s,
            center: s / 2.0,
        },
        Family::MultiBlob => {
            let n = 2 + rng.below(3);
            Shape::Union((0..n).map(|_| draw_ellipse(ts, rng, 1.0)).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Image,
    pub mask: Mask,
}

impl Example {
    pub fn new(image: Image, mask: Mask) -> Result<Self> {
        if !image.same_dims(&mask) {
            return Err(Error::Data("image and mask sizes differ".into()));
        }
        if mask.is_empty_mask() {
            return Err(Error::EmptyForeground);
        }
        Ok(Self { image, mask })
    }

    pub fn size(&self) -> usize {
        self.image.rows()
    }
}

/// Rounds to the nearest value representable in an 8-bit PGM.
pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// The geometry an example is rendered from, after re-draws for the
/// foreground-fraction bounds.
pub fn example_shape(ts: &TaskSpec, example_seed: u64) -> Result<(Shape, Mask, u64)> {
    ts.validate()?;
    let base = derive_seed(ts.task_seed, example_seed);
    for attempt in 0..MAX_RENDER_ATTEMPTS {
        let mut rng = Rng::stream(base, 2 * attempt);
        let shape = draw_shape(ts, &mut rng);
        let mask = shape.rasterize(ts.image_size);
        let frac = mask.foreground_fraction();
        if (MIN_FG_FRACTION..=MAX_FG_FRACTION).contains(&frac) {
            return Ok((shape, mask, derive_seed(base, 2 * attempt + 1)));
        }
    }
    Err(Error::Data(format!(
        "no valid {} geometry after {MAX_RENDER_ATTEMPTS} attempts",
        ts.family
    )))
}

pub fn render_example(ts: &TaskSpec, example_seed: u64) -> Result<Example> {
    let (_, mask, texture_seed) = example_shape(ts, example_seed)?;
    let mut rng = Rng::new(texture_seed);
    let image = Grid::from_fn(mask.rows(), mask.cols(), |r, c| {
        let mean = if *mask.get(r, c) { ts.fg_mean } else { ts.bg_mean };
        quantize(mean + ts.texture_sigma * rng.normal())
    });
    Example::new(image, mask)
}

/// Flips (each axis with probability 1/2) and image noise.
pub fn augment(ex: &Example, rng: &mut Rng, noise_sigma: f64) -> Example {
    let flip_h = rng.coin();
    let flip_v = rng.coin();
    augment_with(ex, flip_h, flip_v, noise_sigma, rng)
}

pub fn augment_with(ex: &Example, flip_h: bool, flip_v: bool, noise_sigma: f64, rng: &mut Rng) -> Example {
    let mut out = ex.clone();
    if flip_h {
        out.image.flip_horizontal();
        out.mask.flip_horizontal();
    }
    if flip_v {
        out.image.flip_vertical();
        out.mask.flip_vertical();
    }
    if noise_sigma > 0.0 {
        for v in out.image.data_mut() {
            *v = (*v + noise_sigma * rng.normal()).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn resize_image(image: &Image, size: usize) -> Result<Image> {
    check_upscale(image.rows(), image.cols(), size)?;
    Ok(resize_bilinear(image, size, size))
}

pub fn resize_mask(mask: &Mask, size: usize) -> Result<Mask> {
    check_upscale(mask.rows(), mask.cols(), size)?;
    Ok(resize_nearest(mask, size, size))
}

fn check_upscale(rows: usize, cols: usize, size: usize) -> Result<()> {
    if size < rows || size < cols {
        return Err(Error::Argument(format!("cannot downscale {rows}x{cols} to {size}x{size}")));
    }
    Ok(())
}

/// Brings an example to the model input size.
pub fn resize_to_input(ex: &Example, size: usize) -> Result<Example> {
    if ex.image.rows() == size && ex.image.cols() == size {
        return Ok(ex.clone());
    }
    Ok(Example {
        image: resize_image(&ex.image, size)?,
        mask: resize_mask(&ex.mask, size)?,
    })
}

pub fn image_to_bytes(image: &Image) -> Grid<u8> {
    image.map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn image_from_bytes(g: &Grid<u8>) -> Image {
    g.map(|&b| b as f64 / 255.0)
}

pub fn mask_to_bytes(mask: &Mask) -> Grid<u8> {
    mask.map(|&m| if m { 255 } else { 0 })
}

pub fn mask_from_bytes(g: &Grid<u8>) -> Mask {
    g.map(|&b| b >= 128)
}

pub fn encode_pgm(g: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", g.cols(), g.rows()).into_bytes();
    out.extend_from_slice(g.data());
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Pgm {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Grid<u8>> {
    let mut h = Header { bytes, pos: 0 };
    if !bytes.starts_with(b"P5") {
        return Err(h.err("missing P5 magic"));
    }
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space();
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Pgm {
            offset: maxval_at,
            msg: format!("unsupported maxval {maxval}"),
        });
    }
    if width == 0 || height == 0 {
        return Err(h.err("zero image dimension"));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(h.err("expected whitespace after maxval"));
    }
    h.pos += 1;
    let need = width * height;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(Error::Pgm {
            offset: bytes.len(),
            msg: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    if payload.len() > need {
        return Err(Error::Pgm {
            offset: h.pos + need,
            msg: "trailing bytes after payload".into(),
        });
    }
    Ok(Grid::from_vec(height, width, payload.to_vec()).expect("length checked"))
}

pub fn load_pgm(path: &Path) -> Result<Grid<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Pgm { offset, msg } => Error::Pgm {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn save_pgm(g: &Grid<u8>, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(g)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub spec: Option<TaskSpec>,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub tasks: Vec<Task>,
}

/// Parameters of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub root_seed: u64,
    pub num_tasks: usize,
    pub examples_per_task: usize,
    pub image_size: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            root_seed: 0,
            num_tasks: 16,
            examples_per_task: 16,
            image_size: 64,
        }
    }
}

pub fn task_id(index: usize, family: Family) -> String {
    format!("t{index:03}_{family}")
}

pub fn build_task(id: String, spec: TaskSpec, count: usize) -> Result<Task> {
    let examples = (0..count as u64)
        .map(|i| render_example(&spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Task {
        id,
        spec: Some(spec),
        examples,
    })
}

/// Families cycle with the task index; everything else follows from the
/// root seed.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let tasks = (0..spec.num_tasks)
        .map(|i| {
            let family = Family::ALL[i % Family::ALL.len()];
            let ts = generate_task(derive_seed(spec.root_seed, i as u64), family, spec.image_size);
            build_task(task_id(i, family), ts, spec.examples_per_task)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { tasks })
}

impl Dataset {
    pub fn task(&self, id: &str) -> Result<&Task> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Lookup(format!("task {id}")))
    }

    pub fn num_examples(&self) -> usize {
        self.tasks.iter().map(|t| t.examples.len()).sum()
    }

    /// Keeps the listed tasks, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        let tasks = ids.iter().map(|id| self.task(id).cloned()).collect::<Result<_>>()?;
        Ok(Dataset { tasks })
    }

    /// `(task index, example index)` for every example.
    pub fn index(&self) -> Vec<(usize, usize)> {
        self.tasks
            .iter()
            .enumerate()
            .flat_map(|(t, task)| (0..task.examples.len()).map(move |e| (t, e)))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tasks_dir = dir.join("tasks");
        fs::create_dir_all(&tasks_dir).map_err(|e| Error::io(&tasks_dir, e))?;
        let mut manifest = String::new();
        for task in &self.tasks {
            let tdir = tasks_dir.join(&task.id);
            fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
            for (n, ex) in task.examples.iter().enumerate() {
                save_pgm(&image_to_bytes(&ex.image), &tdir.join(format!("img_{n}.pgm")))?;
                save_pgm(&mask_to_bytes(&ex.mask), &tdir.join(format!("msk_{n}.pgm")))?;
            }
            if let Some(spec) = &task.spec {
                let p = tdir.join("task.txt");
                fs::write(&p, spec.to_text()).map_err(|e| Error::io(&p, e))?;
            }
            manifest.push_str(&format!("{} {}\n", task.id, task.examples.len()));
        }
        let p = dir.join("manifest.txt");
        fs::write(&p, manifest).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let mpath = dir.join("manifest.txt");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut tasks = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (id, count) = line
                .split_once(' ')
                .and_then(|(id, n)| Some((id, n.trim().parse::<usize>().ok()?)))
                .ok_or_else(|| Error::Data(format!("bad manifest line {line:?}")))?;
            let tdir = dir.join("tasks").join(id);
            let spec_path = tdir.join("task.txt");
            let spec = if spec_path.exists() {
                let t = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
                Some(TaskSpec::parse(&t)?)
            } else {
                None
            };
            let examples = (0..count)
                .map(|n| {
                    let image = image_from_bytes(&load_pgm(&tdir.join(format!("img_{n}.pgm")))?);
                    let mask = mask_from_bytes(&load_pgm(&tdir.join(format!("msk_{n}.pgm")))?);
                    Example::new(image, mask).map_err(|e| Error::Data(format!("{id} example {n}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            tasks.push(Task {
                id: id.to_string(),
                spec,
                examples,
            });
        }
        if tasks.is_empty() {
            return Err(Error::Data(format!("{}: dataset has no tasks", dir.display())));
        }
        Ok(Dataset { tasks })
    }
}
