//! Semantic and instance label maps, and the geometry derived from them:
//! one-hot encoding, nearest resizing, connected components, instance edges
//! and the intra-class positional encoding map.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::netpbm::GrayImage;
use crate::tensor::{Scalar, Shape, Tensor};

/// Per-pixel class labels in `[0, classes)`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u32>,
}

impl SemanticMask {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dims {height}x{width} with {classes} classes must all be positive"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "semantic mask",
                expected: format!("{} labels", height * width),
                got: format!("{} labels", labels.len()),
            });
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                label: labels[i],
                row: i / width,
                col: i % width,
                classes,
            });
        }
        Ok(SemanticMask {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn constant(height: usize, width: usize, classes: usize, label: u32) -> Result<Self> {
        Self::new(height, width, classes, vec![label; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        classes: usize,
        f: impl Fn(usize, usize) -> u32,
    ) -> Result<Self> {
        let labels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, classes, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Same labels with a different declared class count.
    pub fn with_classes(&self, classes: usize) -> Result<Self> {
        Self::new(self.height, self.width, classes, self.labels.clone())
    }

    /// Applies `map` to every label; the result has `classes` classes.
    pub fn relabel(&self, classes: usize, map: impl Fn(u32) -> u32) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            classes,
            self.labels.iter().map(|&l| map(l)).collect(),
        )
    }

    pub fn mirror_horizontal(&self) -> Self {
        let labels = (0..self.height * self.width)
            .map(|i| self.get(i / self.width, self.width - 1 - i % self.width))
            .collect();
        SemanticMask {
            labels,
            ..self.clone()
        }
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// `(1, classes, H, W)` indicator tensor; channel `l` is 1 where the label is `l`.
    pub fn one_hot<T: Scalar>(&self) -> Tensor<T> {
        let shape = Shape::new(1, self.classes, self.height, self.width);
        let mut t = Tensor::zeros(shape);
        let plane = self.height * self.width;
        let data = t.data_mut();
        for (i, &l) in self.labels.iter().enumerate() {
            data[l as usize * plane + i] = T::one();
        }
        t
    }

    /// Nearest-neighbour resampling: target pixel `(i, j)` reads source
    /// `(floor(i * H / H'), floor(j * W / W'))`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "resize target {height}x{width} must be positive"
            )));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let labels = (0..height * width)
            .map(|i| {
                let (r, c) = (i / width, i % width);
                self.get(r * self.height / height, c * self.width / width)
            })
            .collect();
        Ok(SemanticMask {
            height,
            width,
            classes: self.classes,
            labels,
        })
    }

    /// Reads a P5 image whose sample values are class ids.
    pub fn from_pgm(img: &GrayImage, classes: Option<usize>) -> Result<Self> {
        let labels: Vec<u32> = img.pixels.iter().map(|&p| p as u32).collect();
        let classes = match classes {
            Some(c) => c,
            None => labels.iter().max().map_or(1, |&m| m as usize + 1),
        };
        Self::new(img.height, img.width, classes, labels)
    }

    /// 8-bit raster when `classes <= 256`, 16-bit otherwise.
    pub fn to_pgm(&self) -> Result<GrayImage> {
        if self.classes > 65536 {
            return Err(Error::InvalidArgument(format!(
                "{} classes do not fit a 16-bit PGM",
                self.classes
            )));
        }
        let maxval = if self.classes <= 256 { 255 } else { 65535 };
        GrayImage::new(
            self.width,
            self.height,
            maxval,
            self.labels.iter().map(|&l| l as u16).collect(),
        )
    }
}

/// Per-pixel instance ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || ids.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "instance map",
                expected: format!("{} ids for a positive {height}x{width} grid", height * width),
                got: format!("{} ids", ids.len()),
            });
        }
        Ok(InstanceMap { height, width, ids })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> u32) -> Result<Self> {
        Self::new(height, width, (0..height * width).map(|i| f(i / width, i % width)).collect())
    }

    pub fn from_pgm(img: &GrayImage) -> Result<Self> {
        Self::new(img.height, img.width, img.pixels.iter().map(|&p| p as u32).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("resize target must be positive".into()));
        }
        Self::from_fn(height, width, |r, c| {
            self.get(r * self.height / height, c * self.width / width)
        })
    }

    /// Instances are the connected components of `m` under 8-connectivity.
    pub fn from_components(m: &SemanticMask) -> Self {
        let cc = connected_components(m, Connectivity::Eight);
        InstanceMap {
            height: m.height,
            width: m.width,
            ids: cc.ids,
        }
    }
}

/// `(1, 1, H, W)` map that is 1 where any 4-neighbour carries a different
/// instance id and 0 elsewhere.
pub fn edge_from_instance<T: Scalar>(inst: &InstanceMap) -> Tensor<T> {
    let (h, w) = (inst.height, inst.width);
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, r, c| {
        let id = inst.get(r, c);
        let differs = (r > 0 && inst.get(r - 1, c) != id)
            || (r + 1 < h && inst.get(r + 1, c) != id)
            || (c > 0 && inst.get(r, c - 1) != id)
            || (c + 1 < w && inst.get(r, c + 1) != id);
        if differs {
            T::one()
        } else {
            T::zero()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// One connected region of a single class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub class: u32,
    pub pixels: usize,
    /// Sum of member column indices.
    pub sum_x: u64,
    /// Sum of member row indices.
    pub sum_y: u64,
}

impl Component {
    /// Mean member coordinate `(cx, cy)`, with `x` the column.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels as f64;
        (self.sum_x as f64 / n, self.sum_y as f64 / n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub height: usize,
    pub width: usize,
    /// Component index per pixel, indexing `components`.
    pub ids: Vec<u32>,
    /// Components in order of their first pixel in row-major scan.
    pub components: Vec<Component>,
}

impl ComponentLabeling {
    pub fn of_class(&self, class: u32) -> impl Iterator<Item = (usize, &Component)> {
        self.components
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.class == class)
    }

    /// Index of the largest component of `class`; ties go to the component
    /// found first in row-major order.
    pub fn largest_of_class(&self, class: u32) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (i, c) in self.of_class(class) {
            if best.is_none_or(|(_, p)| c.pixels > p) {
                best = Some((i, c.pixels));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Labels the maximal same-class connected regions of `m` by breadth-first
/// flood fill.
pub fn connected_components(m: &SemanticMask, connectivity: Connectivity) -> ComponentLabeling {
    let (h, w) = (m.height, m.width);
    const UNSEEN: u32 = u32::MAX;
    let mut ids = vec![UNSEEN; h * w];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if ids[start] != UNSEEN {
            continue;
        }
        let id = components.len() as u32;
        let class = m.labels[start];
        let mut comp = Component {
            class,
            pixels: 0,
            sum_x: 0,
            sum_y: 0,
        };
        ids[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            comp.pixels += 1;
            comp.sum_x += c as u64;
            comp.sum_y += r as u64;
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if ids[q] == UNSEEN && m.labels[q] == class {
                    ids[q] = id;
                    queue.push_back(q);
                }
            }
        }
        components.push(comp);
    }
    ComponentLabeling {
        height: h,
        width: w,
        ids,
        components,
    }
}

/// Which object a pixel's offsets are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IcpeMode {
    /// The largest connected component of the pixel's class.
    #[default]
    LargestComponentPerClass,
    /// The component the pixel belongs to.
    PerComponent,
}

/// Normalized intra-class offsets, `2 x H x W`: channel 0 is the column (x)
/// offset, channel 1 the row (y) offset. Values lie in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncodingMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PositionalEncodingMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 2 * height * width {
            return Err(Error::ShapeMismatch {
                op: "positional encoding map",
                expected: format!("{} values", 2 * height * width),
                got: format!("{} values", data.len()),
            });
        }
        Ok(PositionalEncodingMap {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        PositionalEncodingMap {
            height,
            width,
            data: vec![0.0; 2 * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Offset along `axis` (0 = x, 1 = y) at pixel `(row, col)`.
    pub fn get(&self, axis: usize, row: usize, col: usize) -> f64 {
        self.data[(axis * self.height + row) * self.width + col]
    }

    pub fn channel(&self, axis: usize) -> &[f64] {
        let p = self.height * self.width;
        &self.data[axis * p..(axis + 1) * p]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let shape = Shape::new(1, 2, self.height, self.width);
        Tensor::from_vec(shape, self.data.iter().map(|&v| T::from_f64(v)).collect())
            .expect("map length matches its dims")
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("resize target must be positive".into()));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(2 * height * width);
        for axis in 0..2 {
            for r in 0..height {
                for c in 0..width {
                    data.push(self.get(axis, r * self.height / height, c * self.width / width));
                }
            }
        }
        Ok(PositionalEncodingMap {
            height,
            width,
            data,
        })
    }

    /// Gray visualization of one axis: `round(127.5 * (d + 1))`.
    pub fn to_pgm(&self, axis: usize) -> GrayImage {
        let pixels = self
            .channel(axis)
            .iter()
            .map(|&d| (127.5 * (d.clamp(-1.0, 1.0) + 1.0)).round() as u16)
            .collect();
        GrayImage::new(self.width, self.height, 255, pixels).expect("visualization fits 8 bits")
    }
}

/// Intra-class positional encoding with the default 8-connectivity.
pub fn icpe_map(m: &SemanticMask, mode: IcpeMode) -> PositionalEncodingMap {
    icpe_map_with(m, mode, Connectivity::default())
}

/// Offsets of every pixel from its reference object's centroid, divided per
/// axis by that object's largest absolute offset. An axis on which the
/// object has no extent maps to 0.
///
/// The offset `x - cx` is carried as the exact integer `x * n - sum_x` and
/// divided once at the end, so the center maps to exactly 0, the extreme
/// pixels to exactly +-1, and mirrored masks to exactly negated maps.
/// Pixels outside their reference object (satellite fragments in
/// [`IcpeMode::LargestComponentPerClass`]) are clamped to `[-1, 1]`.
pub fn icpe_map_with(
    m: &SemanticMask,
    mode: IcpeMode,
    connectivity: Connectivity,
) -> PositionalEncodingMap {
    let (h, w) = (m.height, m.width);
    let cc = connected_components(m, connectivity);
    let reference: Vec<usize> = match mode {
        IcpeMode::PerComponent => (0..cc.components.len()).collect(),
        IcpeMode::LargestComponentPerClass => {
            let largest: Vec<Option<usize>> = (0..m.classes as u32)
                .map(|l| cc.largest_of_class(l))
                .collect();
            cc.components
                .iter()
                .map(|c| largest[c.class as usize].expect("class has a component"))
                .collect()
        }
    };
    let numerator = |comp: &Component, r: usize, c: usize| -> (i64, i64) {
        let n = comp.pixels as i64;
        (c as i64 * n - comp.sum_x as i64, r as i64 * n - comp.sum_y as i64)
    };
    // largest |offset| of each object over its own pixels
    let mut max_abs = vec![(0i64, 0i64); cc.components.len()];
    for p in 0..h * w {
        let id = cc.ids[p] as usize;
        let (nx, ny) = numerator(&cc.components[id], p / w, p % w);
        let e = &mut max_abs[id];
        e.0 = e.0.max(nx.abs());
        e.1 = e.1.max(ny.abs());
    }
    let mut data = vec![0.0; 2 * h * w];
    for p in 0..h * w {
        let obj = reference[cc.ids[p] as usize];
        let (nx, ny) = numerator(&cc.components[obj], p / w, p % w);
        let (mx, my) = max_abs[obj];
        let norm = |num: i64, den: i64| {
            if den == 0 {
                0.0
            } else {
                (num as f64 / den as f64).clamp(-1.0, 1.0)
            }
        };
        data[p] = norm(nx, mx);
        data[h * w + p] = norm(ny, my);
    }
    PositionalEncodingMap {
        height: h,
        width: w,
        data,
    }
}

/// Background class 0 overlaid with `shapes` axis-aligned rectangles or
/// ellipses, each drawn with a distinct class from `1..classes`.
pub fn random_shape_mask(
    rng: &mut impl Rng,
    height: usize,
    width: usize,
    classes: usize,
    shapes: usize,
) -> SemanticMask {
    assert!(classes >= 1 && height >= 1 && width >= 1);
    let mut labels = vec![0u32; height * width];
    let mut order: Vec<u32> = (1..classes as u32).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for &class in order.iter().take(shapes) {
        let r0 = rng.gen_range(0..height);
        let c0 = rng.gen_range(0..width);
        let r1 = rng.gen_range(r0..height) + 1;
        let c1 = rng.gen_range(c0..width) + 1;
        let ellipse = rng.gen_bool(0.5);
        let (cy, cx) = ((r0 + r1) as f64 / 2.0, (c0 + c1) as f64 / 2.0);
        let (ry, rx) = ((r1 - r0) as f64 / 2.0, (c1 - c0) as f64 / 2.0);
        for r in r0..r1 {
            for c in c0..c1 {
                let inside = !ellipse || {
                    let dy = (r as f64 + 0.5 - cy) / ry;
                    let dx = (c as f64 + 0.5 - cx) / rx;
                    dx * dx + dy * dy <= 1.0
                };
                if inside {
                    labels[r * width + c] = class;
                }
            }
        }
    }
    SemanticMask {
        height,
        width,
        classes,
        labels,
    }
}
