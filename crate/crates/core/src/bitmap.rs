//! Binary images, polygon rasterization and fold transforms.
//!
//! Image rows run top to bottom; world coordinates are y-up, so row 0 covers
//! the top of the world box.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

/// Default side length of every image fed to the networks.
pub const IMAGE_SIDE: usize = 28;
/// Supersampling factor per axis used by [`rasterize`].
pub const SUPERSAMPLE: usize = 4;
/// Number of fold boundaries per orientation.
pub const FOLD_POSITIONS: u8 = 10;

#[derive(Debug, Error)]
pub enum BitmapError {
    #[error("image dimensions must be at least 1x1, got {height}x{width}")]
    InvalidSize { height: usize, width: usize },
    #[error("world box is degenerate: {0:?}")]
    DegenerateBox(WorldBox),
    #[error("fold {axis} is illegal: pixel ({row}, {col}) would land outside the grid")]
    InvalidFold { axis: FoldAxis, row: usize, col: usize },
    #[error("fold index {0} is out of range 1..=10")]
    FoldIndex(u8),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serialized as a list of `'0'`/`'1'` row strings.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct BinaryImage {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl TryFrom<Vec<String>> for BinaryImage {
    type Error = BitmapError;

    fn try_from(rows: Vec<String>) -> Result<Self, BitmapError> {
        Self::from_rows(&rows)
    }
}

impl From<BinaryImage> for Vec<String> {
    fn from(img: BinaryImage) -> Self {
        img.to_rows()
    }
}

impl BinaryImage {
    pub fn new(height: usize, width: usize) -> Result<Self, BitmapError> {
        if height == 0 || width == 0 {
            return Err(BitmapError::InvalidSize { height, width });
        }
        Ok(Self { height, width, bits: vec![false; height * width] })
    }

    /// A blank image of the default 28x28 size.
    pub fn blank() -> Self {
        Self { height: IMAGE_SIDE, width: IMAGE_SIDE, bits: vec![false; IMAGE_SIDE * IMAGE_SIDE] }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, BitmapError> {
        if height == 0 || width == 0 {
            return Err(BitmapError::InvalidSize { height, width });
        }
        if bits.len() != height * width {
            return Err(BitmapError::Parse {
                line: 0,
                msg: format!("expected {} bits, got {}", height * width, bits.len()),
            });
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Pixels as `0.0`/`1.0`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Number of pixels that differ between two same-sized images.
    pub fn hamming(&self, other: &BinaryImage) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Parses rows of `'0'`/`'1'` characters.
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, BitmapError> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut img = Self::new(height, width)?;
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(BitmapError::Parse {
                    line: r + 1,
                    msg: format!("row has {} columns, expected {width}", row.len()),
                });
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => img.set(r, c, true),
                    other => {
                        return Err(BitmapError::Parse {
                            line: r + 1,
                            msg: format!("unexpected character {other:?}"),
                        })
                    }
                }
            }
        }
        Ok(img)
    }

    pub fn to_rows(&self) -> Vec<String> {
        self.bits
            .chunks(self.width)
            .map(|row| row.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self, BitmapError> {
        let mut out = Self::new(height, width)?;
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                let sc = c * self.width / width;
                out.set(r, c, self.get(sr, sc));
            }
        }
        Ok(out)
    }

    /// Plain PBM (`P1`). Set pixels are written as `1` (black).
    pub fn to_pbm_plain(&self) -> String {
        let mut s = format!("P1\n{} {}\n", self.width, self.height);
        for row in self.to_rows() {
            let spaced: Vec<String> = row.chars().map(String::from).collect();
            s.push_str(&spaced.join(" "));
            s.push('\n');
        }
        s
    }

    /// Raw PBM (`P4`), rows padded to whole bytes, MSB first.
    pub fn to_pbm_raw(&self) -> Vec<u8> {
        let mut out = format!("P4\n{} {}\n", self.width, self.height).into_bytes();
        let stride = self.width.div_ceil(8);
        for r in 0..self.height {
            let mut row = vec![0u8; stride];
            for c in 0..self.width {
                if self.get(r, c) {
                    row[c / 8] |= 0x80 >> (c % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }
}

impl fmt::Debug for BinaryImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryImage {}x{}", self.height, self.width)?;
        for row in self.to_rows() {
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// A grayscale image with intensities in `[0, 1]`, as read from a netpbm file.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    /// Sets pixels whose intensity is at least `0.5` (or below it, when `invert`).
    pub fn threshold(&self, invert: bool) -> Result<BinaryImage, BitmapError> {
        let bits = self.data.iter().map(|&v| (v >= 0.5) != invert).collect();
        BinaryImage::from_bits(self.height, self.width, bits)
    }
}

/// Reads `P1`, `P2`, `P4` or `P5` netpbm data.
///
/// Bitmaps map set bits to 1.0; graymaps are normalised by their maxval.
pub fn read_netpbm(mut reader: impl BufRead) -> Result<GrayImage, BitmapError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let bad = |msg: &str| BitmapError::Parse { line: 0, msg: msg.to_string() };

    fn token(bytes: &[u8], pos: &mut usize) -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    }
    let num = |bytes: &[u8], pos: &mut usize| -> Result<usize, BitmapError> {
        token(bytes, pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| BitmapError::Parse { line: 0, msg: "expected a number in header".into() })
    };

    let magic = token(&bytes, &mut pos).ok_or_else(|| bad("empty file"))?;
    let width = num(&bytes, &mut pos)?;
    let height = num(&bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(BitmapError::InvalidSize { height, width });
    }
    let n = width * height;
    let data = match magic.as_str() {
        "P1" => {
            let mut data = Vec::with_capacity(n);
            while data.len() < n {
                while pos < bytes.len() && (bytes[pos].is_ascii_whitespace()) {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    token(&bytes, &mut pos);
                    continue;
                }
                match bytes.get(pos) {
                    Some(b'0') => data.push(0.0),
                    Some(b'1') => data.push(1.0),
                    _ => return Err(bad("truncated or invalid P1 pixel data")),
                }
                pos += 1;
            }
            data
        }
        "P2" => {
            let maxval = num(&bytes, &mut pos)?.max(1) as f64;
            (0..n).map(|_| num(&bytes, &mut pos).map(|v| v as f64 / maxval)).collect::<Result<_, _>>()?
        }
        "P4" => {
            pos += 1;
            let stride = width.div_ceil(8);
            if bytes.len() < pos + stride * height {
                return Err(bad("truncated P4 pixel data"));
            }
            let mut data = Vec::with_capacity(n);
            for r in 0..height {
                for c in 0..width {
                    let byte = bytes[pos + r * stride + c / 8];
                    data.push(if byte & (0x80 >> (c % 8)) != 0 { 1.0 } else { 0.0 });
                }
            }
            data
        }
        "P5" => {
            let maxval = num(&bytes, &mut pos)?;
            pos += 1;
            let wide = maxval > 255;
            let need = if wide { 2 * n } else { n };
            if bytes.len() < pos + need {
                return Err(bad("truncated P5 pixel data"));
            }
            let maxval = maxval.max(1) as f64;
            (0..n)
                .map(|i| {
                    let v = if wide {
                        u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as f64
                    } else {
                        bytes[pos + i] as f64
                    };
                    v / maxval
                })
                .collect()
        }
        other => return Err(bad(&format!("unsupported netpbm magic {other:?}"))),
    };
    Ok(GrayImage { height, width, data })
}

/// Axis-aligned world rectangle mapped onto the pixel grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl WorldBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    fn is_degenerate(&self) -> bool {
        !(self.x1 > self.x0 && self.y1 > self.y0) || !self.area().is_finite()
    }

    /// Smallest square that contains `self`, centred on the same point.
    pub fn squared(&self) -> Self {
        let side = self.width().max(self.height());
        let cx = 0.5 * (self.x0 + self.x1);
        let cy = 0.5 * (self.y0 + self.y1);
        Self::new(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0)
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self::new(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)
    }

    /// Bounding box of a set of points, `None` when empty.
    pub fn bounding<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Self::new(first.x, first.y, first.x, first.y);
        for p in it {
            b.x0 = b.x0.min(p.x);
            b.y0 = b.y0.min(p.y);
            b.x1 = b.x1.max(p.x);
            b.y1 = b.y1.max(p.y);
        }
        Some(b)
    }
}

/// Scanline rasterization of the union of `polygons` with 4x4 supersampling.
///
/// Each polygon is filled with the even-odd rule; a pixel is set when at
/// least half of its 16 samples are covered.
pub fn rasterize(
    polygons: &[Vec<Point>],
    height: usize,
    width: usize,
    world: WorldBox,
) -> Result<BinaryImage, BitmapError> {
    let mut img = BinaryImage::new(height, width)?;
    if world.is_degenerate() {
        return Err(BitmapError::DegenerateBox(world));
    }
    if polygons.is_empty() {
        return Ok(img);
    }
    let sw = width * SUPERSAMPLE;
    let sh = height * SUPERSAMPLE;
    let dx = world.width() / sw as f64;
    let dy = world.height() / sh as f64;
    let mut counts = vec![0u8; height * width];
    let mut covered = vec![false; sw];
    let mut crossings: Vec<f64> = Vec::new();

    for si in 0..sh {
        let y = world.y1 - (si as f64 + 0.5) * dy;
        covered.iter_mut().for_each(|c| *c = false);
        for poly in polygons {
            crossings.clear();
            let n = poly.len();
            for i in 0..n {
                let a = poly[i];
                let b = poly[(i + 1) % n];
                if (a.y <= y) != (b.y <= y) {
                    crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                }
            }
            crossings.sort_by(|p, q| p.total_cmp(q));
            for span in crossings.chunks_exact(2) {
                // Sample j sits at x0 + (j + 0.5) * dx; cover xl <= x < xr.
                let lo = ((span[0] - world.x0) / dx - 0.5).ceil().max(0.0);
                let hi = ((span[1] - world.x0) / dx - 0.5).ceil().min(sw as f64);
                if hi <= lo {
                    continue;
                }
                for c in &mut covered[lo as usize..hi as usize] {
                    *c = true;
                }
            }
        }
        let row = si / SUPERSAMPLE;
        for (sj, &c) in covered.iter().enumerate() {
            if c {
                counts[row * width + sj / SUPERSAMPLE] += 1;
            }
        }
    }
    let half = (SUPERSAMPLE * SUPERSAMPLE) as u8 / 2;
    for (bit, &count) in img.bits.iter_mut().zip(&counts) {
        *bit = count >= half;
    }
    Ok(img)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    /// A vertical fold line; columns are reflected.
    Vertical,
    /// A horizontal fold line; rows are reflected.
    Horizontal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FoldDirection {
    /// Pixels below the boundary index are reflected onto the high side.
    LowOntoHigh,
    /// Pixels at or above the boundary index are reflected onto the low side.
    HighOntoLow,
}

/// One of the 40 fold actions: orientation, boundary `k` in `1..=10`, direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FoldAxis {
    pub orientation: Orientation,
    pub k: u8,
    pub direction: FoldDirection,
}

impl fmt::Display for FoldAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = match self.orientation {
            Orientation::Vertical => "V",
            Orientation::Horizontal => "H",
        };
        let d = match self.direction {
            FoldDirection::LowOntoHigh => "low->high",
            FoldDirection::HighOntoLow => "high->low",
        };
        write!(f, "{o}{}({d})", self.k)
    }
}

/// Pixel boundary `round(side * k / 11)` between index `b - 1` and `b`.
pub fn fold_boundary(side: usize, k: u8) -> usize {
    (side as f64 * f64::from(k) / (f64::from(FOLD_POSITIONS) + 1.0)).round() as usize
}

impl FoldAxis {
    pub const COUNT: usize = 4 * FOLD_POSITIONS as usize;

    pub fn new(orientation: Orientation, k: u8, direction: FoldDirection) -> Result<Self, BitmapError> {
        if !(1..=FOLD_POSITIONS).contains(&k) {
            return Err(BitmapError::FoldIndex(k));
        }
        Ok(Self { orientation, k, direction })
    }

    /// Action index: orientation-major, then `k`, then direction.
    pub fn index(&self) -> usize {
        let o = match self.orientation {
            Orientation::Vertical => 0,
            Orientation::Horizontal => 1,
        };
        let d = match self.direction {
            FoldDirection::HighOntoLow => 0,
            FoldDirection::LowOntoHigh => 1,
        };
        o * 2 * FOLD_POSITIONS as usize + (self.k as usize - 1) * 2 + d
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= Self::COUNT {
            return None;
        }
        let per = 2 * FOLD_POSITIONS as usize;
        let orientation = if index / per == 0 { Orientation::Vertical } else { Orientation::Horizontal };
        let rest = index % per;
        let direction = if rest % 2 == 0 { FoldDirection::HighOntoLow } else { FoldDirection::LowOntoHigh };
        Some(Self { orientation, k: (rest / 2 + 1) as u8, direction })
    }

    /// Boundary index within an image of the given size.
    pub fn boundary(&self, height: usize, width: usize) -> usize {
        match self.orientation {
            Orientation::Vertical => fold_boundary(width, self.k),
            Orientation::Horizontal => fold_boundary(height, self.k),
        }
    }
}

/// Every fold action, in action-index order.
pub fn axis_positions() -> Vec<FoldAxis> {
    (0..FoldAxis::COUNT).filter_map(FoldAxis::from_index).collect()
}

/// Folds `img` along `axis`: pixels on the folded side are mirrored about the
/// boundary and OR-ed into the other side, which leaves the folded side empty.
pub fn fold(img: &BinaryImage, axis: FoldAxis) -> Result<BinaryImage, BitmapError> {
    if !(1..=FOLD_POSITIONS).contains(&axis.k) {
        return Err(BitmapError::FoldIndex(axis.k));
    }
    let (h, w) = (img.height, img.width);
    let b = axis.boundary(h, w) as isize;
    let extent = match axis.orientation {
        Orientation::Vertical => w as isize,
        Orientation::Horizontal => h as isize,
    };
    let moves = |i: isize| match axis.direction {
        FoldDirection::HighOntoLow => i >= b,
        FoldDirection::LowOntoHigh => i < b,
    };
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            if !img.get(r, c) {
                continue;
            }
            let i = match axis.orientation {
                Orientation::Vertical => c as isize,
                Orientation::Horizontal => r as isize,
            };
            if !moves(i) {
                continue;
            }
            let j = 2 * b - 1 - i;
            if j < 0 || j >= extent {
                return Err(BitmapError::InvalidFold { axis, row: r, col: c });
            }
            out.set(r, c, false);
            match axis.orientation {
                Orientation::Vertical => out.set(r, j as usize, true),
                Orientation::Horizontal => out.set(j as usize, c, true),
            }
        }
    }
    // A pixel can be cleared after a mirrored pixel landed on it only when it
    // is itself on the moving side, which the landing side never is.
    Ok(out)
}
