//! Ground-truth occupancy grids, cell coordinates and field-of-view windows.
//!
//! Cells are indexed row-major with the origin `(0, 0)` at the top-left
//! corner: `index = row * width + col`. Occupancy values live in `[0, 1]`
//! where `0` is free and `1` is untraversable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellPos {
    pub row: usize,
    pub col: usize,
}

impl CellPos {
    pub const fn new(row: usize, col: usize) -> Self {
        CellPos { row, col }
    }

    pub fn manhattan(self, other: CellPos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    pub fn dist2(self, other: CellPos) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        dr * dr + dc * dc
    }
}

impl From<(usize, usize)> for CellPos {
    fn from((row, col): (usize, usize)) -> Self {
        CellPos { row, col }
    }
}

/// Width and height of a grid, with index/position conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub width: usize,
    pub height: usize,
}

impl GridDims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "grid must have at least one cell, got {width}x{height}"
            )));
        }
        Ok(GridDims { width, height })
    }

    pub fn len(self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn contains(self, pos: CellPos) -> bool {
        pos.row < self.height && pos.col < self.width
    }

    pub fn index(self, pos: CellPos) -> usize {
        debug_assert!(self.contains(pos), "{pos:?} outside {self:?}");
        pos.row * self.width + pos.col
    }

    pub fn pos(self, index: usize) -> CellPos {
        debug_assert!(index < self.len());
        CellPos {
            row: index / self.width,
            col: index % self.width,
        }
    }

    /// Position shifted by `(dr, dc)`, or `None` when it leaves the grid.
    pub fn offset(self, pos: CellPos, dr: i64, dc: i64) -> Option<CellPos> {
        let row = pos.row as i64 + dr;
        let col = pos.col as i64 + dc;
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            None
        } else {
            Some(CellPos::new(row as usize, col as usize))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Pgm,
    Csv,
}

impl MapFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") => Ok(MapFormat::Pgm),
            Some("csv") => Ok(MapFormat::Csv),
            _ => Err(Error::Argument(format!(
                "cannot infer map format from {}; expected .pgm or .csv",
                path.display()
            ))),
        }
    }
}

/// Immutable ground-truth occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    dims: GridDims,
    occupancy: Vec<f64>,
}

impl WorldMap {
    pub fn new(width: usize, height: usize, occupancy: Vec<f64>) -> Result<Self> {
        let dims = GridDims::new(width, height)?;
        if occupancy.len() != dims.len() {
            return Err(Error::Validation(format!(
                "occupancy has {} entries, expected {}x{} = {}",
                occupancy.len(),
                width,
                height,
                dims.len()
            )));
        }
        for (i, &v) in occupancy.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let p = dims.pos(i);
                return Err(Error::Validation(format!(
                    "occupancy {v} at row {}, col {} is outside [0, 1]",
                    p.row, p.col
                )));
            }
        }
        Ok(WorldMap { dims, occupancy })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    /// Total cell count `N`.
    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn value(&self, pos: CellPos) -> f64 {
        self.occupancy[self.dims.index(pos)]
    }

    pub fn load(path: impl AsRef<Path>, format: MapFormat) -> Result<Self> {
        let path = path.as_ref();
        let context = path.display().to_string();
        match format {
            MapFormat::Csv => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::from_csv_str(&text, &context)
            }
            MapFormat::Pgm => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                Self::from_pgm_bytes(&bytes, &context)
            }
        }
    }

    /// Loads a map, picking the format from the file extension.
    pub fn load_auto(path: impl AsRef<Path>) -> Result<Self> {
        let format = MapFormat::from_path(path.as_ref())?;
        Self::load(path, format)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: MapFormat) -> Result<()> {
        let path = path.as_ref();
        let bytes = match format {
            MapFormat::Csv => self.to_csv_string().into_bytes(),
            MapFormat::Pgm => self.to_pgm_bytes(),
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv_str(text: &str, context: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut row = Vec::new();
            for (col_no, field) in trimmed.split(',').enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    context: context.to_string(),
                    line: line_no + 1,
                    column: col_no + 1,
                    message: format!("not a number: {:?}", field.trim()),
                })?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Validation(format!(
                        "{context}: occupancy {value} at line {}, column {} is outside [0, 1]",
                        line_no + 1,
                        col_no + 1
                    )));
                }
                row.push(value);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::Parse {
                        context: context.to_string(),
                        line: line_no + 1,
                        column: row.len().min(first.len()) + 1,
                        message: format!(
                            "row has {} entries, expected {}",
                            row.len(),
                            first.len()
                        ),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                context: context.to_string(),
                line: 1,
                column: 1,
                message: "empty map".into(),
            });
        }
        let width = rows[0].len();
        let height = rows.len();
        Self::new(width, height, rows.into_iter().flatten().collect())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * 6);
        for row in self.occupancy.chunks(self.dims.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                // `Display` for f64 prints the shortest string that round-trips.
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses a P2 or P5 grayscale image; white pixels are free space.
    pub fn from_pgm_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut reader = PgmReader {
            bytes,
            pos: 0,
            context,
        };
        let magic = reader.token()?;
        let binary = match magic.as_str() {
            "P2" => false,
            "P5" => true,
            other => {
                return Err(reader.error(format!("unsupported magic {other:?}, expected P2 or P5")))
            }
        };
        let width = reader.number()?;
        let height = reader.number()?;
        let maxval = reader.number()?;
        if maxval == 0 || maxval > 65535 {
            return Err(reader.error(format!("invalid maxval {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(reader.error("image has zero size".into()));
        }
        let n = width * height;
        let mut pixels = Vec::with_capacity(n);
        if binary {
            // exactly one whitespace byte separates the header from the raster
            reader.pos += 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            for i in 0..n {
                let start = reader.pos + i * bpp;
                let end = start + bpp;
                let chunk = bytes.get(start..end).ok_or_else(|| Error::Parse {
                    context: context.to_string(),
                    line: i / width + 1,
                    column: i % width + 1,
                    message: "raster ends early".into(),
                })?;
                let v = if bpp == 1 {
                    chunk[0] as usize
                } else {
                    (chunk[0] as usize) << 8 | chunk[1] as usize
                };
                pixels.push(v);
            }
        } else {
            for i in 0..n {
                let v = reader.number().map_err(|_| Error::Parse {
                    context: context.to_string(),
                    line: i / width + 1,
                    column: i % width + 1,
                    message: "missing or malformed pixel".into(),
                })?;
                pixels.push(v);
            }
        }
        let mut occupancy = Vec::with_capacity(n);
        for (i, v) in pixels.into_iter().enumerate() {
            if v > maxval {
                return Err(Error::Validation(format!(
                    "{context}: pixel {v} at row {}, col {} exceeds maxval {maxval}",
                    i / width,
                    i % width
                )));
            }
            occupancy.push(1.0 - v as f64 / maxval as f64);
        }
        Self::new(width, height, occupancy)
    }

    /// Binary P5 with maxval 255. Quantizes; use CSV for a lossless copy.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend(
            self.occupancy
                .iter()
                .map(|&o| ((1.0 - o) * 255.0).round().clamp(0.0, 255.0) as u8),
        );
        out
    }

    /// In-bounds cells of the `w x h` window centred on `center`.
    pub fn local_window(&self, center: CellPos, w: usize, h: usize) -> Result<LocalMap> {
        LocalMap::extract(self.dims, &self.occupancy, center, w, h)
    }
}

struct PgmReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl PgmReader<'_> {
    fn error(&self, message: String) -> Error {
        let line = self.bytes[..self.pos.min(self.bytes.len())]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        Error::Parse {
            context: self.context.to_string(),
            line,
            column: 1,
            message,
        }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| self.error(format!("expected an integer, found {tok:?}")))
    }
}

/// A robot's field of view: the in-bounds cells of a window, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
    /// Window-relative `(dr, dc)` of each cell, measured from `center`.
    pub offsets: Vec<(i32, i32)>,
    pub center: CellPos,
    pub nominal_w: usize,
    pub nominal_h: usize,
}

impl LocalMap {
    pub(crate) fn extract(
        dims: GridDims,
        values: &[f64],
        center: CellPos,
        w: usize,
        h: usize,
    ) -> Result<Self> {
        if w == 0 || h == 0 || w.is_multiple_of(2) || h.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "window must have odd positive dimensions, got {w}x{h}"
            )));
        }
        if !dims.contains(center) {
            return Err(Error::Argument(format!(
                "window center {center:?} outside {}x{} map",
                dims.width, dims.height
            )));
        }
        let (hw, hh) = ((w / 2) as i64, (h / 2) as i64);
        let mut lm = LocalMap {
            cells: Vec::with_capacity(w * h),
            values: Vec::with_capacity(w * h),
            offsets: Vec::with_capacity(w * h),
            center,
            nominal_w: w,
            nominal_h: h,
        };
        for dr in -hh..=hh {
            for dc in -hw..=hw {
                if let Some(p) = dims.offset(center, dr, dc) {
                    let idx = dims.index(p);
                    lm.cells.push(idx);
                    lm.values.push(values[idx]);
                    lm.offsets.push((dr as i32, dc as i32));
                }
            }
        }
        Ok(lm)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cells.iter().copied().zip(self.values.iter().copied())
    }
}
