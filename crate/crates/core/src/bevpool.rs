//! Sum pooling of wedge points into a bird's-eye-view grid.
//!
//! Cells are half-open: cell `(ix, iy)` covers
//! `[x_min + ix * res_x, x_min + (ix + 1) * res_x) x [y_min + iy * res_y, ...)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::lifting::WedgeCloud;
use crate::tensor::{write_tensor, Provenance, TensorMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRaw")]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub res_x: f64,
    pub res_y: f64,
    pub channels: usize,
    #[serde(skip)]
    nx: usize,
    #[serde(skip)]
    ny: usize,
}

#[derive(Deserialize)]
struct GridSpecRaw {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    res_x: f64,
    res_y: f64,
    channels: usize,
}

impl TryFrom<GridSpecRaw> for GridSpec {
    type Error = Error;
    fn try_from(r: GridSpecRaw) -> Result<Self> {
        GridSpec::new(r.x_min, r.x_max, r.y_min, r.y_max, r.res_x, r.res_y, r.channels)
    }
}

fn cell_count(lo: f64, hi: f64, res: f64, axis: &str) -> Result<usize> {
    if !(hi > lo && res > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "{axis} extent [{lo}, {hi}] with resolution {res}"
        )));
    }
    let n = (hi - lo) / res;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{axis} extent {} is not a whole number of {res} m cells",
            hi - lo
        )));
    }
    Ok(rounded as usize)
}

impl GridSpec {
    pub fn new(
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        res_x: f64,
        res_y: f64,
        channels: usize,
    ) -> Result<Self> {
        let nx = cell_count(x_min, x_max, res_x, "x")?;
        let ny = cell_count(y_min, y_max, res_y, "y")?;
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            res_x,
            res_y,
            channels,
            nx,
            ny,
        })
    }

    /// 0..102.4 m forward, +-51.2 m lateral, 128 x 128 cells.
    pub fn default_with_channels(channels: usize) -> Self {
        Self::new(0.0, 102.4, -51.2, 51.2, 0.8, 0.8, channels).expect("valid")
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min + (ix as f64 + 0.5) * self.res_x,
            self.y_min + (iy as f64 + 0.5) * self.res_y,
        )
    }
}

/// Cell `(ix, iy)` containing `(x, y)`, or `None` when outside the extent.
#[inline]
pub fn grid_cell_of(x: f64, y: f64, spec: &GridSpec) -> Option<(usize, usize)> {
    if !(x >= spec.x_min && x < spec.x_max && y >= spec.y_min && y < spec.y_max) {
        return None;
    }
    let ix = ((x - spec.x_min) / spec.res_x).floor() as usize;
    let iy = ((y - spec.y_min) / spec.res_y).floor() as usize;
    // rounding can push a point just below x_max into cell nx
    if ix >= spec.nx || iy >= spec.ny {
        return None;
    }
    Some((ix, iy))
}

/// Reduction schedule for [`pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Single pass in cloud order.
    #[default]
    FixedOrder,
    /// Points bucketed by destination cell, cells reduced in parallel. Each
    /// cell still sums its points in cloud order.
    Partitioned,
}

/// Pooled features, row-major `[iy][ix][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    data: Vec<f64>,
    hit_count: Vec<u32>,
    /// Points that fell outside the extent.
    pub dropped: usize,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            data: vec![0.0; spec.cells() * spec.channels],
            hit_count: vec![0; spec.cells()],
            spec,
            dropped: 0,
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.spec.nx() + ix
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &[f64] {
        let c = self.spec.channels;
        let i = self.index(ix, iy);
        &self.data[i * c..(i + 1) * c]
    }

    pub fn hits(&self, ix: usize, iy: usize) -> u32 {
        self.hit_count[self.index(ix, iy)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn hit_counts(&self) -> &[u32] {
        &self.hit_count
    }

    pub fn channel_sums(&self) -> Vec<f64> {
        let c = self.spec.channels;
        let mut acc = vec![0.0; c];
        for cell in self.data.chunks_exact(c.max(1)) {
            for (a, v) in acc.iter_mut().zip(cell) {
                *a += v;
            }
        }
        acc
    }

    /// Cells with at least one point.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nx = self.spec.nx();
        self.hit_count
            .iter()
            .enumerate()
            .filter(|(_, h)| **h > 0)
            .map(move |(i, _)| (i % nx, i / nx))
    }

    /// Elementwise sum of two grids over the same spec.
    pub fn add(&self, other: &BevGrid) -> Result<BevGrid> {
        if self.spec != other.spec {
            return Err(Error::ShapeMismatch("grid specs differ".into()));
        }
        Ok(BevGrid {
            spec: self.spec,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            hit_count: self
                .hit_count
                .iter()
                .zip(&other.hit_count)
                .map(|(a, b)| a + b)
                .collect(),
            dropped: self.dropped + other.dropped,
        })
    }

    /// Writes `ix,iy,x,y,hits,c0..` for every cell.
    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&Provenance>) -> Result<()> {
        if let Some(p) = provenance {
            p.write_csv_comment(&mut out)?;
        }
        write!(out, "ix,iy,x,y,hits")?;
        for c in 0..self.spec.channels {
            write!(out, ",c{c}")?;
        }
        writeln!(out)?;
        for iy in 0..self.spec.ny() {
            for ix in 0..self.spec.nx() {
                let (x, y) = self.spec.cell_center(ix, iy);
                write!(out, "{ix},{iy},{x},{y},{}", self.hits(ix, iy))?;
                for v in self.cell(ix, iy) {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Binary tensor of shape `[ny, nx, channels]`.
    pub fn write_bin<W: Write>(&self, out: W, provenance: Option<&Provenance>) -> Result<()> {
        let meta = TensorMeta {
            provenance: provenance.cloned(),
            kind: "bev_grid".into(),
            columns: (0..self.spec.channels).map(|c| format!("c{c}")).collect(),
        };
        write_tensor(
            out,
            &[self.spec.ny(), self.spec.nx(), self.spec.channels],
            &meta,
            self.data.iter().map(|&x| x as f32),
        )
    }
}

/// Sums `weight * feature` of every in-extent point into its XY cell.
pub fn pool(cloud: &WedgeCloud, spec: &GridSpec, mode: PoolMode) -> Result<BevGrid> {
    if cloud.channels() != spec.channels {
        return Err(Error::ShapeMismatch(format!(
            "cloud has {} channels, grid has {}",
            cloud.channels(),
            spec.channels
        )));
    }
    match mode {
        PoolMode::FixedOrder => Ok(pool_fixed_order(cloud, spec)),
        PoolMode::Partitioned => Ok(pool_partitioned(cloud, spec)),
    }
}

fn pool_fixed_order(cloud: &WedgeCloud, spec: &GridSpec) -> BevGrid {
    let mut grid = BevGrid::zeros(*spec);
    let c = spec.channels;
    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        let Some((ix, iy)) = grid_cell_of(p.x, p.y, spec) else {
            grid.dropped += 1;
            continue;
        };
        let cell = grid.index(ix, iy);
        grid.hit_count[cell] += 1;
        let w = cloud.weights()[i];
        for (acc, f) in grid.data[cell * c..(cell + 1) * c]
            .iter_mut()
            .zip(cloud.feature(i))
        {
            *acc += w * f;
        }
    }
    grid
}

fn pool_partitioned(cloud: &WedgeCloud, spec: &GridSpec) -> BevGrid {
    let nx = spec.nx();
    let n_cells = spec.cells();
    let dest: Vec<Option<usize>> = cloud
        .positions()
        .par_iter()
        .map(|p| grid_cell_of(p.x, p.y, spec).map(|(ix, iy)| iy * nx + ix))
        .collect();

    // counting sort keeps cloud order within each cell
    let mut starts = vec![0usize; n_cells + 1];
    let mut dropped = 0;
    for d in &dest {
        match d {
            Some(cell) => starts[cell + 1] += 1,
            None => dropped += 1,
        }
    }
    for i in 0..n_cells {
        starts[i + 1] += starts[i];
    }
    let mut cursor = starts.clone();
    let mut order = vec![0usize; starts[n_cells]];
    for (i, d) in dest.iter().enumerate() {
        if let Some(cell) = d {
            order[cursor[*cell]] = i;
            cursor[*cell] += 1;
        }
    }

    let mut grid = BevGrid::zeros(*spec);
    grid.dropped = dropped;
    let c = spec.channels;
    if c > 0 {
        grid.data
            .par_chunks_mut(c)
            .enumerate()
            .for_each(|(cell, acc)| {
                for &i in &order[starts[cell]..starts[cell + 1]] {
                    let w = cloud.weights()[i];
                    for (a, f) in acc.iter_mut().zip(cloud.feature(i)) {
                        *a += w * f;
                    }
                }
            });
    }
    for cell in 0..n_cells {
        grid.hit_count[cell] = (starts[cell + 1] - starts[cell]) as u32;
    }
    grid
}
