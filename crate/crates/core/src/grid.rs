//! Box lattices in `δℤ^d`, hat-function interpolation with constant
//! extension outside the box, and grid functions.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{rho, CandidatePair};
use crate::simulate::Coords;

/// Nodes `iδ` with `i ∈ {−(Ñ+p), …, Ñ+p}^d`, ordered row-major with the first
/// index varying slowest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n_half: usize,
    pub pad: usize,
    pub delta: f64,
}

impl Grid {
    pub fn new(dim: usize, n_half: usize, pad: usize, delta: f64) -> Result<Self> {
        if dim == 0 || n_half == 0 || !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid needs d >= 1, n_half >= 1 and delta > 0 (got d = {dim}, n_half = {n_half}, delta = {delta})"
            )));
        }
        let grid = Grid { dim, n_half, pad, delta };
        if grid.len_checked().is_none() {
            return Err(Error::InvalidConfig("grid has too many nodes".into()));
        }
        Ok(grid)
    }

    /// Grid whose reporting box has half-width `r`, so `δ = r/Ñ`.
    pub fn with_radius(dim: usize, n_half: usize, pad: usize, r: f64) -> Result<Self> {
        Self::new(dim, n_half, pad, r / n_half as f64)
    }

    /// Half-width of the reporting region `Ñδ`.
    pub fn radius(&self) -> f64 {
        self.n_half as f64 * self.delta
    }

    /// Half-width of the extended box `(Ñ+p)δ`.
    pub fn half_width(&self) -> f64 {
        (self.n_half + self.pad) as f64 * self.delta
    }

    /// Nodes per axis, `2(Ñ+p)+1`.
    pub fn per_axis(&self) -> usize {
        2 * (self.n_half + self.pad) + 1
    }

    fn len_checked(&self) -> Option<usize> {
        (0..self.dim).try_fold(1usize, |acc, _| acc.checked_mul(self.per_axis()))
    }

    pub fn len(&self) -> usize {
        self.len_checked().expect("validated in new")
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed lattice indices of node `k`.
    pub fn node_index(&self, mut k: usize) -> SmallIdx {
        let n = self.per_axis();
        let offset = (self.n_half + self.pad) as i64;
        let mut idx = SmallIdx::from_elem(0, self.dim);
        for axis in (0..self.dim).rev() {
            idx[axis] = (k % n) as i64 - offset;
            k /= n;
        }
        idx
    }

    pub fn node(&self, k: usize) -> Coords {
        self.node_index(k).iter().map(|&i| i as f64 * self.delta).collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Coords> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    /// Flat position of signed lattice indices.
    pub fn flat_index(&self, idx: &[i64]) -> Option<usize> {
        let n = self.per_axis() as i64;
        let offset = (self.n_half + self.pad) as i64;
        idx.iter().try_fold(0usize, |acc, &i| {
            let j = i + offset;
            (0..n).contains(&j).then(|| acc * n as usize + j as usize)
        })
    }

    /// The inner `(2Ñ+1)^d` nodes, in grid order.
    pub fn truncated_nodes(&self) -> Vec<usize> {
        let n = self.n_half as i64;
        (0..self.len()).filter(|&k| self.node_index(k).iter().all(|i| i.abs() <= n)).collect()
    }

    /// Whether `x` lies in the closed extended box.
    pub fn contains(&self, x: &[f64]) -> bool {
        let h = self.half_width();
        x.iter().all(|v| v.abs() <= h)
    }
}

pub type SmallIdx = smallvec::SmallVec<[i64; 8]>;

/// `ψ_z(x) = ∏ᵢ (1 − |xᵢ − zᵢ|/δ)₊`.
pub fn basis_weight(z: &[f64], x: &[f64], delta: f64) -> f64 {
    z.iter().zip(x).map(|(zi, xi)| (1.0 - ((xi - zi) / delta).abs()).max(0.0)).product()
}

/// Values `(u, ū)` on every node of a grid.
#[derive(Debug)]
pub struct GridFunction {
    pub grid: Grid,
    pub d_prime: usize,
    values: Vec<f64>,
    clamped: AtomicUsize,
}

impl Clone for GridFunction {
    fn clone(&self) -> Self {
        GridFunction {
            grid: self.grid,
            d_prime: self.d_prime,
            values: self.values.clone(),
            clamped: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.d_prime == other.d_prime && self.values == other.values
    }
}

impl GridFunction {
    pub fn zeros(grid: Grid, d_prime: usize) -> Self {
        let vlen = d_prime * (1 + grid.dim);
        GridFunction { grid, d_prime, values: vec![0.0; grid.len() * vlen], clamped: AtomicUsize::new(0) }
    }

    pub fn from_values(grid: Grid, d_prime: usize, values: Vec<f64>) -> Result<Self> {
        let vlen = d_prime * (1 + grid.dim);
        if values.len() != grid.len() * vlen {
            return Err(Error::InvalidConfig(format!(
                "expected {} values for {} nodes, got {}",
                grid.len() * vlen,
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { node: Some(k / vlen) });
        }
        Ok(GridFunction { grid, d_prime, values, clamped: AtomicUsize::new(0) })
    }

    /// Samples a candidate at every node.
    pub fn from_fn<W: CandidatePair + ?Sized>(grid: Grid, d_prime: usize, w: &W) -> Self {
        let mut f = Self::zeros(grid, d_prime);
        let vlen = f.value_len();
        for (k, chunk) in f.values.chunks_mut(vlen).enumerate() {
            w.eval(&grid.node(k), chunk);
        }
        f
    }

    pub fn value_len(&self) -> usize {
        self.d_prime * (1 + self.grid.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_value(&self, k: usize) -> &[f64] {
        let vlen = self.value_len();
        &self.values[k * vlen..(k + 1) * vlen]
    }

    pub fn node_value_mut(&mut self, k: usize) -> &mut [f64] {
        let vlen = self.value_len();
        &mut self.values[k * vlen..(k + 1) * vlen]
    }

    /// Number of interpolation queries that fell outside the extended box.
    pub fn clamp_count(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Multilinear interpolation from the `2^d` corners of the containing
    /// cell; points outside the box are clamped onto it first.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let d = g.dim;
        let n = g.per_axis();
        let h = g.half_width();
        let mut cell: SmallIdx = SmallIdx::from_elem(0, d);
        let mut frac = Coords::from_elem(0.0, d);
        let mut outside = false;
        for i in 0..d {
            let xi = if x[i] < -h || x[i] > h {
                outside = true;
                x[i].clamp(-h, h)
            } else {
                x[i]
            };
            let mut s = (xi + h) / g.delta;
            let nearest = s.round();
            if (s - nearest).abs() < 1e-10 {
                s = nearest;
            }
            let c = (s.floor() as i64).clamp(0, n as i64 - 2);
            cell[i] = c;
            frac[i] = s - c as f64;
        }
        if outside {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }

        out.fill(0.0);
        let vlen = self.value_len();
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for i in 0..d {
                let bit = (corner >> (d - 1 - i)) & 1;
                w *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
                flat = flat * n + (cell[i] as usize + bit);
            }
            if w == 0.0 {
                continue;
            }
            let v = &self.values[flat * vlen..(flat + 1) * vlen];
            for (o, vi) in out.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
    }

    fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.d_prime != other.d_prime {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `max_z ‖φ(z) − ψ(z)‖ / ρ_{r'}(z)` over all nodes.
    pub fn sup_weighted_diff(&self, other: &GridFunction, r_prime: f64) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok((0..self.grid.len())
            .map(|k| dist(self.node_value(k), other.node_value(k)) / rho(&self.grid.node(k), r_prime))
            .fold(0.0, f64::max))
    }

    /// `max_z ‖φ(z) − ψ(z)‖` over all nodes.
    pub fn sup_diff(&self, other: &GridFunction) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok((0..self.grid.len()).map(|k| dist(self.node_value(k), other.node_value(k))).fold(0.0, f64::max))
    }

    /// Unweighted sup errors of the `u` and `ū` parts against a reference,
    /// over the given nodes.
    pub fn sup_errors<W: CandidatePair + ?Sized>(&self, reference: &W, nodes: &[usize]) -> (f64, f64) {
        let dp = self.d_prime;
        let mut exact = vec![0.0; self.value_len()];
        let mut worst = (0.0f64, 0.0f64);
        for &k in nodes {
            reference.eval(&self.grid.node(k), &mut exact);
            let v = self.node_value(k);
            worst.0 = worst.0.max(dist(&v[..dp], &exact[..dp]));
            worst.1 = worst.1.max(dist(&v[dp..], &exact[dp..]));
        }
        worst
    }

    /// CSV with columns `i1..id, x1..xd, u_1.., ubar_11..`, plus optional
    /// extra columns per node.
    pub fn write_csv<W: Write>(&self, writer: W, extra: &[(&str, Vec<f64>)]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let d = self.grid.dim;
        let dp = self.d_prime;
        let mut header: Vec<String> = (1..=d).map(|i| format!("i{i}")).collect();
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=dp).map(|i| format!("u_{i}")));
        for i in 1..=dp {
            header.extend((1..=d).map(|j| format!("ubar_{i}{j}")));
        }
        header.extend(extra.iter().map(|(name, _)| name.to_string()));
        wtr.write_record(&header).map_err(io_err)?;
        for k in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.node_index(k).iter().map(|i| i.to_string()).collect();
            row.extend(self.grid.node(k).iter().map(|x| fmt_f64(*x)));
            row.extend(self.node_value(k).iter().map(|v| fmt_f64(*v)));
            row.extend(extra.iter().map(|(_, col)| fmt_f64(col[k])));
            wtr.write_record(&row).map_err(io_err)?;
        }
        wtr.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads values written by [`GridFunction::write_csv`] for a known grid.
    /// Extra columns are ignored.
    pub fn read_csv<R: Read>(grid: Grid, d_prime: usize, reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let d = grid.dim;
        let vlen = d_prime * (1 + d);
        let mut f = Self::zeros(grid, d_prime);
        let mut seen = vec![false; grid.len()];
        for record in rdr.records() {
            let record = record.map_err(io_err)?;
            if record.len() < 2 * d + vlen {
                return Err(Error::Parse(format!("row has {} columns, need {}", record.len(), 2 * d + vlen)));
            }
            let idx: Vec<i64> = (0..d)
                .map(|i| record[i].trim().parse::<i64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            let k = grid.flat_index(&idx).ok_or(Error::GridMismatch)?;
            for j in 0..vlen {
                let v: f64 = record[2 * d + j]
                    .trim()
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?;
                f.node_value_mut(k)[j] = v;
            }
            seen[k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parse("CSV does not cover every node of the grid".into()));
        }
        Ok(f)
    }
}

impl CandidatePair for GridFunction {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.interpolate(x, out)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn io_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Round-trip formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
