//! Regular lattices and velocity fields sampled on them.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic      4 bytes  "GRDF"
//! version    u32      1
//! dims       u32      D in 1..=3
//! channels   u32      velocity components per site
//! extents    D x u64
//! origin     D x f64
//! spacing    D x f64
//! t          f64
//! values     (prod extents) x channels x f64, row-major sites, channels innermost
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_time, VelocityField};
use crate::error::{check_dim, invalid, io_err, Error, Result};

const MAGIC: &[u8; 4] = b"GRDF";
const VERSION: u32 = 1;
/// Fields larger than this are refused by the CSV writer.
pub const CSV_MAX_SITES: usize = 1 << 16;

/// Regular lattice in 1 to 3 dimensions; sites are ordered row-major
/// (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    origin: Vec<f64>,
    spacing: Vec<f64>,
    extents: Vec<usize>,
}

impl Lattice {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, extents: Vec<usize>) -> Result<Self> {
        let d = extents.len();
        if !(1..=3).contains(&d) {
            return Err(invalid("extents", format!("lattice dimension must be 1..=3, got {d}")));
        }
        check_dim(d, origin.len())?;
        check_dim(d, spacing.len())?;
        if extents.contains(&0) {
            return Err(invalid("extents", "every extent must be positive"));
        }
        if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(invalid("spacing", "must be positive and finite"));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(invalid("origin", "must be finite"));
        }
        Ok(Self {
            origin,
            spacing,
            extents,
        })
    }

    /// Unit-spacing lattice anchored at the origin.
    pub fn unit(extents: Vec<usize>) -> Result<Self> {
        let d = extents.len();
        Self::new(vec![0.0; d], vec![1.0; d], extents)
    }

    /// `n` sites per axis spanning `[lo, hi]` inclusive on every axis.
    pub fn cube(dims: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(invalid("extents", "cube lattice needs n >= 2 and hi > lo"));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Self::new(vec![lo; dims], vec![h; dims], vec![n; dims])
    }

    pub fn dims(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stride (in sites) of each axis.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims()];
        for d in (0..self.dims().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.extents[d + 1];
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for d in (0..self.dims()).rev() {
            idx[d] = flat % self.extents[d];
            flat /= self.extents[d];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.extents).fold(0, |acc, (i, e)| acc * e + i)
    }

    /// Physical coordinates of site `flat`.
    pub fn site(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.origin[d] + i as f64 * self.spacing[d])
            .collect()
    }
}

/// Velocity vectors on a [`Lattice`] at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    lattice: Lattice,
    channels: usize,
    values: Vec<f64>,
    time: f64,
}

impl GridField {
    pub fn new(lattice: Lattice, channels: usize, values: Vec<f64>, time: f64) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("channels", "need at least one channel"));
        }
        check_dim(lattice.len() * channels, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("values", "grid values must be finite"));
        }
        if !(time.is_finite() && (0.0..=1.0).contains(&time)) {
            return Err(Error::TimeOutOfRange(time));
        }
        Ok(Self {
            lattice,
            channels,
            values,
            time,
        })
    }

    /// Builds a field by evaluating `f` at every site's coordinates.
    pub fn from_fn(
        lattice: Lattice,
        channels: usize,
        time: f64,
        mut f: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(lattice.len() * channels);
        for i in 0..lattice.len() {
            let v = f(&lattice.site(i));
            check_dim(channels, v.len())?;
            values.extend(v);
        }
        Self::new(lattice, channels, values, time)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn value(&self, site: usize) -> &[f64] {
        &self.values[site * self.channels..(site + 1) * self.channels]
    }

    /// One velocity component over all sites.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            lattice: self.lattice.clone(),
            channels: self.channels,
            values,
            time: self.time,
        }
    }

    /// Sitewise `a * self + b * other` on the same lattice.
    pub fn combine(&self, a: f64, other: &GridField, b: f64) -> Result<Self> {
        if self.lattice != other.lattice || self.channels != other.channels {
            return Err(invalid("other", "grid fields live on different lattices"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        GridField::new(self.lattice.clone(), self.channels, values, self.time)
    }

    /// Root of the summed squared values (plain lattice L2 norm).
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Multilinear interpolation at physical point `x`; coordinates outside
    /// the lattice are clamped to its boundary.
    pub fn interpolate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let dims = self.lattice.dims();
        check_dim(dims, x.len())?;
        let strides = self.lattice.strides();
        let mut base = vec![0usize; dims];
        let mut frac = vec![0.0; dims];
        for d in 0..dims {
            let n = self.lattice.extents[d];
            let pos = ((x[d] - self.lattice.origin[d]) / self.lattice.spacing[d]).clamp(0.0, (n - 1) as f64);
            let i = (pos.floor() as usize).min(n.saturating_sub(2));
            base[d] = i;
            frac[d] = if n > 1 { pos - i as f64 } else { 0.0 };
        }
        let mut out = vec![0.0; self.channels];
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut flat = 0;
            for d in 0..dims {
                let up = (corner >> d) & 1 == 1;
                if up && self.lattice.extents[d] == 1 {
                    w = 0.0;
                    break;
                }
                w *= if up { frac[d] } else { 1.0 - frac[d] };
                flat += (base[d] + usize::from(up)) * strides[d];
            }
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.value(flat)) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.lattice.dims() as u32).to_le_bytes())?;
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        for &e in &self.lattice.extents {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in self.lattice.origin.iter().chain(&self.lattice.spacing) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.time.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |reason: &str| Error::Format {
            what: "grid field",
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
            Ok(u32::from_le_bytes(b))
        };
        if read_u32(&mut r)? != VERSION {
            return Err(fmt("unsupported version"));
        }
        let dims = read_u32(&mut r)? as usize;
        let channels = read_u32(&mut r)? as usize;
        if !(1..=3).contains(&dims) {
            return Err(fmt("dimension out of range"));
        }
        let mut b8 = [0u8; 8];
        let mut extents = Vec::with_capacity(dims);
        for _ in 0..dims {
            r.read_exact(&mut b8).map_err(|_| fmt("truncated header"))?;
            extents.push(u64::from_le_bytes(b8) as usize);
        }
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b8).map_err(|_| fmt("truncated data"))?;
            Ok(f64::from_le_bytes(b8))
        };
        let origin = (0..dims).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let spacing = (0..dims).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let time = read_f64(&mut r)?;
        let lattice = Lattice::new(origin, spacing, extents)?;
        let count = lattice
            .len()
            .checked_mul(channels)
            .ok_or_else(|| fmt("value count overflows"))?;
        let values = (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|_| fmt("read failure"))? != 0 {
            return Err(fmt("trailing bytes after values"));
        }
        GridField::new(lattice, channels, values, time)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_binary(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_binary(std::io::BufReader::new(file))
    }

    /// CSV with columns `i0..`, `x0..`, `v0..`; one row per site.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.lattice.len() > CSV_MAX_SITES {
            return Err(invalid("field", format!("CSV export is limited to {CSV_MAX_SITES} sites")));
        }
        let dims = self.lattice.dims();
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..dims).map(|d| format!("i{d}")).collect();
        header.extend((0..dims).map(|d| format!("x{d}")));
        header.extend((0..self.channels).map(|c| format!("v{c}")));
        out.write_record(&header)?;
        for site in 0..self.lattice.len() {
            let mut row: Vec<String> = self.lattice.multi_index(site).iter().map(|i| i.to_string()).collect();
            row.extend(self.lattice.site(site).iter().map(|x| x.to_string()));
            row.extend(self.value(site).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Evaluates `field` at every lattice site at time `t`.
pub fn sample_on_grid<F: VelocityField + ?Sized>(field: &F, lattice: &Lattice, t: f64) -> Result<GridField> {
    check_time(t)?;
    check_dim(lattice.dims(), field.dim())?;
    if lattice.extents().iter().any(|&e| e < 4) {
        return Err(invalid("lattice", "every extent must be at least 4"));
    }
    let mut values = Vec::with_capacity(lattice.len() * field.dim());
    for i in 0..lattice.len() {
        values.extend(field.velocity(&lattice.site(i), t)?);
    }
    GridField::new(lattice.clone(), field.dim(), values, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::LinearField;

    fn ramp_2d() -> GridField {
        let lattice = Lattice::new(vec![-1.0, 0.5], vec![0.5, 0.25], vec![5, 4]).unwrap();
        GridField::from_fn(lattice, 2, 0.25, |x| vec![2.0 * x[0] - x[1], x[0] * x[1]]).unwrap()
    }

    #[test]
    fn index_round_trip() {
        let l = Lattice::unit(vec![3, 4, 5]).unwrap();
        for i in 0..l.len() {
            assert_eq!(l.flat_index(&l.multi_index(i)), i);
        }
        assert_eq!(l.strides(), vec![20, 5, 1]);
        assert_eq!(l.site(21), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_invalid_fields() {
        let l = Lattice::unit(vec![4]).unwrap();
        assert!(GridField::new(l.clone(), 1, vec![0.0; 3], 0.0).is_err());
        assert!(GridField::new(l.clone(), 1, vec![0.0, 1.0, f64::NAN, 0.0], 0.0).is_err());
        assert!(GridField::new(l, 1, vec![0.0; 4], 1.5).is_err());
        assert!(Lattice::unit(vec![]).is_err());
        assert!(Lattice::unit(vec![2, 2, 2, 2]).is_err());
        assert!(Lattice::new(vec![0.0], vec![0.0], vec![4]).is_err());
    }

    #[test]
    fn sampling_checks_extent_and_time() {
        let f = LinearField::constant(vec![1.0]);
        assert!(sample_on_grid(&f, &Lattice::unit(vec![3]).unwrap(), 0.0).is_err());
        assert!(sample_on_grid(&f, &Lattice::unit(vec![8]).unwrap(), 1.0).is_err());
        let g = sample_on_grid(&f, &Lattice::unit(vec![8]).unwrap(), 0.0).unwrap();
        assert!(g.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interpolation_is_exact_for_multilinear_fields() {
        let g = ramp_2d();
        let v = g.interpolate(&[0.1, 0.8]).unwrap();
        assert!((v[0] - (0.2 - 0.8)).abs() < 1e-12);
        assert!((v[1] - 0.08).abs() < 1e-12);
        let corner = g.interpolate(&[-1.0, 0.5]).unwrap();
        assert_eq!(corner, g.value(0));
        let clamped = g.interpolate(&[-9.0, 0.5]).unwrap();
        assert_eq!(clamped, g.value(0));
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let g = ramp_2d();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 12 + 16 + 32 + 8 + 8 * 40);
        assert_eq!(GridField::read_binary(&buf[..]).unwrap(), g);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(GridField::read_binary(&bad[..]).is_err());
        assert!(GridField::read_binary(&buf[..buf.len() - 1]).is_err());
        let mut long = buf;
        long.push(0);
        assert!(GridField::read_binary(&long[..]).is_err());
    }

    #[test]
    fn csv_lists_every_site() {
        let g = ramp_2d();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "i0,i1,x0,x1,v0,v1");
        assert_eq!(lines.count(), 20);
    }
}
