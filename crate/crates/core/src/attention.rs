//! Single-head cross-attention with Gaussian-blurred logits.
//!
//! Blurring acts on logits before the softmax, first along the query index
//! and then along the key index. When keys come from several concatenated
//! priors, the key-axis blur runs inside each prior's segment so tokens of
//! one prior never bleed into another. Concatenating identical priors then
//! reproduces the single-prior output exactly.

use std::io::Read;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::relaxation::{blur_axis, make_kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Observation,
    Prior(usize),
}

/// Non-empty list of equal-length tokens, each tagged with its origin.
///
/// `segments` records where each concatenated source begins; a freshly built
/// sequence is one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    tokens: Vec<Vec<f64>>,
    origins: Vec<Origin>,
    starts: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Vec<f64>>, origin: Origin) -> Result<Self> {
        let n = tokens.len();
        Self::tagged(tokens, vec![origin; n])
    }

    pub fn tagged(tokens: Vec<Vec<f64>>, origins: Vec<Origin>) -> Result<Self> {
        let Some(first) = tokens.first() else {
            return Err(invalid("tokens", "sequence is empty"));
        };
        let d = first.len();
        if d == 0 {
            return Err(invalid("tokens", "token dimension must be at least 1"));
        }
        for t in &tokens {
            check_dim(d, t.len())?;
            if t.iter().any(|v| !v.is_finite()) {
                return Err(invalid("tokens", "token entries must be finite"));
            }
        }
        check_dim(tokens.len(), origins.len())?;
        Ok(Self {
            tokens,
            origins,
            starts: vec![0],
        })
    }

    /// Reads one token per CSV row; no header, numeric columns only.
    pub fn from_csv_reader<R: Read>(reader: R, origin: Origin) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut tokens = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let token = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Format {
                        what: "token csv",
                        reason: format!("row {row}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            tokens.push(token);
        }
        Self::new(tokens, origin)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].len()
    }

    pub fn tokens(&self) -> &[Vec<f64>] {
        &self.tokens
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    /// Index ranges of the concatenated sources.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(self.starts.len());
        for (i, &s) in self.starts.iter().enumerate() {
            let e = self.starts.get(i + 1).copied().unwrap_or(self.len());
            out.push(s..e);
        }
        out
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.tokens[i][j])
    }
}

/// Concatenates per-prior sequences in order, keeping origin tags and
/// remembering where each prior starts.
pub fn concat_priors(priors: &[TokenSequence]) -> Result<TokenSequence> {
    let Some(first) = priors.first() else {
        return Err(invalid("priors", "need at least one prior"));
    };
    let d = first.dim();
    let mut tokens = Vec::new();
    let mut origins = Vec::new();
    let mut starts = Vec::new();
    for p in priors {
        check_dim(d, p.dim())?;
        for s in &p.starts {
            starts.push(tokens.len() + s);
        }
        tokens.extend(p.tokens.iter().cloned());
        origins.extend(p.origins.iter().copied());
    }
    Ok(TokenSequence {
        tokens,
        origins,
        starts,
    })
}

/// Logits `L[i][j] = q_i . k_j / sqrt(d)`, queries by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: DMatrix<f64>,
}

impl LogitMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(invalid("logits", "matrix is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("logits", "entries must be finite"));
        }
        Ok(Self { values })
    }

    pub fn from_tokens(q: &TokenSequence, k: &TokenSequence) -> Result<Self> {
        check_dim(q.dim(), k.dim())?;
        let scale = (q.dim() as f64).sqrt();
        Self::new(q.matrix() * k.matrix().transpose() / scale)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn queries(&self) -> usize {
        self.values.nrows()
    }

    pub fn keys(&self) -> usize {
        self.values.ncols()
    }

    /// Row-wise softmax; each row sums to 1.
    pub fn softmax(&self) -> DMatrix<f64> {
        let mut w = self.values.clone();
        for mut row in w.row_iter_mut() {
            let m = row.max();
            row.apply(|v| *v = (*v - m).exp());
            let s = row.sum();
            row /= s;
        }
        w
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn blur_segmented(l: &LogitMatrix, sigma: f64, key_segments: &[Range<usize>]) -> Result<LogitMatrix> {
    if sigma == 0.0 {
        return Ok(l.clone());
    }
    let kernel = make_kernel(sigma)?;
    let (nq, nk) = (l.queries(), l.keys());
    let shape = [nq, nk];
    let flat = row_major(&l.values);
    let flat = blur_axis(&flat, &shape, 1, 0, &kernel, &[0..nq]);
    let flat = blur_axis(&flat, &shape, 1, 1, &kernel, key_segments);
    LogitMatrix::new(DMatrix::from_row_slice(nq, nk, &flat))
}

/// Separable Gaussian blur of the logits, query axis then key axis, with
/// boundary renormalization. `sigma == 0` returns `l` unchanged.
pub fn blur_logits(l: &LogitMatrix, sigma: f64) -> Result<LogitMatrix> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(invalid("sigma", "must be non-negative"));
    }
    blur_segmented(l, sigma, &[0..l.keys()])
}

fn check_kv(q: &TokenSequence, k: &TokenSequence, v: &TokenSequence) -> Result<()> {
    check_dim(k.len(), v.len())?;
    check_dim(q.dim(), k.dim())
}

fn attend(weights: &DMatrix<f64>, v: &TokenSequence) -> Result<TokenSequence> {
    let out = weights * v.matrix();
    let tokens = out.row_iter().map(|r| r.iter().copied().collect()).collect();
    TokenSequence::new(tokens, Origin::Observation)
}

/// Plain softmax attention.
pub fn cross_attention(q: &TokenSequence, k: &TokenSequence, v: &TokenSequence) -> Result<TokenSequence> {
    check_kv(q, k, v)?;
    attend(&LogitMatrix::from_tokens(q, k)?.softmax(), v)
}

/// Attention weights after blurring the logits by `sigma`; the key-axis
/// blur stays inside each segment of `k`.
pub fn relaxed_weights(q: &TokenSequence, k: &TokenSequence, sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(invalid("sigma", "must be non-negative"));
    }
    let l = LogitMatrix::from_tokens(q, k)?;
    Ok(blur_segmented(&l, sigma, &k.segments())?.softmax())
}

/// Attention with blurred logits; `sigma == 0` is [`cross_attention`].
pub fn relaxed_attention(
    q: &TokenSequence,
    k: &TokenSequence,
    v: &TokenSequence,
    sigma: f64,
) -> Result<TokenSequence> {
    check_kv(q, k, v)?;
    attend(&relaxed_weights(q, k, sigma)?, v)
}

/// A fixed random attention head mapping `(x, t)` and conditioning tokens to
/// a velocity.
///
/// Construction, all entries i.i.d. `N(0, 1/fan_in)` from a ChaCha8 stream
/// seeded by `seed`, drawn in this order:
/// - one query map per query, `model_dim x (dim + 2)`, applied to `[x, t, 1]`;
/// - key and value maps, `model_dim x cond_dim`;
/// - the output map, `dim x (queries * model_dim)`, applied to the stacked
///   attended outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyHead {
    dim: usize,
    cond_dim: usize,
    query_maps: Vec<DMatrix<f64>>,
    key_map: DMatrix<f64>,
    value_map: DMatrix<f64>,
    out_map: DMatrix<f64>,
}

pub const TOY_MODEL_DIM: usize = 16;
pub const TOY_QUERIES: usize = 4;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let scale = 1.0 / (cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

impl ToyHead {
    pub fn new(dim: usize, cond_dim: usize, seed: u64) -> Result<Self> {
        Self::with_sizes(dim, cond_dim, TOY_MODEL_DIM, TOY_QUERIES, seed)
    }

    pub fn with_sizes(dim: usize, cond_dim: usize, model_dim: usize, queries: usize, seed: u64) -> Result<Self> {
        if dim == 0 || cond_dim == 0 || model_dim == 0 || queries == 0 {
            return Err(invalid("toy head", "all sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query_maps = (0..queries).map(|_| gaussian_matrix(&mut rng, model_dim, dim + 2)).collect();
        let key_map = gaussian_matrix(&mut rng, model_dim, cond_dim);
        let value_map = gaussian_matrix(&mut rng, model_dim, cond_dim);
        let out_map = gaussian_matrix(&mut rng, dim, queries * model_dim);
        Ok(Self {
            dim,
            cond_dim,
            query_maps,
            key_map,
            value_map,
            out_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, map: &DMatrix<f64>, cond: &TokenSequence) -> Result<TokenSequence> {
        check_dim(self.cond_dim, cond.dim())?;
        let m = cond.matrix() * map.transpose();
        let mut s = cond.clone();
        s.tokens = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(s)
    }

    fn queries(&self, x: &[f64], t: f64) -> Result<TokenSequence> {
        check_dim(self.dim, x.len())?;
        let mut phi = x.to_vec();
        phi.extend([t, 1.0]);
        let phi = nalgebra::DVector::from_vec(phi);
        let tokens = self.query_maps.iter().map(|a| (a * &phi).iter().copied().collect()).collect();
        TokenSequence::new(tokens, Origin::Observation)
    }

    /// Unblurred logits for state `(x, t)` against `cond`.
    pub fn logits(&self, x: &[f64], t: f64, cond: &TokenSequence) -> Result<LogitMatrix> {
        LogitMatrix::from_tokens(&self.queries(x, t)?, &self.project(&self.key_map, cond)?)
    }

    /// Output velocity for an arbitrary logit matrix over `cond`.
    pub fn velocity_from_logits(&self, logits: &LogitMatrix, cond: &TokenSequence) -> Result<Vec<f64>> {
        check_dim(self.query_maps.len(), logits.queries())?;
        check_dim(cond.len(), logits.keys())?;
        let values = self.project(&self.value_map, cond)?;
        let attended = logits.softmax() * values.matrix();
        let stacked = nalgebra::DVector::from_iterator(
            attended.len(),
            attended.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
        );
        Ok((&self.out_map * stacked).iter().copied().collect())
    }

    /// Logits blurred as in [`relaxed_attention`].
    pub fn blurred_logits(&self, x: &[f64], t: f64, cond: &TokenSequence, sigma: f64) -> Result<LogitMatrix> {
        let l = self.logits(x, t, cond)?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma", "must be non-negative"));
        }
        blur_segmented(&l, sigma, &cond.segments())
    }

    pub fn velocity(&self, x: &[f64], t: f64, cond: &TokenSequence, sigma: f64) -> Result<Vec<f64>> {
        let l = self.blurred_logits(x, t, cond, sigma)?;
        self.velocity_from_logits(&l, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seq(rows: &[&[f64]]) -> TokenSequence {
        TokenSequence::new(rows.iter().map(|r| r.to_vec()).collect(), Origin::Observation).unwrap()
    }

    fn random_seq(rng: &mut ChaCha8Rng, n: usize, d: usize, origin: Origin) -> TokenSequence {
        let tokens = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        TokenSequence::new(tokens, origin).unwrap()
    }

    fn close(a: &TokenSequence, b: &TokenSequence, tol: f64) -> bool {
        a.tokens()
            .iter()
            .flatten()
            .zip(b.tokens().iter().flatten())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    /// Dense 2D Gaussian convolution with renormalization over in-bounds taps.
    fn dense_blur(l: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
        let k = make_kernel(sigma).unwrap();
        let r = k.radius() as isize;
        let (n, m) = (l.nrows() as isize, l.ncols() as isize);
        DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| {
            let (i, j) = (i as isize, j as isize);
            let (mut acc, mut wa, mut wb) = (0.0, 0.0, 0.0);
            for a in -r..=r {
                if i + a >= 0 && i + a < n {
                    wa += k.tap(a);
                }
            }
            for b in -r..=r {
                if j + b >= 0 && j + b < m {
                    wb += k.tap(b);
                }
            }
            for a in -r..=r {
                for b in -r..=r {
                    let (ii, jj) = (i + a, j + b);
                    if ii >= 0 && ii < n && jj >= 0 && jj < m {
                        acc += k.tap(a) * k.tap(b) * l[(ii as usize, jj as usize)];
                    }
                }
            }
            acc / (wa * wb)
        })
    }

    #[test]
    fn single_key_returns_its_value() {
        let q = seq(&[&[0.3, -1.0], &[2.0, 0.5]]);
        let k = seq(&[&[1.0, 1.0]]);
        let v = seq(&[&[7.0, -3.0, 0.25]]);
        let out = cross_attention(&q, &k, &v).unwrap();
        for t in out.tokens() {
            assert_eq!(t, &vec![7.0, -3.0, 0.25]);
        }
    }

    #[test]
    fn equal_logits_give_uniform_mean() {
        let q = seq(&[&[0.0, 0.0]]);
        let k = seq(&[&[1.0, 2.0], &[-1.0, 0.5], &[3.0, 3.0]]);
        let v = seq(&[&[1.0], &[2.0], &[6.0]]);
        let out = cross_attention(&q, &k, &v).unwrap();
        assert!((out.tokens()[0][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_pairs_do_not_change_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_seq(&mut rng, 3, 4, Origin::Observation);
        let k = random_seq(&mut rng, 5, 4, Origin::Prior(0));
        let v = random_seq(&mut rng, 5, 2, Origin::Prior(0));
        let dup = |s: &TokenSequence| {
            let mut t = s.tokens().to_vec();
            t.extend(s.tokens().iter().cloned());
            TokenSequence::new(t, Origin::Prior(0)).unwrap()
        };
        let a = cross_attention(&q, &k, &v).unwrap();
        let b = cross_attention(&q, &dup(&k), &dup(&v)).unwrap();
        assert!(close(&a, &b, 1e-12));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let q = seq(&[&[1.0, 0.0]]);
        let k = seq(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let v = seq(&[&[1.0]]);
        assert!(cross_attention(&q, &k, &v).is_err());
        let k3 = seq(&[&[1.0, 0.0, 0.0]]);
        assert!(cross_attention(&q, &k3, &v).is_err());
        assert!(TokenSequence::new(vec![], Origin::Observation).is_err());
        assert!(TokenSequence::new(vec![vec![1.0], vec![1.0, 2.0]], Origin::Observation).is_err());
    }

    #[test]
    fn zero_sigma_blur_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = LogitMatrix::new(DMatrix::from_fn(5, 7, |_, _| rng.random_range(-3.0..3.0))).unwrap();
        assert_eq!(blur_logits(&l, 0.0).unwrap(), l);
    }

    #[test]
    fn constant_logits_stay_constant() {
        let l = LogitMatrix::new(DMatrix::from_element(6, 9, 1.75)).unwrap();
        let b = blur_logits(&l, 1.4).unwrap();
        assert!(b.values().iter().all(|v| (v - 1.75).abs() < 1e-12));
    }

    #[test]
    fn separable_blur_matches_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-2.0..2.0));
        let l = LogitMatrix::new(raw.clone()).unwrap();
        let b = blur_logits(&l, 1.0).unwrap();
        let d = dense_blur(&raw, 1.0);
        assert!((b.values() - d).amax() < 1e-10);
    }

    #[test]
    fn axis_order_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = DMatrix::from_fn(6, 10, |_, _| rng.random_range(-2.0..2.0));
        let k = make_kernel(1.2).unwrap();
        let flat = row_major(&raw);
        let qk = blur_axis(&blur_axis(&flat, &[6, 10], 1, 0, &k, &[0..6]), &[6, 10], 1, 1, &k, &[0..10]);
        let kq = blur_axis(&blur_axis(&flat, &[6, 10], 1, 1, &k, &[0..10]), &[6, 10], 1, 0, &k, &[0..6]);
        for (a, b) in qk.iter().zip(&kq) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxed_with_zero_sigma_equals_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_seq(&mut rng, 4, 3, Origin::Observation);
        let k = random_seq(&mut rng, 6, 3, Origin::Prior(0));
        let v = random_seq(&mut rng, 6, 2, Origin::Prior(0));
        assert_eq!(relaxed_attention(&q, &k, &v, 0.0).unwrap(), cross_attention(&q, &k, &v).unwrap());
    }

    #[test]
    fn constant_values_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_seq(&mut rng, 4, 3, Origin::Observation);
        let k = random_seq(&mut rng, 6, 3, Origin::Prior(0));
        let v = TokenSequence::new(vec![vec![0.5, -2.0]; 6], Origin::Prior(0)).unwrap();
        for s in [0.0, 0.7, 2.0] {
            let out = relaxed_attention(&q, &k, &v, s).unwrap();
            for t in out.tokens() {
                assert!((t[0] - 0.5).abs() < 1e-12 && (t[1] + 2.0).abs() < 1e-12);
            }
        }
    }

    fn entropy(row: &[f64]) -> f64 {
        -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    #[test]
    fn blurring_a_spike_raises_entropy() {
        let mut raw = DMatrix::from_element(5, 9, 0.0);
        raw[(2, 4)] = 12.0;
        let l = LogitMatrix::new(raw).unwrap();
        let sharp = l.softmax();
        let soft = blur_logits(&l, 1.0).unwrap().softmax();
        let row = |m: &DMatrix<f64>| m.row(2).iter().copied().collect::<Vec<_>>();
        assert!(entropy(&row(&soft)) > entropy(&row(&sharp)));
        for r in soft.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_preserves_order_and_tags() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ps: Vec<_> = [4, 5, 6]
            .iter()
            .enumerate()
            .map(|(i, &n)| random_seq(&mut rng, n, 3, Origin::Prior(i)))
            .collect();
        let c = concat_priors(&ps).unwrap();
        assert_eq!(c.len(), 15);
        assert_eq!(c.segments(), vec![0..4, 4..9, 9..15]);
        assert_eq!(&c.tokens()[4..9], ps[1].tokens());
        assert_eq!(c.origins()[10], Origin::Prior(2));
        assert_eq!(concat_priors(&ps[..1]).unwrap(), ps[0]);
        assert!(concat_priors(&[]).is_err());
        let other = random_seq(&mut rng, 2, 4, Origin::Prior(3));
        assert!(concat_priors(&[ps[0].clone(), other]).is_err());
    }

    #[test]
    fn identical_priors_reach_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random_seq(&mut rng, 5, 4, Origin::Observation);
        let k = random_seq(&mut rng, 7, 4, Origin::Prior(0));
        let v = random_seq(&mut rng, 7, 3, Origin::Prior(0));
        let single = relaxed_attention(&q, &k, &v, 1.0).unwrap();
        for n in [2, 3, 5] {
            let kk = concat_priors(&vec![k.clone(); n]).unwrap();
            let vv = concat_priors(&vec![v.clone(); n]).unwrap();
            let multi = relaxed_attention(&q, &kk, &vv, 1.0).unwrap();
            assert!(close(&single, &multi, 1e-12), "n={n}");
        }
    }

    #[test]
    fn csv_import() {
        let text = "1.0, 2.0\n3.5,-4\n";
        let s = TokenSequence::from_csv_reader(text.as_bytes(), Origin::Prior(1)).unwrap();
        assert_eq!(s.tokens(), &[vec![1.0, 2.0], vec![3.5, -4.0]]);
        assert!(TokenSequence::from_csv_reader("1,x\n".as_bytes(), Origin::Observation).is_err());
        assert!(TokenSequence::from_csv_reader("1,2\n3\n".as_bytes(), Origin::Observation).is_err());
    }

    #[test]
    fn toy_head_basics() {
        let head = ToyHead::new(2, 3, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cond = random_seq(&mut rng, 8, 3, Origin::Prior(0));
        let x = [0.3, -0.4];
        let plain = {
            let l = head.logits(&x, 0.2, &cond).unwrap();
            head.velocity_from_logits(&l, &cond).unwrap()
        };
        assert_eq!(head.velocity(&x, 0.2, &cond, 0.0).unwrap(), plain);
        assert_eq!(ToyHead::new(2, 3, 11).unwrap(), head);
        assert!(head.velocity(&[0.0], 0.2, &cond, 0.0).is_err());

        let constant = TokenSequence::new(vec![vec![0.2, -1.0, 0.5]; 8], Origin::Prior(0)).unwrap();
        let a = head.velocity(&x, 0.2, &constant, 0.0).unwrap();
        let b = head.velocity(&x, 0.2, &constant, 1.5).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn toy_head_change_is_bounded_by_logit_sensitivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for seed in 0..5 {
            let head = ToyHead::new(2, 3, seed).unwrap();
            let cond = random_seq(&mut rng, 10, 3, Origin::Prior(0));
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let l = head.logits(&x, 0.4, &cond).unwrap();
            let lb = head.blurred_logits(&x, 0.4, &cond, 1.0).unwrap();
            let dl = lb.values() - l.values();
            let dn = dl.norm();
            let dir = &dl / dn;
            // largest directional derivative along the segment from L to the blurred L
            let h = 1e-6;
            let mut c: f64 = 0.0;
            for i in 0..=64 {
                let s = i as f64 / 64.0;
                let at = |e: f64| {
                    let m = LogitMatrix::new(l.values() + &dl * s + &dir * e).unwrap();
                    head.velocity_from_logits(&m, &cond).unwrap()
                };
                let (p, m) = (at(h), at(-h));
                let d: f64 = p.iter().zip(&m).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum::<f64>().sqrt();
                c = c.max(d);
            }
            let v0 = head.velocity_from_logits(&l, &cond).unwrap();
            let v1 = head.velocity_from_logits(&lb, &cond).unwrap();
            let change: f64 = v0.iter().zip(&v1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(change <= c * dn * (1.0 + 1e-6), "seed={seed} change={change} bound={}", c * dn);
        }
    }
}
