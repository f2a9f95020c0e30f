//! Bernoulli entry sampling, the scaled observation operator and sample
//! splitting.
//!
//! A sample of a symmetric matrix is stored with both orientations of every
//! observed off-diagonal pair, grouped by row with sorted column indices, so
//! a row's observations are a contiguous slice.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::ensure_symmetric;

/// Observed entries of an unknown symmetric `n x n` matrix together with
/// the probability `p` each entry was sampled with.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedSample {
    n: usize,
    p: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

impl ObservedSample {
    /// Builds a sample from one triple per observed unordered pair; either
    /// orientation is accepted and the mirror entry is added.
    pub fn from_pairs<I>(n: usize, p: f64, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        check_probability(p)?;
        let mut triples: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in pairs {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) has non-finite value {v}"
                )));
            }
            triples.push((i, j, v));
            if i != j {
                triples.push((j, i, v));
            }
        }
        triples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = triples.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &triples {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = triples.iter().map(|t| t.1).collect();
        let vals = triples.iter().map(|t| t.2).collect();
        Ok(Self {
            n,
            p,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn empty(n: usize, p: f64) -> Result<Self> {
        Self::from_pairs(n, p, std::iter::empty())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Number of stored ordered entries (both orientations counted).
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Observed columns and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|pos| vals[pos])
    }

    /// All stored `(i, j, value)` triples in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// Upper-triangle triples `i <= j`, one per observed unordered pair,
    /// in sorted order.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries().filter(|&(i, j, _)| i <= j)
    }

    pub fn pair_count(&self) -> usize {
        self.upper_entries().count()
    }

    /// Same entries, different recorded sampling probability.
    pub fn with_probability(&self, p: f64) -> Result<Self> {
        check_probability(p)?;
        Ok(Self { p, ..self.clone() })
    }
}

/// Samples each unordered pair `{(i,j),(j,i)}` (and each diagonal entry)
/// independently with probability `p`.
pub fn bernoulli_sample<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    p: f64,
    rng: &mut R,
) -> Result<ObservedSample> {
    check_probability(p)?;
    ensure_symmetric(a)?;
    let n = a.nrows();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i..n {
            if rng.random::<f64>() < p {
                pairs.push((i, j, a[(i, j)]));
            }
        }
    }
    ObservedSample::from_pairs(n, p, pairs)
}

/// `P_Omega(A)`: observed entries scaled by `1/p`, zeros elsewhere.
pub fn p_omega(sample: &ObservedSample) -> DMatrix<f64> {
    let scale = 1.0 / sample.p();
    let mut m = DMatrix::zeros(sample.n(), sample.n());
    for (i, j, v) in sample.entries() {
        m[(i, j)] = v * scale;
    }
    m
}

/// The coordinate projection `P_i = p^{-1} sum_{j in Omega_i} e_j e_j^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowProjection {
    pub row: usize,
    pub observed_cols: Vec<usize>,
    pub scale: f64,
}

pub fn row_projection(sample: &ObservedSample, i: usize) -> Result<RowProjection> {
    if i >= sample.n() {
        return Err(Error::InvalidArgument(format!(
            "row {i} outside a sample of dimension {}",
            sample.n()
        )));
    }
    Ok(RowProjection {
        row: i,
        observed_cols: sample.row(i).0.to_vec(),
        scale: 1.0 / sample.p(),
    })
}

/// Split pieces plus, for every upper-triangle entry of the input (in
/// [`ObservedSample::upper_entries`] order), the pieces it was routed to.
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub pieces: Vec<ObservedSample>,
    pub routes: Vec<Vec<usize>>,
}

/// Per-piece inclusion probability `q = p / (2t)` used by [`split`].
pub fn split_rate(p: f64, t: usize) -> f64 {
    p / (2.0 * t as f64)
}

/// Splits `sample` into `t` samples that are independent Bernoulli(q)
/// subsamples of the underlying matrix, `q = p/(2t)`.
///
/// The union of `t` independent rate-`q` streams includes an entry with
/// probability `p' = 1 - (1-q)^t <= p`, so it is simulated by keeping each
/// observed entry with probability `p'/p`, drawing its multiplicity from
/// `Binomial(t, q)` conditioned on being at least one, and sending it to a
/// uniformly random subset of that many pieces.
pub fn split<R: Rng + ?Sized>(
    sample: &ObservedSample,
    t: usize,
    rng: &mut R,
) -> Result<Vec<ObservedSample>> {
    Ok(split_with_provenance(sample, t, rng)?.pieces)
}

pub fn split_with_provenance<R: Rng + ?Sized>(
    sample: &ObservedSample,
    t: usize,
    rng: &mut R,
) -> Result<SplitOutcome> {
    if t < 1 {
        return Err(Error::InvalidSplit(t));
    }
    let p = sample.p();
    let q = split_rate(p, t);
    let union_rate = 1.0 - (1.0 - q).powi(t as i32);
    let keep = (union_rate / p).min(1.0);
    let multiplicity_cdf = truncated_binomial_cdf(t, q);

    let mut buckets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); t];
    let mut routes = Vec::new();
    for (i, j, v) in sample.upper_entries() {
        let mut route = Vec::new();
        if rng.random::<f64>() < keep {
            let u: f64 = rng.random();
            let m = 1 + multiplicity_cdf
                .iter()
                .position(|&c| u < c)
                .unwrap_or(t - 1);
            route = index::sample(rng, t, m).into_vec();
            route.sort_unstable();
            for &piece in &route {
                buckets[piece].push((i, j, v));
            }
        }
        routes.push(route);
    }
    let pieces = buckets
        .into_iter()
        .map(|b| ObservedSample::from_pairs(sample.n(), q, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitOutcome { pieces, routes })
}

/// CDF over `m = 1..=t` of `Binomial(t, q)` conditioned on `m >= 1`.
fn truncated_binomial_cdf(t: usize, q: f64) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(t);
    let mut binom = 1.0_f64;
    for m in 1..=t {
        binom *= (t - m + 1) as f64 / m as f64;
        pmf.push(binom * q.powi(m as i32) * (1.0 - q).powi((t - m) as i32));
    }
    let total: f64 = pmf.iter().sum();
    let mut acc = 0.0;
    pmf.iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

/// Writes the coordinate text format: header `n p entry_count`, then one
/// `i j value` line per observed upper-triangle entry in sorted order.
pub fn write_sample<W: Write>(sample: &ObservedSample, mut w: W) -> Result<()> {
    writeln!(w, "{} {:.16e} {}", sample.n(), sample.p(), sample.pair_count())?;
    for (i, j, v) in sample.upper_entries() {
        writeln!(w, "{i} {j} {v:.16e}")?;
    }
    Ok(())
}

/// Reads the coordinate text format; entry lines may come in any order and
/// either orientation.
pub fn read_sample<R: BufRead>(r: R) -> Result<ObservedSample> {
    let mut lines = r.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::Parse("empty sample file".into())),
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Parse(format!("bad sample header '{header}'")));
    }
    let n: usize = parse_field(fields[0], "n")?;
    let p: f64 = parse_field(fields[1], "p")?;
    let count: usize = parse_field(fields[2], "entry_count")?;

    let mut pairs = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("bad entry line '{line}'")));
        }
        pairs.push((parse_field(f[0], "i")?, parse_field(f[1], "j")?, parse_field(f[2], "value")?));
    }
    if pairs.len() != count {
        return Err(Error::Parse(format!(
            "header announces {count} entries, found {}",
            pairs.len()
        )));
    }
    ObservedSample::from_pairs(n, p, pairs)
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("cannot parse {what} from '{s}'")))
}
