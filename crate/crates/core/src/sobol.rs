//! Sobol' points in the unit cube, plain or randomized.
//!
//! Points are generated in natural index order: coordinate `j` of point `i`
//! is the XOR of the direction integers selected by the set bits of `i`.
//! Randomized modes apply a random lower-triangular linear scramble to the
//! generator matrix and XOR a random digital shift into every output. Each
//! call to [`SobolSampler::draw_batch`] in a randomized mode derives a new
//! scramble from a counter-based seed stream and restarts at index 0, so
//! batches drawn at different iterations are independent.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output bits per coordinate.
pub const BITS: u32 = 32;

const SCALE: f64 = 1.0 / 4_294_967_296.0;

static BUNDLED_TABLE: &str = include_str!("../data/joe-kuo-6.1024.txt");

/// One row of a Joe–Kuo table: primitive polynomial of `degree` with inner
/// coefficient word `coeffs`, plus the initial direction integers `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolynomialEntry {
    pub dimension: usize,
    pub degree: u32,
    pub coeffs: u32,
    pub m: Vec<u32>,
}

/// Direction numbers for dimensions `1..=dimension()`. Dimension 1 is the
/// van der Corput construction and carries no table row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionNumbers {
    entries: Vec<PolynomialEntry>,
}

impl DirectionNumbers {
    /// Table shipped with the crate, covering 1024 dimensions.
    pub fn bundled() -> Self {
        load_direction_numbers(BUNDLED_TABLE.as_bytes(), 1024).expect("bundled table is valid")
    }

    pub fn dimension(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn entry(&self, dimension: usize) -> Option<&PolynomialEntry> {
        dimension.checked_sub(2).and_then(|i| self.entries.get(i))
    }

    /// Direction integers `v_1..v_32` (MSB-aligned) for each of the first
    /// `dim` dimensions.
    pub fn generator(&self, dim: usize) -> Result<Vec<[u32; BITS as usize]>> {
        if dim == 0 || dim > self.dimension() {
            return Err(Error::DimensionTooLarge {
                requested: dim,
                available: self.dimension(),
            });
        }
        let mut out = Vec::with_capacity(dim);
        let mut first = [0u32; BITS as usize];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS as usize - 1 - k);
        }
        out.push(first);
        for entry in &self.entries[..dim - 1] {
            out.push(entry_generator(entry));
        }
        Ok(out)
    }
}

fn entry_generator(entry: &PolynomialEntry) -> [u32; BITS as usize] {
    let s = entry.degree as usize;
    let mut v = [0u32; BITS as usize];
    for k in 0..s.min(BITS as usize) {
        v[k] = entry.m[k] << (BITS as usize - 1 - k);
    }
    for k in s..BITS as usize {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (entry.coeffs >> (s - 1 - i)) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}

/// Parses a Joe–Kuo format table (header line, then rows `d s a m_1 .. m_s`)
/// and keeps the rows needed for `dimension` coordinates.
pub fn load_direction_numbers<R: BufRead>(source: R, dimension: usize) -> Result<DirectionNumbers> {
    let mut entries = Vec::new();
    if dimension <= 1 {
        return Ok(DirectionNumbers { entries });
    }
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: lineno, msg };
        let fields = line
            .split_whitespace()
            .map(|t| t.parse::<u64>().map_err(|e| bad(format!("field {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if fields.len() < 4 {
            return Err(bad(format!("expected at least 4 fields, found {}", fields.len())));
        }
        let (d, s, a) = (fields[0] as usize, fields[1] as usize, fields[2]);
        let expected_dim = entries.len() + 2;
        if d != expected_dim {
            return Err(bad(format!("expected dimension {expected_dim}, found {d}")));
        }
        if s == 0 || s > BITS as usize {
            return Err(bad(format!("degree {s} outside 1..=32")));
        }
        if fields.len() != 3 + s {
            return Err(bad(format!("degree {s} needs {s} direction integers, found {}", fields.len() - 3)));
        }
        if a >> (s - 1) != 0 {
            return Err(bad(format!("coefficient word {a} too wide for degree {s}")));
        }
        let m = fields[3..].iter().map(|&x| x as u32).collect::<Vec<_>>();
        for (i, (&mi, &raw)) in m.iter().zip(&fields[3..]).enumerate() {
            if raw % 2 == 0 || raw >= 1u64 << (i + 1) {
                return Err(bad(format!("m_{} = {raw} must be odd and below 2^{}", i + 1, i + 1)));
            }
            debug_assert_eq!(mi as u64, raw);
        }
        entries.push(PolynomialEntry {
            dimension: d,
            degree: s as u32,
            coeffs: a as u32,
            m,
        });
        if entries.len() + 1 >= dimension {
            break;
        }
    }
    if entries.len() + 1 < dimension {
        return Err(Error::DimensionTooLarge {
            requested: dimension,
            available: entries.len() + 1,
        });
    }
    Ok(DirectionNumbers { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Randomization {
    None,
    DigitalShift,
    /// Random lower-triangular unit-diagonal matrix scramble followed by a
    /// digital shift.
    LinearScrambleShift,
}

/// `n` points in `[0,1)^dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub iteration: u64,
}

impl SampleBatch {
    pub fn new(points: Vec<f64>, dim: usize, iteration: u64) -> Self {
        assert!(dim > 0 && points.len() % dim == 0);
        let n = points.len() / dim;
        SampleBatch {
            points,
            n,
            dim,
            iteration,
        }
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// Anything that hands out sample batches, one per optimizer iteration.
pub trait BatchSource {
    fn dimension(&self) -> usize;
    fn next_batch(&mut self, n: usize) -> Result<SampleBatch>;
}

#[derive(Debug, Clone)]
pub struct SobolSampler {
    base: Vec<[u32; BITS as usize]>,
    active: Vec<[u32; BITS as usize]>,
    shift: Vec<u32>,
    mode: Randomization,
    seed: u64,
    epoch: u64,
    index: u64,
    batches: u64,
}

impl SobolSampler {
    pub fn new(
        directions: &DirectionNumbers,
        dim: usize,
        mode: Randomization,
        seed: u64,
    ) -> Result<Self> {
        let base = directions.generator(dim)?;
        let mut sampler = SobolSampler {
            active: base.clone(),
            shift: vec![0; dim],
            base,
            mode,
            seed,
            epoch: 0,
            index: 0,
            batches: 0,
        };
        sampler.randomize();
        Ok(sampler)
    }

    /// Sampler over the bundled direction-number table.
    pub fn bundled(dim: usize, mode: Randomization, seed: u64) -> Result<Self> {
        Self::new(&DirectionNumbers::bundled(), dim, mode, seed)
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn mode(&self) -> Randomization {
        self.mode
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    fn randomize(&mut self) {
        if self.mode == Randomization::None {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        for j in 0..self.base.len() {
            if self.mode == Randomization::LinearScrambleShift {
                let mut rows = [0u32; BITS as usize];
                for (r, row) in rows.iter_mut().enumerate() {
                    // digit r lives in bit 31 - r; the row may mix in any
                    // more significant digit.
                    let own = 1u32 << (BITS as usize - 1 - r);
                    let higher = !(own | (own - 1));
                    *row = (rng.gen::<u32>() & higher) | own;
                }
                for (out, &v) in self.active[j].iter_mut().zip(&self.base[j]) {
                    let mut x = 0u32;
                    for (r, row) in rows.iter().enumerate() {
                        x |= ((row & v).count_ones() & 1) << (BITS as usize - 1 - r);
                    }
                    *out = x;
                }
            }
            self.shift[j] = rng.gen();
        }
    }

    /// Writes the next point into `out` and advances the index.
    pub fn next_point_into(&mut self, out: &mut [f64]) -> Result<()> {
        if out.len() != self.dim() {
            return Err(Error::mismatch("Sobol' point", self.dim(), out.len()));
        }
        if self.index >> BITS != 0 {
            return Err(Error::IndexOverflow(self.index));
        }
        let i = self.index as u32;
        for ((x, gen), &shift) in out.iter_mut().zip(&self.active).zip(&self.shift) {
            let mut bits = i;
            let mut acc = shift;
            while bits != 0 {
                acc ^= gen[bits.trailing_zeros() as usize];
                bits &= bits - 1;
            }
            *x = acc as f64 * SCALE;
        }
        self.index += 1;
        Ok(())
    }

    pub fn next_point(&mut self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.next_point_into(&mut out)?;
        Ok(out)
    }

    /// Draws `n` consecutive points. Randomized modes switch to a fresh
    /// randomization first and restart at index 0; the unrandomized sequence
    /// continues from the current index.
    pub fn draw_batch(&mut self, n: usize) -> Result<SampleBatch> {
        assert!(n >= 1, "batch size must be positive");
        if self.mode != Randomization::None {
            self.epoch += 1;
            self.randomize();
            self.index = 0;
        }
        let end = self.index + n as u64;
        if end > 1u64 << BITS {
            return Err(Error::IndexOverflow(end - 1));
        }
        let dim = self.dim();
        let mut points = vec![0.0; n * dim];
        for row in points.chunks_exact_mut(dim) {
            self.next_point_into(row)?;
        }
        let batch = SampleBatch::new(points, dim, self.batches);
        self.batches += 1;
        Ok(batch)
    }
}

impl BatchSource for SobolSampler {
    fn dimension(&self) -> usize {
        self.dim()
    }

    fn next_batch(&mut self, n: usize) -> Result<SampleBatch> {
        self.draw_batch(n)
    }
}

/// IID uniform points from a seeded ChaCha stream.
#[derive(Debug, Clone)]
pub struct McSampler {
    rng: ChaCha8Rng,
    dim: usize,
    batches: u64,
}

impl McSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        McSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
            batches: 0,
        }
    }
}

impl BatchSource for McSampler {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn next_batch(&mut self, n: usize) -> Result<SampleBatch> {
        assert!(n >= 1, "batch size must be positive");
        let points = (0..n * self.dim).map(|_| self.rng.gen::<f64>()).collect();
        let batch = SampleBatch::new(points, self.dim, self.batches);
        self.batches += 1;
        Ok(batch)
    }
}

/// A single batch of `n` IID uniform points in `s` dimensions.
pub fn mc_batch(seed: u64, n: usize, s: usize) -> SampleBatch {
    McSampler::new(s, seed)
        .next_batch(n)
        .expect("MC sampling cannot fail")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Mc,
    Rqmc,
}

impl SamplerKind {
    pub fn build(self, dim: usize, seed: u64) -> Result<Box<dyn BatchSource + Send>> {
        Ok(match self {
            SamplerKind::Mc => Box::new(McSampler::new(dim, seed)),
            SamplerKind::Rqmc => Box::new(SobolSampler::bundled(
                dim,
                Randomization::LinearScrambleShift,
                seed,
            )?),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Mc => "mc",
            SamplerKind::Rqmc => "rqmc",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(SamplerKind::Mc),
            "rqmc" => Ok(SamplerKind::Rqmc),
            other => Err(Error::Config(format!("unknown sampler {other:?} (mc | rqmc)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::oracles::radical_inverse;

    #[test]
    fn first_table_row() {
        let dn = load_direction_numbers("d s a m_i\n2 1 0 1\n".as_bytes(), 2).unwrap();
        assert_eq!(
            dn.entry(2).unwrap(),
            &PolynomialEntry {
                dimension: 2,
                degree: 1,
                coeffs: 0,
                m: vec![1]
            }
        );
    }

    #[test]
    fn empty_table_covers_dimension_one() {
        let dn = load_direction_numbers("".as_bytes(), 1).unwrap();
        assert_eq!(dn.dimension(), 1);
        assert_eq!(dn.generator(1).unwrap().len(), 1);
    }

    #[test]
    fn loader_rejects_bad_rows() {
        let even = load_direction_numbers("hdr\n2 1 0 2\n".as_bytes(), 2);
        assert!(matches!(even, Err(Error::Parse { line: 2, .. })));
        let too_big = load_direction_numbers("hdr\n2 1 0 1\n3 2 1 1 5\n".as_bytes(), 3);
        assert!(matches!(too_big, Err(Error::Parse { line: 3, .. })));
        let short = load_direction_numbers("hdr\n2 2 0 1\n".as_bytes(), 2);
        assert!(matches!(short, Err(Error::Parse { .. })));
        let junk = load_direction_numbers("hdr\n2 1 x 1\n".as_bytes(), 2);
        assert!(matches!(junk, Err(Error::Parse { .. })));
        let missing = load_direction_numbers("hdr\n2 1 0 1\n".as_bytes(), 5);
        assert!(matches!(
            missing,
            Err(Error::DimensionTooLarge {
                requested: 5,
                available: 2
            })
        ));
    }

    #[test]
    fn bundled_table_size() {
        assert_eq!(DirectionNumbers::bundled().dimension(), 1024);
        assert!(SobolSampler::bundled(1025, Randomization::None, 0).is_err());
    }

    #[test]
    fn van_der_corput_start() {
        let mut s = SobolSampler::bundled(1, Randomization::None, 0).unwrap();
        let got: Vec<f64> = (0..4).map(|_| s.next_point().unwrap()[0]).collect();
        assert_eq!(got, vec![0.0, 0.5, 0.25, 0.75]);
    }

    #[test]
    fn dimension_one_is_radical_inverse() {
        let mut s = SobolSampler::bundled(1, Randomization::None, 0).unwrap();
        for i in 0..1u64 << 16 {
            assert_eq!(s.next_point().unwrap()[0], radical_inverse(i), "index {i}");
        }
    }

    #[test]
    fn matches_reference_points() {
        // scipy.stats.qmc.Sobol(d=3, scramble=False) emits Gray-code order;
        // these are its points rearranged into natural index order.
        let expected = [
            [0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5],
            [0.25, 0.75, 0.75],
            [0.75, 0.25, 0.25],
            [0.125, 0.625, 0.375],
            [0.625, 0.125, 0.875],
            [0.375, 0.375, 0.625],
            [0.875, 0.875, 0.125],
        ];
        let mut s = SobolSampler::bundled(3, Randomization::None, 0).unwrap();
        for row in expected {
            assert_eq!(s.next_point().unwrap(), row.to_vec());
        }
    }

    #[test]
    fn zero_index_is_origin() {
        let mut s = SobolSampler::bundled(17, Randomization::None, 0).unwrap();
        assert!(s.next_point().unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dyadic_equidistribution() {
        for dim in [1usize, 2, 5] {
            let mut s = SobolSampler::bundled(dim, Randomization::None, 0).unwrap();
            let m = 10;
            let batch = s.draw_batch(1 << m).unwrap();
            for j in 0..dim {
                let mut hits = vec![0u32; 1 << m];
                for p in batch.rows() {
                    hits[(p[j] * (1 << m) as f64) as usize] += 1;
                }
                assert!(hits.iter().all(|&h| h == 1), "dimension {}", j + 1);
            }
        }
    }

    #[test]
    fn scrambled_clones_agree() {
        for mode in [Randomization::DigitalShift, Randomization::LinearScrambleShift] {
            let mut a = SobolSampler::bundled(4, mode, 99).unwrap();
            let mut b = a.clone();
            assert_eq!(a.next_point().unwrap(), b.next_point().unwrap());
            assert_eq!(a.draw_batch(16).unwrap(), b.draw_batch(16).unwrap());
            let mut c = SobolSampler::bundled(4, mode, 99).unwrap();
            let mut d = SobolSampler::bundled(4, mode, 99).unwrap();
            assert_eq!(c.draw_batch(8).unwrap(), d.draw_batch(8).unwrap());
        }
    }

    #[test]
    fn first_unscrambled_batch() {
        let mut s = SobolSampler::bundled(2, Randomization::None, 0).unwrap();
        let b = s.draw_batch(1).unwrap();
        assert_eq!(b.points, vec![0.0, 0.0]);
        let b = s.draw_batch(8).unwrap();
        assert_eq!(b.n, 8);
        assert!(b.points.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mut rows: Vec<Vec<u64>> = b
            .rows()
            .map(|r| r.iter().map(|x| x.to_bits()).collect())
            .collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 8);
    }

    #[test]
    fn fresh_randomization_per_batch() {
        let mut s = SobolSampler::bundled(3, Randomization::LinearScrambleShift, 5).unwrap();
        let a = s.draw_batch(16).unwrap();
        let b = s.draw_batch(16).unwrap();
        assert_ne!(a.points, b.points);
        assert_eq!(b.iteration, a.iteration + 1);
        // each randomized batch is still a full net in every coordinate
        for batch in [&a, &b] {
            for j in 0..3 {
                let mut hits = [0u8; 16];
                for p in batch.rows() {
                    hits[(p[j] * 16.0) as usize] += 1;
                }
                assert!(hits.iter().all(|&h| h == 1));
            }
        }
    }

    #[test]
    fn scrambled_mean_is_half() {
        let mut s = SobolSampler::bundled(2, Randomization::LinearScrambleShift, 11).unwrap();
        let b = s.draw_batch(512).unwrap();
        let mean = b.rows().map(|p| p[0]).sum::<f64>() / 512.0;
        assert!((mean - 0.5).abs() <= 3.0 / (12.0f64 * 512.0).sqrt());
    }

    #[test]
    fn first_point_marginally_uniform() {
        // Kolmogorov-Smirnov over R = 200 randomizations; the 0.001-level
        // critical value is 1.9495 / sqrt(R).
        let reps = 200;
        let dim = 4;
        for mode in [Randomization::DigitalShift, Randomization::LinearScrambleShift] {
            let mut s = SobolSampler::bundled(dim, mode, 2024).unwrap();
            let firsts: Vec<Vec<f64>> = (0..reps).map(|_| s.draw_batch(1).unwrap().points).collect();
            for j in 0..dim {
                let mut xs: Vec<f64> = firsts.iter().map(|p| p[j]).collect();
                xs.sort_by(f64::total_cmp);
                let d = xs
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let lo = x - i as f64 / reps as f64;
                        let hi = (i + 1) as f64 / reps as f64 - x;
                        lo.max(hi)
                    })
                    .fold(0.0, f64::max);
                assert!(d < 1.9495 / (reps as f64).sqrt(), "{mode:?} coord {j}: D = {d}");
            }
        }
    }

    #[test]
    fn index_overflow_is_reported() {
        let mut s = SobolSampler::bundled(1, Randomization::None, 0).unwrap();
        s.index = (1u64 << 32) - 1;
        assert!(s.next_point().is_ok());
        assert!(matches!(s.next_point(), Err(Error::IndexOverflow(_))));
    }

    #[test]
    fn mc_batches() {
        assert_eq!(mc_batch(7, 5, 3), mc_batch(7, 5, 3));
        assert_ne!(mc_batch(7, 5, 3).points, mc_batch(8, 5, 3).points);
        let b = mc_batch(1, 10_000, 1);
        let mean = b.points.iter().sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() < 5.0 * (1.0f64 / 12.0 / 1e4).sqrt());
    }
}
