//! Grid geometry, pieces and permutations.
//!
//! Cells are indexed row-major everywhere. A [`Permutation`] is in gather
//! form: output cell `i` takes the piece found at source cell `mapping[i]`.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Puzzle grid: `n x n` square pieces of `piece_px` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub piece_px: usize,
}

impl GridSpec {
    pub const DEFAULT_PIECE_PX: usize = 24;

    pub fn new(n: usize, piece_px: usize) -> Result<Self> {
        let g = GridSpec { n, piece_px };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.n) {
            return Err(Error::Invalid(format!(
                "grid size n must be 2, 3 or 4, got {}",
                self.n
            )));
        }
        if self.piece_px < 8 {
            return Err(Error::Invalid(format!(
                "piece size must be at least 8 px, got {}",
                self.piece_px
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn image_side(&self) -> usize {
        self.n * self.piece_px
    }

    pub fn row(&self, cell: usize) -> usize {
        cell / self.n
    }

    pub fn col(&self, cell: usize) -> usize {
        cell % self.n
    }
}

/// A bijection on `0..len`, in gather form.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Permutation {
    /// Dash-joined form used in CSV files.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || seen[m] {
                return Err(Error::Invalid(format!(
                    "{mapping:?} is not a permutation of 0..{}",
                    mapping.len()
                )));
            }
            seen[m] = true;
        }
        Ok(Permutation(mapping))
    }

    pub fn identity(len: usize) -> Self {
        Permutation((0..len).collect())
    }

    /// Parse the dash-joined CSV form, e.g. `1-0-3-2`.
    pub fn parse_dashed(s: &str) -> Result<Self> {
        let mapping = s
            .trim()
            .split('-')
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::Invalid(format!("bad permutation entry {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Permutation::new(mapping)
    }

    pub fn mapping(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// The permutation that undoes `self`: `invert(s)[s[i]] == i`.
    pub fn invert(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &m) in self.0.iter().enumerate() {
            inv[m] = i;
        }
        Permutation(inv)
    }

    /// Gather-compose: applying `self` then `then` equals applying the result.
    pub fn then(&self, then: &Permutation) -> Permutation {
        assert_eq!(self.len(), then.len());
        Permutation(then.0.iter().map(|&j| self.0[j]).collect())
    }

    /// Number of positions where the two mappings differ.
    pub fn hamming(&self, other: &Permutation) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::Invalid(format!(
                "hamming distance between permutations of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(hamming_slices(&self.0, &other.0))
    }
}

fn hamming_slices<A: PartialEq<B> + Copy, B: Copy>(a: &[A], b: &[B]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x != **y).count()
}

/// The `n²` pieces of one image, each `[3, piece_px, piece_px]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceBatch {
    /// `[n², 3, piece_px, piece_px]`
    pub pieces: Tensor<f32>,
    pub source_id: String,
    pub grid: GridSpec,
}

impl PieceBatch {
    pub fn new(pieces: Tensor<f32>, source_id: impl Into<String>, grid: GridSpec) -> Result<Self> {
        let shape = pieces.shape();
        let want = [grid.cells(), 3, grid.piece_px, grid.piece_px];
        if shape != want {
            return Err(Error::Shape(format!(
                "piece batch must be {want:?}, got {shape:?}"
            )));
        }
        Ok(PieceBatch {
            pieces,
            source_id: source_id.into(),
            grid,
        })
    }

    pub fn piece(&self, k: usize) -> &[f32] {
        let len = 3 * self.grid.piece_px * self.grid.piece_px;
        &self.pieces.data()[k * len..(k + 1) * len]
    }

    /// Output piece `i` is input piece `perm[i]`.
    pub fn apply_permutation(&self, perm: &Permutation) -> Result<PieceBatch> {
        if perm.len() != self.grid.cells() {
            return Err(Error::Invalid(format!(
                "permutation of length {} applied to {} pieces",
                perm.len(),
                self.grid.cells()
            )));
        }
        let len = 3 * self.grid.piece_px * self.grid.piece_px;
        let mut data = Vec::with_capacity(self.pieces.len());
        for &src in perm.mapping() {
            data.extend_from_slice(&self.pieces.data()[src * len..(src + 1) * len]);
        }
        Ok(PieceBatch {
            pieces: Tensor::from_vec(self.pieces.shape(), data)?,
            source_id: self.source_id.clone(),
            grid: self.grid,
        })
    }

    /// Tile the pieces back into a `[3, H, W]` image in row-major cell order.
    pub fn assemble(&self) -> Tensor<f32> {
        let g = self.grid;
        let side = g.image_side();
        let p = g.piece_px;
        let mut img = Tensor::zeros(&[3, side, side]);
        for k in 0..g.cells() {
            let (r, c) = (g.row(k), g.col(k));
            let piece = self.piece(k);
            for ch in 0..3 {
                for y in 0..p {
                    let dst = (ch * side + r * p + y) * side + c * p;
                    img.data_mut()[dst..dst + p]
                        .copy_from_slice(&piece[(ch * p + y) * p..(ch * p + y + 1) * p]);
                }
            }
        }
        img
    }
}

/// Cut a `[3, H, W]` image into the row-major tiles of `grid`.
pub fn split_image(image: &Tensor<f32>, grid: GridSpec, source_id: &str) -> Result<PieceBatch> {
    grid.validate()?;
    let side = grid.image_side();
    if image.shape() != [3, side, side] {
        return Err(Error::Shape(format!(
            "image must be [3, {side}, {side}] for a {n}x{n} grid of {p}px pieces, got {:?}",
            image.shape(),
            n = grid.n,
            p = grid.piece_px
        )));
    }
    let p = grid.piece_px;
    let mut data = Vec::with_capacity(image.len());
    for k in 0..grid.cells() {
        let (r, c) = (grid.row(k), grid.col(k));
        for ch in 0..3 {
            for y in 0..p {
                let src = (ch * side + r * p + y) * side + c * p;
                data.extend_from_slice(&image.data()[src..src + p]);
            }
        }
    }
    PieceBatch::new(
        Tensor::from_vec(&[grid.cells(), 3, p, p], data)?,
        source_id,
        grid,
    )
}

/// Ordered set of `P` permutations; an entry's index is its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationSet {
    pub n: usize,
    pub seed: u64,
    entries: Vec<Permutation>,
    identity_index: usize,
}

fn factorial(k: usize) -> u128 {
    (1..=k as u128).product()
}

fn all_permutations(len: usize) -> Vec<Vec<u8>> {
    fn rec(prefix: &mut Vec<u8>, used: &mut [bool], out: &mut Vec<Vec<u8>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v as u8);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; len], &mut out);
    out
}

/// Candidates offered to each greedy step, as a multiple of `P`.
const POOL_FACTOR: usize = 11;

impl PermutationSet {
    /// Greedy maximal-Hamming-distance selection.
    ///
    /// Starts from a seeded random permutation and repeatedly adds the pool
    /// candidate whose minimum Hamming distance to the chosen entries is
    /// largest (ties: first in pool order). The pool is exhaustive when
    /// `(n²)!` is small, otherwise `11·P` distinct seeded samples, so at
    /// least `10·P` candidates remain at every step. Finally every entry is
    /// right-composed with the inverse of the start, which maps the start
    /// to the identity at index 0 without changing any pairwise distance.
    pub fn generate(n: usize, count: usize, seed: u64) -> Result<Self> {
        GridSpec::new(n, GridSpec::DEFAULT_PIECE_PX)?;
        let len = n * n;
        let total = factorial(len);
        if count == 0 || count as u128 > total {
            return Err(Error::Invalid(format!(
                "permutation set size must be in 1..={total} for n={n}, got {count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start: Vec<u8> = (0..len as u8).collect();
        start.shuffle(&mut rng);

        let pool: Vec<Vec<u8>> = if total <= (POOL_FACTOR * count) as u128 {
            all_permutations(len)
        } else {
            let mut seen = HashSet::new();
            seen.insert(start.clone());
            let mut pool = Vec::with_capacity(POOL_FACTOR * count);
            let mut cand: Vec<u8> = (0..len as u8).collect();
            while pool.len() < POOL_FACTOR * count {
                cand.shuffle(&mut rng);
                if seen.insert(cand.clone()) {
                    pool.push(cand.clone());
                }
            }
            pool
        };

        let mut chosen: Vec<Vec<u8>> = vec![start.clone()];
        let mut alive = vec![true; pool.len()];
        let mut min_dist: Vec<usize> = pool
            .iter()
            .map(|c| hamming_slices(c, &start))
            .collect();
        for (i, c) in pool.iter().enumerate() {
            if *c == start {
                alive[i] = false;
            }
        }
        while chosen.len() < count {
            let mut best: Option<usize> = None;
            for i in 0..pool.len() {
                if alive[i] && best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                    best = Some(i);
                }
            }
            let b = best.expect("pool holds enough candidates");
            alive[b] = false;
            let pick = pool[b].clone();
            for i in 0..pool.len() {
                if alive[i] {
                    min_dist[i] = min_dist[i].min(hamming_slices(&pool[i], &pick));
                }
            }
            chosen.push(pick);
        }

        let start_inv = Permutation(start.iter().map(|&v| v as usize).collect()).invert();
        let entries = chosen
            .iter()
            .map(|c| {
                let p = Permutation(c.iter().map(|&v| v as usize).collect());
                start_inv.then(&p)
            })
            .collect::<Vec<_>>();
        debug_assert!(entries[0].is_identity());
        Ok(PermutationSet {
            n,
            seed,
            entries,
            identity_index: 0,
        })
    }

    /// Build a set from explicit entries (validated).
    pub fn from_entries(n: usize, seed: u64, entries: Vec<Permutation>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("empty permutation set".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if e.len() != n * n {
                return Err(Error::Invalid(format!(
                    "entry {e:?} has length {}, expected {}",
                    e.len(),
                    n * n
                )));
            }
            if !seen.insert(e.clone()) {
                return Err(Error::Invalid(format!("duplicate entry {e:?}")));
            }
        }
        let identity_index = entries
            .iter()
            .position(|e| e.is_identity())
            .ok_or_else(|| Error::Invalid("permutation set must contain the identity".into()))?;
        Ok(PermutationSet {
            n,
            seed,
            entries,
            identity_index,
        })
    }

    pub fn entries(&self) -> &[Permutation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class: usize) -> Result<&Permutation> {
        self.entries.get(class).ok_or_else(|| {
            Error::Invalid(format!(
                "class {class} out of range for a set of {} permutations",
                self.entries.len()
            ))
        })
    }

    pub fn identity_index(&self) -> usize {
        self.identity_index
    }

    pub fn index_of(&self, perm: &Permutation) -> Option<usize> {
        self.entries.iter().position(|e| e == perm)
    }

    /// Entry closest to `perm` in Hamming distance; ties go to the lowest index.
    pub fn nearest(&self, perm: &Permutation) -> (usize, usize) {
        let mut best = (0, usize::MAX);
        for (i, e) in self.entries.iter().enumerate() {
            let d = hamming_slices(e.mapping(), perm.mapping());
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Text form: `n=<n> P=<P> seed=<seed>` then one entry per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n={} P={} seed={}", self.n, self.entries.len(), self.seed)?;
        for e in &self.entries {
            let parts: Vec<String> = e.mapping().iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", parts.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_text(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty permutation set file".into()))?
            .map_err(|e| Error::Data(e.to_string()))?;
        let mut n = None;
        let mut count = None;
        let mut seed = None;
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad header field {field:?}")))?;
            let parse = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::Data(format!("bad header value {v:?}")))
            };
            match k {
                "n" => n = Some(parse(v)? as usize),
                "P" => count = Some(parse(v)? as usize),
                "seed" => seed = Some(parse(v)?),
                _ => return Err(Error::Data(format!("unknown header field {k:?}"))),
            }
        }
        let (n, count, seed) = match (n, count, seed) {
            (Some(n), Some(c), Some(s)) => (n, c, s),
            _ => return Err(Error::Data(format!("incomplete header {header:?}"))),
        };
        let mut entries = Vec::with_capacity(count);
        for line in lines {
            let line = line.map_err(|e| Error::Data(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mapping = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Data(format!("bad permutation line {line:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(Permutation::new(mapping).map_err(|e| Error::Data(e.to_string()))?);
        }
        if entries.len() != count {
            return Err(Error::Data(format!(
                "header declares P={count} but file holds {} permutations",
                entries.len()
            )));
        }
        PermutationSet::from_entries(n, seed, entries).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(grid: GridSpec, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = grid.image_side();
        Tensor::uniform(&[3, side, side], -1.0, 1.0, &mut rng)
    }

    fn perm(v: &[usize]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    #[test]
    fn split_and_assemble_round_trip() {
        let g = GridSpec::new(2, 24).unwrap();
        let img = random_image(g, 1);
        let batch = split_image(&img, g, "a").unwrap();
        assert_eq!(batch.pieces.shape(), &[4, 3, 24, 24]);
        assert_eq!(batch.assemble(), img);

        let g3 = GridSpec::new(3, 24).unwrap();
        let b3 = split_image(&random_image(g3, 2), g3, "b").unwrap();
        assert_eq!(b3.pieces.shape(), &[9, 3, 24, 24]);
    }

    #[test]
    fn split_rejects_wrong_size_and_names_expected() {
        let g = GridSpec::new(3, 24).unwrap();
        let img = Tensor::<f32>::zeros(&[3, 50, 50]);
        let err = split_image(&img, g, "x").unwrap_err().to_string();
        assert!(err.contains("72"), "{err}");
    }

    #[test]
    fn grid_rejects_out_of_range() {
        assert!(GridSpec::new(5, 24).is_err());
        assert!(GridSpec::new(1, 24).is_err());
        assert!(GridSpec::new(2, 7).is_err());
    }

    #[test]
    fn apply_permutation_gathers() {
        let g = GridSpec::new(2, 8).unwrap();
        let batch = split_image(&random_image(g, 3), g, "x").unwrap();
        let out = batch.apply_permutation(&perm(&[1, 0, 3, 2])).unwrap();
        for (i, src) in [1, 0, 3, 2].into_iter().enumerate() {
            assert_eq!(out.piece(i), batch.piece(src));
        }
        assert_eq!(batch.apply_permutation(&Permutation::identity(4)).unwrap(), batch);
        assert!(batch.apply_permutation(&Permutation::identity(9)).is_err());
    }

    #[test]
    fn invert_examples() {
        assert_eq!(Permutation::identity(4).invert(), Permutation::identity(4));
        assert_eq!(perm(&[1, 0, 3, 2]).invert(), perm(&[1, 0, 3, 2]));
        assert_eq!(perm(&[1, 2, 0]).invert(), perm(&[2, 0, 1]));
    }

    #[test]
    fn hamming_examples() {
        let id = Permutation::identity(4);
        assert_eq!(id.hamming(&id).unwrap(), 0);
        assert_eq!(id.hamming(&perm(&[1, 0, 3, 2])).unwrap(), 4);
        assert_eq!(id.hamming(&perm(&[0, 2, 1, 3])).unwrap(), 2);
        assert!(id.hamming(&Permutation::identity(9)).is_err());
    }

    #[test]
    fn permutation_rejects_non_bijections() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(Permutation::parse_dashed("2-0-1").is_ok());
    }

    #[test]
    fn full_set_for_two_by_two() {
        let set = PermutationSet::generate(2, 24, 7).unwrap();
        let unique: HashSet<_> = set.entries().iter().cloned().collect();
        assert_eq!(unique.len(), 24);
        assert!(PermutationSet::generate(2, 25, 7).is_err());
        assert!(PermutationSet::generate(2, 0, 7).is_err());
    }

    #[test]
    fn thousand_entries_for_three_by_three() {
        let set = PermutationSet::generate(3, 1000, 11).unwrap();
        assert_eq!(set.len(), 1000);
        let unique: HashSet<_> = set.entries().iter().cloned().collect();
        assert_eq!(unique.len(), 1000);
        assert!(set.entries().iter().all(|e| {
            let mut s = e.mapping().to_vec();
            s.sort();
            s == (0..9).collect::<Vec<_>>()
        }));
        assert!(set.entries()[set.identity_index()].is_identity());
    }

    fn min_pairwise(entries: &[Permutation]) -> usize {
        let mut best = usize::MAX;
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                best = best.min(entries[i].hamming(&entries[j]).unwrap());
            }
        }
        best
    }

    #[test]
    fn greedy_four_subset_is_near_brute_force_optimum() {
        let all: Vec<Permutation> = all_permutations(4)
            .into_iter()
            .map(|p| Permutation(p.into_iter().map(|v| v as usize).collect()))
            .collect();
        let mut optimum = 0;
        for a in 0..24 {
            for b in a + 1..24 {
                for c in b + 1..24 {
                    for d in c + 1..24 {
                        let subset = [all[a].clone(), all[b].clone(), all[c].clone(), all[d].clone()];
                        optimum = optimum.max(min_pairwise(&subset));
                    }
                }
            }
        }
        assert_eq!(optimum, 4);
        for seed in 0..20 {
            let set = PermutationSet::generate(2, 4, seed).unwrap();
            assert!(min_pairwise(set.entries()) + 1 >= optimum, "seed {seed}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = PermutationSet::generate(3, 50, 5).unwrap();
        let b = PermutationSet::generate(3, 50, 5).unwrap();
        let (mut ta, mut tb) = (Vec::new(), Vec::new());
        a.write_text(&mut ta).unwrap();
        b.write_text(&mut tb).unwrap();
        assert_eq!(ta, tb);
        assert_ne!(a, PermutationSet::generate(3, 50, 6).unwrap());
    }

    #[test]
    fn hamming_is_a_metric_on_a_set() {
        let set = PermutationSet::generate(3, 50, 3).unwrap();
        let e = set.entries();
        for a in e {
            for b in e {
                let ab = a.hamming(b).unwrap();
                assert_eq!(ab, b.hamming(a).unwrap());
                assert_ne!(ab, 1);
                for c in e {
                    assert!(a.hamming(c).unwrap() <= ab + b.hamming(c).unwrap());
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let set = PermutationSet::generate(3, 20, 9).unwrap();
        let mut buf = Vec::new();
        set.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n=3 P=20 seed=9\n"));
        let back = PermutationSet::read_text(&buf[..]).unwrap();
        assert_eq!(back, set);
        assert!(PermutationSet::read_text("n=2 P=2 seed=0\n0 1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let set = PermutationSet::from_entries(
            2,
            0,
            vec![Permutation::identity(4), perm(&[1, 0, 2, 3]), perm(&[0, 1, 3, 2])],
        )
        .unwrap();
        assert_eq!(set.nearest(&perm(&[1, 0, 3, 2])), (1, 2));
        assert_eq!(set.nearest(&perm(&[0, 1, 3, 2])), (2, 0));
    }

    proptest! {
        #[test]
        fn shuffle_round_trip(n in 2usize..=4, seed in any::<u64>()) {
            let g = GridSpec::new(n, 8).unwrap();
            let batch = split_image(&random_image(g, seed), g, "p").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m: Vec<usize> = (0..n * n).collect();
            m.shuffle(&mut rng);
            let sigma = Permutation::new(m).unwrap();
            let there = batch.apply_permutation(&sigma).unwrap();
            prop_assert_eq!(there.apply_permutation(&sigma.invert()).unwrap(), batch.clone());
            let tau = {
                let mut m: Vec<usize> = (0..n * n).collect();
                m.shuffle(&mut rng);
                Permutation::new(m).unwrap()
            };
            let twice = there.apply_permutation(&tau).unwrap();
            prop_assert_eq!(twice, batch.apply_permutation(&sigma.then(&tau)).unwrap());
            let _ = rng.gen::<u8>();
        }
    }
}
