//! Boundary compatibility: the classical solver whose output serves as the
//! reference label for the permutation classifier.
//!
//! Pipeline per shuffled image: cut edge strips, score every ordered pair of
//! pieces with PSNR, greedily keep the best `n(n-1)` pairs per relation,
//! assemble them with a maximum-score spanning forest on a virtual grid, and
//! project the resulting placement onto the nearest permutation-set entry.
//!
//! Pieces are in the normalised `[-1, 1]` range, so PSNR uses a data range
//! of 2.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::puzzle::{GridSpec, PermutationSet, PieceBatch, Permutation};
use crate::tensor::Real;

/// PSNR reported for identical strips.
pub const PSNR_CAP: f64 = 99.0;
/// Data range of normalised pixels.
pub const PIXEL_RANGE: f64 = 2.0;

/// A boundary strip stored as `[channels, depth, length]`: `depth` counts
/// rows (top/bottom) or columns (left/right) inward from the edge, outermost
/// first, and `length` runs along the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Strip {
    pub data: Vec<f32>,
    pub channels: usize,
    pub depth: usize,
    pub length: usize,
}

impl Strip {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.depth, self.length]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryStrips {
    pub top: Strip,
    pub bottom: Strip,
    pub left: Strip,
    pub right: Strip,
    pub pix: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

/// Flat indices of a `depth`-wide strip along one side of the piece whose
/// top-left corner is `origin`, inside a `[channels, rows_total, stride]` plane.
/// Output order matches the [`Strip`] layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn strip_indices(
    channels: usize,
    stride: usize,
    origin: (usize, usize),
    piece_px: usize,
    depth: usize,
    side: Side,
    rows_total: usize,
) -> Vec<usize> {
    let (oy, ox) = origin;
    let mut idx = Vec::with_capacity(channels * depth * piece_px);
    for c in 0..channels {
        for d in 0..depth {
            for t in 0..piece_px {
                let (y, x) = match side {
                    Side::Top => (oy + d, ox + t),
                    Side::Bottom => (oy + piece_px - 1 - d, ox + t),
                    Side::Left => (oy + t, ox + d),
                    Side::Right => (oy + t, ox + piece_px - 1 - d),
                };
                idx.push((c * rows_total + y) * stride + x);
            }
        }
    }
    idx
}

/// Cut the four edge strips of a `[3, p, p]` piece.
pub fn extract_strips(piece: &[f32], piece_px: usize, pix: usize) -> Result<BoundaryStrips> {
    if pix == 0 || 2 * pix >= piece_px {
        return Err(Error::Invalid(format!(
            "strip width {pix} must be in 1..{} for {piece_px}px pieces",
            piece_px.div_ceil(2)
        )));
    }
    if piece.len() != 3 * piece_px * piece_px {
        return Err(Error::Shape(format!(
            "piece must hold 3x{piece_px}x{piece_px} values, got {}",
            piece.len()
        )));
    }
    let cut = |side| {
        let idx = strip_indices(3, piece_px, (0, 0), piece_px, pix, side, piece_px);
        Strip {
            data: idx.into_iter().map(|i| piece[i]).collect(),
            channels: 3,
            depth: pix,
            length: piece_px,
        }
    };
    Ok(BoundaryStrips {
        top: cut(Side::Top),
        bottom: cut(Side::Bottom),
        left: cut(Side::Left),
        right: cut(Side::Right),
        pix,
    })
}

/// `10·log10(range² / MSE)`, capped at [`PSNR_CAP`].
pub fn strip_psnr(a: &Strip, b: &Strip, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "strip shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(psnr_slices(&a.data, &b.data, data_range))
}

fn psnr_slices(a: &[f32], b: &[f32], data_range: f64) -> f64 {
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompatKind {
    /// `values[i][j]`: top strip of piece `i` against bottom strip of `j`
    /// (high when `j` sits directly above `i`).
    TopBottom,
    /// `values[i][j]`: left strip of piece `i` against right strip of `j`
    /// (high when `j` sits directly left of `i`).
    LeftRight,
}

/// `n² x n²` PSNR scores. Diagonal entries are `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatMatrix {
    pub values: Vec<f64>,
    pub size: usize,
    pub kind: CompatKind,
}

impl CompatMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn from_values(size: usize, kind: CompatKind, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::Shape(format!(
                "compatibility matrix needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        for i in 0..size {
            values[i * size + i] = f64::NEG_INFINITY;
        }
        Ok(CompatMatrix { values, size, kind })
    }
}

thread_local! {
    static MATRICES_BUILT: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of compatibility matrices built on the current thread.
pub fn matrices_built_on_this_thread() -> u64 {
    MATRICES_BUILT.with(|c| c.get())
}

pub fn build_compat_matrix(batch: &PieceBatch, kind: CompatKind, pix: usize) -> Result<CompatMatrix> {
    MATRICES_BUILT.with(|c| c.set(c.get() + 1));
    let cells = batch.grid.cells();
    let strips = (0..cells)
        .map(|k| extract_strips(batch.piece(k), batch.grid.piece_px, pix))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![f64::NEG_INFINITY; cells * cells];
    for i in 0..cells {
        for j in 0..cells {
            if i == j {
                continue;
            }
            let (a, b) = match kind {
                CompatKind::TopBottom => (&strips[i].top, &strips[j].bottom),
                CompatKind::LeftRight => (&strips[i].left, &strips[j].right),
            };
            values[i * cells + j] = psnr_slices(&a.data, &b.data, PIXEL_RANGE);
        }
    }
    Ok(CompatMatrix {
        values,
        size: cells,
        kind,
    })
}

/// Both relations for one shuffled image.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatPair {
    pub top_bottom: CompatMatrix,
    pub left_right: CompatMatrix,
}

impl CompatPair {
    pub fn build(batch: &PieceBatch, pix: usize) -> Result<Self> {
        Ok(CompatPair {
            top_bottom: build_compat_matrix(batch, CompatKind::TopBottom, pix)?,
            left_right: build_compat_matrix(batch, CompatKind::LeftRight, pix)?,
        })
    }

    /// Summed compatibility of all adjacent cells of a placement
    /// (`placement[cell]` = piece).
    pub fn placement_score(&self, placement: &[usize], n: usize) -> f64 {
        let mut total = 0.0;
        for r in 0..n {
            for c in 0..n {
                let here = placement[r * n + c];
                if r + 1 < n {
                    total += self.top_bottom.get(placement[(r + 1) * n + c], here);
                }
                if c + 1 < n {
                    total += self.left_right.get(placement[r * n + c + 1], here);
                }
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `a` directly above `b`.
    Above,
    /// `a` directly left of `b`.
    LeftOf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborPairs {
    pub relation: Relation,
    pub pairs: Vec<NeighborPair>,
}

struct Chains {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl Chains {
    fn new(len: usize) -> Self {
        Chains {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb] = ra;
            self.size[ra] += self.size[rb];
        }
    }
}

/// Greedy selection of `n(n-1)` neighbour pairs from one matrix.
///
/// Entries are taken in descending score order (ties: smaller row, then
/// column). An entry is kept if its row and column are still free (each
/// piece has at most one neighbour per side), it closes no cycle, and the
/// chain it extends stays within `n` pieces. If that leaves fewer than
/// `n(n-1)` pairs, a second pass drops the chain-length limit.
pub fn greedy_select_pairs(matrix: &CompatMatrix) -> Result<NeighborPairs> {
    let cells = matrix.size;
    let n = (cells as f64).sqrt().round() as usize;
    if n * n != cells {
        return Err(Error::Shape(format!("matrix size {cells} is not a square grid")));
    }
    let target = n * (n - 1);
    let mut order: Vec<(usize, usize)> = (0..cells)
        .flat_map(|i| (0..cells).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && matrix.get(i, j).is_finite())
        .collect();
    order.sort_by(|&(i1, j1), &(i2, j2)| {
        matrix
            .get(i2, j2)
            .total_cmp(&matrix.get(i1, j1))
            .then((i1, j1).cmp(&(i2, j2)))
    });

    let mut row_used = vec![false; cells];
    let mut col_used = vec![false; cells];
    let mut chains = Chains::new(cells);
    let mut taken = vec![false; order.len()];
    let mut pairs = Vec::with_capacity(target);
    for limit_chains in [true, false] {
        for (k, &(i, j)) in order.iter().enumerate() {
            if pairs.len() == target {
                break;
            }
            if taken[k] || row_used[i] || col_used[j] {
                continue;
            }
            let (ri, rj) = (chains.find(i), chains.find(j));
            if ri == rj || (limit_chains && chains.size[ri] + chains.size[rj] > n) {
                continue;
            }
            taken[k] = true;
            row_used[i] = true;
            col_used[j] = true;
            chains.union(i, j);
            // entry (i, j): j above / left of i
            pairs.push(NeighborPair {
                a: j,
                b: i,
                score: matrix.get(i, j),
            });
        }
    }
    let relation = match matrix.kind {
        CompatKind::TopBottom => Relation::Above,
        CompatKind::LeftRight => Relation::LeftOf,
    };
    Ok(NeighborPairs { relation, pairs })
}

struct Component {
    cells: Vec<(usize, (i64, i64))>,
}

impl Component {
    fn bbox(&self) -> (i64, i64, i64, i64) {
        let mut b = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for &(_, (r, c)) in &self.cells {
            b = (b.0.min(r), b.1.min(c), b.2.max(r), b.3.max(c));
        }
        b
    }
}

/// Assemble selected neighbour pairs into a full placement.
///
/// Pairs become edges processed in descending score order (Kruskal).
/// Joining two fragments fixes their relative offset on an unbounded grid;
/// an edge is skipped when that would overlap occupied cells or grow the
/// bounding box beyond `n x n`. The largest fragment is then tried at every
/// offset inside the `n x n` grid, and remaining pieces are filled one at a
/// time into the free cell and piece with the best summed compatibility to
/// already placed neighbours (`scores`, or the selected pairs when absent).
/// The highest-scoring completed grid wins (ties: first offset).
///
/// Returns the placement: `result[cell]` is the index of the piece put there.
pub fn mst_assemble(
    tb: &NeighborPairs,
    lr: &NeighborPairs,
    n: usize,
    scores: Option<&CompatPair>,
) -> Result<Permutation> {
    let cells = n * n;
    let mut edges: Vec<(f64, u8, usize, usize)> = Vec::new();
    for (rel, list) in [(0u8, tb), (1u8, lr)] {
        for p in &list.pairs {
            if p.a >= cells || p.b >= cells || p.a == p.b {
                return Err(Error::Invalid(format!(
                    "pair ({}, {}) out of range for {cells} pieces",
                    p.a, p.b
                )));
            }
            edges.push((p.score, rel, p.a, p.b));
        }
    }
    edges.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2, x.3).cmp(&(y.1, y.2, y.3))));

    let mut comp_of: Vec<usize> = (0..cells).collect();
    let mut comps: Vec<Option<Component>> = (0..cells)
        .map(|k| Some(Component { cells: vec![(k, (0, 0))] }))
        .collect();
    let pos = |comps: &Vec<Option<Component>>, comp_of: &Vec<usize>, k: usize| {
        comps[comp_of[k]]
            .as_ref()
            .unwrap()
            .cells
            .iter()
            .find(|c| c.0 == k)
            .unwrap()
            .1
    };

    for &(_, rel, a, b) in &edges {
        let (ca, cb) = (comp_of[a], comp_of[b]);
        if ca == cb {
            continue;
        }
        let pa = pos(&comps, &comp_of, a);
        let pb = pos(&comps, &comp_of, b);
        let want = if rel == 0 { (pa.0 + 1, pa.1) } else { (pa.0, pa.1 + 1) };
        let shift = (want.0 - pb.0, want.1 - pb.1);
        let moved: Vec<(usize, (i64, i64))> = comps[cb]
            .as_ref()
            .unwrap()
            .cells
            .iter()
            .map(|&(k, (r, c))| (k, (r + shift.0, c + shift.1)))
            .collect();
        let occupied: std::collections::HashSet<(i64, i64)> =
            comps[ca].as_ref().unwrap().cells.iter().map(|c| c.1).collect();
        if moved.iter().any(|m| occupied.contains(&m.1)) {
            continue;
        }
        let mut merged = Component {
            cells: comps[ca].as_ref().unwrap().cells.clone(),
        };
        merged.cells.extend(moved);
        let bb = merged.bbox();
        if bb.2 - bb.0 + 1 > n as i64 || bb.3 - bb.1 + 1 > n as i64 {
            continue;
        }
        for &(k, _) in &merged.cells {
            comp_of[k] = ca;
        }
        comps[ca] = Some(merged);
        comps[cb] = None;
    }

    let main = comps
        .iter()
        .flatten()
        .max_by(|x, y| {
            x.cells
                .len()
                .cmp(&y.cells.len())
                .then_with(|| {
                    let mx = x.cells.iter().map(|c| c.0).min().unwrap();
                    let my = y.cells.iter().map(|c| c.0).min().unwrap();
                    my.cmp(&mx)
                })
        })
        .expect("at least one fragment");

    // pairwise affinity used for filling: tb(lower, upper) and lr(right, left)
    let pair_scores: HashMap<(u8, usize, usize), f64> = edges
        .iter()
        .map(|&(s, rel, a, b)| ((rel, b, a), s))
        .collect();
    let affinity = |rel: u8, lower_or_right: usize, upper_or_left: usize| -> f64 {
        match scores {
            Some(s) => {
                let m = if rel == 0 { &s.top_bottom } else { &s.left_right };
                m.get(lower_or_right, upper_or_left)
            }
            None => pair_scores
                .get(&(rel, lower_or_right, upper_or_left))
                .copied()
                .unwrap_or(0.0),
        }
    };

    let (r0, c0, r1, c1) = main.bbox();
    let (h, w) = ((r1 - r0 + 1) as usize, (c1 - c0 + 1) as usize);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for oy in 0..=(n - h) {
        for ox in 0..=(n - w) {
            let mut grid: Vec<Option<usize>> = vec![None; cells];
            let mut placed = vec![false; cells];
            for &(k, (r, c)) in &main.cells {
                let cell = (r - r0) as usize + oy;
                let cell = cell * n + (c - c0) as usize + ox;
                grid[cell] = Some(k);
                placed[k] = true;
            }
            fill_greedy(&mut grid, &mut placed, n, &affinity);
            let placement: Vec<usize> = grid.into_iter().map(|c| c.unwrap()).collect();
            let total = placement_total(&placement, n, &affinity);
            if best.as_ref().is_none_or(|b| total > b.0) {
                best = Some((total, placement));
            }
        }
    }
    Permutation::new(best.unwrap().1)
}

fn placement_total(placement: &[usize], n: usize, affinity: &dyn Fn(u8, usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for r in 0..n {
        for c in 0..n {
            let here = placement[r * n + c];
            if r + 1 < n {
                total += finite_or_zero(affinity(0, placement[(r + 1) * n + c], here));
            }
            if c + 1 < n {
                total += finite_or_zero(affinity(1, placement[r * n + c + 1], here));
            }
        }
    }
    total
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn fill_greedy(
    grid: &mut [Option<usize>],
    placed: &mut [bool],
    n: usize,
    affinity: &dyn Fn(u8, usize, usize) -> f64,
) {
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for cell in 0..grid.len() {
            if grid[cell].is_some() {
                continue;
            }
            let (r, c) = (cell / n, cell % n);
            let neighbours = [
                (r > 0).then(|| grid[cell - n]).flatten().map(|p| (0u8, true, p)),
                (r + 1 < n).then(|| grid[cell + n]).flatten().map(|p| (0u8, false, p)),
                (c > 0).then(|| grid[cell - 1]).flatten().map(|p| (1u8, true, p)),
                (c + 1 < n).then(|| grid[cell + 1]).flatten().map(|p| (1u8, false, p)),
            ];
            if neighbours.iter().all(|x| x.is_none()) {
                continue;
            }
            for piece in 0..placed.len() {
                if placed[piece] {
                    continue;
                }
                let score: f64 = neighbours
                    .iter()
                    .flatten()
                    .map(|&(rel, before, other)| {
                        let v = if before {
                            affinity(rel, piece, other)
                        } else {
                            affinity(rel, other, piece)
                        };
                        finite_or_zero(v)
                    })
                    .sum();
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, cell, piece));
                }
            }
        }
        match best {
            Some((_, cell, piece)) => {
                grid[cell] = Some(piece);
                placed[piece] = true;
            }
            None => {
                // nothing adjacent to a placed piece: take the first free cell
                let Some(cell) = grid.iter().position(|g| g.is_none()) else {
                    return;
                };
                let piece = placed.iter().position(|p| !p).expect("free piece for free cell");
                grid[cell] = Some(piece);
                placed[piece] = true;
            }
        }
    }
}

/// Pseudo-label for one shuffled image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLabel {
    pub class_index: usize,
    /// The shuffle the assembly implies was applied (the inverse of the
    /// placement), i.e. directly comparable with set entries.
    pub assembled: Permutation,
    /// Hamming distance between `assembled` and the chosen set entry.
    pub projection_distance: usize,
}

/// Run the full boundary pipeline on one shuffled image.
pub fn reference_label(batch: &PieceBatch, set: &PermutationSet, pix: usize) -> Result<ReferenceLabel> {
    let n = batch.grid.n;
    if set.n != n {
        return Err(Error::Invalid(format!(
            "permutation set is for n={} but the pieces form an n={n} grid",
            set.n
        )));
    }
    let compat = CompatPair::build(batch, pix)?;
    let tb = greedy_select_pairs(&compat.top_bottom)?;
    let lr = greedy_select_pairs(&compat.left_right)?;
    let placement = mst_assemble(&tb, &lr, n, Some(&compat))?;
    let assembled = placement.invert();
    let (class_index, projection_distance) = set.nearest(&assembled);
    Ok(ReferenceLabel {
        class_index,
        assembled,
        projection_distance,
    })
}

/// Reference labels for many images; order follows `batches`.
pub fn reference_labels(
    batches: &[PieceBatch],
    set: &PermutationSet,
    pix: usize,
    exec: Exec,
) -> Result<Vec<ReferenceLabel>> {
    exec.map(batches.len(), |i| reference_label(&batches[i], set, pix))
        .into_iter()
        .collect()
}

/// One row of a reference-label CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub image_id: String,
    pub class_index: usize,
    pub projection_distance: usize,
    /// Dash-joined mapping.
    pub assembled_mapping: String,
}

impl ReferenceRecord {
    pub fn new(image_id: &str, label: &ReferenceLabel) -> Self {
        ReferenceRecord {
            image_id: image_id.to_string(),
            class_index: label.class_index,
            projection_distance: label.projection_distance,
            assembled_mapping: label.assembled.to_string(),
        }
    }
}

pub fn write_reference_csv(path: &Path, records: &[ReferenceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read reference labels keyed by image id, checking class indices against `classes`.
pub fn read_reference_csv(path: &Path, classes: usize) -> Result<HashMap<String, ReferenceRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for row in r.deserialize() {
        let rec: ReferenceRecord = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if rec.class_index >= classes {
            return Err(Error::Data(format!(
                "{}: label {} for {} is out of range for {classes} classes",
                path.display(),
                rec.class_index,
                rec.image_id
            )));
        }
        out.insert(rec.image_id.clone(), rec);
    }
    Ok(out)
}

/// SSIM stabilising constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub window: usize,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            window: 8,
            data_range: PIXEL_RANGE,
        }
    }
}

/// SSIM of two strips laid out `[channels, depth, length]`, using a
/// `depth x window` box sliding along `length`; mean over windows and
/// channels. When `grads` is given, d(SSIM)/da and d(SSIM)/db are added.
pub fn ssim_strips<T: Real>(
    a: &[T],
    b: &[T],
    shape: [usize; 3],
    params: &SsimParams,
    grads: Option<(&mut [T], &mut [T])>,
) -> T {
    let [channels, depth, length] = shape;
    let win = params.window.min(length).max(1);
    let positions = length - win + 1;
    let count = T::from_usize(depth * win).unwrap();
    let c1 = T::from_f64_lossy((params.k1 * params.data_range).powi(2));
    let c2 = T::from_f64_lossy((params.k2 * params.data_range).powi(2));
    let two = T::from_f64_lossy(2.0);
    let norm = T::one() / T::from_usize(channels * positions).unwrap();
    let mut grads = grads;
    let mut total = T::zero();
    let at = |c: usize, d: usize, t: usize| (c * depth + d) * length + t;
    for c in 0..channels {
        for p in 0..positions {
            let (mut sa, mut sb) = (T::zero(), T::zero());
            for d in 0..depth {
                for t in p..p + win {
                    sa += a[at(c, d, t)];
                    sb += b[at(c, d, t)];
                }
            }
            let (ma, mb) = (sa / count, sb / count);
            let (mut vaa, mut vbb, mut vab) = (T::zero(), T::zero(), T::zero());
            for d in 0..depth {
                for t in p..p + win {
                    let (x, y) = (a[at(c, d, t)] - ma, b[at(c, d, t)] - mb);
                    vaa += x * x;
                    vbb += y * y;
                    vab += x * y;
                }
            }
            let (vaa, vbb, vab) = (vaa / count, vbb / count, vab / count);
            let num1 = two * ma * mb + c1;
            let num2 = two * vab + c2;
            let den1 = ma * ma + mb * mb + c1;
            let den2 = vaa + vbb + c2;
            let s = num1 * num2 / (den1 * den2);
            total += s;
            if let Some((ga, gb)) = grads.as_mut() {
                let d_ma = two * mb * num2 / (den1 * den2) - s * two * ma / den1;
                let d_mb = two * ma * num2 / (den1 * den2) - s * two * mb / den1;
                let d_var = -s / den2;
                let d_cov = two * num1 / (den1 * den2);
                for d in 0..depth {
                    for t in p..p + win {
                        let i = at(c, d, t);
                        let (x, y) = (a[i] - ma, b[i] - mb);
                        ga[i] += norm * (d_ma + d_var * two * x + d_cov * y) / count;
                        gb[i] += norm * (d_mb + d_var * two * y + d_cov * x) / count;
                    }
                }
            }
        }
    }
    total * norm
}

/// SSIM between two strips of equal shape, in `[-1, 1]`.
pub fn strip_ssim(a: &Strip, b: &Strip, params: &SsimParams) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "strip shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let a64: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    Ok(ssim_strips(&a64, &b64, a.shape(), params, None))
}

/// Touching cell pairs `(a, b)` of a grid, with `a` above or left of `b`.
pub fn adjacent_cells(grid: GridSpec, relation: Relation) -> Vec<(usize, usize)> {
    let n = grid.n;
    let mut out = Vec::with_capacity(n * (n - 1));
    for r in 0..n {
        for c in 0..n {
            match relation {
                Relation::Above if r + 1 < n => out.push((r * n + c, (r + 1) * n + c)),
                Relation::LeftOf if c + 1 < n => out.push((r * n + c, r * n + c + 1)),
                _ => {}
            }
        }
    }
    out
}
