//! Block-exact feature warping driven by a permutation.
//!
//! Displacements are whole multiples of the per-piece feature side, so the
//! warp is a gather of entries and its adjoint is the matching scatter.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::puzzle::Permutation;
use crate::tensor::{Real, Tensor};

/// Per-cell displacement in feature cells: channel 0 horizontal, channel 1 vertical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowField {
    /// `[2, side, side]`, row-major.
    pub displacement: Vec<i64>,
    pub n: usize,
    /// Feature side of one piece.
    pub block: usize,
}

impl FlowField {
    pub fn side(&self) -> usize {
        self.n * self.block
    }

    /// `(dx, dy)` at feature position `(y, x)`.
    pub fn at(&self, y: usize, x: usize) -> (i64, i64) {
        let s = self.side();
        (self.displacement[y * s + x], self.displacement[s * s + y * s + x])
    }

    /// Flat source index for every flat destination index of one plane.
    fn gather_map(&self) -> Vec<usize> {
        let s = self.side();
        let mut map = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let (dx, dy) = self.at(y, x);
                let sy = (y as i64 + dy) as usize;
                let sx = (x as i64 + dx) as usize;
                map.push(sy * s + sx);
            }
        }
        map
    }

    /// Write one CSV row per flow channel and feature row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let s = self.side();
        write!(w, "channel,row")?;
        for x in 0..s {
            write!(w, ",x{x}")?;
        }
        writeln!(w)?;
        for (ch, name) in ["horizontal", "vertical"].iter().enumerate() {
            for y in 0..s {
                write!(w, "{name},{y}")?;
                for x in 0..s {
                    write!(w, ",{}", self.displacement[(ch * s + y) * s + x])?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// Flow that fills output block `i` from source block `perm[i]`.
pub fn flow_from_permutation(perm: &Permutation, height: usize, width: usize) -> Result<FlowField> {
    let cells = perm.len();
    let n = (cells as f64).sqrt().round() as usize;
    if n * n != cells || n == 0 {
        return Err(Error::Invalid(format!(
            "permutation of length {cells} does not describe a square grid"
        )));
    }
    if height != width || height % n != 0 {
        return Err(Error::Shape(format!(
            "feature map {height}x{width} cannot be split into {n}x{n} equal blocks"
        )));
    }
    let block = height / n;
    let side = height;
    let mut displacement = vec![0i64; 2 * side * side];
    for y in 0..side {
        for x in 0..side {
            let cell = (y / block) * n + x / block;
            let src = perm.mapping()[cell];
            let dx = (src % n) as i64 - (cell % n) as i64;
            let dy = (src / n) as i64 - (cell / n) as i64;
            displacement[y * side + x] = dx * block as i64;
            displacement[side * side + y * side + x] = dy * block as i64;
        }
    }
    Ok(FlowField {
        displacement,
        n,
        block,
    })
}

fn check_dims<T: Real>(features: &Tensor<T>, flow: &FlowField) -> Result<(usize, usize)> {
    let [b, c, h, w] = features.dims4()?;
    if h != flow.side() || w != flow.side() {
        return Err(Error::Shape(format!(
            "feature map is {h}x{w} but the flow field is {}x{}",
            flow.side(),
            flow.side()
        )));
    }
    Ok((b * c, h * w))
}

/// `out[b, c, y, x] = features[b, c, y + dy, x + dx]`.
pub fn warp<T: Real>(features: &Tensor<T>, flow: &FlowField) -> Result<Tensor<T>> {
    let (planes, area) = check_dims(features, flow)?;
    let map = flow.gather_map();
    let src = features.data();
    let mut out = Vec::with_capacity(src.len());
    for p in 0..planes {
        let plane = &src[p * area..(p + 1) * area];
        out.extend(map.iter().map(|&s| plane[s]));
    }
    Tensor::from_vec(features.shape(), out)
}

/// Adjoint of [`warp`]: scatter output gradients back to their sources.
pub fn warp_backward<T: Real>(grad_out: &Tensor<T>, flow: &FlowField) -> Result<Tensor<T>> {
    let (planes, area) = check_dims(grad_out, flow)?;
    let map = flow.gather_map();
    let g = grad_out.data();
    let mut out = vec![T::zero(); g.len()];
    for p in 0..planes {
        let base = p * area;
        for (dst, &s) in map.iter().enumerate() {
            out[base + s] += g[base + dst];
        }
    }
    Tensor::from_vec(grad_out.shape(), out)
}

fn per_image<T: Real>(
    features: &Tensor<T>,
    flows: &[FlowField],
    f: impl Fn(&[T], &mut [T], &[usize]),
) -> Result<Tensor<T>> {
    let [b, c, h, w] = features.dims4()?;
    if flows.len() != b {
        return Err(Error::Shape(format!("{} flow fields for a batch of {b}", flows.len())));
    }
    let area = h * w;
    let mut out = vec![T::zero(); features.len()];
    for (i, flow) in flows.iter().enumerate() {
        if flow.side() != h || flow.side() != w {
            return Err(Error::Shape(format!(
                "feature map is {h}x{w} but flow field {i} is {}x{}",
                flow.side(),
                flow.side()
            )));
        }
        let map = flow.gather_map();
        let range = i * c * area..(i + 1) * c * area;
        for (src, dst) in features.data()[range.clone()]
            .chunks(area)
            .zip(out[range].chunks_mut(area))
        {
            f(src, dst, &map);
        }
    }
    Tensor::from_vec(features.shape(), out)
}

/// [`warp`] with a separate flow field for every batch entry.
pub fn warp_each<T: Real>(features: &Tensor<T>, flows: &[FlowField]) -> Result<Tensor<T>> {
    per_image(features, flows, |src, dst, map| {
        for (d, &s) in dst.iter_mut().zip(map) {
            *d = src[s];
        }
    })
}

/// Adjoint of [`warp_each`].
pub fn warp_each_backward<T: Real>(grad_out: &Tensor<T>, flows: &[FlowField]) -> Result<Tensor<T>> {
    per_image(grad_out, flows, |g, dst, map| {
        for (k, &s) in map.iter().enumerate() {
            dst[s] += g[k];
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_perm(len: usize, rng: &mut ChaCha8Rng) -> Permutation {
        let mut m: Vec<usize> = (0..len).collect();
        m.shuffle(rng);
        Permutation::new(m).unwrap()
    }

    /// Move whole blocks directly, independent of the flow machinery.
    fn shuffle_blocks(f: &Tensor<f64>, perm: &Permutation) -> Tensor<f64> {
        let [b, c, h, w] = f.dims4().unwrap();
        let n = (perm.len() as f64).sqrt() as usize;
        let blk = h / n;
        let mut out = f.clone();
        for plane in 0..b * c {
            for cell in 0..perm.len() {
                let src = perm.mapping()[cell];
                for dy in 0..blk {
                    for dx in 0..blk {
                        let to = plane * h * w + ((cell / n) * blk + dy) * w + (cell % n) * blk + dx;
                        let from = plane * h * w + ((src / n) * blk + dy) * w + (src % n) * blk + dx;
                        out.data_mut()[to] = f.data()[from];
                    }
                }
            }
        }
        out
    }

    fn random_features(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_gives_zero_flow() {
        let f = flow_from_permutation(&Permutation::identity(9), 18, 18).unwrap();
        assert!(f.displacement.iter().all(|&d| d == 0));
        assert_eq!((f.block, f.side()), (6, 18));
    }

    #[test]
    fn swap_of_first_two_blocks() {
        let f = flow_from_permutation(&Permutation::new(vec![1, 0, 2, 3]).unwrap(), 12, 12).unwrap();
        assert_eq!(f.at(0, 0), (6, 0));
        assert_eq!(f.at(5, 5), (6, 0));
        assert_eq!(f.at(0, 6), (-6, 0));
        assert_eq!(f.at(6, 0), (0, 0));
        assert_eq!(f.at(11, 11), (0, 0));
        assert!(f.displacement.iter().all(|d| d % 6 == 0));
    }

    #[test]
    fn indivisible_or_mismatched_dims_are_rejected() {
        let p = Permutation::identity(9);
        assert!(flow_from_permutation(&p, 16, 16).is_err());
        assert!(flow_from_permutation(&p, 18, 12).is_err());
        let flow = flow_from_permutation(&p, 18, 18).unwrap();
        assert!(warp(&Tensor::<f32>::zeros(&[1, 2, 12, 12]), &flow).is_err());
    }

    #[test]
    fn zero_flow_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_features(&[2, 3, 12, 12], &mut rng);
        let flow = flow_from_permutation(&Permutation::identity(4), 12, 12).unwrap();
        assert_eq!(warp(&f, &flow).unwrap(), f);
    }

    #[test]
    fn inverse_flow_restores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..100 {
            let n = 2 + trial % 3;
            let f = random_features(&[2, 2, n * 3, n * 3], &mut rng);
            let sigma = random_perm(n * n, &mut rng);
            let shuffled = shuffle_blocks(&f, &sigma);
            let flow = flow_from_permutation(&sigma.invert(), n * 3, n * 3).unwrap();
            assert_eq!(warp(&shuffled, &flow).unwrap(), f);
            let direct = flow_from_permutation(&sigma, n * 3, n * 3).unwrap();
            assert_eq!(warp(&f, &direct).unwrap(), shuffled);
        }
    }

    #[test]
    fn composition_matches_composed_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let f = random_features(&[1, 2, 9, 9], &mut rng);
            let (a, b) = (random_perm(9, &mut rng), random_perm(9, &mut rng));
            let twice = warp(
                &warp(&f, &flow_from_permutation(&a, 9, 9).unwrap()).unwrap(),
                &flow_from_permutation(&b, 9, 9).unwrap(),
            )
            .unwrap();
            let once = warp(&f, &flow_from_permutation(&a.then(&b), 9, 9).unwrap()).unwrap();
            assert_eq!(twice, once);
        }
    }

    #[test]
    fn warp_preserves_sum_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_features(&[2, 3, 12, 12], &mut rng);
        let flow = flow_from_permutation(&random_perm(4, &mut rng), 12, 12).unwrap();
        let out = warp(&f, &flow).unwrap();
        let mut a: Vec<f64> = f.data().to_vec();
        let mut b: Vec<f64> = out.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        // no mixing across planes
        for plane in 0..6 {
            let mut x = f.data()[plane * 144..(plane + 1) * 144].to_vec();
            let mut y = out.data()[plane * 144..(plane + 1) * 144].to_vec();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            assert_eq!(x, y);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_features(&[1, 2, 12, 12], &mut rng);
        let w = random_features(&[1, 2, 12, 12], &mut rng);
        let flow = flow_from_permutation(&random_perm(4, &mut rng), 12, 12).unwrap();
        let loss = |x: &Tensor<f64>| -> f64 {
            let y = warp(x, &flow).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let grad = warp_backward(&w, &flow).unwrap();
        let h = 1e-6;
        for i in 0..f.len() {
            let (mut p, mut m) = (f.clone(), f.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let num = (loss(&p) - loss(&m)) / (2.0 * h);
            let rel = (num - grad.data()[i]).abs() / num.abs().max(grad.data()[i].abs()).max(1e-12);
            assert!(rel < 1e-6, "{i}: {num} vs {}", grad.data()[i]);
        }
    }

    #[test]
    fn csv_dump_lists_both_channels() {
        let flow = flow_from_permutation(&Permutation::new(vec![1, 0, 2, 3]).unwrap(), 4, 4).unwrap();
        let mut buf = Vec::new();
        flow.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "channel,row,x0,x1,x2,x3");
        assert_eq!(lines[1], "horizontal,0,2,2,-2,-2");
        assert_eq!(lines.len(), 9);
    }

    #[test]
    fn per_image_warp_matches_single_warps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Tensor::<f64>::uniform(&[3, 2, 6, 6], -1.0, 1.0, &mut rng);
        let flows: Vec<_> = (0..3)
            .map(|_| flow_from_permutation(&random_perm(9, &mut rng), 6, 6).unwrap())
            .collect();
        let out = warp_each(&f, &flows).unwrap();
        let g = Tensor::<f64>::uniform(&[3, 2, 6, 6], -1.0, 1.0, &mut rng);
        let back = warp_each_backward(&g, &flows).unwrap();
        for (i, flow) in flows.iter().enumerate() {
            let one = |t: &Tensor<f64>| Tensor::stack(&[t.index0(i)]).unwrap();
            assert_eq!(out.index0(i), warp(&one(&f), flow).unwrap().index0(0));
            assert_eq!(back.index0(i), warp_backward(&one(&g), flow).unwrap().index0(0));
        }
        assert!(warp_each(&f, &flows[..2]).is_err());
    }
}
