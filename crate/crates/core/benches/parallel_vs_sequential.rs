use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jigsaw_core::compat::reference_labels;
use jigsaw_core::exec::with_kernel_exec;
use jigsaw_core::networks::Encoder;
use jigsaw_core::nn::Mode;
use jigsaw_core::puzzle::{split_image, GridSpec, PermutationSet, PieceBatch};
use jigsaw_core::synth::smooth_image;
use jigsaw_core::{Exec, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn puzzles(grid: GridSpec, set: &PermutationSet, count: usize) -> Vec<PieceBatch> {
    (0..count)
        .map(|k| {
            let image = smooth_image(grid.image_side(), k, k as u64);
            let class = k % set.len();
            split_image(&image, grid, "bench").unwrap().apply_permutation(set.get(class).unwrap()).unwrap()
        })
        .collect()
}

fn bench_reference_labels(c: &mut Criterion) {
    let grid = GridSpec::new(3, 24).unwrap();
    let set = PermutationSet::generate(3, 100, 0).unwrap();
    let batch = puzzles(grid, &set, 16);
    let mut group = c.benchmark_group("reference_labels");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| reference_labels(&batch, &set, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_encoder_forward(c: &mut Criterion) {
    let grid = GridSpec::new(3, 24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut encoder = Encoder::<f32>::new(3, &mut rng);
    let pieces = Tensor::<f32>::uniform(&[2 * grid.cells(), 3, 24, 24], -1.0, 1.0, &mut rng);
    let mut group = c.benchmark_group("encoder_forward");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_kernel_exec(exec, || encoder.forward(&pieces, Mode::Eval).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_reference_labels, bench_encoder_forward);
criterion_main!(benches);
