//! What the training loop may see, and what inference may run.

use jigsaw_core::compat::matrices_built_on_this_thread;
use jigsaw_core::data::{image_to_tensor, make_shuffled_sample, tensor_to_image};
use jigsaw_core::eval::{reassemble, solve};
use jigsaw_core::networks::{adversarial_forwards_on_this_thread, InferenceModel, JigsawNet};
use jigsaw_core::puzzle::{split_image, GridSpec, PermutationSet};
use jigsaw_core::synth::smooth_image;

#[test]
fn training_source_never_mentions_true_class() {
    let source = include_str!("../src/training.rs");
    assert!(!source.contains("true_class"));
    assert!(!source.contains("ShuffledSample"));
    let step = source
        .find("pub fn train_step(")
        .map(|i| &source[i..i + source[i..].find('{').unwrap()])
        .unwrap();
    assert!(step.contains("pieces: &[PieceBatch]"), "{step}");
}

#[test]
fn solve_runs_encoder_and_classifier_only() {
    let grid = GridSpec::new(2, 8).unwrap();
    let set = PermutationSet::generate(2, 6, 0).unwrap();
    let mut model = InferenceModel::from_net(JigsawNet::new(grid, 6, 1).unwrap());
    let images: Vec<_> = (0..3)
        .map(|k| {
            let s = make_shuffled_sample(&smooth_image(16, k % 2, k as u64), "x", grid, &set, k as u64).unwrap();
            // quantise like a PNG round trip so the output comparison is exact
            let img = image_to_tensor(&tensor_to_image(&s.pieces.assemble()).unwrap());
            (format!("img{k}"), img)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let matrices = matrices_built_on_this_thread();
    let adversarial = adversarial_forwards_on_this_thread();
    let predictions = solve(&mut model, &set, &images, dir.path(), None).unwrap();
    assert_eq!(matrices_built_on_this_thread(), matrices);
    assert_eq!(adversarial_forwards_on_this_thread(), adversarial);

    assert_eq!(predictions.len(), 3);
    for ((id, img), p) in images.iter().zip(&predictions) {
        let puzzle = split_image(img, grid, id).unwrap();
        let expected = tensor_to_image(&reassemble(&puzzle, set.get(p.predicted_class).unwrap()).unwrap()).unwrap();
        let written = image::open(dir.path().join(format!("{id}.png"))).unwrap().to_rgb8();
        assert!(written == expected, "{id}");
    }
}
