use proptest::prelude::*;
use speckle_core::dataset::{self, build_corpus, split, SplitSpec, PALETTE_MAX};
use speckle_core::exec::Exec;
use speckle_core::metrics;
use speckle_core::recognizer::{distance, EmbeddingModel, EmbeddingRecipe};
use speckle_core::PlainImage;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Pairwise values split by whether both samples share an identity.
fn intra_inter(ids: &[usize], n: usize, f: impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            if ids[i] == ids[j] {
                intra.push(f(i, j));
            } else {
                inter.push(f(i, j));
            }
        }
    }
    (intra, inter)
}

#[test]
fn same_identity_images_are_closer() {
    let corpus = build_corpus(12, 6, 16, 5).unwrap();
    let ids: Vec<usize> = corpus.samples.iter().map(|s| s.identity_id).collect();
    let imgs = corpus.images();
    let (intra, inter) = intra_inter(&ids, imgs.len(), |i, j| {
        metrics::mse(imgs[i].data(), imgs[j].data()).unwrap()
    });
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&intra) < mean(&inter),
        "{} vs {}",
        mean(&intra),
        mean(&inter)
    );
}

#[test]
fn embedding_separates_identities_and_tolerates_brightness() {
    let corpus = build_corpus(12, 6, 16, 5).unwrap();
    let ids: Vec<usize> = corpus.samples.iter().map(|s| s.identity_id).collect();
    let model = EmbeddingModel::new(EmbeddingRecipe::default()).unwrap();
    let emb = model.embed_all(&corpus.images(), Exec::Sequential).unwrap();
    let (intra, inter) = intra_inter(&ids, emb.len(), |i, j| distance(&emb[i], &emb[j]));
    assert!(median(intra) < median(inter));

    // A uniform brightness offset moves an embedding far less than a change
    // of identity does.
    let shifted: Vec<f64> = corpus
        .images()
        .iter()
        .map(|img| {
            let brighter = PlainImage::new(
                16,
                16,
                img.data().iter().map(|v| (v + 0.05).min(1.0)).collect(),
            )
            .unwrap();
            distance(&model.embed(img).unwrap(), &model.embed(&brighter).unwrap())
        })
        .collect();
    let (_, inter) = intra_inter(&ids, emb.len(), |i, j| distance(&emb[i], &emb[j]));
    assert!(median(shifted) < median(inter));
}

#[test]
fn corpus_round_trips_through_manifest() {
    let corpus = build_corpus(3, 2, 16, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let entries = dataset::write_corpus(&corpus, dir.path()).unwrap();
    assert_eq!(entries.len(), corpus.len());
    let loaded = dataset::load_manifest(dir.path().join(dataset::MANIFEST_FILE)).unwrap();
    for (a, b) in loaded.iter().zip(&corpus.samples) {
        assert_eq!(a.identity_id, b.identity_id);
        assert_eq!(a.variation_seed, b.variation_seed);
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rendered_pixels_stay_in_palette(seed in any::<u64>(), n_id in 2usize..5, per in 1usize..4) {
        let c = build_corpus(n_id, per, 16, seed).unwrap();
        prop_assert_eq!(c.len(), n_id * per);
        for s in &c.samples {
            prop_assert!(s.identity_id < n_id);
            prop_assert!(s.image.data().iter().all(|v| (0.0..=PALETTE_MAX).contains(v)));
        }
        let ids: std::collections::BTreeSet<usize> = c.identities.iter().map(|i| i.id).collect();
        prop_assert_eq!(ids.len(), n_id);
    }

    #[test]
    fn splits_are_disjoint_and_stable(
        n in 3usize..300,
        a in 1usize..100, b in 1usize..100, c in 1usize..100,
        seed in any::<u64>(),
    ) {
        let spec = SplitSpec { n_train: a, n_eval: b, n_test: c };
        match split(n, spec, seed) {
            Ok(s) => {
                prop_assert!(a + b + c <= n);
                let mut all: Vec<usize> = s.train.iter().chain(&s.eval).chain(&s.test).copied().collect();
                prop_assert_eq!(all.len(), a + b + c);
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), a + b + c);
                prop_assert!(all.iter().all(|&i| i < n));
                prop_assert_eq!(s, split(n, spec, seed).unwrap());
            }
            Err(_) => prop_assert!(a + b + c > n),
        }
    }

    #[test]
    fn pgm_round_trip_quantizes_to_nearest_level(
        h in 2usize..10, w in 2usize..10, seed in any::<u64>(),
    ) {
        let img = PlainImage::from_fn(h, w, |r, c| {
            ((seed ^ (r * 31 + c) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64
                / (1u64 << 53) as f64
        })
        .unwrap();
        let mut buf = Vec::new();
        dataset::write_pgm(&img, &mut buf).unwrap();
        let back = dataset::read_pgm(buf.as_slice()).unwrap();
        prop_assert_eq!((back.height(), back.width()), (h, w));
        for (x, y) in img.data().iter().zip(back.data()) {
            prop_assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
