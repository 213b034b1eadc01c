use groundloc::features::*;
use groundloc::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn speckle_view(seed: u64, w: usize, h: usize) -> GrayImage {
    let world = TextureWorld::generate(WorldSpec {
        seed,
        width: 600,
        height: 600,
        ..WorldSpec::default()
    })
    .unwrap();
    world.render_view(&Pose2D::new(300.0, 300.0, 0.4), w, h, 0.0, 0).unwrap()
}

fn rotate_quarter(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::filled(h, w, 0);
    for r in 0..h {
        for c in 0..w {
            out.set(h - 1 - r, c, img.get(c, r));
        }
    }
    out
}

fn bits(b: u32, len: u8) -> Feature {
    Feature {
        keypoint: Keypoint::new(0.0, 0.0, 0.0, 1.0),
        descriptor: Descriptor::Binary(BitDescriptor { bits: b, len }),
    }
}

fn real(v: Vec<f32>) -> Feature {
    Feature {
        keypoint: Keypoint::new(0.0, 0.0, 0.0, 1.0),
        descriptor: Descriptor::Real(v),
    }
}

#[test]
fn detector_examples() {
    let p = DetectorParams::default();
    assert!(detect_keypoints(&GrayImage::filled(200, 150, 128), &p, 850).is_empty());

    let img = speckle_view(1, 320, 240);
    let k = detect_keypoints(&img, &p, 850);
    assert!(!k.is_empty() && k.len() <= 850);
    assert!(k.windows(2).all(|w| w[0].response >= w[1].response));
    assert_eq!(k, detect_keypoints(&img, &p, 850));
}

#[test]
fn quarter_turn_keeps_most_keypoints() {
    let p = DetectorParams::default();
    let img = speckle_view(2, 240, 240);
    let rot = rotate_quarter(&img);
    let a = detect_keypoints(&img, &p, 300);
    let b = detect_keypoints(&rot, &p, 400);
    let found = a
        .iter()
        .filter(|k| b.iter().any(|q| (q.x + k.y).hypot(q.y - k.x) <= 2.0))
        .count();
    let ratio = found as f64 / a.len() as f64;
    assert!(ratio >= 0.6, "{ratio}");
}

#[test]
fn descriptor_examples() {
    let img = speckle_view(3, 200, 160);
    let k = detect_keypoints(&img, &DetectorParams::default(), 200);
    let params = DescriptorParams {
        sampling_radius: 12.0,
        comparison_count: 48,
        kept_bits: 15,
    };
    let (f, _) = describe_binary(&img, &k, &params);
    assert!(!f.is_empty());
    assert!(f.iter().all(|x| x.descriptor.as_binary().unwrap().len == 15));
    assert_eq!(f, describe_binary(&img, &k, &params).0);
    let (r, _) = describe_real(&img, &k);
    assert!(r.iter().all(|x| x.descriptor.as_real().unwrap().len() == REAL_DESCRIPTOR_DIM));
}

#[test]
fn binary_descriptor_tolerates_noise() {
    let world = TextureWorld::generate(WorldSpec {
        seed: 4,
        width: 600,
        height: 600,
        ..WorldSpec::default()
    })
    .unwrap();
    let pose = Pose2D::new(300.0, 300.0, 0.0);
    let clean = world.render_view(&pose, 240, 200, 0.0, 0).unwrap();
    let noisy = world.render_view(&pose, 240, 200, 2.0, 9).unwrap();
    let params = DescriptorParams {
        sampling_radius: 12.0,
        comparison_count: 48,
        kept_bits: 24,
    };
    let k: Vec<Keypoint> = detect_keypoints(&clean, &DetectorParams::default(), 100);
    let a = describe_binary(&clean, &k, &params).0;
    let b = describe_binary(&noisy, &k, &params).0;
    assert_eq!(a.len(), 100.min(k.len()));
    let mean: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.descriptor.as_binary().unwrap().hamming(&y.descriptor.as_binary().unwrap()) as f64)
        .sum::<f64>()
        / a.len() as f64;
    assert!(mean <= 0.2 * 24.0, "{mean}");
}

#[test]
fn pca_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<Vec<f32>> = (0..50).map(|_| (0..32).map(|_| rng.random::<f32>()).collect()).collect();
    let p = fit_projection(&data, 16).unwrap();
    assert_eq!(p.target_dim(), 16);
    assert_eq!(project(&p, &data[0]).len(), 16);

    // Projected variance equals the sum of the top 16 covariance eigenvalues.
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..32).map(|j| data.iter().map(|r| r[j] as f64).sum::<f64>() / n).collect();
    let cov = nalgebra::DMatrix::from_fn(32, 32, |a, b| {
        data.iter().map(|r| (r[a] as f64 - mean[a]) * (r[b] as f64 - mean[b])).sum::<f64>() / (n - 1.0)
    });
    let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = eig[..16].iter().sum();
    let projected: Vec<Vec<f64>> = data.iter().map(|r| project(&p, r).iter().map(|&v| v as f64).collect()).collect();
    let pm: Vec<f64> = (0..16).map(|j| projected.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var: f64 = (0..16)
        .map(|j| projected.iter().map(|r| (r[j] - pm[j]).powi(2)).sum::<f64>() / (n - 1.0))
        .sum();
    assert!((var - top).abs() <= 1e-4 * top, "{var} vs {top}");
}

#[test]
fn identity_matching_examples() {
    let q = [bits(0b101, 3)];
    let r = [bits(0b101, 3), bits(0b100, 3)];
    assert_eq!(match_identity(&q, &r).unwrap().len(), 1);
    let q = [bits(0b101, 3), bits(0b101, 3)];
    let r = [bits(0b101, 3), bits(0b101, 3)];
    let m = match_identity(&q, &r).unwrap();
    assert_eq!(m.len(), 4);
    let order: Vec<(usize, usize)> = m.iter().map(|m| (m.query, m.reference)).collect();
    assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    assert!(matches!(match_identity(&q, &[real(vec![1.0])]), Err(Error::KindMismatch(_))));
}

#[test]
fn uniform_collisions_match_oracle() {
    let expected = 850.0 * 850.0 / 32768.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<Feature> { (0..n).map(|_| bits(rng.random_range(0..1u32 << 15), 15)).collect() };
        let q = draw(850);
        let r = draw(850);
        let n = match_identity(&q, &r).unwrap().len() as f64;
        assert!((n - expected).abs() <= 0.3 * expected + 2.0 * expected.sqrt(), "seed {seed}: {n} vs {expected}");
    }
    // The mean over seeds is tight.
    let mean: f64 = (0..100)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut draw = |n: usize| -> Vec<Feature> { (0..n).map(|_| bits(rng.random_range(0..1u32 << 15), 15)).collect() };
            let q = draw(850);
            let r = draw(850);
            match_identity(&q, &r).unwrap().len() as f64
        })
        .sum::<f64>()
        / 100.0;
    assert!((mean - expected).abs() <= 0.3 * expected, "{mean}");
}

#[test]
fn nearest_matching_examples() {
    let refs: Vec<Feature> = (0..5).map(|i| real(vec![i as f32, 0.0])).collect();
    let index = NnIndex::build(&refs).unwrap();
    let m = match_nearest(&[real(vec![3.0, 0.0])], &index).unwrap();
    assert_eq!(m[0].reference, 3);
    assert_eq!(index.nearest(&[3.0, 0.0]).unwrap().1, 0.0);
    let q: Vec<Feature> = (0..300).map(|i| real(vec![i as f32 * 0.01, 1.0])).collect();
    assert_eq!(match_nearest(&q, &index).unwrap().len(), 300);
    let empty = NnIndex::build(&[]).unwrap();
    assert!(matches!(match_nearest(&q, &empty), Err(Error::EmptyIndex)));
}

#[test]
fn kd_tree_agrees_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let refs: Vec<Feature> = (0..1000).map(|_| real((0..8).map(|_| rng.random::<f32>()).collect())).collect();
    let index = NnIndex::build(&refs).unwrap();
    for _ in 0..200 {
        let q: Vec<f32> = (0..8).map(|_| rng.random::<f32>()).collect();
        let d = |f: &Feature| f.descriptor.as_real().unwrap().iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f32>();
        let (best, _) = refs
            .iter()
            .enumerate()
            .fold((0, f32::MAX), |acc, (i, f)| if d(f) < acc.1 { (i, d(f)) } else { acc });
        assert_eq!(index.nearest(&q).unwrap().0, best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fewer_bits_never_lose_matches(seed in any::<u64>(), kept in 8usize..24) {
        let img = speckle_view(seed % 5, 200, 160);
        let k = detect_keypoints(&img, &DetectorParams::default(), 300);
        let p = |bits| DescriptorParams { sampling_radius: 10.0, comparison_count: 48, kept_bits: bits };
        let count = |bits| {
            let f = describe_binary(&img, &k, &p(bits)).0;
            let (a, b) = f.split_at(f.len() / 2);
            match_identity(a, b).unwrap().len()
        };
        prop_assert!(count(kept) >= count(kept + 1));
    }

    #[test]
    fn higher_threshold_never_adds_keypoints(t in 0.5f64..8.0, dt in 0.0f64..4.0) {
        let img = speckle_view(7, 160, 120);
        let with = |r| detect_keypoints(&img, &DetectorParams { response_threshold: r, ..DetectorParams::default() }, usize::MAX).len();
        prop_assert!(with(t + dt) <= with(t));
    }

    #[test]
    fn nearest_ignores_reference_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs: Vec<Feature> = (0..60).map(|_| real((0..4).map(|_| rng.random_range(0..4) as f32).collect())).collect();
        let q: Vec<Feature> = (0..20).map(|_| real((0..4).map(|_| rng.random_range(0..4) as f32).collect())).collect();
        let ids: Vec<usize> = (0..60).collect();
        let mut perm = ids.clone();
        perm.reverse();
        let permuted: Vec<Feature> = perm.iter().map(|&i| refs[i].clone()).collect();
        let a = match_nearest(&q, &NnIndex::build_with_ids(&refs, &ids).unwrap()).unwrap();
        let b = match_nearest(&q, &NnIndex::build_with_ids(&permuted, &perm).unwrap()).unwrap();
        let pa: Vec<usize> = a.iter().map(|m| m.reference).collect();
        let pb: Vec<usize> = b.iter().map(|m| m.reference).collect();
        prop_assert_eq!(pa, pb);
    }
}
