use std::collections::{BTreeSet, HashMap};

use damper_twin::pipeline::{histogram_bins, Stage};
use damper_twin::{
    augment_gaussian, index_filter, oversample_histogram, run_pipeline, split_by_runs,
    AugmentationConfig, Example, IndexingConfig, OversamplingConfig, PipelineConfig,
    PreparedDataset, Provenance, RunConfig, ScalingState, StageToggles,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> PreparedDataset {
    PreparedDataset::new(
        (0..n)
            .map(|_| Example {
                x: [rng.random(), rng.random(), rng.random()],
                // skewed, with a gap in (0.3, 0.45)
                y: {
                    let u: f64 = rng.random();
                    if u < 0.7 {
                        u * u * 0.4
                    } else {
                        0.45 + u * 0.5
                    }
                },
                provenance: Provenance::Original,
            })
            .collect(),
    )
}

fn key(e: &Example) -> [u64; 4] {
    [e.x[0].to_bits(), e.x[1].to_bits(), e.x[2].to_bits(), e.y.to_bits()]
}

#[test]
fn augmentation_noise_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = random_dataset(&mut rng, 10_000);
    let out = augment_gaussian(&data, &AugmentationConfig::default()).unwrap();
    assert_eq!(out.len(), 20_000);
    assert_eq!(&out.examples[..10_000], &data.examples[..]);

    let mut diffs = Vec::with_capacity(40_000);
    for (orig, rep) in data.examples.iter().zip(&out.examples[10_000..]) {
        assert_eq!(rep.provenance, Provenance::Augmented);
        for c in 0..3 {
            diffs.push(rep.x[c] - orig.x[c]);
        }
        diffs.push(rep.y - orig.y);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 0.002, "mean {mean}");
    assert!((0.045..=0.055).contains(&sd), "sd {sd}");
}

#[test]
fn augmentation_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = random_dataset(&mut rng, 100);
    let cfg = AugmentationConfig::default();
    assert_eq!(augment_gaussian(&data, &cfg).unwrap(), augment_gaussian(&data, &cfg).unwrap());
    let other = AugmentationConfig { seed: 99, ..cfg };
    assert_ne!(augment_gaussian(&data, &cfg).unwrap(), augment_gaussian(&data, &other).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn oversampling_balances_non_empty_bins(seed in any::<u64>(), n in 1usize..400, n_bins in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, n);
        let out = oversample_histogram(&data, &OversamplingConfig { n_bins, seed }).unwrap();

        // binning is defined by the input range; replicas never extend it
        let mut before = vec![0usize; n_bins];
        for b in histogram_bins(&data.targets(), n_bins) {
            before[b] += 1;
        }
        let max = *before.iter().max().unwrap();
        let mut after = vec![0usize; n_bins];
        for b in histogram_bins(&out.targets(), n_bins) {
            after[b] += 1;
        }
        for (b, a) in before.iter().zip(&after) {
            if *b == 0 {
                prop_assert_eq!(*a, 0);
            } else {
                prop_assert_eq!(*a, max);
            }
        }

        prop_assert_eq!(&out.examples[..n], &data.examples[..]);
        let originals: BTreeSet<_> = data.examples.iter().map(key).collect();
        let all: BTreeSet<_> = out.examples.iter().map(key).collect();
        prop_assert_eq!(originals, all);
        prop_assert!(out.examples[n..].iter().all(|e| e.provenance == Provenance::OversampleReplica));
    }

    #[test]
    fn indexing_keeps_pairs_at_original_indices(
        deltas in proptest::collection::vec(-1.0f64..1.0, 1..300),
        threshold in 0.01f64..0.9,
    ) {
        let data = PreparedDataset::new(
            deltas
                .iter()
                .enumerate()
                .map(|(i, &d)| Example { x: [i as f64, d, -d], y: 0.5 + d / 2.0, provenance: Provenance::Original })
                .collect(),
        );
        match index_filter(&data, &deltas, &IndexingConfig { threshold }) {
            Ok((kept, idx)) => {
                prop_assert_eq!(kept.len(), idx.len());
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                for (e, &i) in kept.examples.iter().zip(&idx) {
                    prop_assert_eq!(e, &data.examples[i]);
                    prop_assert!(deltas[i].abs() >= threshold);
                }
                let dropped = deltas.iter().filter(|d| d.abs() < threshold).count();
                prop_assert_eq!(dropped + kept.len(), deltas.len());
            }
            Err(_) => prop_assert!(deltas.iter().all(|d| d.abs() < threshold)),
        }
    }
}

#[test]
fn empty_bins_stay_empty() {
    // targets only in the lowest and highest fifths
    let ys = [0.0, 0.05, 0.1, 0.1, 0.9, 1.0];
    let data = PreparedDataset::new(
        ys.iter()
            .map(|&y| Example {
                x: [0.0; 3],
                y,
                provenance: Provenance::Original,
            })
            .collect(),
    );
    let out = oversample_histogram(&data, &OversamplingConfig { n_bins: 5, seed: 1 }).unwrap();
    assert!(out.targets().iter().all(|&y| y <= 0.2 || y >= 0.8));
    assert_eq!(out.len(), 8);
}

fn default_train() -> (damper_twin::RawDataset, ScalingState, RunConfig) {
    let cfg = RunConfig::default();
    let data = cfg.generate().unwrap();
    let (train, _) = split_by_runs(&data, &cfg.held_out()).unwrap();
    let scaling = ScalingState::fit(&train).unwrap();
    (train, scaling, cfg)
}

#[test]
fn pipeline_stage_sizes_on_default_data() {
    let (train, scaling, cfg) = default_train();

    let off = run_pipeline(&train, StageToggles::NONE, &cfg.pipeline, &scaling).unwrap();
    assert_eq!(off.data, scaling.apply(&train));
    assert_eq!(off.log.entries().len(), 4);
    assert!(off.log.entries().iter().all(|e| e.rows_in == train.len() && e.rows_out == train.len()));

    let on = run_pipeline(&train, StageToggles::ALL, &cfg.pipeline, &scaling).unwrap();
    let stages: Vec<Stage> = on.log.entries().iter().map(|e| e.stage).collect();
    assert_eq!(stages, [Stage::Scale, Stage::Index, Stage::Augment, Stage::Oversample]);
    let rows: Vec<usize> = on.log.entries().iter().map(|e| e.rows_out).collect();
    assert!(rows[0] >= rows[1]);
    assert_eq!(rows[2], 2 * rows[1]);
    assert!(rows[3] >= rows[2]);
    assert_eq!(on.data.len(), rows[3]);

    let again = run_pipeline(&train, StageToggles::ALL, &cfg.pipeline, &scaling).unwrap();
    assert_eq!(on, again);
}

#[test]
fn oversampling_adds_only_duplicates_on_default_data() {
    let (train, scaling, cfg) = default_train();
    let stages = StageToggles {
        oversampling: false,
        ..StageToggles::ALL
    };
    let before = run_pipeline(&train, stages, &cfg.pipeline, &scaling).unwrap().data;
    let after = oversample_histogram(&before, &cfg.pipeline.oversampling).unwrap();
    let mut counts: HashMap<[u64; 4], usize> = HashMap::new();
    for e in &before.examples {
        *counts.entry(key(e)).or_default() += 1;
    }
    assert!(after.examples.iter().all(|e| counts.contains_key(&key(e))));
}

#[test]
fn stage_log_csv() {
    let (train, scaling, _) = default_train();
    let out = run_pipeline(&train, StageToggles::parse("index").unwrap(), &PipelineConfig::default(), &scaling).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    out.log.save_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "stage,rows_in,rows_out");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("scale,"));
    assert_eq!(lines[3], format!("augment,{0},{0}", out.data.len()));
}
