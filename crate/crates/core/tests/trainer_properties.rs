use proptest::prelude::*;

use cloudsvm::dataset::{Dataset, Label, PartitionStrategy, Sample, SparseVector};
use cloudsvm::kernel::KernelSpec;
use cloudsvm::trainer::{cloud_train, cloud_train_with, CloudTrainConfig, RunOptions, StopRule};
use cloudsvm::TrainConfig;

fn dataset(points: &[(f64, f64, bool)]) -> Dataset {
    let samples = points
        .iter()
        .enumerate()
        .map(|(i, &(a, b, pos))| {
            let shift = if pos { 0.5 } else { -0.5 };
            let x = SparseVector::from_dense(&[a + shift, b - shift]).unwrap();
            Sample::new(i as u64, x, Label::from_sign(pos))
        })
        .collect();
    Dataset::with_dim(samples, 2).unwrap()
}

fn balanced_points() -> impl Strategy<Value = Vec<(f64, f64, bool)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8..48).prop_map(|xs| {
        xs.into_iter()
            .enumerate()
            .map(|(i, (a, b))| (a, b, i % 2 == 0))
            .collect()
    })
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::Linear),
        (0.2f64..2.0).prop_map(|gamma| KernelSpec::Rbf { gamma }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sv_set_grows_and_run_terminates(pts in balanced_points(), l in 1usize..5, seed in 0u64..1000,
                                       kernel in kernel(), c in 0.1f64..5.0) {
        let ds = dataset(&pts);
        let cfg = CloudTrainConfig {
            l,
            seed,
            train: TrainConfig::default().with_c(c).with_kernel(kernel),
            stop_rule: StopRule::SvSetFixedPoint,
            max_iterations: ds.len(),
            ..CloudTrainConfig::default()
        };
        let out = cloud_train(&ds, &cfg).unwrap();
        prop_assert!(out.converged);
        prop_assert!(out.trace.len() <= ds.len());
        for (k, s) in out.trace.iter().enumerate() {
            prop_assert_eq!(s.t, k + 1);
            prop_assert!(s.global_sv_count <= ds.len());
            prop_assert_eq!(s.per_node_sv_counts.len(), l);
        }
        for w in out.trace.windows(2) {
            prop_assert!(w[1].global_sv_count >= w[0].global_sv_count);
            let drop = (w[0].dual_value - w[1].dual_value) / w[0].dual_value.abs().max(1.0);
            prop_assert!(drop <= 1e-6, "dual value fell by {}", drop);
        }
        prop_assert!(!out.trace.last().unwrap().sv_set_changed);
        prop_assert_eq!(out.trace.last().unwrap().global_sv_count, out.global_svs.len());
    }

    #[test]
    fn runs_are_reproducible_across_worker_counts(pts in balanced_points(), l in 1usize..5, seed in 0u64..1000) {
        let ds = dataset(&pts);
        let cfg = CloudTrainConfig {
            l,
            seed,
            partition_strategy: PartitionStrategy::Shuffled,
            ..CloudTrainConfig::default()
        };
        let run = |p: usize| cloud_train_with(&ds, &cfg, &RunOptions { parallelism: Some(p), ..RunOptions::default() });
        match (run(1), run(3)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a.trace, &b.trace);
                prop_assert_eq!(a.model.to_json(None), b.model.to_json(None));
            }
            // an unlucky shuffle can leave a node with one class; both runs must agree on that too
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => prop_assert!(false, "runs disagree: {:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }
}
