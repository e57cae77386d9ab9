use proptest::prelude::*;

use panel_clusters::clustering::{components_at, ClusterAssignment};
use panel_clusters::longrun::{longrun_matrix, KernelSpec};
use panel_clusters::panel::{load_panel, DataSchema, PanelData};
use panel_clusters::regression::{cluster_ols, pooled_ols, score_series, ScoreSeries};
use panel_clusters::tuning::{block_estimates, cv_objective, partition_blocks, CvTarget};

fn panel_strategy() -> impl Strategy<Value = PanelData> {
    (2usize..5, 2usize..7, 1usize..3).prop_flat_map(|(n, t, p)| {
        (
            proptest::collection::vec(-1e3f64..1e3, n * t),
            proptest::collection::vec(-10f64..10.0, n * t * p),
        )
            .prop_map(move |(y, x)| {
                let ids = (0..n).map(|i| format!("unit{i}")).collect();
                PanelData::from_flat(n, t, p, y, x, ids).unwrap()
            })
    })
}

fn scores_strategy() -> impl Strategy<Value = ScoreSeries> {
    (1usize..6, 5usize..15, 1usize..3).prop_flat_map(|(n, t, p)| {
        proptest::collection::vec(-3f64..3.0, n * t * p)
            .prop_map(move |w| ScoreSeries::from_flat(n, t, p, w).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_then_load_is_identity(panel in panel_strategy(), seed in any::<u64>()) {
        let mut buf = Vec::new();
        panel.write_delimited(&mut buf, b',').unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = load_panel(text.as_bytes(), &panel.serialized_schema(), b',').unwrap();
        prop_assert_eq!(&back, &panel);

        // same rows in a scrambled order
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let mut state = seed | 1;
        for k in (1..lines.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            lines.swap(k, (state % (k as u64 + 1)) as usize);
        }
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let again = load_panel(shuffled.as_bytes(), &panel.serialized_schema(), b',').unwrap();
        prop_assert_eq!(&again, &panel);
    }

    #[test]
    fn scores_are_orthogonal(panel in panel_strategy()) {
        if let Ok(fit) = pooled_ols(&panel) {
            let scores = score_series(&panel, &fit).unwrap();
            let scale: f64 = panel.y_flat().iter().map(|v| v.abs()).fold(1.0, f64::max)
                * panel.x_flat().iter().map(|v| v.abs()).fold(1.0, f64::max);
            for a in 0..panel.n_covariates() {
                let total: f64 = scores.component_matrix(a).sum();
                prop_assert!(total.abs() <= 1e-8 * scale * panel.n_obs() as f64);
            }
            let one = ClusterAssignment::from_labels(vec![0; panel.n_units()]).unwrap();
            if let Ok(fits) = cluster_ols(&panel, &one) {
                prop_assert_eq!(&fits[0].fit.beta_hat, &fit.beta_hat);
            }
        }
    }

    #[test]
    fn longrun_is_symmetric_and_nonnegative(scores in scores_strategy(), l in 0usize..4) {
        let m = longrun_matrix(&scores, KernelSpec::bartlett(l)).unwrap();
        let n = scores.n_units();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(m.sigma[(i, j)], m.sigma[(j, i)]);
                prop_assert_eq!(m.corr[(i, j)].to_bits(), m.corr[(j, i)].to_bits());
                prop_assert!(m.sigma[(i, j)] >= 0.0);
                prop_assert!(m.corr[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn higher_threshold_refines(
        n in 2usize..12,
        entries in proptest::collection::vec(0f64..1.0, 66),
        lo in 0f64..1.0,
        step in 0f64..1.0,
    ) {
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                let (a, b) = (i.min(j), i.max(j));
                entries[b * (b - 1) / 2 + a]
            }
        });
        let hi = (lo + step).min(1.0);
        let coarse = components_at(&m, lo);
        let fine = components_at(&m, hi);
        // every fine block maps into a single coarse block
        let mut image = vec![0usize; fine.q_hat() + 1];
        for (&f, &c) in fine.labels().iter().zip(coarse.labels()) {
            if image[f] == 0 {
                image[f] = c;
            }
            prop_assert_eq!(image[f], c);
        }
        prop_assert!(fine.q_hat() >= coarse.q_hat());
    }
}

#[test]
fn zero_threshold_objective_is_cross_block_dispersion() {
    let (panel, _) = panel_clusters::montecarlo::generate(&panel_clusters::montecarlo::DgpConfig {
        q: 2,
        n_units: 6,
        n_periods: 60,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let fit = pooled_ols(&panel).unwrap();
    let blocks = partition_blocks(60).unwrap();
    let mats = block_estimates(&panel, &fit, &blocks, 2).unwrap();
    for target in [CvTarget::Correlation, CvTarget::SignedCorrelation] {
        let pick = |k: usize| match target {
            CvTarget::Correlation => &mats[k].corr,
            CvTarget::SignedCorrelation => &mats[k].signed_corr,
        };
        let mut direct = 0.0;
        for p in 0..mats.len() {
            for q in 0..mats.len() {
                if p != q {
                    direct += (pick(p) - pick(q)).iter().map(|v| v * v).sum::<f64>();
                }
            }
        }
        let got = cv_objective(&mats, 0.0, target);
        assert!((got - direct).abs() <= 1e-12 * direct.max(1.0), "{got} vs {direct}");
    }
}

#[test]
fn schema_driven_load_with_named_covariates() {
    let text = "firm;year;sales;price\nb;2001;3.0;1.0\na;2001;1.0;2.0\na;2000;2.0;0.5\nb;2000;1.5;1.5\n";
    let schema = DataSchema::from_spec("firm,year,sales,price", true).unwrap();
    let panel = load_panel(text.as_bytes(), &schema, b';').unwrap();
    assert_eq!(panel.unit_ids(), ["a", "b"]);
    assert_eq!(panel.time_labels(), ["2000", "2001"]);
    assert_eq!(panel.x_row(0, 0), [1.0, 0.5]);
    assert_eq!(panel.y(1, 1), 3.0);
}
