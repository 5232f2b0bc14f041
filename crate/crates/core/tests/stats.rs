//! Reference values frozen from scipy 1.15.3 (`scipy.stats.shapiro`,
//! `scipy.stats.kruskal`, and Dunn's z computed with numpy on pooled
//! midranks with the ties correction).

use raplkit::stats::report::{analyze, Observation};
use raplkit::stats::{
    bonferroni, classify_delta, cliffs_delta, describe, dunn_posthoc, kruskal_wallis, midranks, overhead, shapiro_wilk,
    Magnitude, StatsError,
};

/// statrs' erfc agrees with scipy's normal tail to ~5e-11 relative; the z
/// statistics themselves match to 1e-12.
const P_TOL: f64 = 1e-10;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

const SW15: [f64; 15] = [
    11.6665, 12.6911, 10.3716, 11.5266, 8.0269, 8.7863, 10.4835, 7.6671, 7.9447, 10.1517, 9.7257, 6.3263, 9.9817,
    12.0724, 8.1432,
];

const SW40: [f64; 40] = [
    0.8914, 0.6595, 0.1028, 0.7925, 0.5638, 0.0574, 0.9615, 0.0641, 0.9806, 0.7951, 0.2019, 0.2906, 0.7645, 0.0757,
    0.1165, 0.4968, 0.2199, 0.4536, 0.8623, 0.7826, 0.8863, 0.85, 0.9106, 0.6359, 0.0925, 0.7241, 0.4887, 0.089,
    0.3675, 0.7976, 0.3885, 0.928, 0.3355, 0.9432, 0.435, 0.9627, 0.1183, 0.9704, 0.5547, 0.6861,
];

#[test]
fn shapiro_wilk_reference_fixtures() {
    let bimodal: Vec<f64> = [0.0; 7].into_iter().chain([100.0; 8]).collect();
    let cases: [(&[f64], f64, f64); 5] = [
        (&SW15, 0.9663184341296369, 0.8002988628857706),
        (&bimodal, 0.6434076354004763, 6.561594083552325e-05),
        (&SW40, 0.9009442771282253, 0.0020367854605010576),
        (&[1.0, 2.0, 4.0, 7.0], 0.9456304828556503, 0.6889364384881989),
        (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
    ];
    for (x, w, p) in cases {
        let r = shapiro_wilk(x).unwrap();
        assert!(close(r.statistic, w, 1e-6), "n={} W {} vs {w}", x.len(), r.statistic);
        assert!(close(r.p_value, p, 1e-6), "n={} p {} vs {p}", x.len(), r.p_value);
    }
}

#[test]
fn shapiro_wilk_is_location_scale_invariant() {
    let base = shapiro_wilk(&SW15).unwrap();
    let moved: Vec<f64> = SW15.iter().map(|v| 3.5 * v - 40.0).collect();
    let r = shapiro_wilk(&moved).unwrap();
    assert!(close(r.statistic, base.statistic, 1e-12));
}

#[test]
fn kruskal_wallis_reference() {
    let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    assert!(close(r.statistic, 3.857142857142854, 1e-12));
    assert!(close(r.p_value, 0.049534613435626915, 1e-12));

    let r = kruskal_wallis(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]).unwrap();
    assert!(close(r.statistic, 7.2, 1e-12));
    assert!(close(r.p_value, 0.02732372244729252, 1e-12));

    let ties: [&[f64]; 3] = [&[1.0, 2.0, 2.0, 3.0], &[2.0, 3.0, 3.0, 4.0, 5.0], &[5.0, 5.0, 6.0]];
    let r = kruskal_wallis(&ties).unwrap();
    assert!(close(r.statistic, 7.578223844282238, 1e-12));
    assert!(close(r.p_value, 0.02261567741784765, 1e-12));
}

#[test]
fn kruskal_wallis_all_tied_is_null() {
    let r = kruskal_wallis(&[[4.0, 4.0], [4.0, 4.0]]).unwrap();
    assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
}

#[test]
fn dunn_reference() {
    let d = dunn_posthoc(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]).unwrap();
    assert_eq!(d.comparisons, 3);
    let expect = [
        (0, 1, -1.3416407864998738, 0.17971249487899976, 0.5391374846369993),
        (0, 2, -2.6832815729997477, 0.007290358091535638, 0.021871074274606914),
        (1, 2, -1.3416407864998738, 0.17971249487899976, 0.5391374846369993),
    ];
    for (i, j, z, p, adj) in expect {
        assert!(close(d.z[i][j], z, 1e-12));
        assert!(close(d.z[j][i], -z, 1e-12));
        assert!(close(d.p_raw[i][j], p, P_TOL), "p[{i}][{j}] {:e} vs {p:e}", d.p_raw[i][j]);
        assert!(close(d.p_adjusted[i][j], adj, P_TOL));
        assert_eq!(d.p_adjusted[i][j], (3.0 * d.p_raw[i][j]).min(1.0));
    }

    let ties: [&[f64]; 3] = [&[1.0, 2.0, 2.0, 3.0], &[2.0, 3.0, 3.0, 4.0, 5.0], &[5.0, 5.0, 6.0]];
    let d = dunn_posthoc(&ties).unwrap();
    let expect = [
        (0, 1, -1.415059199653472, 0.15705113948418456, 0.47115341845255365),
        (0, 2, -2.7516071077383617, 0.005930362307000746, 0.017791086921002237),
        (1, 2, -1.5778847215963532, 0.11459209557626444, 0.34377628672879335),
    ];
    for (i, j, z, p, adj) in expect {
        assert!(close(d.z[i][j], z, 1e-12), "z[{i}][{j}] {}", d.z[i][j]);
        assert!(close(d.p_raw[i][j], p, P_TOL), "p[{i}][{j}] {:e} vs {p:e}", d.p_raw[i][j]);
        assert!(close(d.p_adjusted[i][j], adj, P_TOL));
        assert_eq!(d.p_adjusted[i][j], (3.0 * d.p_raw[i][j]).min(1.0));
    }
}

#[test]
fn bonferroni_is_capped_product() {
    assert_eq!(bonferroni(0.01, 3), 0.03);
    assert_eq!(bonferroni(0.4, 3), 1.0);
    assert_eq!(bonferroni(0.0, 28), 0.0);
}

#[test]
fn midranks_and_tie_term() {
    let (r, t) = midranks(&[10.0, 20.0, 20.0, 30.0, 20.0]);
    assert_eq!(r, [1.0, 3.0, 3.0, 5.0, 3.0]);
    assert_eq!(t, 24.0);
}

#[test]
fn cliffs_delta_extremes_and_magnitudes() {
    assert_eq!(cliffs_delta(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), -1.0);
    assert_eq!(cliffs_delta(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
    assert_eq!(cliffs_delta(&[5.0, 5.0, 5.0], &[5.0, 5.0]).unwrap(), 0.0);
    assert_eq!(cliffs_delta(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    assert_eq!(classify_delta(0.1), Magnitude::Negligible);
    assert_eq!(classify_delta(-0.2), Magnitude::Small);
    assert_eq!(classify_delta(0.4), Magnitude::Medium);
    assert_eq!(classify_delta(-0.9), Magnitude::Large);
    assert_eq!(cliffs_delta(&[], &[1.0]), Err(StatsError::EmptyGroup));
}

#[test]
fn describe_matches_pandas_conventions() {
    let d = describe(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!((d.q25, d.median, d.q75), (1.75, 2.5, 3.25));
    assert!(close(d.std, 1.2909944487358056, 1e-15));
    assert!(matches!(describe(&[1.0, f64::NAN]), Err(StatsError::NonFinite)));
}

#[test]
fn overhead_uses_group_medians() {
    let r = overhead(&[10.0, 11.0, 12.0], &[12.0, 13.0, 14.0]).unwrap();
    assert_eq!(r.delta_t, 2.0);
    assert!(close(r.pct_delta, 100.0 * 2.0 / 11.0, 1e-12));
}

#[test]
fn report_groups_fifteen_per_cell() {
    let mut obs = Vec::new();
    for (k, tool) in ["none", "ring"].iter().enumerate() {
        for bench in ["bt", "cg"] {
            for r in 0..15 {
                obs.push(Observation {
                    tool: tool.to_string(),
                    benchmark: bench.into(),
                    value: 100.0 + k as f64 * 5.0 + (r as f64 * 0.37).sin(),
                });
            }
        }
    }
    let rep = analyze(&obs, "none", "duration_s").unwrap();
    assert_eq!(rep.benchmarks.len(), 2);
    for b in &rep.benchmarks {
        assert!(b.columns.iter().all(|c| c.describe.n == 15));
        assert!(b.columns.iter().all(|c| c.shapiro.is_some()));
        assert_eq!(b.vs_baseline[0].magnitude, Magnitude::Large);
        assert!(b.kruskal.unwrap().p_value < 1e-5);
    }
}
