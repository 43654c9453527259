//! Property-based checks of the invariants of expansion, PSIS, comparison,
//! diagnostics and the ECDF band.

use std::collections::BTreeSet;

use multiverse_filter::cv::{compare, psis_loo, ElpdResult, LogLikMethod, PointwiseLogLik};
use multiverse_filter::diagnostics::{ess_bulk, rhat};
use multiverse_filter::multiverse::{expand, extend, AxesConfig, AxisDef, OptionDef};
use multiverse_filter::ppc::{ecdf_band, ppc_verdict};
use multiverse_filter::psis::{fit_gpd, psis_smooth};
use multiverse_filter::ModelId;
use proptest::prelude::*;
use proptest::sample::subsequence;

const FAMILIES: [&str; 3] = ["poisson", "negative_binomial", "normal"];
const PRIORS: [&str; 3] = ["default", "rhs(3)", "rhs(5)"];
const FORMULAS: [&str; 5] = ["a", "b", "a + b", "a * b", "a + c"];

fn axis(name: &str, options: &[&str]) -> AxisDef {
    AxisDef { name: name.into(), kind: None, options: options.iter().map(|o| OptionDef::Plain((*o).into())).collect() }
}

fn axes_config(axes: Vec<AxisDef>) -> AxesConfig {
    AxesConfig {
        axes,
        known_covariates: vec!["a".into(), "b".into(), "c".into()],
        known_factors: vec!["f".into(), "h".into()],
        ..AxesConfig::default()
    }
}

fn result_from(pointwise: &[f64]) -> ElpdResult {
    let mut table = String::from("obs_id,elpd_i,khat_i,mcse_i,method,unresolved\n");
    for (i, v) in pointwise.iter().enumerate() {
        table.push_str(&format!("{i},{v},0.1,0.01,psis,false\n"));
    }
    ElpdResult::from_table(&table).unwrap()
}

fn loglik_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-8.0f64..0.0, 120), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn expansion_size_is_the_product_of_axis_sizes(
        fams in subsequence(FAMILIES.to_vec(), 1..=3),
        priors in subsequence(PRIORS.to_vec(), 1..=3),
        formulas in subsequence(FORMULAS.to_vec(), 1..=5),
    ) {
        let cfg = axes_config(vec![axis("family", &fams), axis("prior", &priors), axis("formula", &formulas)]);
        let mv = expand(&cfg).unwrap();
        let mut expected = BTreeSet::new();
        for f in &fams {
            for p in &priors {
                for r in &formulas {
                    expected.insert((*f, *p, *r));
                }
            }
        }
        prop_assert_eq!(mv.len(), expected.len());
        prop_assert_eq!(mv.ids().into_iter().collect::<BTreeSet<_>>().len(), mv.len());
        prop_assert_eq!(expand(&cfg).unwrap().to_json(), mv.to_json());
    }

    #[test]
    fn split_extension_equals_merged_extension(
        fams in subsequence(FAMILIES.to_vec(), 1..=2),
        extra in subsequence(FORMULAS[1..].to_vec(), 1..=4),
        split in 0usize..4,
    ) {
        let base = expand(&axes_config(vec![axis("family", &fams), axis("formula", &["a"])])).unwrap();
        let split = split.min(extra.len());
        let (first, second) = extra.split_at(split);
        let delta = |opts: &[&str]| {
            if opts.is_empty() { axes_config(Vec::new()) } else { axes_config(vec![axis("formula", opts)]) }
        };
        let merged = extend(&base, &delta(&extra)).unwrap();
        let twice = extend(&extend(&base, &delta(first)).unwrap(), &delta(second)).unwrap();
        prop_assert_eq!(twice.ids(), merged.ids());
        prop_assert_eq!(merged.len(), fams.len() * (1 + extra.len()));
    }

    #[test]
    fn elpd_total_is_permutation_invariant(rows in loglik_matrix(), seed in any::<u64>()) {
        let ll = PointwiseLogLik { by_obs: rows.clone(), n_chains: 4, method: LogLikMethod::Direct };
        let a = psis_loo(&ll).unwrap();
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        let len = perm.len();
        perm.rotate_left((seed as usize) % len);
        let shuffled = PointwiseLogLik { by_obs: perm.iter().map(|&i| rows[i].clone()).collect(), n_chains: 4, method: LogLikMethod::Direct };
        let b = psis_loo(&shuffled).unwrap();
        prop_assert!((a.elpd_total - b.elpd_total).abs() < 1e-9);
        prop_assert!((a.se - b.se).abs() < 1e-9);
    }

    #[test]
    fn comparison_is_antisymmetric(
        base in prop::collection::vec(-5.0f64..0.0, 40),
        diff in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let other: Vec<f64> = base.iter().zip(&diff).map(|(b, d)| b + d).collect();
        let (a, b) = (result_from(&base), result_from(&other));
        let (ia, ib) = (ModelId("a".into()), ModelId("b".into()));
        let cmp = compare(&[(ia.clone(), &a), (ib.clone(), &b)]).unwrap();
        let loser = if cmp.best_model_id == ia { &ib } else { &ia };
        let row = cmp.row(loser).unwrap();
        prop_assert!(row.delta <= 0.0);
        prop_assert!((row.delta.abs() - (a.elpd_total - b.elpd_total).abs()).abs() < 1e-9);
        let swapped = compare(&[(ib.clone(), &b), (ia.clone(), &a)]).unwrap();
        let row2 = swapped.row(loser).unwrap();
        prop_assert!((row.delta - row2.delta).abs() < 1e-12);
        prop_assert!((row.se_delta - row2.se_delta).abs() < 1e-12);
        prop_assert_eq!(cmp.row(&cmp.best_model_id).unwrap().delta, 0.0);
    }

    #[test]
    fn smoothing_caps_the_maximum_and_keeps_the_body(lr in prop::collection::vec(-20.0f64..5.0, 100..400)) {
        let w = psis_smooth(&lr);
        let max = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = lr.iter().map(|v| v - max).collect();
        prop_assert!(w.log_weights.iter().all(|v| *v <= 0.0));
        let mut sorted = raw.clone();
        sorted.sort_by(f64::total_cmp);
        let m = multiverse_filter::psis::tail_length(lr.len());
        let cutoff = sorted[lr.len() - m - 1];
        for (r, s) in raw.iter().zip(&w.log_weights) {
            if *r <= cutoff {
                prop_assert_eq!(r, s);
            }
        }
    }

    #[test]
    fn gpd_fit_is_scale_equivariant(x in prop::collection::vec(0.001f64..50.0, 20..200), c in 0.01f64..100.0) {
        let a = fit_gpd(&x).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let b = fit_gpd(&scaled).unwrap();
        prop_assert!((a.khat - b.khat).abs() < 1e-9);
        prop_assert!((b.sigma / (a.sigma * c) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn diagnostics_ignore_reparameterisation(
        chains in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 50), 2..5),
        power in -8i32..8,
    ) {
        let scale = 2f64.powi(power);
        let scaled: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| scale * v).collect()).collect();
        let (a, b) = (rhat(&chains), rhat(&scaled));
        prop_assert!((a - b).abs() < 1e-9 || (a.is_nan() && b.is_nan()));
        let exp: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| v.exp()).collect()).collect();
        let (e1, e2) = (ess_bulk(&chains), ess_bulk(&exp));
        prop_assert!((e1 - e2).abs() < 1e-6 * e1.abs().max(1.0) || (e1.is_nan() && e2.is_nan()));
    }

    #[test]
    fn violation_fraction_is_a_fraction(pit in prop::collection::vec(0.0f64..1.0, 50)) {
        let band = ecdf_band(50, 0.05, 500, 1).unwrap();
        let (_, frac) = ppc_verdict(&pit, &band);
        prop_assert!((0.0..=1.0).contains(&frac));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn band_is_monotone_and_brackets_the_diagonal(n in 10usize..200, alpha in 0.01f64..0.2) {
        let band = ecdf_band(n, alpha, 500, 7).unwrap();
        for j in 0..band.grid.len() {
            prop_assert!(band.lower[j] <= band.grid[j] + 1e-12 && band.grid[j] <= band.upper[j] + 1e-12);
            if j > 0 {
                prop_assert!(band.lower[j] >= band.lower[j - 1] && band.upper[j] >= band.upper[j - 1]);
            }
        }
    }
}
