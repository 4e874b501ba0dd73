mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transhet_core::heterogeneity::{np_decompose_values, uniform_weights};
use transhet_core::simulation::{oracle_lambda_grid, oracle_theta, DgpConfig};
use transhet_core::SiteId;

#[test]
fn library_oracle_matches_closed_form() {
    let cfg = DgpConfig::default();
    for x in [0u8, 1] {
        for j in 1..=5 {
            for k in 1..=5 {
                for p in 1..=5 {
                    let a = oracle_theta(&cfg, x, SiteId(j), SiteId(k), SiteId(p));
                    assert!((a - common::theta(x, j, k, p)).abs() < 1e-14);
                }
            }
        }
    }
    for &(l1, l2) in &common::CELLS {
        let a = cfg.site_probabilities(l1, l2);
        let b = common::site_probs(l1, l2);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for s in 0..5 {
            assert!((a[s] - b[s]).abs() < 1e-15);
        }
    }
}

#[test]
fn oracle_grid_values_are_frozen() {
    let cfg = DgpConfig::default();
    let sources: Vec<SiteId> = (2..=5).map(SiteId).collect();
    let grid = oracle_lambda_grid(&cfg, SiteId(1), &sources, &sources);
    let rows = [-0.246_602_77, -0.014_551_61, -0.246_602_77, -0.252_185_5];
    for (r, row) in grid.iter().enumerate() {
        for v in row {
            assert!((v - rows[r]).abs() < 1e-6, "row {r}: {v}");
            assert_eq!(*v, row[0]);
        }
        assert!((row[0] - common::lambda(1, r as u32 + 2, 2)).abs() < 1e-14);
    }
    let w = uniform_weights(4);
    let (_, _, _, _, omega2, zeta2) = np_decompose_values(&grid, &w, &w).unwrap();
    assert!((omega2 - 0.010_264_2).abs() < 1e-6, "{omega2}");
    assert_eq!(zeta2, 0.0);

    let all: Vec<SiteId> = (1..=5).map(SiteId).collect();
    let grid = oracle_lambda_grid(&cfg, SiteId(1), &all, &all);
    let w = uniform_weights(5);
    let (_, _, _, _, omega2, zeta2) = np_decompose_values(&grid, &w, &w).unwrap();
    assert!((omega2 - 0.013_135_7).abs() < 1e-6, "{omega2}");
    assert_eq!(zeta2, 0.0);
}

#[test]
fn oracle_matches_counterfactual_draws() {
    // L from P(L | S=j), M from site p's mediator law, Y from site k's outcome law
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 1_000_000;
    for &(x, j, k, p) in &[(1u8, 1u32, 2u32, 3u32), (0, 1, 4, 5), (1, 2, 3, 1)] {
        let joint: Vec<f64> = common::CELLS.iter().map(|&(l1, l2)| common::site_probs(l1, l2)[j as usize - 1]).collect();
        let total: f64 = joint.iter().sum();
        let mut hits = 0usize;
        for _ in 0..draws {
            let mut u = rng.gen::<f64>() * total;
            let mut c = 0;
            while c < 3 && u >= joint[c] {
                u -= joint[c];
                c += 1;
            }
            let (l1, l2) = common::CELLS[c];
            let xf = f64::from(x);
            let m = f64::from(u8::from(rng.gen::<f64>() < common::p_m(xf, l1, l2)));
            if rng.gen::<f64>() < common::p_y(xf, m, l1, l2, k) {
                hits += 1;
            }
        }
        let est = hits as f64 / draws as f64;
        let truth = oracle_theta(&DgpConfig::default(), x, SiteId(j), SiteId(k), SiteId(p));
        let se = (truth * (1.0 - truth) / draws as f64).sqrt();
        assert!((est - truth).abs() < 3.0 * se, "({x},{j},{k},{p}): {est} vs {truth}");
    }
}
