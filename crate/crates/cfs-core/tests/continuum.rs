use cfs_core::continuum::*;
use num_complex::Complex64;

fn models() -> Vec<QhatModel> {
    let specs = [
        FixtureSpec { masses: vec![1.0], weights: vec![], floor: 1.0, a_floor: 0.2, split: 0.5, left_drop: vec![0.5], c: vec![1.5] },
        FixtureSpec { masses: vec![0.7, 1.2], weights: vec![], floor: 0.4, a_floor: 0.0, split: 0.0, left_drop: vec![1.0, 0.3], c: vec![0.8, 2.0] },
        FixtureSpec {
            masses: vec![0.8, 1.0, 1.3],
            weights: vec![1.0, 2.0, 0.5],
            floor: 1.0,
            a_floor: 0.3,
            split: 0.9,
            left_drop: vec![1.0, 0.5, 2.0],
            c: vec![2.0, 0.7, 1.5],
        },
    ];
    specs.iter().map(|s| piecewise_linear_model(s).unwrap()).collect()
}

#[test]
fn fixtures_are_state_stable() {
    for m in models() {
        let r = state_stability_check(&m, &default_q2_grid(&m, 4000)).unwrap();
        assert!(r.pass, "{r:?}");
        for beta in 0..m.generations() {
            assert!(m.c_beta(beta).unwrap() >= 0.0);
        }
    }
}

#[test]
fn direct_matches_closed_on_every_generation() {
    let opts = DirectOptions::default();
    for m in models() {
        for beta in 0..m.generations() {
            let mut p = WavePacket::gaussian(beta, 1.0, 0.7 + 0.2 * beta as f64);
            p.polarization = [Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)];
            let sweep = current_direct_extrapolated(&m, &p, &p, &opts).unwrap();
            let closed = current_closed(&m, &p, None).unwrap();
            let rel = (sweep.extrapolated - closed.momentum).abs() / closed.momentum.abs();
            println!("masses {:?} beta {beta}: direct {:.10e} closed {:.10e} rel {rel:.2e}", m.masses, sweep.extrapolated, closed.momentum);
            assert!(rel < 0.02);
            assert!(closed.relative_difference < 1e-8);
        }
    }
}

#[test]
fn cross_terms_cancel() {
    for m in models().into_iter().skip(1) {
        let packets: Vec<WavePacket> = (0..m.generations())
            .map(|b| {
                let mut p = WavePacket::gaussian(b, 1.0 + 0.3 * b as f64, 0.8);
                p.polarization = [Complex64::new(1.0, 0.2 * b as f64), Complex64::new(0.1, -0.3)];
                p
            })
            .collect();
        let r = cross_terms(&m, &packets, &DirectOptions::default()).unwrap();
        println!("masses {:?}: off {:.3e} diag {:.3e} ratio {:.3e}", m.masses, r.off_diagonal_sum, r.diagonal_abs_sum, r.ratio);
        assert!(r.ratio <= 0.01);
    }
}
