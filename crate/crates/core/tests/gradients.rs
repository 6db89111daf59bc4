mod common;

use common::{composite_cases, fd_check, irl_cases, op_cases, rng, FD_TOLERANCE};

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..5 {
        let mut r = rng(1000 + seed);
        for case in op_cases(seed) {
            let rep = fd_check(&case, &mut r);
            assert!(rep.max_rel_error < FD_TOLERANCE, "{} seed {seed}: {rep:?}", case.name);
            assert_eq!(rep.kinks, 0);
        }
    }
}

#[test]
fn loss_composites_match_central_differences() {
    for seed in 0..2 {
        let mut r = rng(2000 + seed);
        for case in composite_cases(seed) {
            let wanted: usize = case.inputs.iter().map(|t| t.numel().min(case.max_coords.unwrap_or(usize::MAX))).sum();
            let rep = fd_check(&case, &mut r);
            assert!(rep.max_rel_error < FD_TOLERANCE, "{} seed {seed}: {rep:?}", case.name);
            assert_eq!(rep.checked, wanted, "{} seed {seed}: {rep:?}", case.name);
        }
    }
}

#[test]
fn irl_objectives_match_central_differences() {
    for seed in 0..2 {
        let mut r = rng(3000 + seed);
        for case in irl_cases(seed) {
            let wanted: usize = case.inputs.iter().map(|t| t.numel().min(case.max_coords.unwrap_or(usize::MAX))).sum();
            let rep = fd_check(&case, &mut r);
            assert!(rep.max_rel_error < FD_TOLERANCE, "{} seed {seed}: {rep:?}", case.name);
            assert_eq!(rep.checked, wanted, "{} seed {seed}: {rep:?}", case.name);
        }
    }
}
