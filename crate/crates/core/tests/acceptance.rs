//! Acceptance battery: one test per criterion, each printing one
//! PASS/FAIL line per statistic at the reference settings.
//!
//! Lines go straight to the stderr handle so they appear in the test log
//! even when output capture is on.

use msq_core::scalestats::verify::{
    FcltCheck, FllnCheck, FluidInvarianceCheck, IdentityCheck, InsensitivityCheck, LipschitzCheck, MartingaleCheck,
    MomentCheck, RepresentationCheck, SaeCheck,
};
use msq_core::scalestats::TestReport;
use std::io::Write;
use std::time::Instant;

fn report(criterion: u32, title: &str, reports: Vec<TestReport>, started: Instant) {
    let pass = reports.iter().all(|r| r.pass);
    let mut err = std::io::stderr().lock();
    for r in &reports {
        writeln!(err, "  [{criterion:>2}] {}", r.line()).unwrap();
    }
    writeln!(
        err,
        "ACCEPTANCE {criterion:>2} {} {title} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    )
    .unwrap();
    assert!(pass, "criterion {criterion} failed: {reports:#?}");
}

#[test]
fn criterion_01_exact_identities() {
    let t = Instant::now();
    report(1, "balance identities at every event time", IdentityCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_02_martingale_suite() {
    let t = Instant::now();
    report(2, "departure martingale mean and quadratic variation", MartingaleCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_03_representation_first_order() {
    let t = Instant::now();
    report(3, "age representation and shift identity, first order", RepresentationCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_04_flln_rate() {
    let t = Instant::now();
    report(4, "fluid limit error slope in N", FllnCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_05_fluid_invariance() {
    let t = Instant::now();
    report(5, "critical invariant state is stationary", FluidInvarianceCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_06_halfin_whitt_recovery() {
    let t = Instant::now();
    report(6, "M/M/N marginals against the Halfin-Whitt SDE", FcltCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_07_insensitivity() {
    let t = Instant::now();
    report(7, "martingale quadratic variation is service-insensitive", InsensitivityCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_08_moment_bounds() {
    let t = Instant::now();
    report(8, "compensator moments below k! U(T)^k", MomentCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_09_cmse_lipschitz() {
    let t = Instant::now();
    report(9, "CMSE Lipschitz bound and subcritical K = E", LipschitzCheck::default().run().unwrap(), t);
}

#[test]
fn criterion_10_sae_residual() {
    let t = Instant::now();
    report(10, "stochastic age equation residual, first order", SaeCheck::default().run().unwrap(), t);
}
