//! Exercises the C entry points from Rust and pins them to the underlying
//! library: identical numeric results, correct status codes, and untouched
//! out-parameters on failure.

use meanfield::activation::Activation;
use meanfield::maps::{self, NetworkHyperparams};
use meanfield::spectrum::{self, InitScheme};
use meanfield::{bounds, MfError};
use meanfield_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn parse_ok(spec: &str) -> *mut MfActivation {
    let spec = CString::new(spec).unwrap();
    let mut h: *mut MfActivation = ptr::null_mut();
    let st = unsafe { mf_activation_parse(spec.as_ptr(), &mut h) };
    assert_eq!(st, MF_OK);
    assert!(!h.is_null());
    h
}

#[test]
fn phi_and_dphi_match_library() {
    let h = parse_ok("ssoftsign:2:0.5");
    let act = Activation::parse("ssoftsign:2:0.5").unwrap();
    for &z in &[-7.5, -2.0, -0.3, 0.0, 1.999, 2.0, 2.001, 40.0] {
        let mut v = f64::NAN;
        assert_eq!(unsafe { mf_phi(h, z, &mut v) }, MF_OK);
        assert_eq!(v, act.phi(z));
        assert_eq!(unsafe { mf_dphi(h, z, &mut v) }, MF_OK);
        assert_eq!(v, act.dphi(z));
    }
    unsafe { mf_activation_free(h) };
}

#[test]
fn eoc_solve_matches_library_bitwise() {
    let h = parse_ok("shtanh:1:1");
    let mut q = 0.0;
    let mut w2 = 0.0;
    assert_eq!(unsafe { mf_eoc_solve(h, 0.1, &mut q, &mut w2) }, MF_OK);
    let p = maps::solve_q_star_eoc(&Activation::parse("shtanh:1:1").unwrap(), 0.1).unwrap();
    assert_eq!(q, p.q_star);
    assert_eq!(w2, p.sigma_w2);
    unsafe { mf_activation_free(h) };
}

#[test]
fn map_evaluations_match_library() {
    let act = Activation::parse("shtanh:1:1").unwrap();
    let p = maps::solve_q_star_eoc(&act, 0.1).unwrap();
    let hp = NetworkHyperparams::new(p.sigma_w2, 0.1).unwrap();
    let h = parse_ok("shtanh:1:1");
    let mut v = 0.0;

    assert_eq!(unsafe { mf_variance_map(h, p.sigma_w2, 0.1, 0.7, &mut v) }, MF_OK);
    assert_eq!(v, maps::variance_map(&act, &hp, 0.7).unwrap());

    assert_eq!(unsafe { mf_chi1(h, p.sigma_w2, 0.1, p.q_star, &mut v) }, MF_OK);
    assert_eq!(v, maps::chi1(&act, &hp, p.q_star).unwrap());

    for &rho in &[0.0, 0.25, 0.9, 1.0] {
        assert_eq!(
            unsafe { mf_corr_map(h, p.sigma_w2, 0.1, p.q_star, rho, &mut v) },
            MF_OK
        );
        assert_eq!(v, maps::corr_map(&act, &hp, p.q_star, rho).unwrap());
    }
    assert_eq!(
        unsafe { mf_corr_derivative(h, p.sigma_w2, 0.1, p.q_star, 0.5, &mut v) },
        MF_OK
    );
    assert_eq!(v, maps::corr_derivative(&act, &hp, p.q_star, 0.5).unwrap());
    unsafe { mf_activation_free(h) };
}

#[test]
fn scalar_bound_functions_match_library() {
    let mut v = 0.0;
    assert_eq!(unsafe { mf_lambert_w0(1.0, &mut v) }, MF_OK);
    assert_eq!(v, bounds::lambert_w0(1.0).unwrap());
    assert_eq!(unsafe { mf_lambda_lower(0.1, &mut v) }, MF_OK);
    assert_eq!(v, bounds::lambda_lower(0.1).unwrap());
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { mf_ratio_bounds(0.1, &mut lo, &mut hi) }, MF_OK);
    let (elo, ehi) = bounds::ratio_bounds(0.1).unwrap();
    assert_eq!((lo, hi), (elo, ehi));
    assert!(lo < hi);
}

#[test]
fn bound_report_round_trips() {
    let h = parse_ok("shtanh:2:1");
    let mut r = MfBoundReport {
        sigma_b2: 0.0,
        y: 0.0,
        q_star: 0.0,
        sigma_w2: 0.0,
        ratio: 0.0,
        ratio_lower: 0.0,
        ratio_upper: 0.0,
        measured_gap: 0.0,
        corr_bound: 0.0,
        measured_moment_dev: 0.0,
        moment_bound: 0.0,
        corr_bound_vacuous: false,
        all_satisfied: false,
    };
    assert_eq!(unsafe { mf_verify_theorem(h, 0.1, &mut r) }, MF_OK);
    let e = bounds::verify_theorem(&Activation::parse("shtanh:2:1").unwrap(), 0.1).unwrap();
    assert_eq!(r.q_star, e.q_star);
    assert_eq!(r.sigma_w2, e.sigma_w2);
    assert_eq!(r.ratio, e.ratio);
    assert_eq!(r.ratio_lower, e.ratio_lower);
    assert_eq!(r.ratio_upper, e.ratio_upper);
    assert_eq!(r.measured_gap, e.measured_gap);
    assert_eq!(r.corr_bound, e.corr_bound);
    assert_eq!(r.measured_moment_dev, e.measured_moment_dev);
    assert_eq!(r.moment_bound, e.moment_bound);
    assert_eq!(r.corr_bound_vacuous, e.corr_bound_vacuous);
    assert!(r.all_satisfied);
    unsafe { mf_activation_free(h) };
}

#[test]
fn spectrum_moments_round_trip() {
    let act = Activation::parse("shtanh:1:1").unwrap();
    let p = maps::solve_q_star_eoc(&act, 0.1).unwrap();
    let hp = NetworkHyperparams::new(p.sigma_w2, 0.1).unwrap();
    let h = parse_ok("shtanh:1:1");
    let mut m = MfSpectrumMoments {
        mu1: 0.0,
        mu2: 0.0,
        chi1: 0.0,
        m1: 0.0,
        m2: 0.0,
        var_jjt: 0.0,
        s1: 0.0,
        depth: 0,
    };
    assert_eq!(
        unsafe {
            mf_jacobian_moments(h, p.sigma_w2, 0.1, p.q_star, 16, MF_SCHEME_GAUSSIAN, &mut m)
        },
        MF_OK
    );
    let e = spectrum::jacobian_moments(&act, &hp, p.q_star, 16, InitScheme::Gaussian).unwrap();
    assert_eq!(m.mu1, e.mu1);
    assert_eq!(m.mu2, e.mu2);
    assert_eq!(m.chi1, e.chi1);
    assert_eq!(m.m1, e.m1);
    assert_eq!(m.m2, e.m2);
    assert_eq!(m.var_jjt, e.var_jjt);
    assert_eq!(m.s1, -1.0);
    assert_eq!(m.depth, 16);
    // unknown scheme is rejected without touching the struct
    let before = m;
    assert_eq!(
        unsafe { mf_jacobian_moments(h, p.sigma_w2, 0.1, p.q_star, 16, 7, &mut m) },
        MF_ERR_INVALID_ARGUMENT
    );
    assert_eq!(m.var_jjt, before.var_jjt);
    unsafe { mf_activation_free(h) };
}

#[test]
fn status_codes_cover_failure_modes() {
    let mut h: *mut MfActivation = ptr::null_mut();
    // null pointers
    assert_eq!(
        unsafe { mf_activation_parse(ptr::null(), &mut h) },
        MF_ERR_NULL_POINTER
    );
    let spec = CString::new("shtanh").unwrap();
    assert_eq!(
        unsafe { mf_activation_parse(spec.as_ptr(), ptr::null_mut()) },
        MF_ERR_NULL_POINTER
    );
    let mut v = 42.0;
    assert_eq!(unsafe { mf_phi(ptr::null(), 1.0, &mut v) }, MF_ERR_NULL_POINTER);
    assert_eq!(v, 42.0, "out must stay untouched on failure");
    // invalid utf-8
    let bad = CString::new(vec![0xffu8, 0xfe]).unwrap();
    assert_eq!(
        unsafe { mf_activation_parse(bad.as_ptr(), &mut h) },
        MF_ERR_UTF8
    );
    // unknown kind
    let nope = CString::new("banana:1:1").unwrap();
    assert_eq!(
        unsafe { mf_activation_parse(nope.as_ptr(), &mut h) },
        MF_ERR_INVALID_ARGUMENT
    );
    assert!(h.is_null(), "handle must stay untouched on failure");
    // no fixed point
    let relu = parse_ok("relu");
    let (mut q, mut w2) = (1.5, 2.5);
    assert_eq!(
        unsafe { mf_eoc_solve(relu, 0.1, &mut q, &mut w2) },
        MF_ERR_NO_FIXED_POINT
    );
    assert_eq!((q, w2), (1.5, 2.5));
    // bad hyperparameters
    assert_eq!(
        unsafe { mf_variance_map(relu, -1.0, 0.1, 1.0, &mut v) },
        MF_ERR_INVALID_ARGUMENT
    );
    unsafe { mf_activation_free(relu) };
    // free of null is a no-op
    unsafe { mf_activation_free(ptr::null_mut()) };
}

#[test]
fn strerror_is_total_and_matches_error_mapping() {
    for code in 0..=7 {
        let s = mf_strerror(code);
        assert!(!s.is_null());
        let msg = unsafe { CStr::from_ptr(s) }.to_str().unwrap();
        assert!(!msg.is_empty());
    }
    // the no-fixed-point wording matches the library diagnostic family
    let msg = unsafe { CStr::from_ptr(mf_strerror(MF_ERR_NO_FIXED_POINT)) }
        .to_str()
        .unwrap();
    let lib = MfError::NoFixedPoint("x".into()).to_string();
    assert!(lib.starts_with(msg));
}
