use std::ffi::{CStr, CString};
use std::ptr;

use kvclust_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(kvc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
    // small deterministic pseudo-random values
    let mut x = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n * d)
        .map(|_| {
            x = x
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

fn parse(text: &str) -> *mut KvcConfig {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { kvc_config_parse(text.as_ptr(), &mut cfg) },
        KvcStatus::Ok,
        "{}",
        last_error()
    );
    cfg
}

#[test]
fn prefill_decode_roundtrip() {
    let (n, d, decode) = (200, 8, 60);
    let cfg = parse("cache_ratio = 0.3\nsinks = 4\nrecent = 16\ninterval = 8\nchunk_size = 32\nmax_decode = 60\n");
    let mut budget = 0;
    assert_eq!(
        unsafe { kvc_config_budget(cfg, n, &mut budget) },
        KvcStatus::Ok
    );
    assert_eq!(budget, 78);

    let (q, k, v) = (
        rows(n + decode, d, 1),
        rows(n + decode, d, 2),
        rows(n + decode, d, 3),
    );
    let mut outputs = vec![0.0; n * d];
    let mut cache = ptr::null_mut();
    let status = unsafe {
        kvc_prefill(
            cfg,
            q.as_ptr(),
            k.as_ptr(),
            v.as_ptr(),
            n,
            d,
            outputs.as_mut_ptr(),
            &mut cache,
        )
    };
    assert_eq!(status, KvcStatus::Ok, "{}", last_error());
    // first prompt row attends only to itself
    assert_eq!(&outputs[..d], &v[..d]);
    assert_eq!(unsafe { kvc_cache_len(cache) }, budget);
    assert_eq!(unsafe { kvc_cache_degree_sum(cache) }, n as u64);

    let mut out = vec![0.0; d];
    let mut fired = 0;
    for t in n..n + decode {
        let mut compressed = 0u8;
        let r = t * d..(t + 1) * d;
        let status = unsafe {
            kvc_decode(
                cache,
                cfg,
                q[r.clone()].as_ptr(),
                k[r.clone()].as_ptr(),
                v[r].as_ptr(),
                out.as_mut_ptr(),
                &mut compressed,
            )
        };
        assert_eq!(status, KvcStatus::Ok, "{}", last_error());
        assert!(out.iter().all(|x| x.is_finite()));
        fired += compressed as usize;
        assert!(unsafe { kvc_cache_len(cache) } <= budget + 8);
        assert_eq!(unsafe { kvc_cache_degree_sum(cache) }, (t + 1) as u64);
    }
    assert_eq!(fired, 7);
    unsafe {
        kvc_cache_free(cache);
        kvc_config_free(cfg);
    }
}

#[test]
fn error_codes() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new("cache_ratio = 3").unwrap();
    assert_eq!(
        unsafe { kvc_config_parse(bad.as_ptr(), &mut cfg) },
        KvcStatus::Config
    );
    assert!(last_error().contains("cache_ratio"));
    assert!(cfg.is_null());
    assert_eq!(
        unsafe { kvc_config_parse(ptr::null(), &mut cfg) },
        KvcStatus::NullPointer
    );

    let cfg = kvc_config_default();
    assert_eq!(unsafe { kvc_config_set_ratio(cfg, 0.0) }, KvcStatus::Config);
    let mut b = 0;
    assert_eq!(
        unsafe { kvc_config_budget(cfg, 10, &mut b) },
        KvcStatus::Config
    );
    assert_eq!(unsafe { kvc_config_set_ratio(cfg, 0.5) }, KvcStatus::Ok);
    assert_eq!(
        unsafe { kvc_config_set_max_decode(cfg, 100) },
        KvcStatus::Ok
    );
    assert_eq!(
        unsafe { kvc_config_budget(cfg, 400, &mut b) },
        KvcStatus::Ok
    );
    assert_eq!(b, 250);

    let x = [f64::NAN; 4];
    let mut cache = ptr::null_mut();
    let status = unsafe {
        kvc_prefill(
            cfg,
            x.as_ptr(),
            x.as_ptr(),
            x.as_ptr(),
            2,
            2,
            ptr::null_mut(),
            &mut cache,
        )
    };
    assert_eq!(status, KvcStatus::InvalidArgument);
    assert!(cache.is_null());
    let status = unsafe {
        kvc_decode(
            ptr::null_mut(),
            cfg,
            x.as_ptr(),
            x.as_ptr(),
            x.as_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, KvcStatus::NullPointer);

    assert_eq!(unsafe { kvc_cache_len(ptr::null()) }, 0);
    unsafe {
        kvc_cache_free(ptr::null_mut());
        kvc_config_free(cfg);
    }
}

#[test]
fn theorem_check() {
    let mut failures = usize::MAX;
    assert_eq!(
        unsafe { kvc_verify_theorem(4, 25, 3, &mut failures) },
        KvcStatus::Ok
    );
    assert_eq!(failures, 0);
    assert_eq!(
        unsafe { kvc_verify_theorem(9, 1, 0, ptr::null_mut()) },
        KvcStatus::Config
    );
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/kvclust.h")).unwrap();
    for symbol in [
        "KVCLUST_H",
        "typedef struct KvcConfig KvcConfig",
        "typedef struct KvcCache KvcCache",
        "KVC_STATUS_OK = 0",
        "KVC_STATUS_PANIC",
        "kvc_last_error",
        "kvc_config_default",
        "kvc_config_parse",
        "kvc_config_free",
        "kvc_config_budget",
        "kvc_prefill",
        "kvc_decode",
        "kvc_cache_len",
        "kvc_cache_degree_sum",
        "kvc_cache_free",
        "kvc_verify_theorem",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}
