//! Training-log CSV parser: must never panic, and re-emitting an accepted
//! log is a fixed point (float text is not canonical, one emit pass is).

#![no_main]

use libfuzzer_sys::fuzz_target;
use mstopo::train;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(log) = train::parse_log(text) else {
        return;
    };
    let csv = train::log_csv(&log);
    let again = train::parse_log(&csv).expect("re-emitted log parses");
    assert_eq!(csv, train::log_csv(&again));
});
