//! JSON config parser: must never panic, and every accepted config must
//! survive a canonical-form round trip with value and hash unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mstopo::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_json(text) else {
        return;
    };
    // Validation leaves no non-finite floats, so the canonical form always
    // parses back to the same config and content hash.
    let again = RunConfig::from_json(&cfg.to_json()).expect("canonical form parses");
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash(), again.hash());
});
