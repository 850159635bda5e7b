//! Checkpoint decoder: must never panic or overallocate, and the format is
//! canonical, so any accepted byte string re-encodes to itself.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mstopo::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(ck) = Checkpoint::decode(data) else {
        return;
    };
    let bytes = ck.encode().expect("decoded checkpoint re-encodes");
    assert_eq!(bytes, data);
});
