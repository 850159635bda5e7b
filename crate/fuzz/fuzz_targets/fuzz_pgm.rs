//! PGM decoder: must never panic or overallocate, decoded samples land in
//! [0, 1], and re-encoding is a fixed point after one quantization.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mstopo::pgm;

fuzz_target!(|data: &[u8]| {
    let Ok(img) = pgm::decode(data) else {
        return;
    };
    assert_eq!(img.densities.len(), img.width * img.height);
    assert!(img.densities.iter().all(|d| (0.0..=1.0).contains(d)));
    // The header allows whitespace and maxval variants, so the input is not
    // canonical; one encode pass is.
    let b1 = pgm::encode(img.width, img.height, &img.densities, "").expect("decoded image encodes");
    let i2 = pgm::decode(&b1).expect("encoded image decodes");
    let b2 = pgm::encode(i2.width, i2.height, &i2.densities, "").expect("round trip encodes");
    assert_eq!(b1, b2);
});
