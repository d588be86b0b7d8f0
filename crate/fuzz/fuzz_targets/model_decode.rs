#![no_main]

use kisa_core::adaptnet::AdaptNet;
use kisa_core::codec::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = decode(data) {
        assert_eq!(decode(&encode(&file)).unwrap(), file);
    }
    let _ = AdaptNet::from_bytes(data);
});
