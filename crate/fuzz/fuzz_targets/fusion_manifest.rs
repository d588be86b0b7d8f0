#![no_main]

use kisa_core::fusion::FusionManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = FusionManifest::from_toml_str(text) {
        assert_eq!(FusionManifest::from_toml_str(&m.to_toml_string()).unwrap(), m);
    }
});
