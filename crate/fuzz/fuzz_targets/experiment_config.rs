#![no_main]

use kisa_bench::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ExperimentConfig::from_toml_str(text);
    }
});
