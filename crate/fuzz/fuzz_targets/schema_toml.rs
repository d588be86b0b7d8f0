#![no_main]

use kisa_core::data::DatasetSchema;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(schema) = DatasetSchema::from_toml_str(text) {
        let again = DatasetSchema::from_toml_str(&schema.to_toml_string()).unwrap();
        assert_eq!(schema, again);
    }
});
