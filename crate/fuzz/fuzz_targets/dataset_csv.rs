#![no_main]

use kisa_core::data::{parse_dataset, DatasetSchema, Role, TaskKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The first byte picks the role, so both labelled and unlabelled paths are reached.
    let Some((&sel, csv)) = data.split_first() else { return };
    let role = match sel % 3 {
        0 => Role::Source,
        1 => Role::TargetTrain,
        _ => Role::TargetTest,
    };
    let schema = DatasetSchema {
        role,
        task: if sel & 0x80 == 0 { TaskKind::Classification } else { TaskKind::Regression },
        label_column: None,
        knowledge: [("hour".to_string(), vec!["hour".to_string()])].into_iter().collect(),
    };
    if let Ok(d) = parse_dataset(csv, &schema) {
        assert_eq!(d.features.rows(), d.len());
        assert!(d.features.as_slice().iter().all(|v| v.is_finite()));
    }
});
