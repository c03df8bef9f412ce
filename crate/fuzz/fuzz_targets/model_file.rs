#![no_main]

use flusense::classify::ModelFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(file) = ModelFile::parse(text) {
        let again = ModelFile::parse(&file.to_text()).expect("written model reparses");
        assert_eq!(again.to_text(), file.to_text());
    }
});
