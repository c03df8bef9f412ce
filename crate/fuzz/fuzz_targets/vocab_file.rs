#![no_main]

use flusense::features::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(vocab) = Vocabulary::parse(text) {
        let again = Vocabulary::parse(&vocab.to_text()).expect("written vocabulary reparses");
        assert_eq!(again.to_text(), vocab.to_text());
    }
});
