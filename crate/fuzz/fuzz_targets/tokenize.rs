#![no_main]

use flusense::features::tokenize;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let tokens = tokenize(text);
    for tok in &tokens {
        assert!(!tok.is_empty());
        assert!(!tok.chars().any(char::is_whitespace));
    }
    assert_eq!(tokenize(&tokens.join(" ")), tokens);
});
