#![no_main]

use flusense::rulelang::parse_rulebook;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(book) = parse_rulebook(text) {
        // printing a parsed book gives text that parses to the same book
        let again = parse_rulebook(&book.to_string()).expect("printed book reparses");
        assert_eq!(again, book);
    }
});
