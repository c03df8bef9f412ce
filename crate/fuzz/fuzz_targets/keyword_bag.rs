#![no_main]

use flusense::filter::{stage1_match, KeywordBag};
use flusense::Message;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (&str, &str)| {
    let (bag, text) = input;
    let Ok(bag) = KeywordBag::parse(bag) else {
        return;
    };
    assert_eq!(KeywordBag::parse(&bag.to_text()).expect("written bag reparses"), bag);
    let msg = Message::new("f", chrono::DateTime::UNIX_EPOCH, text).tokenized();
    let _ = stage1_match(&msg, &bag);
});
