#![no_main]

use flusense::corpus::{parse_corpus, parse_corpus_bytes, serialize_corpus, CorpusFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(msgs) = parse_corpus_bytes(data, CorpusFormat::Jsonl) else {
        return;
    };
    let text = serialize_corpus(&msgs, CorpusFormat::Jsonl);
    assert_eq!(parse_corpus(&text, CorpusFormat::Jsonl).expect("serialized corpus reparses"), msgs);
});
