#![no_main]

use flusense::surveillance::{parse_baseline_csv, parse_counts_csv, EpiWeek};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_baseline_csv(text);
    if let Ok(series) = parse_counts_csv(text) {
        let csv = series.to_csv();
        assert_eq!(parse_counts_csv(&csv).expect("written counts reparse").to_csv(), csv);
    }
    if let Ok(week) = text.parse::<EpiWeek>() {
        assert_eq!(week.to_string().parse::<EpiWeek>().unwrap(), week);
    }
});
