#![no_main]

use libfuzzer_sys::fuzz_target;
use otcf::data::{read_csv, LabelAction, Schema};

fuzz_target!(|data: &[u8]| {
    // First byte picks the delimiter, the rest is the file.
    let Some((&d, body)) = data.split_first() else { return };
    let mut schema = Schema::new("y", "t", &["a", "b"])
        .with_label("yes", LabelAction::Assign(1))
        .with_label("no", LabelAction::Assign(0))
        .with_label("skip", LabelAction::Drop);
    schema.delimiter = [b',', b';', b'\t', b' '][usize::from(d) % 4];
    if let Ok((ds, report)) = read_csv(body, &schema) {
        assert_eq!(ds.n() + report.dropped, report.rows_read);
        let mut out = Vec::new();
        ds.write_csv(&mut out, b',').unwrap();
        let mut schema = schema.clone();
        schema.delimiter = b',';
        let (back, _) = read_csv(out.as_slice(), &schema).unwrap();
        assert_eq!(back, ds);
    }
});
