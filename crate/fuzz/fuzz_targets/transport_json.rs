#![no_main]

use libfuzzer_sys::fuzz_target;
use otcf::gaussian::GaussianTransport;
use otcf::univariate::{GaussianTransport1D, QuantileTransport1D};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = serde_json::from_slice::<QuantileTransport1D>(data) {
        let back: QuantileTransport1D = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        for x in [f64::NEG_INFINITY, -1.0, 0.0, 1.0, f64::INFINITY] {
            let _ = t.apply(x);
        }
    }
    if let Ok(t) = serde_json::from_slice::<GaussianTransport1D>(data) {
        let back: GaussianTransport1D = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let _ = t.apply(0.0);
    }
    if let Ok(t) = serde_json::from_slice::<GaussianTransport>(data) {
        let _ = t.apply(&vec![0.0; t.dim()]);
        let _ = t.apply(&[0.0]);
        let s = serde_json::to_string(&t).unwrap();
        serde_json::from_str::<GaussianTransport>(&s).unwrap();
    }
});
