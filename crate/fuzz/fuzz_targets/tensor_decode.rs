#![no_main]

use libfuzzer_sys::fuzz_target;
use ssm_prune::tensorio::{decode_tensor, encode_payload};

fuzz_target!(|input: (&[u8], &[u8])| {
    let (sidecar, payload) = input;
    if let Ok((meta, data)) = decode_tensor(sidecar, payload) {
        let count: usize = meta.shape.iter().product();
        assert_eq!(data.len(), count, "decoded length must match the shape product");
        if meta.dtype == "f64" {
            // f64 payloads decode losslessly, bit for bit.
            assert_eq!(encode_payload(&data), payload);
        }
    }
});
