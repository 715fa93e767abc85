#![no_main]

use libfuzzer_sys::fuzz_target;

use rotor_qutrit::gates::{parse_gate_matrix, write_gate_matrix};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_gate_matrix(text) {
        // print/parse round trip is exact for finite entries
        let back = parse_gate_matrix(&write_gate_matrix(&m)).expect("round trip");
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a, b);
        }
    }
});
