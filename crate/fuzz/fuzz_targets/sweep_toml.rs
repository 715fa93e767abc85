#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // parsing + validation must never panic; accepted specs satisfy their
    // own invariants
    if let Ok(spec) = rotor_qutrit::sweep::parse_sweep_toml(text) {
        assert!(spec.validate().is_ok());
        assert!(!spec.sequences.is_empty());
        assert!(spec.alpha.abs() <= 0.5);
    }
});
