#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // must never panic; validated specs must survive a re-parse of their
    // canonical serialization
    if let Ok(spec) = rotor_qutrit::rotor::parse_molecule_toml(text) {
        let canon = format!(
            "name = {:?}\na_mhz = {:?}\nb_mhz = {:?}\nc_mhz = {:?}\nmu_a_debye = {:?}\nmu_b_debye = {:?}\nmu_c_debye = {:?}\n",
            spec.name, spec.a_mhz, spec.b_mhz, spec.c_mhz,
            spec.mu_a_debye, spec.mu_b_debye, spec.mu_c_debye
        );
        let again = rotor_qutrit::rotor::parse_molecule_toml(&canon)
            .expect("canonical form of a valid molecule must re-parse");
        assert_eq!(spec, again);
    }
});
