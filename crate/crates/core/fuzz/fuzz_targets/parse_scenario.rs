#![no_main]

use libfuzzer_sys::fuzz_target;
use qkd_keysupply::scenario::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = ScenarioConfig::from_toml(text) else {
        return;
    };
    let again = ScenarioConfig::from_toml(&config.to_toml()).expect("emitted config parses");
    assert_eq!(again, config);
    let _ = config.resolve(None);
});
