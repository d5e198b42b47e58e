#![no_main]

use ifm::train::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::from_toml(text) {
        assert!(cfg.validate().is_ok());
        let _ = cfg.discriminator_configs();
    }
});
