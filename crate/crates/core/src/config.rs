//! Built-in constants and fixtures.

use std::sync::OnceLock;

use serde::Deserialize;

use crate::cryptobox::SymmetricKey;

const CONFIG_TOML: &str = include_str!("../fixtures/config.toml");
pub const CATALOG_MANIFEST: &str = include_str!("../fixtures/catalog/manifest.txt");
const DROPLOCK_IMAGE: &[u8] = include_bytes!("../fixtures/catalog/droplock-6.6.6.bin");

/// Images referenced by the built-in catalog manifest.
pub const CATALOG_IMAGES: [(&str, &[u8]); 2] = [
    (
        "legit-1.0.0.bin",
        include_bytes!("../fixtures/catalog/legit-1.0.0.bin"),
    ),
    (
        "legit-1.1.0.bin",
        include_bytes!("../fixtures/catalog/legit-1.1.0.bin"),
    ),
];

#[derive(Debug, Deserialize)]
struct RawConfig {
    factory_key: SymmetricKey,
    api_static_key: SymmetricKey,
    droplock_version: String,
}

fn config() -> &'static RawConfig {
    static CONFIG: OnceLock<RawConfig> = OnceLock::new();
    CONFIG.get_or_init(|| toml::from_str(CONFIG_TOML).expect("built-in config.toml is valid"))
}

/// Hard-coded enrollment key shipped in every lock and in the app.
pub fn factory_key() -> SymmetricKey {
    config().factory_key
}

/// Static API payload key embedded in the app binary.
pub fn api_static_key() -> SymmetricKey {
    config().api_static_key
}

pub fn droplock_image() -> &'static [u8] {
    DROPLOCK_IMAGE
}

pub fn droplock_version() -> &'static str {
    &config().droplock_version
}
