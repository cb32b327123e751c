//! Configuration document loading.
//!
//! Precedence, lowest first: built-in defaults, the TOML file, `RELR1_*`
//! environment variables, command-line flags. An environment variable
//! `RELR1_<SECTION>_<KEY>` sets `key` in `[section]`; values are read as
//! TOML literals and fall back to plain strings.

use std::path::Path;

use relscore::sim::TrainConfig;

use crate::CliError;

pub const ENV_PREFIX: &str = "RELR1_";
const SECTIONS: [&str; 3] = ["reward", "grpo", "sim"];

fn literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn load<I>(path: Option<&Path>, env: I) -> Result<TrainConfig, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, raw) in vars {
        let rest = name[ENV_PREFIX.len()..].to_ascii_lowercase();
        let Some((section, key)) = rest.split_once('_').filter(|(s, k)| SECTIONS.contains(s) && !k.is_empty()) else {
            return Err(CliError::Input(format!(
                "{name}: expected {ENV_PREFIX}<SECTION>_<KEY> with SECTION one of reward, grpo, sim"
            )));
        };
        let table = doc
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Input(format!("[{section}] is not a table")))?;
        table.insert(key.to_string(), literal(&raw));
    }
    let cfg: TrainConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Input(format!("config: {}", e.message())))?;
    Ok(cfg)
}
