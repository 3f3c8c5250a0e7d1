use std::path::PathBuf;

use toml::{Table, Value};
use viewsynth::trainer::{RunConfig, Stage};
use viewsynth::{Error, Result};

/// Recursively merges `over` into `base`. Tables merge key by key; any other
/// value (arrays included) replaces what was there.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Reads and merges config files in order. Later files win.
pub fn load_table(paths: &[PathBuf]) -> Result<Table> {
    let mut table = Table::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        let t: Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        merge(&mut table, t);
    }
    Ok(table)
}

/// Merged run configuration. `stage` is filled in from the subcommand when
/// no file sets it.
pub fn load(paths: &[PathBuf], stage: Stage) -> Result<RunConfig> {
    let mut table = load_table(paths)?;
    if !table.contains_key("stage") {
        let name = match stage {
            Stage::Depth => "depth",
            Stage::Inpaint => "inpaint",
        };
        table.insert("stage".into(), Value::String(name.into()));
    }
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    RunConfig::from_toml(&text)
}
