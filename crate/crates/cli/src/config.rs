//! Config resolution: preset, then the config file, then `--set` overrides.

use serde_json::{Map, Value};
use smoothctl_core::controller::{EpisodeConfig, RegretOptions};
use smoothctl_core::environments::{AircraftCost, EnvConfig, EnvKind};
use smoothctl_core::experiments;
use smoothctl_core::SurrogateSpec;

use crate::error::{CliError, CliResult};

pub const PRESETS: [&str; 4] = ["unicycle_case1", "unicycle_case2", "aircraft", "lq"];

fn lq_preset(seed: u64) -> CliResult<EpisodeConfig> {
    let mut env = EnvConfig::new(EnvKind::Lq);
    env.params = serde_json::json!({"A": [[1.0, 0.0], [0.0, 1.0]], "B": [[1.0, 0.0], [0.0, 1.0]]});
    Ok(EpisodeConfig {
        env,
        spec: SurrogateSpec::new(0.5, 0.5, 4.0).map_err(CliError::config)?,
        n_init: 1,
        horizon: 20,
        seed,
        x0: vec![1.0, -0.5],
        target: None,
        early_stop: false,
        regret: RegretOptions::default(),
        seeding_box: None,
    })
}

pub fn preset(name: &str, seed: u64) -> CliResult<EpisodeConfig> {
    let cfg = match name {
        "unicycle" | "unicycle_case1" => experiments::unicycle_case1(0.5, 0.5, seed),
        "unicycle_case2" => experiments::unicycle_case2(0.5, 0.5, seed),
        "aircraft" => experiments::aircraft_landing(0.5, 0.5, seed, AircraftCost::AltitudeGamma),
        "lq" => return lq_preset(seed),
        other => {
            return Err(CliError::Config(format!("unknown preset {other:?}, expected one of {PRESETS:?}")))
        }
    };
    cfg.map_err(CliError::config)
}

/// Recursively overlays `top` onto `base`; arrays and scalars are replaced.
pub fn deep_merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `key=value`; the value is JSON when it parses as JSON, else a string.
pub fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Config(format!("override {s:?} has an empty key")));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Sets a dotted path, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(CliError::Config(format!("cannot set {path:?}: {part:?} is inside a non-object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

/// Picks the preset: explicit `preset` key, then `--env`, then `env.env`.
fn preset_name(file: &Value, env_flag: Option<&str>) -> String {
    if let Some(p) = file.get("preset").and_then(Value::as_str) {
        return p.to_string();
    }
    if let Some(e) = env_flag {
        return e.to_string();
    }
    match file.get("env").and_then(|e| e.get("env")).and_then(Value::as_str) {
        Some("unicycle") | None => "unicycle_case1".into(),
        Some(other) => other.into(),
    }
}

/// Builds an episode config from a preset, a partial JSON document and
/// overrides, in that order.
pub fn resolve_episode(file: Value, env_flag: Option<&str>, overrides: &[(String, Value)]) -> CliResult<EpisodeConfig> {
    let mut file = match file {
        Value::Null => Value::Object(Map::new()),
        v @ Value::Object(_) => v,
        _ => return Err(CliError::Config("config must be a JSON object".into())),
    };
    let name = preset_name(&file, env_flag);
    if let Value::Object(m) = &mut file {
        m.remove("preset");
    }
    let mut merged = serde_json::to_value(preset(&name, 0)?).map_err(CliError::config)?;
    deep_merge(&mut merged, file);
    for (k, v) in overrides {
        set_path(&mut merged, k, v.clone())?;
    }
    serde_json::from_value(merged).map_err(CliError::config)
}

/// One sweep cell: the overrides that define it.
pub type Cell = Vec<(String, Value)>;

/// Cross product of a grid. A key `"a,b"` zips its entries, each of which
/// must then be an array with one value per key.
pub fn expand_grid(grid: &Map<String, Value>) -> CliResult<Vec<Cell>> {
    if grid.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let mut cells: Vec<Cell> = vec![Vec::new()];
    for (key, values) in grid {
        let values = values
            .as_array()
            .ok_or_else(|| CliError::Config(format!("grid entry {key:?} must be an array")))?;
        if values.is_empty() {
            return Err(CliError::Config(format!("grid entry {key:?} is empty")));
        }
        let keys: Vec<&str> = key.split(',').map(str::trim).collect();
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut c = cell.clone();
                if keys.len() == 1 {
                    c.push((keys[0].to_string(), v.clone()));
                } else {
                    let tuple = v.as_array().filter(|a| a.len() == keys.len()).ok_or_else(|| {
                        CliError::Config(format!("grid entry {key:?} needs arrays of {} values", keys.len()))
                    })?;
                    c.extend(keys.iter().map(|k| k.to_string()).zip(tuple.iter().cloned()));
                }
                next.push(c);
            }
        }
        cells = next;
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_parse_json_or_string() {
        assert_eq!(parse_override("spec.alpha=0.5").unwrap(), ("spec.alpha".into(), json!(0.5)));
        assert_eq!(parse_override("env.env=lq").unwrap(), ("env.env".into(), json!("lq")));
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn resolve_applies_layers_in_order() {
        let file = json!({"spec": {"alpha": 0.0, "beta": 1.0}, "T": 40});
        let cfg = resolve_episode(file, None, &[("T".into(), json!(30))]).unwrap();
        assert_eq!(cfg.spec.alpha, 0.0);
        assert_eq!(cfg.spec.lipschitz_gradient, 10.0);
        assert_eq!(cfg.horizon, 30);
        assert_eq!(cfg.n_init, 10);
        let cfg = resolve_episode(Value::Null, Some("aircraft"), &[]).unwrap();
        assert_eq!(cfg.env.env, EnvKind::Aircraft);
        assert!(resolve_episode(json!({"bogus": 1}), None, &[]).is_err());
    }

    #[test]
    fn grid_expansion() {
        let grid = json!({"seed": [1, 2], "spec.alpha,spec.beta": [[0.5, 0.5], [0.0, 1.0]]});
        let cells = expand_grid(grid.as_object().unwrap()).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].len(), 3);
        assert!(expand_grid(&Map::new()).is_err());
        assert!(expand_grid(json!({"seed": []}).as_object().unwrap()).is_err());
        assert!(expand_grid(json!({"a,b": [[1]]}).as_object().unwrap()).is_err());
    }
}
