//! JSON run configs: a flat object per subcommand, merged with command-line
//! overrides before being parsed into the solver config types.

use std::collections::BTreeMap;
use std::path::Path;

use infbsde::model::{problem_by_name, Problem};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

/// Keys that select the problem rather than configure a solver.
const PROBLEM_KEYS: [&str; 3] = ["problem", "d", "problem_params"];

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSelection {
    pub name: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
}

impl ProblemSelection {
    pub fn build(&self) -> Result<Problem, CliError> {
        problem_by_name(&self.name, self.dim, &self.params).map_err(|e| CliError::Config(e.to_string()))
    }

    fn to_json(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("problem".into(), Value::from(self.name.clone()));
        m.insert("d".into(), Value::from(self.dim));
        let params: Map<String, Value> = self.params.iter().map(|(k, v)| (k.clone(), Value::from(*v))).collect();
        m.insert("problem_params".into(), Value::Object(params));
        m
    }
}

/// A config value addressed by a key path, e.g. `["grid", "n_half"]`.
pub type Override = (Vec<&'static str>, Value);

/// A merged config split into the problem selection and the remaining
/// solver fields.
#[derive(Debug, Clone)]
pub struct Merged {
    pub problem: ProblemSelection,
    pub rest: Map<String, Value>,
}

pub fn read_file(path: Option<&Path>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else { return Ok(Map::new()) };
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Config(format!("{}: top level must be an object", path.display()))),
        Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
    }
}

fn set_path(root: &mut Map<String, Value>, path: &[&str], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = root;
    for key in parents {
        let entry = node.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = entry
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}` must be an object to set `{}`", path.join("."))))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Applies overrides, checks required keys (`problem` and every path in
/// `required`) and splits off the problem selection.
pub fn merge(
    mut file: Map<String, Value>,
    overrides: Vec<Override>,
    problem_params: &[(String, f64)],
    required: &[&[&str]],
) -> Result<Merged, CliError> {
    for (path, value) in overrides {
        set_path(&mut file, &path, value)?;
    }
    for (k, v) in problem_params {
        set_path(&mut file, &["problem_params", k.as_str()], Value::from(*v))?;
    }
    let name = match file.get("problem") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(CliError::Config("`problem` must be a string".into())),
        None => return Err(CliError::Config("missing required `problem` (use --problem or the config file)".into())),
    };
    for path in required {
        let mut node = Some(&file);
        let mut found = None;
        for (i, key) in path.iter().enumerate() {
            let v = node.and_then(|m| m.get(*key));
            if i + 1 == path.len() {
                found = v;
            } else {
                node = v.and_then(Value::as_object);
            }
        }
        if found.is_none_or(Value::is_null) {
            return Err(CliError::Config(format!("missing required `{}`", path.join("."))));
        }
    }
    let dim = match file.get("d") {
        None => 1,
        Some(v) => {
            v.as_u64().filter(|d| *d >= 1).ok_or_else(|| CliError::Config("`d` must be a positive integer".into()))?
                as usize
        }
    };
    let params: BTreeMap<String, f64> = match file.get("problem_params") {
        None => BTreeMap::new(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("problem_params: {e}")))?,
    };
    for key in PROBLEM_KEYS {
        file.remove(key);
    }
    Ok(Merged { problem: ProblemSelection { name, dim, params }, rest: file })
}

pub fn parse<T: DeserializeOwned>(rest: &Map<String, Value>) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(rest.clone())).map_err(|e| CliError::Config(e.to_string()))
}

/// The fully resolved config as written to `config_echo.json`.
pub fn echo<T: serde::Serialize>(problem: &ProblemSelection, solver: &T) -> Result<String, CliError> {
    let mut m = problem.to_json();
    match serde_json::to_value(solver).map_err(|e| CliError::Config(e.to_string()))? {
        Value::Object(s) => m.extend(s),
        _ => unreachable!("solver configs serialize to objects"),
    }
    serde_json::to_string_pretty(&Value::Object(m)).map_err(|e| CliError::Config(e.to_string()))
}
