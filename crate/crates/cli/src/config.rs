//! Flag defaults from a TOML file.
//!
//! Each table is named after a subcommand and maps flag names (with `-` or
//! `_`) to values. The values are spliced into argv right after the
//! subcommand, skipping any flag the user already passed.

use std::path::Path;

use toml::Value;

fn scalar(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        other => Err(format!("unsupported value {other}")),
    }
}

fn flags_for(table: &toml::Table) -> Result<Vec<(String, Vec<String>)>, String> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let args = match value {
            Value::Boolean(true) => vec![flag.clone()],
            Value::Boolean(false) => vec![],
            Value::Array(items) => items
                .iter()
                .map(|v| scalar(v).map(|s| [flag.clone(), s]))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("{key}: {e}"))?
                .concat(),
            v => vec![flag.clone(), scalar(v).map_err(|e| format!("{key}: {e}"))?],
        };
        out.push((flag, args));
    }
    Ok(out)
}

/// Index of the subcommand token in `argv`.
fn subcommand_index(argv: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--config" || a == "--threads" {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

pub fn inject(argv: &[String], path: &Path, command: &str) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let doc: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    for key in doc.keys() {
        if !doc[key].is_table() {
            return Err(format!("{}: top-level key {key:?} must be a subcommand table", path.display()));
        }
    }
    let Some(Value::Table(table)) = doc.get(command) else {
        return Ok(argv.to_vec());
    };
    let at = subcommand_index(argv).ok_or("no subcommand found")?;
    let user = &argv[at + 1..];
    let given = |flag: &str| {
        user.iter()
            .any(|a| a == flag || a.strip_prefix(flag).is_some_and(|rest| rest.starts_with('=')))
    };
    let mut out = argv[..=at].to_vec();
    for (flag, args) in flags_for(table).map_err(|e| format!("{}: [{command}] {e}", path.display()))? {
        if !given(&flag) {
            out.extend(args);
        }
    }
    out.extend_from_slice(user);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn user_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[lm-train]\norder = 3\nno_dedup = true\n[abx]\nseed = 4\n").unwrap();
        let got = inject(&argv("unitlab --config c lm-train --order 2 --units u"), &p, "lm-train").unwrap();
        assert_eq!(got, argv("unitlab --config c lm-train --no-dedup --order 2 --units u"));
        let got = inject(&argv("unitlab --quiet --config c lm-train"), &p, "lm-train").unwrap();
        assert_eq!(got, argv("unitlab --quiet --config c lm-train --no-dedup --order 3"));
        let same = argv("unitlab --config c dedup --in a");
        assert_eq!(inject(&same, &p, "dedup").unwrap(), same);
    }

    #[test]
    fn arrays_repeat_the_flag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[gen-sweep]\ngrid = [0.5, 1.0]\n").unwrap();
        let got = inject(&argv("unitlab --config c gen-sweep"), &p, "gen-sweep").unwrap();
        assert_eq!(got, argv("unitlab --config c gen-sweep --grid 0.5 --grid 1"));
        std::fs::write(&p, "seed = 1\n").unwrap();
        assert!(inject(&argv("unitlab --config c gen-sweep"), &p, "gen-sweep").is_err());
    }
}
