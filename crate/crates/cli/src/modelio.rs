//! Versioned plain-text model files.
//!
//! ```text
//! unlearn-forge-model v1
//! kind logistic            (or: kind mlp <hidden>)
//! input_dim <d>
//! classes <K>
//! l2 <value>
//! params <n>
//! <one parameter per line, 17 significant digits>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use unlearn_core::data::format_f64;
use unlearn_core::{Error, Model, ModelKind, Result};

pub const HEADER: &str = "unlearn-forge-model v1";

pub fn to_text(model: &Model) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    match model.kind() {
        ModelKind::Logistic => s.push_str("kind logistic\n"),
        ModelKind::Mlp { hidden } => {
            let _ = writeln!(s, "kind mlp {hidden}");
        }
    }
    let _ = writeln!(s, "input_dim {}", model.input_dim());
    let _ = writeln!(s, "classes {}", model.num_classes());
    let _ = writeln!(s, "l2 {}", format_f64(model.l2()));
    let _ = writeln!(s, "params {}", model.theta().len());
    for v in model.theta() {
        let _ = writeln!(s, "{}", format_f64(*v));
    }
    s
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field<'a>(lines: &[&'a str], idx: usize, name: &str) -> Result<Vec<&'a str>> {
    let line = lines.get(idx).ok_or_else(|| bad(idx + 1, format!("missing '{name}' line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(name) {
        return Err(bad(idx + 1, format!("expected '{name}', found {line:?}")));
    }
    Ok(parts.collect())
}

fn single<T: std::str::FromStr>(lines: &[&str], idx: usize, name: &str) -> Result<T> {
    let parts = field(lines, idx, name)?;
    match parts.as_slice() {
        [v] => v.parse().map_err(|_| bad(idx + 1, format!("invalid {name} value {v:?}"))),
        _ => Err(bad(idx + 1, format!("'{name}' takes one value"))),
    }
}

pub fn from_text(text: &str) -> Result<Model> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().map(|l| l.trim()) != Some(HEADER) {
        return Err(bad(1, format!("expected header {HEADER:?}")));
    }
    let kind = match field(&lines, 1, "kind")?.as_slice() {
        ["logistic"] => ModelKind::Logistic,
        ["mlp", h] => ModelKind::Mlp {
            hidden: h.parse().map_err(|_| bad(2, format!("invalid hidden width {h:?}")))?,
        },
        other => return Err(bad(2, format!("unknown model kind {other:?}"))),
    };
    let input_dim: usize = single(&lines, 2, "input_dim")?;
    let classes: usize = single(&lines, 3, "classes")?;
    let l2: f64 = single(&lines, 4, "l2")?;
    let count: usize = single(&lines, 5, "params")?;
    let values = &lines[6..];
    if values.len() != count {
        return Err(bad(6, format!("header declares {count} parameters, file has {}", values.len())));
    }
    let theta = values
        .iter()
        .enumerate()
        .map(|(i, v)| v.trim().parse::<f64>().map_err(|_| bad(i + 7, format!("invalid parameter {v:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Model::from_parts(kind, input_dim, classes, l2, theta)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_text(&std::fs::read_to_string(path)?)
}
