//! Text checkpoints:
//!
//! ```text
//! #dbforge-checkpoint v1
//! arch input=6 hidden=32 classes=2
//! params n=258
//! <one decimal per line>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::model::{Architecture, ClassifierModel};
use super::NnError;

pub const CHECKPOINT_MAGIC: &str = "#dbforge-checkpoint v1";

pub fn format_checkpoint(model: &ClassifierModel) -> String {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(out, "arch {}", model.arch().describe()).unwrap();
    writeln!(out, "params n={}", model.params().len()).unwrap();
    for p in model.params() {
        writeln!(out, "{p}").unwrap();
    }
    out
}

fn err(line: usize, message: impl Into<String>) -> NnError {
    NnError::Format {
        line,
        message: message.into(),
    }
}

fn field<'a>(token: Option<&'a str>, key: &str, line: usize) -> Result<&'a str, NnError> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| err(line, format!("expected `{key}=`")))
}

fn parse_usize(s: &str, line: usize) -> Result<usize, NnError> {
    s.parse()
        .map_err(|_| err(line, format!("bad integer `{s}`")))
}

pub fn parse_checkpoint(text: &str) -> Result<ClassifierModel, NnError> {
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(err(1, format!("expected `{CHECKPOINT_MAGIC}`")));
    }
    let arch_line = lines
        .next()
        .ok_or_else(|| err(2, "missing architecture line"))?;
    let mut tokens = arch_line
        .strip_prefix("arch ")
        .ok_or_else(|| err(2, "expected `arch ...`"))?
        .split_whitespace();
    let input_dim = parse_usize(field(tokens.next(), "input", 2)?, 2)?;
    let hidden_spec = field(tokens.next(), "hidden", 2)?;
    let hidden = if hidden_spec == "none" {
        Vec::new()
    } else {
        hidden_spec
            .split('x')
            .map(|h| parse_usize(h, 2))
            .collect::<Result<Vec<_>, _>>()?
    };
    let classes = parse_usize(field(tokens.next(), "classes", 2)?, 2)?;
    let arch = Architecture {
        input_dim,
        hidden,
        classes,
    };

    let params_line = lines.next().ok_or_else(|| err(3, "missing params line"))?;
    let n = parse_usize(
        field(params_line.strip_prefix("params ").map(str::trim), "n", 3)?,
        3,
    )?;
    if n != arch.num_params() {
        return Err(err(
            3,
            format!(
                "architecture needs {} parameters, header says {n}",
                arch.num_params()
            ),
        ));
    }
    let mut params = Vec::with_capacity(n);
    for (k, line) in lines.enumerate() {
        let lineno = k + 4;
        if line.is_empty() && params.len() == n {
            continue;
        }
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("bad parameter `{line}`")))?;
        if !v.is_finite() {
            return Err(err(lineno, "non-finite parameter"));
        }
        params.push(v);
    }
    if params.len() != n {
        return Err(err(
            n + 4,
            format!("expected {n} parameters, found {}", params.len()),
        ));
    }
    ClassifierModel::from_params(arch, params)
}

pub fn save_checkpoint(model: &ClassifierModel, path: &Path) -> Result<(), NnError> {
    fs::write(path, format_checkpoint(model)).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierModel, NnError> {
    let text = fs::read_to_string(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_every_bit() {
        for arch in [
            Architecture::softmax_regression(3, 2),
            Architecture::mlp(5, &[7, 4], 3),
        ] {
            let model = ClassifierModel::init(arch, 17);
            let back = parse_checkpoint(&format_checkpoint(&model)).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn rejects_wrong_parameter_count() {
        let model = ClassifierModel::init(Architecture::softmax_regression(2, 2), 1);
        let text = format_checkpoint(&model);
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            parse_checkpoint(&truncated),
            Err(NnError::Format { .. })
        ));
        assert!(parse_checkpoint("#dbforge-checkpoint v0\n").is_err());
    }
}
