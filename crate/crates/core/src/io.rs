//! Line-oriented trajectory files.
//!
//! ```text
//! # two_state 2 3 42
//! 1 1 2
//! 2 2 2
//! ```
//!
//! The header is `# model_id m T seed`. Each following line is one
//! trajectory: token states as space-separated integers, vector states with
//! coordinates separated by spaces and time steps by `;`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{States, Trajectory, TrajectoryDataset};

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn format_dataset(data: &TrajectoryDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} {} {} {}", data.model_id, data.m(), data.horizon, data.master_seed);
    for z in &data.trajectories {
        match z.states() {
            States::Discrete(s) => {
                let line: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
            }
            States::Continuous { dim, values } => {
                let steps: Vec<String> = values
                    .chunks(*dim)
                    .map(|c| c.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "))
                    .collect();
                out.push_str(&steps.join(";"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(data: &TrajectoryDataset, path: &Path) -> Result<()> {
    std::fs::write(path, format_dataset(data)).map_err(|e| Error::io(path, e))
}

fn parse_line(line: &str, lineno: usize) -> Result<Trajectory> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    if line.contains(';') || line.contains('.') || line.contains('e') {
        let steps: Vec<&str> = line.split(';').collect();
        let mut dim = None;
        let mut values = Vec::new();
        for step in steps {
            let coords: Vec<f64> = step
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad number {t:?}: {e}"))))
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(coords.len()),
                Some(d) if d != coords.len() => return Err(err("time steps have different dimensions".into())),
                _ => {}
            }
            values.extend(coords);
        }
        let dim = dim.filter(|&d| d > 0).ok_or_else(|| err("empty state".into()))?;
        Ok(Trajectory::continuous(dim, values))
    } else {
        let toks: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|e| err(format!("bad token {t:?}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Trajectory::discrete(toks))
    }
}

pub fn parse_dataset(text: &str) -> Result<TrajectoryDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let fields: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
    if !header.starts_with('#') || fields.len() != 4 {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `# model_id m T seed`".into(),
        });
    }
    let num = |s: &str, what: &str| {
        s.parse::<u64>().map_err(|e| Error::Parse {
            line: 1,
            msg: format!("bad {what}: {e}"),
        })
    };
    let m = num(fields[1], "m")? as usize;
    let horizon = num(fields[2], "T")? as usize;
    let seed = num(fields[3], "seed")?;
    let trajectories: Vec<Trajectory> = lines.map(|(i, l)| parse_line(l.trim(), i + 1)).collect::<Result<_>>()?;
    if trajectories.len() != m {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header announces {m} trajectories, found {}", trajectories.len()),
        });
    }
    TrajectoryDataset::new(fields[0], horizon, seed, trajectories)
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let d = TrajectoryDataset::new("two_state", 3, 42, vec![Trajectory::discrete(vec![1, 1, 2]), Trajectory::discrete(vec![2, 2, 2])]).unwrap();
        let text = format_dataset(&d);
        assert_eq!(text, "# two_state 2 3 42\n1 1 2\n2 2 2\n");
        assert_eq!(parse_dataset(&text).unwrap(), d);
        let c = TrajectoryDataset::new("sin_glm", 2, 1, vec![Trajectory::continuous(2, vec![0.1, -2.5, 1e-9, 3.0])]).unwrap();
        let text = format_dataset(&c);
        assert_eq!(text.lines().nth(1).unwrap(), "0.1 -2.5;1e-9 3.0");
        assert_eq!(parse_dataset(&text).unwrap(), c);
    }
}
