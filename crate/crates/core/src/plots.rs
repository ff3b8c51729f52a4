//! Tidy per-figure CSVs gathered from one run or a suite of runs.
//!
//! | file | columns |
//! |------|---------|
//! | `fig_accuracy.csv` | sampler, epoch, step, train_loss, test_accuracy, ensemble_accuracy |
//! | `fig_mess.csv` | sampler, epoch, step, chain_len, mess, mess_over_n |
//! | `fig_ood.csv` | sampler, bin_left, bin_right, count |

use std::path::{Path, PathBuf};

use crate::config::load_config;
use crate::error::{Error, Result};
use crate::harness::CONFIG_ECHO_FILE;

/// Run directories under `dir`: itself if it is a run, else its run subdirectories.
pub fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(CONFIG_ECHO_FILE).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.to_path_buf()));
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CONFIG_ECHO_FILE).exists())
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::MissingInput(dir.join(CONFIG_ECHO_FILE)));
    }
    Ok(v)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput(path))
    }
}

/// Appends `path`'s rows to `out`, prefixed with `sampler`.
fn append(out: &mut csv::Writer<std::fs::File>, path: &Path, sampler: &str, header: &[&str]) -> Result<()> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::InvalidArgument(format!(
            "{} has columns {found:?}, expected {header:?}",
            path.display()
        )));
    }
    for row in r.records() {
        let row = row?;
        out.write_record(std::iter::once(sampler).chain(row.iter()))?;
    }
    Ok(())
}

/// Writes the figure CSVs into `dir` and returns their paths.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let runs = run_dirs(dir)?;
    let mut members = Vec::with_capacity(runs.len());
    for run in &runs {
        let cfg = load_config(&run.join(CONFIG_ECHO_FILE))?;
        let epochs = require(run.join("epochs.csv"))?;
        let mess = require(run.join("mess.csv"))?;
        let ood = Some(run.join("ood.csv")).filter(|p| p.exists());
        members.push((cfg.sampler.kind.name(), epochs, mess, ood));
    }

    let acc_cols = ["epoch", "step", "train_loss", "test_accuracy", "ensemble_accuracy"];
    let mess_cols = ["epoch", "step", "chain_len", "mess", "mess_over_n"];
    let ood_cols = ["bin_left", "bin_right", "count"];
    let mut written = Vec::new();

    let path = dir.join("fig_accuracy.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(std::iter::once("sampler").chain(acc_cols))?;
    for (name, epochs, _, _) in &members {
        let mut r = csv::Reader::from_path(epochs)?;
        let header = r.headers()?.clone();
        let pick: Vec<usize> = acc_cols
            .iter()
            .map(|c| {
                header.iter().position(|h| h == *c).ok_or_else(|| {
                    Error::InvalidArgument(format!("{} lacks column {c}", epochs.display()))
                })
            })
            .collect::<Result<_>>()?;
        for row in r.records() {
            let row = row?;
            w.write_record(std::iter::once(*name).chain(pick.iter().map(|&i| &row[i])))?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("fig_mess.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(std::iter::once("sampler").chain(mess_cols))?;
    for (name, _, mess, _) in &members {
        append(&mut w, mess, name, &mess_cols)?;
    }
    w.flush()?;
    written.push(path);

    if members.iter().any(|m| m.3.is_some()) {
        let path = dir.join("fig_ood.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(std::iter::once("sampler").chain(ood_cols))?;
        for (name, _, _, ood) in &members {
            if let Some(ood) = ood {
                append(&mut w, ood, name, &ood_cols)?;
            }
        }
        w.flush()?;
        written.push(path);
    } else {
        log::info!("no ood.csv in {}; skipping fig_ood.csv", dir.display());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::harness::run_suite;

    #[test]
    fn suite_plots_have_expected_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = parse_config(&format!(
            r#"
seed = 1
output_dir = "{}"

[sampler]
kind = "SGD"
schedule = {{ form = "constant", rate = 1e-4 }}

[[suite]]
kind = "SGD"
schedule = {{ form = "constant", rate = 1e-4 }}

[[suite]]
kind = "SGLD"
schedule = {{ form = "constant", rate = 1e-4 }}

[training]
batch_size = 20
epochs = 3

[data.synthetic]
train = 40
test = 20
ood = 13
classes = 3
side = 8

[model]
widths = [2, 2, 4]
kernel = 3

[diagnostics]
stride = 1
tracked = 8
"#,
            tmp.path().display()
        ))
        .unwrap();
        for r in run_suite(&cfg) {
            r.unwrap();
        }
        let files = emit_plots(tmp.path()).unwrap();
        assert_eq!(files.len(), 3);
        let lines = |f: &str| std::fs::read_to_string(tmp.path().join(f)).unwrap();
        // header + 3 epochs x 2 samplers
        assert_eq!(lines("fig_accuracy.csv").lines().count(), 7);
        assert_eq!(lines("fig_mess.csv").lines().count(), 7);
        let ood = lines("fig_ood.csv");
        for kind in ["SGD", "SGLD"] {
            let total: usize = ood
                .lines()
                .filter(|l| l.starts_with(&format!("{kind},")))
                .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
                .sum();
            assert_eq!(total, 13);
        }
    }

    #[test]
    fn missing_inputs_are_named() {
        let tmp = tempfile::tempdir().unwrap();
        let err = emit_plots(tmp.path()).unwrap_err().to_string();
        assert!(err.contains(CONFIG_ECHO_FILE), "{err}");
        std::fs::write(
            tmp.path().join(CONFIG_ECHO_FILE),
            "seed = 1\noutput_dir = \"x\"\n[sampler]\nkind = \"SGD\"\n[data.synthetic]\ntrain = 1\ntest = 1\n",
        )
        .unwrap();
        let err = emit_plots(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("epochs.csv"), "{err}");
    }
}
