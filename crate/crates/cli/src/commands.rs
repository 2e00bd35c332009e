//! Synthesis, evaluation, residual extraction, gradient check and benchmarks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pbgdnet::bench::{
    bench_resolution, bench_update_batch, BenchRow, UpdateBatchBench, RESOLUTIONS, UPDATE_BATCH_SIZES,
};
use pbgdnet::checkpoint::Checkpoint;
use pbgdnet::data::pnm::{load_ppm, save_ppm, save_residual_pgms};
use pbgdnet::data::{self, DatasetManifest, ManifestEntry, SquareConfig};
use pbgdnet::gradcheck::{self, CheckOp, CheckRow};
use pbgdnet::residual::ResidualKernelBank;
use pbgdnet::train::{validate, ConfusionCounts};
use pbgdnet::Error;

use crate::{dataset, BenchMode, CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes `square_NNNNN.ppm` files and `manifest.csv`; returns the counts
/// of (non-square, square) images.
pub fn synth_square(count: usize, seed: u64, dir: &Path, out: &mut dyn Write) -> CliResult<[usize; 2]> {
    let cfg = SquareConfig {
        count,
        seed,
        ..SquareConfig::default()
    };
    let samples = data::synth_square::<f64>(&cfg)?;
    fs::create_dir_all(dir).map_err(Error::from)?;
    let mut counts = [0; 2];
    let mut entries = Vec::with_capacity(samples.len());
    for (_, s) in &samples {
        let file = PathBuf::from(format!("{}.ppm", s.source_id));
        save_ppm(dir.join(&file), &s.pixels)?;
        counts[s.label] += 1;
        entries.push(ManifestEntry {
            path: file,
            label: s.label,
            tag: None,
            dims: Some(s.dims()),
        });
    }
    DatasetManifest::new(dir, entries).write_csv(dir.join(MANIFEST_NAME))?;
    writeln!(out, "non_square {}", counts[0])?;
    writeln!(out, "square {}", counts[1])?;
    Ok(counts)
}

pub fn eval(
    checkpoint: &Path,
    manifest: &Path,
    resize: Option<(usize, usize)>,
    out: &mut dyn Write,
) -> CliResult<ConfusionCounts> {
    let model = Checkpoint::load(checkpoint)?.model::<f64>()?;
    let mut samples = DatasetManifest::read_csv(manifest)?.load::<f64>(None)?;
    if let Some(hw) = resize {
        dataset::resize_all(&mut samples, hw)?;
    }
    let counts = validate(&model, &samples)?;
    let acc = counts
        .accuracy()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no entries", manifest.display())))?;
    writeln!(out, "accuracy {acc:.6}")?;
    writeln!(
        out,
        "tp {} tn {} fp {} fn {} total {}",
        counts.tp,
        counts.tn,
        counts.fp,
        counts.fn_,
        counts.total()
    )?;
    Ok(counts)
}

pub fn extract_residual(
    image: &Path,
    dir: &Path,
    checkpoint: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<Vec<PathBuf>> {
    let bank = match checkpoint {
        Some(path) => Checkpoint::load(path)?
            .model::<f64>()?
            .residual
            .ok_or_else(|| Error::Config(format!("{} has no residual layer", path.display())))?,
        None => ResidualKernelBank::init_srm(),
    };
    let pixels = load_ppm::<f64>(image)?;
    let maps = bank.residual_maps(&pixels)?;
    fs::create_dir_all(dir).map_err(Error::from)?;
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy());
    let written = save_residual_pgms(dir, &stem, &maps)?;
    for p in &written {
        writeln!(out, "{}", p.display())?;
    }
    Ok(written)
}

pub fn parse_ops(spec: Option<&str>) -> CliResult<Vec<CheckOp>> {
    let Some(spec) = spec else {
        return Ok(CheckOp::ALL.to_vec());
    };
    let ops = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<CheckOp>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if ops.is_empty() {
        return Err(CliError::Usage("--ops needs at least one op".into()));
    }
    Ok(ops)
}

pub fn format_check_table(rows: &[CheckRow]) -> String {
    let mut s = format!(
        "{:<22} {:<34} {:>7} {:>12}  result\n",
        "op", "shapes", "checked", "max_rel_err"
    );
    for r in rows {
        s += &format!(
            "{:<22} {:<34} {:>7} {:>12.3e}  {}\n",
            r.op.name(),
            r.shapes,
            r.checked,
            r.max_rel_err,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    s
}

pub fn grad_check(seed: u64, ops: Option<&str>, out: &mut dyn Write) -> CliResult<Vec<CheckRow>> {
    let ops = parse_ops(ops)?;
    let rows = gradcheck::grad_check(&ops, seed)?;
    write!(out, "{}", format_check_table(&rows))?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.op.name()).collect();
    if !failed.is_empty() {
        return Err(CliError::GradCheckFailed(failed.join(", ")));
    }
    Ok(rows)
}

pub fn bench(mode: BenchMode, repeats: usize, seed: u64, out: &mut dyn Write) -> CliResult<Vec<BenchRow>> {
    let (rows, header) = match mode {
        BenchMode::UpdateBatch => {
            let cfg = UpdateBatchBench {
                repeats,
                seed,
                ..UpdateBatchBench::default()
            };
            (bench_update_batch(&cfg, &UPDATE_BATCH_SIZES)?, "n_u")
        }
        BenchMode::Resolution => (bench_resolution(&RESOLUTIONS, repeats, seed)?, "side"),
    };
    writeln!(out, "{header:>6} {:>8} {:>12}", "updates", "seconds")?;
    for r in &rows {
        writeln!(out, "{:>6} {:>8} {:>12.6}", r.setting, r.updates, r.seconds)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_parsing() {
        assert_eq!(parse_ops(None).unwrap().len(), CheckOp::ALL.len());
        assert_eq!(parse_ops(Some("relu, spp")).unwrap(), vec![CheckOp::Relu, CheckOp::Spp]);
        assert!(matches!(parse_ops(Some("")), Err(CliError::Usage(_))));
        assert!(matches!(parse_ops(Some("softmax")), Err(CliError::Usage(_))));
    }

    #[test]
    fn check_table_marks_failures() {
        let rows = [
            CheckRow {
                op: CheckOp::Add,
                shapes: "[2]".into(),
                checked: 4,
                max_rel_err: 1e-9,
            },
            CheckRow {
                op: CheckOp::Mul,
                shapes: "[2]".into(),
                checked: 4,
                max_rel_err: 1e-3,
            },
        ];
        let t = format_check_table(&rows);
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(1).unwrap().ends_with("pass"));
        assert!(t.lines().nth(2).unwrap().ends_with("FAIL"));
    }
}
