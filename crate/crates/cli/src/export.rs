//! Long-format CSV for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use pel::landscape::{GridAxes, LandscapeGrid};
use pel::reconstruct::{unify, ReconstructionModel};
use pel::signal::{AveragedTrial, Source};
use pel::metrics::ReportTable;
use pel::{Error, Result};

/// Default slice positions (mm): far, middle and close to the beams.
pub const SLICE_X: [f64; 3] = [-88.0, -48.0, -8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// PE over alpha and beta at fixed x, from a grid CSV or a model JSON.
    LandscapeSlice,
    /// Contact load against x for every source, from an averaged trial.
    ForceVsX,
    /// Mean and spread per row of a report CSV.
    ErrorBars,
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "landscape_slice" => Ok(Self::LandscapeSlice),
            "force_vs_x" => Ok(Self::ForceVsX),
            "error_bars" => Ok(Self::ErrorBars),
            _ => Err(Error::UnknownKind(s.to_string())),
        }
    }
}

pub fn export_plotdata(kind: ExportKind, input: &Path, out: &Path, slice_x: &[f64]) -> Result<()> {
    if !input.exists() {
        return Err(Error::MissingArtifact(input.to_path_buf()));
    }
    let text = match kind {
        ExportKind::LandscapeSlice => landscape_slice(input, slice_x)?,
        ExportKind::ForceVsX => force_vs_x(input)?,
        ExportKind::ErrorBars => error_bars(input)?,
    };
    fs::write(out, text)?;
    Ok(())
}

fn landscape_slice(input: &Path, xs: &[f64]) -> Result<String> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("slice positions"));
    }
    let mut out = String::from("x_mm,alpha_deg,beta_deg,PE_Nmm\n");
    if input.extension().is_some_and(|e| e == "json") {
        let model = ReconstructionModel::read_json(input)?;
        let axes = GridAxes::evaluation();
        for &x in xs {
            for &a in &axes.alpha {
                for &b in &axes.beta {
                    let pe = model.eval(&unify(x, a, b)).0;
                    row(&mut out, x, a, b, pe);
                }
            }
        }
    } else {
        let grid = LandscapeGrid::read_csv(input)?;
        for &x in xs {
            let (i, w) = bracket(&grid.axes.x, x)?;
            for ia in 0..grid.axes.alpha.len() {
                for ib in 0..grid.axes.beta.len() {
                    let lo = grid.value(i, ia, ib);
                    let pe = if w == 0.0 { lo } else { (1.0 - w) * lo + w * grid.value(i + 1, ia, ib) };
                    row(&mut out, x, grid.axes.alpha[ia], grid.axes.beta[ib], pe);
                }
            }
        }
    }
    Ok(out)
}

fn row(out: &mut String, x: f64, a: f64, b: f64, pe: f64) {
    writeln!(out, "{x},{},{},{pe}", a.to_degrees(), b.to_degrees()).expect("string write");
}

// Node index and weight of the right neighbour for linear interpolation.
fn bracket(axis: &[f64], x: f64) -> Result<(usize, f64)> {
    let (first, last) = (axis[0], axis[axis.len() - 1]);
    if !(x >= first - 1e-9 && x <= last + 1e-9) {
        return Err(Error::InvalidParameter {
            name: "x",
            reason: format!("slice at {x} mm lies outside the grid [{first}, {last}]"),
        });
    }
    if let Some(i) = axis.iter().position(|&v| (v - x).abs() < 1e-9) {
        return Ok((i, 0.0));
    }
    let i = axis.partition_point(|&v| v <= x) - 1;
    Ok((i, (x - axis[i]) / (axis[i + 1] - axis[i])))
}

fn force_vs_x(input: &Path) -> Result<String> {
    let avg = AveragedTrial::read_csv(input)?;
    let mut out = String::from("source,x_mm,F_x_N,T_alpha_Nmm,T_beta_Nmm\n");
    for source in Source::ALL {
        for (i, &x) in avg.x.iter().enumerate() {
            if avg.missing[i] {
                continue;
            }
            let [f, ta, tb] = avg.contact_load(source, i);
            writeln!(out, "{},{x},{f},{ta},{tb}", source.as_str()).expect("string write");
        }
    }
    Ok(out)
}

fn error_bars(input: &Path) -> Result<String> {
    let text = fs::read_to_string(input)?;
    let malformed = |message: String| Error::Malformed {
        path: input.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| malformed("empty file".into()))?.split(',').collect();
    if header.join(",") != ReportTable::CSV_HEADER {
        return Err(malformed("not a report table".into()));
    }
    let keep = [
        "source",
        "f_hz",
        "eps_x_mean",
        "eps_x_std",
        "eps_alpha_mean",
        "eps_alpha_std",
        "eps_beta_mean",
        "eps_beta_std",
        "eps_pe_mean",
        "eps_pe_std",
        "eps_grad_mean",
        "eps_grad_std",
    ];
    let cols: Vec<usize> = keep
        .iter()
        .map(|k| header.iter().position(|h| h == k).expect("header checked"))
        .collect();
    let mut out = keep.join(",") + "\n";
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(malformed(format!("row {} has {} cells", n + 1, cells.len())));
        }
        out += &cols.iter().map(|&c| cells[c]).collect::<Vec<_>>().join(",");
        out.push('\n');
    }
    Ok(out)
}
