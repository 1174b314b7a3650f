use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::prune::csv_error;

use super::CSV_HEADER;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub series: String,
    pub k_or_res: usize,
    pub pixel_count: usize,
    pub test_rmse: f64,
}

/// Reads the plot-relevant columns of a results CSV.
pub fn read_results(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::format(
            0,
            format!("{}: unexpected header {:?}", path.display(), header),
        ));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| {
                Error::format(offset, format!("column {} is not a number", CSV_HEADER[i]))
            })
        };
        rows.push(PlotRow {
            series: rec[0].to_string(),
            k_or_res: num(1)? as usize,
            pixel_count: num(2)? as usize,
            test_rmse: num(3)?,
        });
    }
    Ok(rows)
}

/// Plot-ready table with a log2 pixel axis, one line per row, keyed by series.
pub fn plot_data(rows: &[PlotRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::config("no result rows to plot"));
    }
    let mut sorted: Vec<&PlotRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.series
            .cmp(&b.series)
            .then(a.pixel_count.cmp(&b.pixel_count))
    });
    let mut out = String::from("series,pixel_count,log2_pixel_count,test_rmse\n");
    for r in sorted {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.series,
            r.pixel_count,
            (r.pixel_count as f64).log2(),
            r.test_rmse
        );
    }
    Ok(out)
}

/// Smallest mincam pixel count whose RMSE is at most that of the reference
/// baseline: resolution 32 if present, otherwise the finest one.
pub fn crossover(rows: &[PlotRow]) -> Option<usize> {
    let baselines = rows.iter().filter(|r| r.series == "baseline");
    let reference = baselines
        .clone()
        .find(|r| r.k_or_res == 32)
        .or_else(|| baselines.max_by_key(|r| r.k_or_res))?;
    rows.iter()
        .filter(|r| r.series == "mincam" && r.test_rmse <= reference.test_rmse)
        .map(|r| r.pixel_count)
        .min()
}
