//! Return panels and rolling windows.
//!
//! A [`ReturnPanel`] holds simple (arithmetic) daily returns for a set of
//! tickers over a common date range with no gaps: every `(date, ticker)`
//! cell must be present and finite.  Rolling [`ReturnMatrix`] windows are
//! cut out of a panel and feed the spectral and optimization routines.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView2, s};
use rand::Rng;

use crate::error::{Error, Result};

/// A complete panel of daily simple returns: `T` dates by `n` tickers.
///
/// Invariants: dates are strictly increasing (the loader sorts unsorted
/// input and rejects duplicates), tickers are unique and non-empty, and
/// every cell is a finite `f64`.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    dates: Vec<String>,
    tickers: Vec<String>,
    values: Array2<f64>,
}

impl ReturnPanel {
    /// Builds a panel from parts, validating the invariants above.
    pub fn new(dates: Vec<String>, tickers: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != dates.len() {
            return Err(Error::Validation(format!(
                "value matrix has {} rows but {} dates were given",
                values.nrows(),
                dates.len()
            )));
        }
        if values.ncols() != tickers.len() {
            return Err(Error::Validation(format!(
                "value matrix has {} columns but {} tickers were given",
                values.ncols(),
                tickers.len()
            )));
        }
        if dates.is_empty() {
            return Err(Error::Validation("panel has no rows".into()));
        }
        if tickers.is_empty() {
            return Err(Error::Validation("panel has no tickers".into()));
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Validation(format!(
                    "dates must be strictly increasing: `{}` follows `{}`",
                    pair[1], pair[0]
                )));
            }
        }
        for (i, t) in tickers.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Validation(format!("ticker column {} has an empty name", i + 1)));
            }
            if tickers[..i].contains(t) {
                return Err(Error::Validation(format!("duplicate ticker `{t}`")));
            }
        }
        for ((r, c), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {} at date `{}` for ticker `{}`",
                    v, dates[r], tickers[c]
                )));
            }
        }
        Ok(Self { dates, tickers, values })
    }

    /// Loads a panel from CSV text with header `date,<ticker>,...`.
    ///
    /// Rows may be unsorted; they are sorted by date and duplicate dates are
    /// rejected.  Any missing or non-finite cell is a validation error that
    /// names the offending row and ticker.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let parsed = parse_csv(reader)?;
        let mut missing = None;
        let panel = assemble(parsed, |row, ticker, cell| {
            if missing.is_none() {
                missing = Some((row, ticker.to_string(), cell.to_string()));
            }
        })?;
        if let Some((row, ticker, cell)) = missing {
            let what = if cell.is_empty() { "missing value".to_string() } else { format!("non-finite value `{cell}`") };
            return Err(Error::Validation(format!(
                "{what} at data row {row} for ticker `{ticker}`"
            )));
        }
        panel.ok_or_else(|| Error::Validation("panel has no tickers".into()))
    }

    /// Loads a panel from a CSV file on disk.
    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_csv_reader(File::open(path)?)
    }

    /// Like [`ReturnPanel::from_csv_reader`], but drops every ticker whose
    /// history contains a missing or non-finite cell instead of failing.
    /// Returns the panel together with the names of the dropped tickers.
    pub fn from_csv_reader_dropping_incomplete<R: Read>(reader: R) -> Result<(Self, Vec<String>)> {
        let mut parsed = parse_csv(reader)?;
        let mut bad = vec![false; parsed.tickers.len()];
        for row in &parsed.rows {
            for (j, cell) in row.cells.iter().enumerate() {
                if cell.parse::<f64>().map(|v| !v.is_finite()).unwrap_or(true) {
                    bad[j] = true;
                }
            }
        }
        let dropped: Vec<String> = parsed
            .tickers
            .iter()
            .zip(&bad)
            .filter(|(_, &b)| b)
            .map(|(t, _)| t.clone())
            .collect();
        parsed.tickers = parsed
            .tickers
            .into_iter()
            .zip(&bad)
            .filter(|(_, &b)| !b)
            .map(|(t, _)| t)
            .collect();
        for row in &mut parsed.rows {
            row.cells = std::mem::take(&mut row.cells)
                .into_iter()
                .zip(&bad)
                .filter(|(_, &b)| !b)
                .map(|(c, _)| c)
                .collect();
        }
        let panel = assemble(parsed, |_, _, _| {})?
            .ok_or_else(|| Error::Validation("every ticker has an incomplete history".into()))?;
        Ok((panel, dropped))
    }

    /// Serializes the panel back to CSV with a `date,<ticker>,...` header.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for t in &self.tickers {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for (r, d) in self.dates.iter().enumerate() {
            out.push_str(d);
            for v in self.values.row(r) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Number of dates (rows).
    pub fn num_days(&self) -> usize {
        self.dates.len()
    }

    /// Number of tickers (columns).
    pub fn num_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Column index of `ticker`, if present.
    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Returns of the given universe columns on day `t` (0-based row index).
    pub fn universe_returns(&self, t: usize, universe: &[usize]) -> Vec<f64> {
        universe.iter().map(|&j| self.values[(t, j)]).collect()
    }
}

struct RawRow {
    date: String,
    source_row: usize,
    cells: Vec<String>,
}

struct ParsedCsv {
    tickers: Vec<String>,
    rows: Vec<RawRow>,
}

fn parse_csv<R: Read>(reader: R) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .clone();
    if headers.is_empty() || &headers[0] != "date" {
        return Err(Error::Validation(
            "first header column must be `date`".into(),
        ));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| csv_error(e, row_no))?;
        let date = record
            .get(0)
            .unwrap_or_default()
            .to_string();
        if date.is_empty() {
            return Err(Error::Validation(format!("empty date at data row {row_no}")));
        }
        rows.push(RawRow {
            date,
            source_row: row_no,
            cells: record.iter().skip(1).map(str::to_string).collect(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation("panel has no rows".into()));
    }
    Ok(ParsedCsv { tickers, rows })
}

/// Sorts rows by date, rejects duplicates, parses cells and assembles the
/// panel.  `on_bad_cell` is invoked for unparsable or non-finite cells; when
/// it swallows them the cell value becomes NaN and constructing the panel is
/// the caller's responsibility (strict loading turns the first bad cell into
/// an error instead).
fn assemble(
    mut parsed: ParsedCsv,
    mut on_bad_cell: impl FnMut(usize, &str, &str),
) -> Result<Option<ReturnPanel>> {
    parsed.rows.sort_by(|a, b| a.date.cmp(&b.date));
    for pair in parsed.rows.windows(2) {
        if pair[0].date == pair[1].date {
            return Err(Error::Validation(format!(
                "duplicate date `{}` (data rows {} and {})",
                pair[0].date, pair[0].source_row, pair[1].source_row
            )));
        }
    }
    if parsed.tickers.is_empty() {
        return Ok(None);
    }
    let (t, n) = (parsed.rows.len(), parsed.tickers.len());
    let mut values = Array2::zeros((t, n));
    let mut dates = Vec::with_capacity(t);
    let mut clean = true;
    for (r, row) in parsed.rows.iter().enumerate() {
        dates.push(row.date.clone());
        for (c, cell) in row.cells.iter().enumerate() {
            let v = cell.parse::<f64>().unwrap_or(f64::NAN);
            if !v.is_finite() {
                clean = false;
                on_bad_cell(row.source_row, &parsed.tickers[c], cell);
            }
            values[(r, c)] = v;
        }
    }
    if !clean {
        // The caller observed the bad cells through `on_bad_cell`; a panel
        // with NaNs would violate the type invariant, so none is returned.
        return Ok(None);
    }
    ReturnPanel::new(dates, parsed.tickers, values).map(Some)
}

fn csv_error(e: csv::Error, fallback_row: usize) -> Error {
    let row = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, .. } => pos
            .as_ref()
            .map(|p| p.record() as usize)
            .unwrap_or(fallback_row),
        _ => fallback_row,
    };
    Error::Parse { row, message: e.to_string() }
}

/// Converts a panel of positive prices into a panel of simple returns
/// `p_t / p_{t-1} - 1`; the output has one row fewer.
pub fn prices_to_returns(prices: &ReturnPanel) -> Result<ReturnPanel> {
    if prices.num_days() < 2 {
        return Err(Error::InvalidArgument(
            "price panel needs at least two rows to form returns".into(),
        ));
    }
    for ((r, c), v) in prices.values.indexed_iter() {
        if *v <= 0.0 {
            return Err(Error::Validation(format!(
                "non-positive price {} at date `{}` for ticker `{}`",
                v, prices.dates[r], prices.tickers[c]
            )));
        }
    }
    let t = prices.num_days();
    let n = prices.num_assets();
    let mut values = Array2::zeros((t - 1, n));
    for r in 1..t {
        for c in 0..n {
            values[(r - 1, c)] = prices.values[(r, c)] / prices.values[(r - 1, c)] - 1.0;
        }
    }
    ReturnPanel::new(prices.dates[1..].to_vec(), prices.tickers.clone(), values)
}

/// A `T x N` block of returns cut from a panel: rows are consecutive days,
/// columns follow the universe order it was built with.
#[derive(Debug, Clone)]
pub struct ReturnMatrix {
    values: Array2<f64>,
    window_start: usize,
}

impl ReturnMatrix {
    /// Wraps a raw matrix; every entry must be finite and both dimensions
    /// positive.  `window_start` is the panel row index of the first row.
    pub fn new(values: Array2<f64>, window_start: usize) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "return matrix must have at least one row and one column".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "return matrix contains non-finite value {v}"
            )));
        }
        Ok(Self { values, window_start })
    }

    pub fn num_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_cols(&self) -> usize {
        self.values.ncols()
    }

    /// Panel row index of the first day in the window.
    pub fn window_start(&self) -> usize {
        self.window_start
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

/// Draws `n_assets` distinct column indices uniformly at random and returns
/// them in ascending order.
pub fn sample_universe<R: Rng + ?Sized>(
    panel: &ReturnPanel,
    n_assets: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n_assets == 0 {
        return Err(Error::InvalidArgument("universe size must be positive".into()));
    }
    if n_assets > panel.num_assets() {
        return Err(Error::InvalidArgument(format!(
            "requested universe of {} assets but the panel has only {}",
            n_assets,
            panel.num_assets()
        )));
    }
    let mut idx = rand::seq::index::sample(rng, panel.num_assets(), n_assets).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// The `w`-day window ending the day before `t`: panel rows `t-w .. t-1`
/// restricted to `universe` columns.  Requires `w >= 1` and `w <= t <= T`.
pub fn window(panel: &ReturnPanel, universe: &[usize], t: usize, w: usize) -> Result<ReturnMatrix> {
    if w == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if t < w || t > panel.num_days() {
        return Err(Error::InvalidArgument(format!(
            "day {} has no complete {}-day history in a {}-day panel",
            t,
            w,
            panel.num_days()
        )));
    }
    if universe.is_empty() {
        return Err(Error::InvalidArgument("universe is empty".into()));
    }
    for &j in universe {
        if j >= panel.num_assets() {
            return Err(Error::InvalidArgument(format!(
                "universe index {} out of range for {} assets",
                j,
                panel.num_assets()
            )));
        }
    }
    let block = panel.values.slice(s![t - w..t, ..]);
    let mut values = Array2::zeros((w, universe.len()));
    for (out_c, &j) in universe.iter().enumerate() {
        values.column_mut(out_c).assign(&block.column(j));
    }
    ReturnMatrix::new(values, t - w)
}
