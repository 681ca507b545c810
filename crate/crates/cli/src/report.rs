//! Output writers and readers: CSV with `#` provenance lines, JSON with a
//! provenance object, and two small SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fusestrata_core::stats_util::percentile;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Context};

/// What produced an output file. Contains no timestamps or absolute
/// paths, so identical runs write identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Input file name → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            tool: "fusestrata".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            inputs: BTreeMap::new(),
            config,
        }
    }

    /// Records an input file, or every file under an input directory.
    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let mut hasher = Sha256::new();
        let mut files = Vec::new();
        collect_files(path, &mut files).ctx(&format!("reading {}", path.display()))?;
        files.sort();
        for f in &files {
            if f != path {
                hasher.update(f.strip_prefix(path).unwrap_or(f).to_string_lossy().as_bytes());
            }
            hasher.update(std::fs::read(f).ctx(&format!("reading {}", f.display()))?);
        }
        let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(name, digest);
        Ok(())
    }

    fn header_lines(&self) -> String {
        let mut s = format!("# {} {} {}\n# seed = {}\n", self.tool, self.version, self.command, self.seed);
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "# input {k} sha256 {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            collect_files(&entry?.path(), out)?;
        }
    } else {
        std::fs::metadata(path)?;
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Formats a float so that it parses back to the same value.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Writes a CSV table preceded by provenance comment lines. An empty
/// `rows` still writes the header.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut buf = prov.header_lines().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).ctx("encoding csv")?;
        for r in rows {
            w.write_record(r).ctx("encoding csv")?;
        }
        w.flush().ctx("encoding csv")?;
    }
    std::fs::write(path, buf).ctx(&format!("writing {}", path.display()))
}

/// Writes `{"provenance": …, "summary": …, "result": value}`; `summary`
/// is left out when `None`.
pub fn write_json<S: Serialize, T: Serialize>(
    path: &Path,
    prov: &Provenance,
    summary: Option<&S>,
    value: &T,
) -> Result<(), CliError> {
    let mut doc = json!({ "provenance": prov });
    if let Some(s) = summary {
        doc["summary"] = serde_json::to_value(s).ctx("encoding json")?;
    }
    doc["result"] = serde_json::to_value(value).ctx("encoding json")?;
    let mut text = serde_json::to_string_pretty(&doc).ctx("encoding json")?;
    text.push('\n');
    std::fs::write(path, text).ctx(&format!("writing {}", path.display()))
}

/// Reads the `result` member of a file written by [`write_json`].
pub fn read_json_result(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).ctx(&format!("reading {}", path.display()))?;
    let doc: Value = serde_json::from_str(&text).ctx(&format!("parsing {}", path.display()))?;
    Ok(doc.get("result").cloned().unwrap_or(doc))
}

/// Writes `body` (already CSV) behind the provenance comment lines.
pub fn write_csv_body(path: &Path, prov: &Provenance, body: &[u8]) -> Result<(), CliError> {
    let mut buf = prov.header_lines().into_bytes();
    buf.extend_from_slice(body);
    std::fs::write(path, buf).ctx(&format!("writing {}", path.display()))
}

/// Writes an SVG document with the provenance as an XML comment after
/// the root element's opening tag.
pub fn write_svg(path: &Path, prov: &Provenance, svg: &str) -> Result<(), CliError> {
    let comment = format!("<!--\n{}-->\n", prov.header_lines().replace("--", "- -"));
    let at = svg.find('\n').map(|i| i + 1).unwrap_or(0);
    let mut text = String::with_capacity(svg.len() + comment.len());
    text.push_str(&svg[..at]);
    text.push_str(&comment);
    text.push_str(&svg[at..]);
    std::fs::write(path, text).ctx(&format!("writing {}", path.display()))
}

/// Numeric table keyed by subject: first column ids, remaining columns
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTable {
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SubjectTable {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Rows reordered to follow `ids`; every id must be present.
    pub fn aligned(&self, ids: &[String]) -> Result<SubjectTable, CliError> {
        let index: BTreeMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.rows[i].clone())
                    .ok_or_else(|| CliError::validation(format!("subject `{id}` missing from table")))
            })
            .collect::<Result<_, _>>()?;
        Ok(SubjectTable {
            columns: self.columns.clone(),
            ids: ids.to_vec(),
            rows,
        })
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("opening {}: {e}", path.display())))
}

pub fn read_subject_table(path: &Path) -> Result<SubjectTable, CliError> {
    let bad = |m: String| CliError::validation(format!("{}: {m}", path.display()));
    let mut rd = csv_reader(path)?;
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.is_empty() {
        return Err(bad("expected a subject id column".into()));
    }
    let columns = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        ids.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("`{v}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(SubjectTable { columns, ids, rows })
}

/// Reads `subject_id,cluster[,…]`, returning ids and integer labels.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<usize>), CliError> {
    let bad = |m: String| CliError::validation(format!("{}: {m}", path.display()));
    let mut rd = csv_reader(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() < 2 {
            return Err(bad("expected subject_id and label columns".into()));
        }
        ids.push(rec[0].to_string());
        labels.push(rec[1].parse().map_err(|_| bad(format!("label `{}` is not an integer", &rec[1])))?);
    }
    Ok((ids, labels))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Box plot: quartile box, median line, whiskers at min and max. Series
/// with no finite values are drawn as an empty slot; zero-spread series
/// collapse to a single line.
pub fn boxplot_svg(title: &str, series: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 110.0;
    const H: f64 = 260.0;
    const TOP: f64 = 40.0;
    const LEFT: f64 = 70.0;
    let clean: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, v)| v.iter().copied().filter(|x| x.is_finite()).collect())
        .collect();
    let all: Vec<f64> = clean.iter().flatten().copied().collect();
    let (mut lo, mut hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if all.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let y = |v: f64| TOP + H - (v - lo) / (hi - lo) * H;
    let width = LEFT + W * series.len().max(1) as f64 + 20.0;
    let height = TOP + H + 50.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>", width / 2.0, esc(title));
    let _ = writeln!(s, "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{}\" stroke=\"black\"/>", TOP + H);
    for (v, anchor) in [(lo, "end"), (hi, "end")] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"{anchor}\">{:.4e}</text>", LEFT - 4.0, y(v) + 4.0, v);
    }
    for (i, ((label, _), vals)) in series.iter().zip(&clean).enumerate() {
        let cx = LEFT + W * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{} (n={})</text>",
            TOP + H + 20.0,
            esc(label),
            vals.len()
        );
        if vals.is_empty() {
            continue;
        }
        let q = |p: f64| percentile(vals, p).expect("non-empty");
        let (min, q1, med, q3, max) = (q(0.0), q(25.0), q(50.0), q(75.0), q(100.0));
        let half = W * 0.3;
        let _ = writeln!(
            s,
            "<line class=\"whisker\" x1=\"{cx}\" y1=\"{:.2}\" x2=\"{cx}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y(max),
            y(min)
        );
        let _ = writeln!(
            s,
            "<rect class=\"box\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"black\"/>",
            cx - half,
            y(q3),
            2.0 * half,
            (y(q1) - y(q3)).max(0.0)
        );
        let _ = writeln!(
            s,
            "<line class=\"median\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#d62728\" stroke-width=\"2\"/>",
            cx - half,
            y(med),
            cx + half,
            y(med)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Heat table of `values[row][col]`, coloured on a diverging scale
/// centred at zero. One `rect.cell` per entry.
pub fn heat_table_svg(title: &str, rows: &[String], cols: &[String], values: &[Vec<f64>]) -> String {
    const CW: f64 = 80.0;
    const CH: f64 = 28.0;
    const LEFT: f64 = 90.0;
    const TOP: f64 = 56.0;
    let scale = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let width = LEFT + CW * cols.len() as f64 + 20.0;
    let height = TOP + CH * rows.len() as f64 + 20.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>", width / 2.0, esc(title));
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", LEFT + CW * (j as f64 + 0.5), TOP - 8.0, esc(c));
    }
    for (i, r) in rows.iter().enumerate() {
        let ty = TOP + CH * (i as f64 + 0.5) + 4.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ty}\" text-anchor=\"end\">{}</text>", LEFT - 6.0, esc(r));
        for (j, &v) in values[i].iter().enumerate() {
            let t = if v.is_finite() { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
            let (red, green, blue) = if t >= 0.0 {
                (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
            } else {
                (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
            };
            let x = LEFT + CW * j as f64;
            let _ = writeln!(
                s,
                "<rect class=\"cell\" x=\"{x}\" y=\"{}\" width=\"{CW}\" height=\"{CH}\" fill=\"rgb({},{},{})\" stroke=\"white\"/>",
                TOP + CH * i as f64,
                red.round(),
                green.round(),
                blue.round()
            );
            let _ = writeln!(s, "<text x=\"{}\" y=\"{ty}\" text-anchor=\"middle\">{v:.3}</text>", x + CW / 2.0);
        }
    }
    s.push_str("</svg>\n");
    s
}
