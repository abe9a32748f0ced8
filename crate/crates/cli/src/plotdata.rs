//! Reformat record tables into gnuplot-ready whitespace data plus a small
//! scene JSON naming the axes and series. No rendering happens here.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub const FIGURES: [&str; 6] = ["fr_Q", "fr_fig2", "fr_fig3", "dec_mx", "sd_new", "dec_tomo"];

pub struct PlotFiles {
    pub data_path: PathBuf,
    pub scene_path: PathBuf,
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Csv {
    fn column(&self, name: &str) -> Result<Vec<f64>, String> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("table has no column `{name}`"))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

fn parse_csv(text: &str, what: &str) -> Result<Csv, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> =
        lines.next().ok_or_else(|| format!("{what} is empty"))?.split(',').map(String::from).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| format!("{what} row {}: bad number `{f}`", i + 1)))
            .collect::<Result<_, _>>()?;
        if row.len() != header.len() {
            return Err(format!("{what} row {} has {} fields, expected {}", i + 1, row.len(), header.len()));
        }
        rows.push(row);
    }
    Ok(Csv { header, rows })
}

struct Record {
    kind: String,
    dir: PathBuf,
    tables: Value,
}

impl Record {
    fn load(record_path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(record_path)
            .map_err(|e| format!("cannot read {}: {e}", record_path.display()))?;
        let doc: Value =
            serde_json::from_str(&text).map_err(|e| format!("record is not valid JSON: {e}"))?;
        let kind = doc["config"]["kind"]
            .as_str()
            .ok_or("record has no config.kind")?
            .to_string();
        let dir = record_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self { kind, dir, tables: doc["tables"].clone() })
    }

    fn table_text(&self, logical: &str) -> Result<String, String> {
        let file = self.tables[logical]
            .as_str()
            .ok_or_else(|| format!("record has no `{logical}` table"))?;
        let path = self.dir.join(file);
        fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))
    }

    fn csv(&self, logical: &str) -> Result<Csv, String> {
        parse_csv(&self.table_text(logical)?, logical)
    }

    fn expect_kind(&self, figure: &str, allowed: &[&str]) -> Result<(), String> {
        if allowed.contains(&self.kind.as_str()) {
            Ok(())
        } else {
            Err(format!(
                "figure `{figure}` needs a record of kind {}, got `{}`",
                allowed.join(" or "),
                self.kind
            ))
        }
    }
}

fn data_block(comment: &str, columns: &[(&str, &[f64])]) -> Result<String, String> {
    let n = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
    if columns.iter().any(|(_, c)| c.len() != n) {
        return Err("series lengths differ".into());
    }
    let mut out = format!("# {comment}\n# ");
    out.push_str(&columns.iter().map(|(name, _)| *name).collect::<Vec<_>>().join(" "));
    out.push('\n');
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|(_, c)| format!("{}", c[i])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

fn scene(figure: &str, x_label: &str, y_label: &str, series: &[&str]) -> Value {
    json!({
        "figure": figure,
        "data_file": format!("{figure}.dat"),
        "x_label": x_label,
        "y_label": y_label,
        "series": series,
    })
}

/// Shared time axis for multi-series decay figures; the runs must have used
/// the same cycle count and cycle time.
fn common_time_axis(csvs: &[&Csv]) -> Result<Vec<f64>, String> {
    let t0 = csvs[0].column("t_s")?;
    for c in &csvs[1..] {
        let t = c.column("t_s")?;
        if t.len() != t0.len()
            || t.iter().zip(&t0).any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0))
        {
            return Err("decay tables have different time grids".into());
        }
    }
    Ok(t0)
}

fn build(figure: &str, record: &Record) -> Result<(String, Value), String> {
    match figure {
        "fr_Q" => {
            record.expect_kind(figure, &["dmf-sweep"])?;
            let csv = record.csv("sweep")?;
            let omega = csv.column("omega_rad_s")?;
            let q_sim = csv.column("Q_sim")?;
            let q3 = csv.column("Q3_closed")?;
            let data = data_block(
                "response Q vs drive frequency",
                &[("omega_rad_s", &omega), ("Q_sim", &q_sim), ("Q3_closed", &q3)],
            )?;
            Ok((
                data,
                scene(
                    figure,
                    "drive frequency w (rad/s)",
                    "long-time average Q",
                    &["simulated", "closed-form 3-spin"],
                ),
            ))
        }
        "fr_fig2" => {
            record.expect_kind(figure, &["dmf-series"])?;
            let csv = record.csv("series")?;
            let j = csv.column("j")?;
            let raw = csv.column("mx_raw")?;
            let m0 = *raw.first().ok_or("series table is empty")?;
            if m0.abs() < 1e-12 {
                return Err("initial magnetization is zero; cannot normalize".into());
            }
            let norm: Vec<f64> = raw.iter().map(|v| v / m0).collect();
            let data = data_block(
                "normalized stroboscopic magnetization",
                &[("cycle", &j), ("mx_normalized", &norm)],
            )?;
            Ok((data, scene(figure, "cycle index", "m_x(N tau) / m_x(0)", &["normalized m_x"])))
        }
        "fr_fig3" => {
            record.expect_kind(figure, &["dmf-series"])?;
            let csv = record.csv("series")?;
            let t = csv.column("t_s")?;
            let raw = csv.column("mx_raw")?;
            let noisy = csv.column("mx_noisy")?;
            let corr = csv.column("mx_corrected")?;
            let data = data_block(
                "ideal vs noisy vs decay-corrected magnetization",
                &[("t_s", &t), ("mx_raw", &raw), ("mx_noisy", &noisy), ("mx_corrected", &corr)],
            )?;
            Ok((
                data,
                scene(figure, "time (s)", "m_x", &["ideal", "noisy", "decay-corrected"]),
            ))
        }
        "dec_mx" => {
            record.expect_kind(figure, &["dd-compare", "kick-decay"])?;
            if record.kind == "dd-compare" {
                let free = record.csv("decay_free")?;
                let hahn = record.csv("decay_hahn")?;
                let cpmg = record.csv("decay_cpmg")?;
                let udd = record.csv("decay_udd")?;
                let t = common_time_axis(&[&free, &hahn, &cpmg, &udd])?;
                let cols = [
                    free.column("coh_abs")?,
                    hahn.column("coh_abs")?,
                    cpmg.column("coh_abs")?,
                    udd.column("coh_abs")?,
                ];
                let data = data_block(
                    "coherence magnitude under kicks, with and without decoupling",
                    &[
                        ("t_s", &t),
                        ("free", &cols[0]),
                        ("hahn", &cols[1]),
                        ("cpmg", &cols[2]),
                        ("udd", &cols[3]),
                    ],
                )?;
                Ok((
                    data,
                    scene(figure, "time (s)", "|coherence|", &["no DD", "Hahn", "CPMG", "UDD"]),
                ))
            } else {
                let kicked = record.csv("decay")?;
                let base = record.csv("baseline")?;
                let t = common_time_axis(&[&kicked, &base])?;
                let k = kicked.column("coh_abs")?;
                let b = base.column("coh_abs")?;
                let data = data_block(
                    "coherence magnitude with and without phase kicks",
                    &[("t_s", &t), ("kicked", &k), ("baseline", &b)],
                )?;
                Ok((data, scene(figure, "time (s)", "|coherence|", &["kicked", "no kicks"])))
            }
        }
        "sd_new" => {
            record.expect_kind(figure, &["ns-scan"])?;
            let csv = record.csv("spectrum")?;
            let omega = csv.column("omega_rad_s")?;
            let s = csv.column("S_per_s")?;
            let data = data_block(
                "noise spectral density from CPMG T2 scans",
                &[("omega_rad_s", &omega), ("S_per_s", &s)],
            )?;
            Ok((data, scene(figure, "probe frequency w = pi/tau (rad/s)", "S(w) (1/s)", &["S(w)"])))
        }
        "dec_tomo" => {
            record.expect_kind(figure, &["qpt-run"])?;
            let text = record.table_text("chi")?;
            let doc: Value =
                serde_json::from_str(&text).map_err(|e| format!("chi table is not valid JSON: {e}"))?;
            let basis: Vec<String> = doc["fixed_basis"]["basis"]
                .as_array()
                .ok_or("chi table has no basis labels")?
                .iter()
                .map(|v| v.as_str().unwrap_or("?").to_string())
                .collect();
            let chi = doc["fixed_basis"]["chi"]
                .as_array()
                .ok_or("chi table has no chi entries")?;
            let mut data =
                String::from("# process matrix entries, one per row\n# m n re im\n");
            for (m, row) in chi.iter().enumerate() {
                let row = row.as_array().ok_or("chi row is not an array")?;
                for (n, entry) in row.iter().enumerate() {
                    let re = entry[0].as_f64().ok_or("chi entry is not numeric")?;
                    let im = entry[1].as_f64().ok_or("chi entry is not numeric")?;
                    let _ = writeln!(data, "{m} {n} {re} {im}");
                }
            }
            let mut sc = scene(figure, "row index m", "column index n", &["Re chi", "Im chi"]);
            sc["tick_labels"] = json!(basis);
            Ok((data, sc))
        }
        other => Err(format!(
            "unknown figure `{other}` (expected one of {})",
            FIGURES.join(", ")
        )),
    }
}

/// Write `<figure>.dat` and `<figure>_scene.json` next to the record.
pub fn emit_plotdata(record_path: &Path, figure: &str) -> Result<PlotFiles, String> {
    let record = Record::load(record_path)?;
    let (data, sc) = build(figure, &record)?;
    let data_path = record.dir.join(format!("{figure}.dat"));
    let scene_path = record.dir.join(format!("{figure}_scene.json"));
    fs::write(&data_path, data).map_err(|e| format!("cannot write {}: {e}", data_path.display()))?;
    let scene_text = serde_json::to_string_pretty(&sc).expect("scene serializes") + "\n";
    fs::write(&scene_path, scene_text)
        .map_err(|e| format!("cannot write {}: {e}", scene_path.display()))?;
    Ok(PlotFiles { data_path, scene_path })
}
