//! Parsing and validation of affinity datasets into the canonical [`Complex`] table.
//!
//! Two on-disk layouts are accepted. CSV requires a header containing `id`,
//! `chains`, `pkd`, `kd_molar` and `pmid`, with chains separated by `;`. Any
//! further columns are carried along as tags. JSONL holds one object per line
//! with the same field names, `chains` given as an array and an optional
//! `tags` object.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical residues plus `X` for unknown positions.
pub const RESIDUE_ALPHABET: &str = "ACDEFGHIKLMNPQRSTVWYX";

/// Maximum disagreement, in pKd units, between a row's `pkd` and `kd_molar` columns.
pub const AFFINITY_AGREEMENT_TOL: f64 = 1e-6;

const PMID_PLACEHOLDER_PREFIX: &str = "UNKNOWN:";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset validation failed:\n{}", format_diagnostics(.0))]
    Validation(Vec<RowDiagnostic>),
    #[error("Kd must be positive and finite, got {0}")]
    Domain(f64),
}

/// A single problem found while validating one input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDiagnostic {
    /// 1-based line number in the source file.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn format_diagnostics(diags: &[RowDiagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guess the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown dataset format '{other}' (expected csv or jsonl)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        })
    }
}

/// One protein-protein complex with its affinity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub id: String,
    pub chains: Vec<String>,
    /// -log10(Kd / M).
    pub pkd: f64,
    pub pmid: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl Complex {
    /// True when the PMID was synthesized because the source row had none.
    pub fn has_placeholder_pmid(&self) -> bool {
        self.pmid.starts_with(PMID_PLACEHOLDER_PREFIX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub complexes: Vec<Complex>,
}

impl Dataset {
    /// Build a dataset from already-constructed complexes, enforcing the same
    /// invariants as the file parsers.
    pub fn new(name: impl Into<String>, complexes: Vec<Complex>) -> Result<Self, IngestError> {
        let mut diags = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, c) in complexes.iter().enumerate() {
            let line = i + 1;
            if let Some(first) = seen.insert(c.id.as_str(), line) {
                diags.push(RowDiagnostic {
                    line,
                    message: format!("duplicate id '{}' on rows {first} and {line}", c.id),
                });
            }
            if c.chains.is_empty() {
                diags.push(RowDiagnostic {
                    line,
                    message: format!("complex '{}' has no chains", c.id),
                });
            }
            for chain in &c.chains {
                if let Err(m) = check_chain(chain) {
                    diags.push(RowDiagnostic { line, message: m });
                }
            }
            if !c.pkd.is_finite() {
                diags.push(RowDiagnostic {
                    line,
                    message: format!("pkd for '{}' is not finite", c.id),
                });
            }
            if c.pmid.is_empty() {
                diags.push(RowDiagnostic {
                    line,
                    message: format!("complex '{}' has an empty pmid", c.id),
                });
            }
        }
        if !diags.is_empty() {
            return Err(IngestError::Validation(diags));
        }
        Ok(Dataset {
            name: name.into(),
            complexes,
        })
    }

    pub fn len(&self) -> usize {
        self.complexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.complexes.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.complexes.iter().map(|c| c.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Complex> {
        self.complexes.iter().find(|c| c.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &Complex> {
        self.complexes.iter().map(|c| (c.id.as_str(), c)).collect()
    }

    pub fn pmid_map(&self) -> BTreeMap<String, String> {
        self.complexes
            .iter()
            .map(|c| (c.id.clone(), c.pmid.clone()))
            .collect()
    }

    pub fn labels(&self) -> BTreeMap<String, f64> {
        self.complexes.iter().map(|c| (c.id.clone(), c.pkd)).collect()
    }
}

/// Convert a dissociation constant in molar units to pKd.
pub fn kd_to_pkd(kd_molar: f64) -> Result<f64, IngestError> {
    if !kd_molar.is_finite() || kd_molar <= 0.0 {
        return Err(IngestError::Domain(kd_molar));
    }
    Ok(-kd_molar.log10())
}

fn check_chain(chain: &str) -> Result<(), String> {
    if chain.is_empty() {
        return Err("empty chain sequence".to_string());
    }
    match chain.chars().find(|c| !RESIDUE_ALPHABET.contains(*c)) {
        Some(bad) => Err(format!("invalid residue '{bad}' in chain \"{chain}\"")),
        None => Ok(()),
    }
}

fn normalize_chain(raw: &str) -> String {
    raw.trim().to_ascii_uppercase()
}

/// Fields of one input row before validation.
struct RawRow {
    line: usize,
    id: String,
    chains: Vec<String>,
    pkd: Option<String>,
    kd_molar: Option<String>,
    pmid: Option<String>,
    tags: BTreeMap<String, String>,
}

fn non_empty(s: Option<&str>) -> Option<String> {
    s.map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

fn parse_number(raw: &str, field: &str) -> Result<f64, String> {
    raw.parse::<f64>()
        .map_err(|_| format!("{field} value '{raw}' is not a number"))
}

fn resolve_pkd(row: &RawRow) -> Result<f64, String> {
    let pkd = row
        .pkd
        .as_deref()
        .map(|s| parse_number(s, "pkd"))
        .transpose()?;
    let from_kd = match row.kd_molar.as_deref() {
        Some(s) => {
            let kd = parse_number(s, "kd_molar")?;
            Some(kd_to_pkd(kd).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    let value = match (pkd, from_kd) {
        (Some(p), Some(k)) => {
            if (p - k).abs() > AFFINITY_AGREEMENT_TOL {
                return Err(format!(
                    "pkd {p} disagrees with kd_molar (implies pkd {k})"
                ));
            }
            p
        }
        (Some(p), None) => p,
        (None, Some(k)) => k,
        (None, None) => return Err("neither pkd nor kd_molar is given".to_string()),
    };
    if !value.is_finite() {
        return Err(format!("pkd {value} is not finite"));
    }
    Ok(value)
}

fn validate_rows(name: &str, rows: Vec<RawRow>) -> Result<Dataset, IngestError> {
    let mut diags = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut complexes = Vec::with_capacity(rows.len());

    for row in rows {
        let line = row.line;
        let mut ok = true;
        if row.id.is_empty() {
            diags.push(RowDiagnostic {
                line,
                message: "missing id".to_string(),
            });
            ok = false;
        } else if let Some(first) = first_seen.get(&row.id) {
            diags.push(RowDiagnostic {
                line,
                message: format!("duplicate id '{}' on rows {first} and {line}", row.id),
            });
            ok = false;
        } else {
            first_seen.insert(row.id.clone(), line);
        }
        if row.chains.is_empty() {
            diags.push(RowDiagnostic {
                line,
                message: "no chains given".to_string(),
            });
            ok = false;
        }
        for chain in &row.chains {
            if let Err(m) = check_chain(chain) {
                diags.push(RowDiagnostic { line, message: m });
                ok = false;
            }
        }
        let pkd = match resolve_pkd(&row) {
            Ok(p) => p,
            Err(m) => {
                diags.push(RowDiagnostic { line, message: m });
                ok = false;
                f64::NAN
            }
        };
        if !ok {
            continue;
        }
        if !(pkd > 0.0 && pkd < 20.0) {
            log::warn!(
                "line {line}: pkd {pkd} for '{}' is outside the typical range (0, 20)",
                row.id
            );
        }
        let pmid = row
            .pmid
            .unwrap_or_else(|| format!("{PMID_PLACEHOLDER_PREFIX}{}", row.id));
        complexes.push(Complex {
            id: row.id,
            chains: row.chains,
            pkd,
            pmid,
            tags: row.tags,
        });
    }

    if !diags.is_empty() {
        return Err(IngestError::Validation(diags));
    }
    Ok(Dataset {
        name: name.to_string(),
        complexes,
    })
}

const REQUIRED_COLUMNS: [&str; 5] = ["id", "chains", "pkd", "kd_molar", "pmid"];

/// Parse CSV text. Line numbers in diagnostics count the header as line 1.
pub fn parse_csv_str(name: &str, text: &str) -> Result<Dataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut columns = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        columns.insert(h.to_string(), i);
    }
    for required in REQUIRED_COLUMNS {
        if !columns.contains_key(required) {
            return Err(IngestError::Parse {
                line: 1,
                message: format!("missing required column '{required}'"),
            });
        }
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |name: &str| record.get(columns[name]);
        let chains = field("chains")
            .unwrap_or("")
            .split(';')
            .map(normalize_chain)
            .filter(|c| !c.is_empty())
            .collect();
        let tags = headers
            .iter()
            .zip(record.iter())
            .filter(|(h, v)| !REQUIRED_COLUMNS.contains(h) && !v.is_empty())
            .map(|(h, v)| (h.to_string(), v.to_string()))
            .collect();
        rows.push(RawRow {
            line,
            id: field("id").unwrap_or("").trim().to_string(),
            chains,
            pkd: non_empty(field("pkd")),
            kd_molar: non_empty(field("kd_molar")),
            pmid: non_empty(field("pmid")),
            tags,
        });
    }
    validate_rows(name, rows)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    id: String,
    chains: Vec<String>,
    #[serde(default)]
    pkd: Option<serde_json::Value>,
    #[serde(default)]
    kd_molar: Option<serde_json::Value>,
    #[serde(default)]
    pmid: Option<serde_json::Value>,
    #[serde(default)]
    tags: BTreeMap<String, String>,
}

fn json_scalar(v: Option<serde_json::Value>) -> Option<String> {
    match v? {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => non_empty(Some(&s)),
        other => Some(other.to_string()),
    }
}

/// Parse JSONL text, one complex per non-blank line.
pub fn parse_jsonl_str(name: &str, text: &str) -> Result<Dataset, IngestError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(raw).map_err(|e| IngestError::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push(RawRow {
            line,
            id: row.id.trim().to_string(),
            chains: row
                .chains
                .iter()
                .map(|c| normalize_chain(c))
                .filter(|c| !c.is_empty())
                .collect(),
            pkd: json_scalar(row.pkd),
            kd_molar: json_scalar(row.kd_molar),
            pmid: json_scalar(row.pmid),
            tags: row.tags,
        });
    }
    validate_rows(name, rows)
}

/// Read and validate a dataset file. The dataset is named after the file stem.
pub fn parse_dataset(path: &Path, format: Format) -> Result<Dataset, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset");
    match format {
        Format::Csv => parse_csv_str(name, &text),
        Format::Jsonl => parse_jsonl_str(name, &text),
    }
}

/// Result of dropping listed ids from a dataset.
#[derive(Debug, Clone)]
pub struct Exclusion {
    pub dataset: Dataset,
    pub removed: Vec<String>,
    pub warnings: Vec<String>,
}

/// Remove every listed id. Ids not present produce a warning rather than an error.
pub fn apply_exclusions(dataset: &Dataset, exclude_ids: &[String]) -> Exclusion {
    let present: HashMap<&str, ()> = dataset
        .complexes
        .iter()
        .map(|c| (c.id.as_str(), ()))
        .collect();
    let mut warnings = Vec::new();
    for id in exclude_ids {
        if !present.contains_key(id.as_str()) {
            let msg = format!("{id} not found");
            log::warn!("exclusion list: {msg}");
            warnings.push(msg);
        }
    }
    let (removed, kept): (Vec<Complex>, Vec<Complex>) = dataset
        .complexes
        .iter()
        .cloned()
        .partition(|c| exclude_ids.contains(&c.id));
    Exclusion {
        dataset: Dataset {
            name: dataset.name.clone(),
            complexes: kept,
        },
        removed: removed.into_iter().map(|c| c.id).collect(),
        warnings,
    }
}

/// Parse an exclusion list: one id per line, `#` starts a comment.
pub fn parse_exclusion_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn read_exclusion_list(path: &Path) -> Result<Vec<String>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_exclusion_list(&text))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,chains,pkd,kd_molar,pmid\n";

    #[test]
    fn two_rows() {
        let text = format!("{HEADER}1ao7,GILGFVFTL;ACDE,6.2,,123\n1bd2,KLM;ppp,,1e-9,456\n");
        let ds = parse_csv_str("t", &text).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.complexes[1].chains, vec!["KLM", "PPP"]);
        assert!((ds.complexes[1].pkd - 9.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_id_names_both_rows() {
        // data rows 3 and 7 sit on lines 4 and 8 behind the header
        let mut text = HEADER.to_string();
        for (i, id) in ["a", "b", "1ao7", "c", "d", "e", "1ao7"].iter().enumerate() {
            text.push_str(&format!("{id},ACD,{},,P{i}\n", 5.0 + i as f64));
        }
        let err = parse_csv_str("t", &text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate id '1ao7'"), "{msg}");
        assert!(msg.contains("rows 4 and 8"), "{msg}");
    }

    #[test]
    fn invalid_residue_is_named() {
        let text = format!("{HEADER}x,ACDB,5,,1\n");
        match parse_csv_str("t", &text) {
            Err(IngestError::Validation(d)) => {
                assert_eq!(d.len(), 1);
                assert!(d[0].message.contains("'B'"), "{}", d[0].message);
                assert_eq!(d[0].line, 2);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn alphabet_excludes_ambiguity_codes() {
        for bad in ['B', 'J', 'O', 'U', 'Z', '*', '-'] {
            assert!(check_chain(&format!("AC{bad}")).is_err(), "{bad}");
        }
        assert!(check_chain("ACDEFGHIKLMNPQRSTVWYX").is_ok());
    }

    #[test]
    fn kd_conversion() {
        assert!((kd_to_pkd(1e-9).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(kd_to_pkd(1.0).unwrap(), 0.0);
        // -log10(3.2e-6) = 6 - log10(3.2), evaluated with mpmath at 30 digits
        assert!((kd_to_pkd(3.2e-6).unwrap() - 5.494850021680094).abs() < 1e-12);
        for bad in [0.0, -1e-9, f64::NAN, f64::INFINITY] {
            assert!(matches!(kd_to_pkd(bad), Err(IngestError::Domain(_))));
        }
    }

    #[test]
    fn affinity_columns_must_agree() {
        let ok = format!("{HEADER}a,ACD,9.0,1e-9,1\n");
        assert!(parse_csv_str("t", &ok).is_ok());
        let bad = format!("{HEADER}a,ACD,8.0,1e-9,1\n");
        let msg = parse_csv_str("t", &bad).unwrap_err().to_string();
        assert!(msg.contains("disagrees"), "{msg}");
        let neither = format!("{HEADER}a,ACD,,,1\n");
        assert!(parse_csv_str("t", &neither).is_err());
    }

    #[test]
    fn missing_pmid_gets_placeholder() {
        let text = format!("{HEADER}a,ACD,5,,\n");
        let ds = parse_csv_str("t", &text).unwrap();
        assert_eq!(ds.complexes[0].pmid, "UNKNOWN:a");
        assert!(ds.complexes[0].has_placeholder_pmid());
    }

    #[test]
    fn extra_columns_become_tags() {
        let text = "id,chains,pkd,kd_molar,pmid,source\na,ACD,5,,1,tcr3d\n";
        let ds = parse_csv_str("t", text).unwrap();
        assert_eq!(ds.complexes[0].tags["source"], "tcr3d");
    }

    #[test]
    fn missing_column_is_parse_error() {
        let err = parse_csv_str("t", "id,chains,pkd\na,ACD,5\n").unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 1, .. }));
    }

    #[test]
    fn ragged_csv_reports_line() {
        let text = format!("{HEADER}a,ACD,5,,1\nb,ACD\n");
        match parse_csv_str("t", &text) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_rows() {
        let text = r#"{"id":"a","chains":["acd","KLM"],"pkd":7.5,"pmid":"111"}

{"id":"b","chains":["ACD"],"kd_molar":1e-6,"pmid":222,"tags":{"source":"ppb"}}
"#;
        let ds = parse_jsonl_str("t", text).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.complexes[0].chains[0], "ACD");
        assert_eq!(ds.complexes[1].pmid, "222");
        assert!((ds.complexes[1].pkd - 6.0).abs() < 1e-12);

        let err = parse_jsonl_str("t", "{\"id\":\"a\"\n").unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 1, .. }));
    }

    #[test]
    fn exclusions() {
        let mk = |id: &str| Complex {
            id: id.into(),
            chains: vec!["ACD".into()],
            pkd: 5.0,
            pmid: "1".into(),
            tags: BTreeMap::new(),
        };
        let ds = Dataset::new("t", vec![mk("a"), mk("b"), mk("c")]).unwrap();
        let out = apply_exclusions(&ds, &["b".to_string()]);
        assert_eq!(out.dataset.ids(), vec!["a", "c"]);
        assert!(out.warnings.is_empty());

        let single = Dataset::new("t", vec![mk("a")]).unwrap();
        assert_eq!(apply_exclusions(&single, &[]).dataset, single);
        let out = apply_exclusions(&single, &["z".to_string()]);
        assert_eq!(out.dataset, single);
        assert_eq!(out.warnings, vec!["z not found"]);
    }

    #[test]
    fn exclusion_list_comments() {
        let ids = parse_exclusion_list("# header\n9eji\n 9ejg  # trailing\n\n9ejh\n");
        assert_eq!(ids, vec!["9eji", "9ejg", "9ejh"]);
    }
}
