//! Rule-conditioned text-to-SQL prompts and execution-based scoring.
//!
//! Unlike the JSON loop there is no automatic checker that pins a wrong query
//! on a particular rule, so which rule gets translated is an operator choice.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::{BackendError, Backend, GenerationRequest, RequestParams, Transcript};
use crate::prompt::{PromptError, TranslationTable, DOMINANT_LANGUAGE};

pub const SQL_RULE_COUNT: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum SqlError {
    #[error("database {path} unavailable: {message}")]
    DatabaseUnavailable { path: PathBuf, message: String },
    #[error("gold query fails: {0}")]
    BadGold(String),
    #[error("task manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("no SQL rule S{0}")]
    UnknownRule(u8),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A single SQL value with loose numeric typing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "value")]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn from_ref(v: ValueRef<'_>) -> Cell {
        match v {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Integer(i),
            ValueRef::Real(r) => Cell::Real(r),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Integer(i) => Some(i as f64),
            Cell::Real(r) => Some(r),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Integer(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }

    /// Total order in which 20 and 20.0 are equal.
    pub fn lenient_cmp(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Integer(a), Cell::Integer(b)) => a.cmp(b),
            (a, b) if a.rank() == 1 && b.rank() == 1 => {
                a.as_f64().unwrap_or(0.0).total_cmp(&b.as_f64().unwrap_or(0.0))
            }
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

pub type Row = Vec<Cell>;

fn rows_cmp(a: &Row, b: &Row) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.lenient_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn rows_equal(a: &[Row], b: &[Row]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| rows_cmp(x, y).is_eq())
}

/// Compares result sets: as multisets, or as sequences when `ordered`.
pub fn results_match(generated: &[Row], gold: &[Row], ordered: bool) -> bool {
    if ordered {
        return rows_equal(generated, gold);
    }
    let mut g = generated.to_vec();
    let mut h = gold.to_vec();
    g.sort_by(rows_cmp);
    h.sort_by(rows_cmp);
    rows_equal(&g, &h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Sql(String),
    Rows(Vec<Row>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlTask {
    pub question: String,
    pub schema_ddl: String,
    pub database: PathBuf,
    pub gold: Gold,
}

#[derive(Deserialize)]
struct Manifest {
    question: String,
    schema: PathBuf,
    #[serde(default)]
    data: Option<PathBuf>,
    database: PathBuf,
    #[serde(default)]
    gold_sql: Option<String>,
    #[serde(default)]
    gold_rows: Option<Vec<Row>>,
}

impl SqlTask {
    /// Reads a task manifest. Paths inside are relative to it. When the
    /// database file is missing and the manifest names `data`, it is built
    /// from the schema and data scripts.
    pub fn load(manifest: &Path) -> Result<SqlTask, SqlError> {
        let bad = |message: String| SqlError::Manifest {
            path: manifest.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(manifest).map_err(|e| bad(e.to_string()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let schema_path = base.join(&m.schema);
        let schema_ddl = std::fs::read_to_string(&schema_path)
            .map_err(|e| bad(format!("{}: {e}", schema_path.display())))?;
        let database = base.join(&m.database);
        if !database.exists() {
            if let Some(data) = &m.data {
                let data_path = base.join(data);
                let inserts = std::fs::read_to_string(&data_path)
                    .map_err(|e| bad(format!("{}: {e}", data_path.display())))?;
                build_database(&database, &schema_ddl, &inserts)?;
            }
        }
        let gold = match (m.gold_sql, m.gold_rows) {
            (Some(sql), None) => Gold::Sql(sql),
            (None, Some(rows)) => Gold::Rows(rows),
            _ => return Err(bad("exactly one of gold_sql and gold_rows is required".into())),
        };
        let task = SqlTask {
            question: m.question,
            schema_ddl,
            database,
            gold,
        };
        task.gold_rows()?;
        Ok(task)
    }

    /// Gold result rows, running the gold query if needed.
    pub fn gold_rows(&self) -> Result<Vec<Row>, SqlError> {
        match &self.gold {
            Gold::Rows(r) => Ok(r.clone()),
            Gold::Sql(sql) => {
                let conn = open_read_only(&self.database)?;
                run_query(&conn, sql).map_err(SqlError::BadGold)
            }
        }
    }

    pub fn order_sensitive(&self) -> bool {
        static ORDER_BY: OnceLock<Regex> = OnceLock::new();
        let re = ORDER_BY.get_or_init(|| Regex::new(r"(?i)\border\s+by\b").expect("valid regex"));
        matches!(&self.gold, Gold::Sql(s) if re.is_match(s))
    }
}

/// Creates a fresh SQLite file from DDL plus insert statements.
pub fn build_database(path: &Path, schema_ddl: &str, inserts: &str) -> Result<(), SqlError> {
    let unavailable = |e: rusqlite::Error| SqlError::DatabaseUnavailable {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let tmp = path.with_extension(format!("building.{}", std::process::id()));
    let _ = std::fs::remove_file(&tmp);
    let built = Connection::open(&tmp).and_then(|conn| {
        // dumps list child rows before parents
        conn.execute_batch("PRAGMA foreign_keys = OFF;")?;
        conn.execute_batch(schema_ddl)?;
        conn.execute_batch(inserts)
    });
    if let Err(e) = built {
        let _ = std::fs::remove_file(&tmp);
        return Err(unavailable(e));
    }
    std::fs::rename(&tmp, path).map_err(|e| SqlError::DatabaseUnavailable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn open_read_only(path: &Path) -> Result<Connection, SqlError> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .and_then(|c| {
        c.execute_batch("PRAGMA query_only = ON;")?;
        // a file that is not a database only fails on first read
        c.query_row("SELECT count(*) FROM sqlite_master", [], |_| Ok(()))?;
        Ok(c)
    })
    .map_err(|e| SqlError::DatabaseUnavailable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(conn)
}

/// Runs exactly one statement. Anything else is an error string.
fn run_query(conn: &Connection, sql: &str) -> Result<Vec<Row>, String> {
    let sql = sql.trim().trim_end_matches(';').trim_end();
    if sql.is_empty() {
        return Err("empty query".into());
    }
    let mut stmt = conn.prepare(sql).map_err(|e| e.to_string())?;
    if !stmt.readonly() {
        return Err("statement would modify the database".into());
    }
    let width = stmt.column_count();
    let mut rows = stmt.query([]).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(|e| e.to_string())? {
        let mut r = Vec::with_capacity(width);
        for i in 0..width {
            r.push(Cell::from_ref(row.get_ref(i).map_err(|e| e.to_string())?));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "detail")]
pub enum Verdict {
    Match,
    Mismatch,
    ExecutionError(String),
}

impl Verdict {
    pub fn is_match(&self) -> bool {
        matches!(self, Verdict::Match)
    }
}

pub fn execute_and_compare(generated_sql: &str, task: &SqlTask) -> Result<Verdict, SqlError> {
    let gold = task.gold_rows()?;
    let conn = open_read_only(&task.database)?;
    Ok(match run_query(&conn, generated_sql) {
        Err(e) => Verdict::ExecutionError(e),
        Ok(rows) if results_match(&rows, &gold, task.order_sensitive()) => Verdict::Match,
        Ok(_) => Verdict::Mismatch,
    })
}

/// The query in a model reply: the first fenced block if any, else the text
/// from the first SELECT or WITH keyword on.
pub fn extract_sql(text: &str) -> String {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    static START: OnceLock<Regex> = OnceLock::new();
    let fence = FENCE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\n?(.*?)```").expect("valid regex"));
    if let Some(c) = fence.captures(text) {
        return c[1].trim().to_string();
    }
    let start = START.get_or_init(|| Regex::new(r"(?i)\b(select|with)\b").expect("valid regex"));
    match start.find(text) {
        Some(m) => text[m.start()..].trim().to_string(),
        None => text.trim().to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlSlot {
    /// 1-based rule number.
    pub rule: u8,
    pub language: String,
    pub rendered_text: String,
    pub repeat_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlRuleSet {
    pub slots: Vec<SqlSlot>,
}

impl SqlRuleSet {
    pub fn empty() -> Self {
        SqlRuleSet { slots: Vec::new() }
    }

    /// S1..S5 in the dominant language.
    pub fn standard(table: &TranslationTable) -> Result<Self, SqlError> {
        let slots = (1..=SQL_RULE_COUNT)
            .map(|n| {
                Ok(SqlSlot {
                    rule: n,
                    language: DOMINANT_LANGUAGE.to_string(),
                    rendered_text: table.get(&format!("S{n}"), DOMINANT_LANGUAGE)?.to_string(),
                    repeat_count: 1,
                })
            })
            .collect::<Result<_, SqlError>>()?;
        Ok(SqlRuleSet { slots })
    }

    fn slot_mut(&mut self, rule: u8) -> Result<&mut SqlSlot, SqlError> {
        self.slots
            .iter_mut()
            .find(|s| s.rule == rule)
            .ok_or(SqlError::UnknownRule(rule))
    }

    pub fn with_language(mut self, rule: u8, language: &str, table: &TranslationTable) -> Result<Self, SqlError> {
        let text = table.get(&format!("S{rule}"), language)?.to_string();
        let slot = self.slot_mut(rule)?;
        slot.language = language.to_string();
        slot.rendered_text = text;
        Ok(self)
    }

    pub fn with_repeat(mut self, rule: u8, count: u32) -> Result<Self, SqlError> {
        self.slot_mut(rule)?.repeat_count = count.max(1);
        Ok(self)
    }

    /// Short description, e.g. `en` or `S4:ko` or `S4x2`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .slots
            .iter()
            .filter(|s| s.language != DOMINANT_LANGUAGE || s.repeat_count > 1)
            .map(|s| {
                let mut p = format!("S{}", s.rule);
                if s.language != DOMINANT_LANGUAGE {
                    p.push_str(&format!(":{}", s.language));
                }
                if s.repeat_count > 1 {
                    p.push_str(&format!("x{}", s.repeat_count));
                }
                p
            })
            .collect();
        if parts.is_empty() {
            DOMINANT_LANGUAGE.to_string()
        } else {
            parts.join(",")
        }
    }
}

pub fn build_sql_prompt(task: &SqlTask, rules: &SqlRuleSet) -> String {
    let mut p = String::new();
    p.push_str("The database was created with the following SQL schema:\n\n");
    p.push_str(task.schema_ddl.trim());
    p.push_str("\n\nWrite one SQLite query that answers the question below.");
    if !rules.slots.is_empty() {
        p.push_str(" You must follow the following rules:\n\n");
        for s in &rules.slots {
            for _ in 0..s.repeat_count {
                p.push_str(&format!("{}. {}\n", s.rule, s.rendered_text));
            }
        }
    } else {
        p.push('\n');
    }
    p.push_str(&format!("\nQuestion: {}\n\nReturn only the SQL query.", task.question));
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlRun {
    pub run: usize,
    pub sql: Option<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlEvalSummary {
    pub rules: String,
    pub runs: Vec<SqlRun>,
    pub error_rate: f64,
}

/// Fraction of `n_runs` replies that do not reproduce the gold result.
/// Backend failures count as errors.
pub fn error_rate(
    task: &SqlTask,
    backend: &dyn Backend,
    rules: &SqlRuleSet,
    n_runs: usize,
    params: &RequestParams,
    transcript: &Transcript,
) -> Result<SqlEvalSummary, SqlError> {
    let prompt = build_sql_prompt(task, rules);
    let mut runs = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let mut params = params.clone();
        params.seed = params.seed.map(|s| s.wrapping_add(run as u64));
        let request = GenerationRequest::new(prompt.clone(), &params);
        let outcome: Result<_, BackendError> = transcript.call(backend, &request);
        let r = match outcome {
            Ok(res) => {
                let sql = extract_sql(&res.text);
                let verdict = execute_and_compare(&sql, task)?;
                SqlRun {
                    run,
                    sql: Some(sql),
                    verdict,
                }
            }
            Err(e) => SqlRun {
                run,
                sql: None,
                verdict: Verdict::ExecutionError(format!("backend: {e}")),
            },
        };
        runs.push(r);
    }
    let failures = runs.iter().filter(|r| !r.verdict.is_match()).count();
    let error_rate = if n_runs == 0 { 0.0 } else { failures as f64 / n_runs as f64 };
    Ok(SqlEvalSummary {
        rules: rules.label(),
        runs,
        error_rate,
    })
}

/// Hex SHA-256 of a file, to show a database was left untouched.
pub fn checksum(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenient_numbers() {
        assert!(Cell::Integer(20).lenient_cmp(&Cell::Real(20.0)).is_eq());
        assert!(Cell::Integer(20).lenient_cmp(&Cell::Real(20.5)).is_lt());
        assert!(Cell::Text("20".into()).lenient_cmp(&Cell::Integer(20)).is_gt());
    }

    #[test]
    fn multiset_vs_sequence() {
        let a = vec![vec![Cell::Integer(1)], vec![Cell::Integer(2)], vec![Cell::Integer(2)]];
        let b = vec![vec![Cell::Integer(2)], vec![Cell::Integer(1)], vec![Cell::Integer(2)]];
        assert!(results_match(&a, &b, false));
        assert!(!results_match(&a, &b, true));
        assert!(!results_match(&a[..2], &b, false));
    }

    #[test]
    fn extraction() {
        assert_eq!(extract_sql("```sql\nSELECT 1;\n```"), "SELECT 1;");
        assert_eq!(extract_sql("Sure! SELECT a FROM t"), "SELECT a FROM t");
        assert_eq!(extract_sql("nothing"), "nothing");
    }

    #[test]
    fn rule_set_label() {
        let t = TranslationTable::builtin();
        let r = SqlRuleSet::standard(&t).unwrap();
        assert_eq!(r.label(), "en");
        let r = r.with_language(4, "ko", &t).unwrap().with_repeat(2, 2).unwrap();
        assert_eq!(r.label(), "S2x2,S4:ko");
        assert!(SqlRuleSet::empty().with_repeat(1, 2).is_err());
    }
}
