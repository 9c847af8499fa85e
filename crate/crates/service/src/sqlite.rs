//! SQLite-backed [`Store`].
//!
//! One connection behind a mutex. Annotation commits run in an immediate
//! transaction that inserts the annotation and updates the account row
//! together, so after a crash either both are visible or neither is. Exports
//! read inside a single transaction and therefore see one snapshot.

use std::path::Path;

use parking_lot::Mutex;
use rusqlite::{params, Connection, ErrorCode, OptionalExtension, Row, TransactionBehavior};

use seam_core::store::{AnnotationDraft, ExampleSummary, ExportFilter, Store, StoreError};
use seam_core::{AccountType, Annotation, AnnotationRecord, AnnotatorAccount, Category, Example};

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS examples (
    id              TEXT PRIMARY KEY,
    category        TEXT NOT NULL,
    sentences       TEXT NOT NULL,
    boundary_index  INTEGER,
    prompt_source   TEXT NOT NULL,
    generator       TEXT NOT NULL,
    decoding_p      REAL,
    attention_check INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS examples_by_category ON examples(category, id);

CREATE TABLE IF NOT EXISTS accounts (
    seq               INTEGER PRIMARY KEY AUTOINCREMENT,
    id                TEXT NOT NULL UNIQUE,
    display_name      TEXT NOT NULL UNIQUE,
    account_type      TEXT NOT NULL,
    total_points      INTEGER NOT NULL DEFAULT 0,
    total_annotations INTEGER NOT NULL DEFAULT 0,
    perfect_count     INTEGER NOT NULL DEFAULT 0,
    created_at        INTEGER NOT NULL,
    token_hash        TEXT NOT NULL UNIQUE
);

CREATE TABLE IF NOT EXISTS annotations (
    id           TEXT PRIMARY KEY,
    annotator_id TEXT NOT NULL REFERENCES accounts(id),
    example_id   TEXT NOT NULL REFERENCES examples(id),
    guess_index  INTEGER,
    explanation  TEXT NOT NULL,
    points       INTEGER NOT NULL,
    duration_ms  INTEGER NOT NULL,
    order_index  INTEGER NOT NULL,
    created_at   INTEGER NOT NULL,
    UNIQUE (annotator_id, example_id),
    UNIQUE (annotator_id, order_index)
);
"#;

pub struct SqliteStore {
    conn: Mutex<Connection>,
}

fn backend(e: rusqlite::Error) -> StoreError {
    match e.sqlite_error_code() {
        Some(ErrorCode::ConstraintViolation) => StoreError::Conflict(e.to_string()),
        _ => StoreError::Backend(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> StoreError {
    StoreError::Backend(e.to_string())
}

const EXAMPLE_COLUMNS: &str =
    "id, category, sentences, boundary_index, prompt_source, generator, decoding_p, attention_check";

fn example_row(row: &Row<'_>) -> rusqlite::Result<(Example, String)> {
    let category: String = row.get(1)?;
    Ok((
        Example {
            id: row.get(0)?,
            category: Category::from(category),
            sentences: Vec::new(),
            boundary_index: row.get(3)?,
            prompt_source: row.get(4)?,
            generator: row.get(5)?,
            decoding_p: row.get(6)?,
            attention_check: row.get(7)?,
        },
        row.get(2)?,
    ))
}

fn finish_example((mut e, sentences): (Example, String)) -> Result<Example, StoreError> {
    e.sentences = serde_json::from_str(&sentences).map_err(json_err)?;
    Ok(e)
}

const ACCOUNT_COLUMNS: &str =
    "id, display_name, account_type, total_points, total_annotations, perfect_count, created_at";

fn account_row(row: &Row<'_>) -> rusqlite::Result<AnnotatorAccount> {
    let kind: String = row.get(2)?;
    Ok(AnnotatorAccount {
        id: row.get(0)?,
        display_name: row.get(1)?,
        account_type: AccountType::parse(&kind).unwrap_or(AccountType::Organic),
        total_points: row.get::<_, i64>(3)? as u64,
        total_annotations: row.get::<_, i64>(4)? as u64,
        perfect_count: row.get::<_, i64>(5)? as u64,
        created_at: row.get(6)?,
    })
}

const ANNOTATION_COLUMNS: &str = "a.id, a.annotator_id, a.example_id, a.guess_index, a.explanation, \
     a.points, a.duration_ms, a.order_index, a.created_at";

fn annotation_row(row: &Row<'_>) -> rusqlite::Result<Annotation> {
    Ok(Annotation {
        id: row.get(0)?,
        annotator_id: row.get(1)?,
        example_id: row.get(2)?,
        guess_index: row.get(3)?,
        explanation: row.get(4)?,
        points: row.get(5)?,
        duration_ms: row.get(6)?,
        order_index: row.get(7)?,
        created_at: row.get(8)?,
    })
}

impl SqliteStore {
    /// Open (creating if needed) the database at `path`; `:memory:` gives a
    /// private in-memory database.
    pub fn open(path: &str) -> Result<Self, StoreError> {
        let conn = if path == ":memory:" {
            Connection::open_in_memory()
        } else {
            Connection::open(Path::new(path))
        }
        .map_err(backend)?;
        if path != ":memory:" {
            conn.pragma_update(None, "journal_mode", "WAL").map_err(backend)?;
            conn.pragma_update(None, "synchronous", "FULL").map_err(backend)?;
        }
        conn.pragma_update(None, "foreign_keys", "ON").map_err(backend)?;
        conn.execute_batch(SCHEMA).map_err(backend)?;
        Ok(SqliteStore {
            conn: Mutex::new(conn),
        })
    }
}

impl Store for SqliteStore {
    fn insert_example(&self, e: &Example) -> Result<(), StoreError> {
        let sentences = serde_json::to_string(&e.sentences).map_err(json_err)?;
        self.conn
            .lock()
            .execute(
                &format!("INSERT INTO examples ({EXAMPLE_COLUMNS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)"),
                params![
                    e.id,
                    e.category.as_str(),
                    sentences,
                    e.boundary_index,
                    e.prompt_source,
                    e.generator,
                    e.decoding_p,
                    e.attention_check
                ],
            )
            .map_err(backend)?;
        Ok(())
    }

    fn example(&self, id: &str) -> Result<Option<Example>, StoreError> {
        let row = self
            .conn
            .lock()
            .query_row(
                &format!("SELECT {EXAMPLE_COLUMNS} FROM examples WHERE id = ?1"),
                [id],
                example_row,
            )
            .optional()
            .map_err(backend)?;
        row.map(finish_example).transpose()
    }

    fn examples(&self) -> Result<Vec<Example>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn
            .prepare(&format!("SELECT {EXAMPLE_COLUMNS} FROM examples ORDER BY id"))
            .map_err(backend)?;
        let rows = stmt
            .query_map([], example_row)
            .map_err(backend)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(backend)?;
        rows.into_iter().map(finish_example).collect()
    }

    fn categories(&self) -> Result<Vec<(Category, u64)>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn
            .prepare("SELECT category, COUNT(*) FROM examples GROUP BY category ORDER BY category")
            .map_err(backend)?;
        let rows = stmt
            .query_map([], |r| {
                Ok((Category::from(r.get::<_, String>(0)?), r.get::<_, i64>(1)? as u64))
            })
            .map_err(backend)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(backend);
        rows
    }

    fn unseen_examples(
        &self,
        annotator_id: &str,
        category: &Category,
    ) -> Result<Vec<ExampleSummary>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn
            .prepare(
                "SELECT e.id, e.attention_check FROM examples e
                 WHERE e.category = ?1 AND NOT EXISTS (
                     SELECT 1 FROM annotations a WHERE a.annotator_id = ?2 AND a.example_id = e.id)
                 ORDER BY e.id",
            )
            .map_err(backend)?;
        let rows = stmt
            .query_map(params![category.as_str(), annotator_id], |r| {
                Ok(ExampleSummary {
                    id: r.get(0)?,
                    attention_check: r.get(1)?,
                })
            })
            .map_err(backend)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(backend);
        rows
    }

    fn create_account(&self, a: &AnnotatorAccount, token_hash: &str) -> Result<(), StoreError> {
        self.conn
            .lock()
            .execute(
                "INSERT INTO accounts (id, display_name, account_type, total_points,
                     total_annotations, perfect_count, created_at, token_hash)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                params![
                    a.id,
                    a.display_name,
                    a.account_type.as_str(),
                    a.total_points as i64,
                    a.total_annotations as i64,
                    a.perfect_count as i64,
                    a.created_at,
                    token_hash
                ],
            )
            .map_err(backend)?;
        Ok(())
    }

    fn account(&self, id: &str) -> Result<Option<AnnotatorAccount>, StoreError> {
        self.conn
            .lock()
            .query_row(
                &format!("SELECT {ACCOUNT_COLUMNS} FROM accounts WHERE id = ?1"),
                [id],
                account_row,
            )
            .optional()
            .map_err(backend)
    }

    fn account_by_token(&self, token_hash: &str) -> Result<Option<AnnotatorAccount>, StoreError> {
        self.conn
            .lock()
            .query_row(
                &format!("SELECT {ACCOUNT_COLUMNS} FROM accounts WHERE token_hash = ?1"),
                [token_hash],
                account_row,
            )
            .optional()
            .map_err(backend)
    }

    fn accounts(&self) -> Result<Vec<AnnotatorAccount>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn
            .prepare(&format!("SELECT {ACCOUNT_COLUMNS} FROM accounts ORDER BY seq"))
            .map_err(backend)?;
        let rows = stmt
            .query_map([], account_row)
            .map_err(backend)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(backend);
        rows
    }

    fn commit_annotation(&self, draft: AnnotationDraft) -> Result<Annotation, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(backend)?;
        let order: i64 = tx
            .query_row(
                "SELECT COUNT(*) FROM annotations WHERE annotator_id = ?1",
                [&draft.annotator_id],
                |r| r.get(0),
            )
            .map_err(backend)?;
        let perfect = draft.perfect;
        let annotation = draft.into_annotation(order as u32);
        tx.execute(
            "INSERT INTO annotations (id, annotator_id, example_id, guess_index, explanation,
                 points, duration_ms, order_index, created_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
            params![
                annotation.id,
                annotation.annotator_id,
                annotation.example_id,
                annotation.guess_index,
                annotation.explanation,
                annotation.points,
                annotation.duration_ms,
                annotation.order_index,
                annotation.created_at
            ],
        )
        .map_err(backend)?;
        let updated = tx
            .execute(
                "UPDATE accounts SET total_points = total_points + ?1,
                     total_annotations = total_annotations + 1,
                     perfect_count = perfect_count + ?2
                 WHERE id = ?3",
                params![annotation.points, perfect as i64, annotation.annotator_id],
            )
            .map_err(backend)?;
        if updated != 1 {
            return Err(StoreError::NotFound(format!("account {}", annotation.annotator_id)));
        }
        tx.commit().map_err(backend)?;
        Ok(annotation)
    }

    fn annotations_of(&self, annotator_id: &str) -> Result<Vec<Annotation>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn
            .prepare(&format!(
                "SELECT {ANNOTATION_COLUMNS} FROM annotations a WHERE a.annotator_id = ?1 ORDER BY a.order_index"
            ))
            .map_err(backend)?;
        let rows = stmt
            .query_map([annotator_id], annotation_row)
            .map_err(backend)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(backend);
        rows
    }

    fn export(&self, filter: &ExportFilter) -> Result<Vec<AnnotationRecord>, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction().map_err(backend)?;
        let mut out = Vec::new();
        {
            let mut stmt = tx
                .prepare(&format!(
                    "SELECT {ANNOTATION_COLUMNS}, e.category, e.decoding_p, e.boundary_index,
                         e.attention_check, acc.account_type
                     FROM annotations a
                     JOIN examples e ON e.id = a.example_id
                     JOIN accounts acc ON acc.id = a.annotator_id
                     ORDER BY a.annotator_id, a.order_index"
                ))
                .map_err(backend)?;
            let rows = stmt
                .query_map([], |r| {
                    let category: String = r.get(9)?;
                    let kind: String = r.get(13)?;
                    Ok((
                        AnnotationRecord {
                            annotation: annotation_row(r)?,
                            category: Category::from(category),
                            decoding_p: r.get(10)?,
                            boundary_index: r.get(11)?,
                            attention_check: r.get(12)?,
                        },
                        AccountType::parse(&kind).unwrap_or(AccountType::Organic),
                    ))
                })
                .map_err(backend)?;
            for row in rows {
                let (record, kind) = row.map_err(backend)?;
                if filter.matches(&record, kind) {
                    out.push(record);
                }
            }
        }
        tx.commit().map_err(backend)?;
        Ok(out)
    }
}
