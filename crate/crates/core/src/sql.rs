//! Per-database specialization of the shipped SQL grammar, and the textual
//! schema rendering used in model inputs.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{parse_grammar, Grammar, GrammarError, Production, Symbol};

pub const TABLE_NAME: &str = "TABLE_NAME";
pub const COLUMN_NAME: &str = "COLUMN_NAME";

/// Sample values shown per column when rendering with values.
pub const MAX_RENDERED_VALUES: usize = 3;

const BASE_GRAMMAR: &str = include_str!("../grammars/sql_subset.cfg");

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("base grammar has no `{0}` nonterminal")]
    MissingPlaceholder(&'static str),
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{column}` in table `{table}`")]
    DuplicateColumn { table: String, column: String },
    #[error("empty identifier in schema")]
    EmptyName,
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type", default)]
    pub value_type: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DbSchema {
    pub tables: Vec<Table>,
}

impl DbSchema {
    pub fn validate(&self) -> Result<(), SqlError> {
        let mut tables = HashSet::new();
        for t in &self.tables {
            if t.name.is_empty() {
                return Err(SqlError::EmptyName);
            }
            if !tables.insert(&t.name) {
                return Err(SqlError::DuplicateTable(t.name.clone()));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if c.name.is_empty() {
                    return Err(SqlError::EmptyName);
                }
                if !cols.insert(&c.name) {
                    return Err(SqlError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The shipped SQL-subset grammar, with placeholder identifiers.
pub fn base_sql_grammar() -> Grammar {
    parse_grammar(BASE_GRAMMAR).expect("shipped SQL grammar parses")
}

/// Replaces the `TABLE_NAME` / `COLUMN_NAME` productions of `base` with the
/// schema's identifiers (columns both bare and as `table.column`), then
/// reduces.
pub fn specialize_sql_grammar(base: &Grammar, schema: &DbSchema) -> Result<Grammar, SqlError> {
    schema.validate()?;
    let defines = |name: &str| base.productions().iter().any(|p| p.lhs == name);
    if !defines(TABLE_NAME) {
        return Err(SqlError::MissingPlaceholder(TABLE_NAME));
    }
    if !defines(COLUMN_NAME) {
        return Err(SqlError::MissingPlaceholder(COLUMN_NAME));
    }
    let mut productions: Vec<Production> = base
        .productions()
        .iter()
        .filter(|p| p.lhs != TABLE_NAME && p.lhs != COLUMN_NAME)
        .cloned()
        .collect();
    // An identifier set with no members is a self-loop: unproductive, so
    // reduction removes every production that would need it.
    productions.push(Production::new(TABLE_NAME, vec![Symbol::nt(TABLE_NAME)]));
    productions.push(Production::new(COLUMN_NAME, vec![Symbol::nt(COLUMN_NAME)]));
    for table in &schema.tables {
        productions.push(Production::new(TABLE_NAME, vec![Symbol::t(table.name.clone())]));
        for column in &table.columns {
            productions.push(Production::new(COLUMN_NAME, vec![Symbol::t(column.name.clone())]));
            productions.push(Production::new(
                COLUMN_NAME,
                vec![Symbol::t(format!("{}.{}", table.name, column.name))],
            ));
        }
    }
    let specialized = Grammar::new(base.start(), productions)?.with_version(base.version());
    Ok(specialized.reduce()?)
}

/// `table : col1 , col2 | table2 : ...`; with values, each column is followed
/// by up to three sample values in parentheses.
pub fn render_schema(schema: &DbSchema, with_values: bool) -> String {
    schema
        .tables
        .iter()
        .map(|t| {
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| {
                    if with_values && !c.values.is_empty() {
                        let vals: Vec<String> = c.values.iter().take(MAX_RENDERED_VALUES).map(value_text).collect();
                        format!("{} ({})", c.name, vals.join(", "))
                    } else {
                        c.name.clone()
                    }
                })
                .collect();
            format!("{} : {}", t.name, cols.join(" , "))
        })
        .collect::<Vec<_>>()
        .join(" | ")
}

fn value_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
