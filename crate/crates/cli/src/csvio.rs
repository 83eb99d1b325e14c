//! Minimal CSV reading for the tool's own outputs.
//!
//! None of the emitted fields contain commas or quotes, so a plain split is
//! the round-trip-exact loader; rejecting ragged rows keeps corrupted files
//! from propagating silently.

#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or("empty file")?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(format!(
                    "row {} has {} fields, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                ));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, String> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("no column named {name}"))
    }

    /// Numeric view of one column; empty fields become None.
    pub fn numbers(&self, name: &str) -> Result<Vec<Option<f64>>, String> {
        let idx = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                let field = &r[idx];
                if field.is_empty() {
                    Ok(None)
                } else {
                    field
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|e| format!("bad number {field:?} in column {name}: {e}"))
                }
            })
            .collect()
    }
}
