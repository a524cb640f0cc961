use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

/// Line-oriented pivot trace; a no-op unless a path was configured.
pub(crate) struct PivotLog {
    out: Option<BufWriter<File>>,
}

impl PivotLog {
    pub fn open(path: Option<&Path>) -> Self {
        let out = path.and_then(|p| match OpenOptions::new().create(true).append(true).open(p) {
            Ok(f) => Some(BufWriter::new(f)),
            Err(e) => {
                log::warn!("cannot open pivot log {}: {e}", p.display());
                None
            }
        });
        PivotLog { out }
    }

    pub fn enabled(&self) -> bool {
        self.out.is_some()
    }

    pub fn pivot(&mut self, phase: &str, count: usize, detail: impl FnOnce() -> String) {
        if let Some(out) = self.out.as_mut() {
            let _ = writeln!(out, "{phase} {count} {}", detail());
        }
    }

    pub fn note(&mut self, msg: &str) {
        if let Some(out) = self.out.as_mut() {
            let _ = writeln!(out, "# {msg}");
        }
    }
}
