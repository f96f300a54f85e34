use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// `energy.csv`, `l2.csv` and numbered snapshots under one directory.
pub struct RunOutput {
    dir: PathBuf,
    energy: BufWriter<File>,
    e0: Option<f64>,
    l2: Option<BufWriter<File>>,
    snapshot_every: Option<f64>,
    next_snapshot: f64,
    snapshots: usize,
}

impl RunOutput {
    pub fn new(dir: &Path, with_l2: bool, snapshot_every: Option<f64>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut energy = create(&dir.join("energy.csv"))?;
        writeln!(energy, "t,E,rel_err")?;
        let l2 = if with_l2 {
            let mut w = create(&dir.join("l2.csv"))?;
            writeln!(w, "t,rel_l2")?;
            Some(w)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            energy,
            e0: None,
            l2,
            snapshot_every,
            next_snapshot: 0.0,
            snapshots: 0,
        })
    }

    pub fn energy(&mut self, t: f64, e: f64) -> Result<()> {
        let e0 = *self.e0.get_or_insert(e);
        let rel = if e0 != 0.0 { (e - e0) / e0 } else { e - e0 };
        writeln!(self.energy, "{t:.10},{e:.17e},{rel:.17e}")?;
        Ok(())
    }

    pub fn l2(&mut self, t: f64, rel: f64) -> Result<()> {
        if let Some(w) = &mut self.l2 {
            writeln!(w, "{t:.10},{rel:.17e}")?;
        }
        Ok(())
    }

    /// Writes a snapshot if one is due at `t`; `dims` lists node counts per
    /// axis and `values` is in row-major order.
    pub fn snapshot(&mut self, t: f64, dims: &[usize], values: &[f64]) -> Result<()> {
        let Some(every) = self.snapshot_every else {
            return Ok(());
        };
        if t + 1e-9 * every < self.next_snapshot {
            return Ok(());
        }
        let path = self.dir.join(format!("snapshot_{:05}.txt", self.snapshots));
        let mut w = create(&path)?;
        let row = dims.last().copied().unwrap_or(values.len()).max(1);
        let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "# dims {} t {t:.16e}", dims.join(" "))?;
        for chunk in values.chunks(row) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()?;
        self.snapshots += 1;
        self.next_snapshot += every;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.energy.flush()?;
        if let Some(w) = &mut self.l2 {
            w.flush()?;
        }
        Ok(())
    }
}

/// Machine-readable divergence report on stderr.
pub fn divergence_line(method: &str, step: usize, t: f64, message: &str) -> String {
    serde_json::json!({
        "error": "divergence",
        "method": method,
        "step": step,
        "t": t,
        "message": message,
    })
    .to_string()
}
