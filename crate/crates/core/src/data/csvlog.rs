//! Comma-separated logs with a header row.

use std::path::Path;

use crate::error::Result;

pub fn write_csv<P, I>(path: P, header: &[&str], rows: I) -> Result<()>
where
    P: AsRef<Path>,
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Single-column `step,loss` curve.
pub fn write_loss_curve(path: impl AsRef<Path>, losses: &[f32]) -> Result<()> {
    write_csv(
        path,
        &["step", "loss"],
        losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_dot_decimal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_loss_curve(&p, &[1.5, 0.25]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "step,loss\n0,1.5\n1,0.25\n");
    }
}
