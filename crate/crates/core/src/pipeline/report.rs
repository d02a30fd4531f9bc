use std::io::Write;

use super::slice::LevelBits;
use crate::error::Result;

pub const REPORT_HEADER: &str = "file,slice,level,points,bits,bpp,encode_s,decode_s";
pub const LOSS_HEADER: &str = "epoch,bits_per_point";

#[derive(Clone, Debug, PartialEq)]
pub struct SliceReport {
    pub points: usize,
    pub payload_bytes: usize,
    /// Ideal code length per level; level 1 is the raw unit.
    pub levels: Vec<LevelBits>,
}

/// Rates of one encoded cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub points: usize,
    pub header_bytes: usize,
    pub file_bytes: usize,
    pub slices: Vec<SliceReport>,
    pub encode_s: f64,
    pub decode_s: Option<f64>,
}

impl RateReport {
    /// Exact size of the stream in bits.
    pub fn total_bits(&self) -> u64 {
        self.file_bytes as u64 * 8
    }

    pub fn bpp(&self) -> f64 {
        self.total_bits() as f64 / self.points as f64
    }

    /// Ideal bits per level summed over slices, indexed by `level - 1`.
    pub fn level_totals(&self) -> Vec<LevelBits> {
        let mut out: Vec<LevelBits> = Vec::new();
        for s in &self.slices {
            for l in &s.levels {
                let i = l.level as usize - 1;
                while out.len() <= i {
                    out.push(LevelBits { level: out.len() as u32 + 1, points: 0, bits: 0.0 });
                }
                out[i].points += l.points;
                out[i].bits += l.bits;
            }
        }
        out
    }

    /// CSV rows: one per slice and level, one per slice, and a file total.
    pub fn csv_rows(&self, file: &str) -> Vec<String> {
        let dec = self.decode_s.map_or(String::new(), |d| format!("{d:.6}"));
        let mut rows = Vec::new();
        for (i, s) in self.slices.iter().enumerate() {
            for l in &s.levels {
                rows.push(format!(
                    "{file},{i},{},{},{:.3},{:.6},,",
                    l.level,
                    l.points,
                    l.bits,
                    l.bits / l.points as f64
                ));
            }
            let bits = s.payload_bytes * 8;
            rows.push(format!("{file},{i},all,{},{bits},{:.6},,", s.points, bits as f64 / s.points as f64));
        }
        rows.push(format!(
            "{file},all,all,{},{},{:.6},{:.6},{dec}",
            self.points,
            self.total_bits(),
            self.bpp(),
            self.encode_s
        ));
        rows
    }
}

pub fn write_report_csv(out: &mut impl Write, reports: &[(String, RateReport)]) -> Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for (name, r) in reports {
        for row in r.csv_rows(name) {
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

pub fn write_loss_csv(out: &mut impl Write, epoch_bits: &[f64]) -> Result<()> {
    writeln!(out, "{LOSS_HEADER}")?;
    for (e, b) in epoch_bits.iter().enumerate() {
        writeln!(out, "{},{b:.6}", e + 1)?;
    }
    Ok(())
}
