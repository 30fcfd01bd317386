use serde::{Deserialize, Serialize};
use std::io::Write;

use super::rng::SeedSpec;
use crate::coords::SpaceTimePoint;

/// One realization of a field on an ordered point list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub points: Vec<SpaceTimePoint>,
    pub values: Vec<f64>,
    pub seed: SeedSpec,
    /// Which sampler produced the values (`exact`, `walsh`, `y-path`, ...).
    pub sampler: String,
}

pub const FIELD_SAMPLE_HEADER: &str = "point-index,t,x,w,z,value,replica_id,sampler";

impl FieldSample {
    pub fn new(points: Vec<SpaceTimePoint>, values: Vec<f64>, seed: SeedSpec, sampler: &str) -> Self {
        assert_eq!(points.len(), values.len(), "one value per point");
        Self { points, values, seed, sampler: sampler.to_string() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Appends CSV rows (no header).
    pub fn write_rows<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        for (i, (p, v)) in self.points.iter().zip(&self.values).enumerate() {
            let c = p.to_char();
            writeln!(out, "{i},{},{},{},{},{:e},{},{}", p.t, p.x, c.w, c.z, v, self.seed.replica_id, self.sampler)?;
        }
        Ok(())
    }

    /// CSV with header for a batch of samples, in the order given.
    pub fn write_csv<W: Write + ?Sized>(samples: &[FieldSample], out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{FIELD_SAMPLE_HEADER}")?;
        for s in samples {
            s.write_rows(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let s = FieldSample::new(vec![SpaceTimePoint::new(1.0, 0.0)], vec![0.5], SeedSpec::new(1, 7), "exact");
        let mut buf = Vec::new();
        FieldSample::write_csv(&[s], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], FIELD_SAMPLE_HEADER);
        assert!(lines[1].starts_with("0,1,0,0.7071067811865476,0.7071067811865476,5e-1,7,exact"));
    }
}
