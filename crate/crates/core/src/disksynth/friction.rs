use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measured friction coefficients of the 137-surface reference collection,
/// as `class,instance,mu` rows.
pub const REFERENCE_FRICTION_CSV: &str = include_str!("../../data/friction_table.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionRecord {
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(rename = "instance")]
    pub instance_id: u32,
    pub mu: f64,
}

impl FrictionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.instance_id < 1 {
            return Err(Error::Domain(format!("{}: instance ids start at 1", self.class_name)));
        }
        if !(self.mu > 0.0 && self.mu <= 2.0) {
            return Err(Error::Domain(format!(
                "{} #{}: friction {} outside (0, 2]",
                self.class_name, self.instance_id, self.mu
            )));
        }
        Ok(())
    }
}

/// Kinetic friction coefficient from the slip angle of an inclined plane.
pub fn friction_from_angle(theta_deg: f64) -> Result<f64> {
    if !(0.0..90.0).contains(&theta_deg) {
        return Err(Error::Domain(format!("incline angle {theta_deg} not in [0, 90)")));
    }
    Ok(theta_deg.to_radians().tan())
}

pub fn class_mean_friction(records: &[FrictionRecord], class_name: &str) -> Result<f64> {
    let (sum, n) = records
        .iter()
        .filter(|r| r.class_name == class_name)
        .fold((0.0, 0usize), |(s, n), r| (s + r.mu, n + 1));
    if n == 0 {
        return Err(Error::NotFound(format!("no friction records for class `{class_name}`")));
    }
    Ok(sum / n as f64)
}

/// Class names in first-appearance order.
pub fn class_names(records: &[FrictionRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.class_name.clone()))
        .map(|r| r.class_name.clone())
        .collect()
}

fn check_table(records: &[FrictionRecord]) -> Result<()> {
    let mut keys = BTreeSet::new();
    for r in records {
        r.validate()?;
        if !keys.insert((r.class_name.as_str(), r.instance_id)) {
            return Err(Error::Domain(format!(
                "duplicate friction record {} #{}",
                r.class_name, r.instance_id
            )));
        }
    }
    Ok(())
}

pub fn parse_friction_csv(text: &str) -> Result<Vec<FrictionRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let records = reader
        .deserialize()
        .collect::<std::result::Result<Vec<FrictionRecord>, _>>()
        .map_err(|e| Error::format("<friction csv>", e.to_string()))?;
    check_table(&records)?;
    Ok(records)
}

pub fn reference_friction_table() -> Vec<FrictionRecord> {
    parse_friction_csv(REFERENCE_FRICTION_CSV).expect("bundled friction table is valid")
}

pub fn read_friction_csv(path: &Path) -> Result<Vec<FrictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_friction_csv(&text).map_err(|e| match e {
        Error::Format { reason, .. } => Error::format(path, reason),
        other => other,
    })
}

pub fn write_friction_csv(path: &Path, records: &[FrictionRecord]) -> Result<()> {
    check_table(records)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tan_series(theta_deg: f64) -> f64 {
        // sin and cos by Taylor series, independent of the library tan
        let x = theta_deg * std::f64::consts::PI / 180.0;
        let (mut s, mut c) = (0.0, 0.0);
        let (mut ts, mut tc) = (x, 1.0);
        for n in 0..30 {
            s += ts;
            c += tc;
            let k = 2.0 * n as f64;
            ts *= -x * x / ((k + 2.0) * (k + 3.0));
            tc *= -x * x / ((k + 1.0) * (k + 2.0));
        }
        s / c
    }

    #[test]
    fn friction_angle_examples() {
        assert!((friction_from_angle(45.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(friction_from_angle(0.0).unwrap(), 0.0);
        let mu = friction_from_angle(28.67).unwrap();
        assert!((mu - tan_series(28.67)).abs() < 1e-12);
        assert!((mu - 0.5468).abs() < 1e-4);
        assert!(friction_from_angle(90.0).is_err());
        assert!(friction_from_angle(-0.1).is_err());
        assert!(friction_from_angle(f64::NAN).is_err());
    }

    #[test]
    fn friction_is_strictly_increasing_on_grid() {
        let grid: Vec<f64> = (0..1000).map(|i| 89.0 * i as f64 / 999.0).collect();
        let mus: Vec<f64> = grid.iter().map(|&t| friction_from_angle(t).unwrap()).collect();
        assert!(mus.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn class_means_from_table() {
        let table = reference_friction_table();
        assert_eq!(table.len(), 137);
        assert_eq!(class_names(&table).len(), 21);
        assert!((class_mean_friction(&table, "SandPaper").unwrap() - 0.547).abs() <= 0.001);
        assert!((class_mean_friction(&table, "SmoothCeramicTile").unwrap() - 0.224).abs() <= 0.001);
        let one = [FrictionRecord { class_name: "X".into(), instance_id: 1, mu: 0.3 }];
        assert_eq!(class_mean_friction(&one, "X").unwrap(), 0.3);
        assert!(matches!(class_mean_friction(&one, "Y"), Err(Error::NotFound(_))));
    }

    #[test]
    fn table_validation() {
        assert!(parse_friction_csv("class,instance,mu\nA,1,0.3\nA,1,0.4\n").is_err());
        assert!(parse_friction_csv("class,instance,mu\nA,0,0.3\n").is_err());
        assert!(parse_friction_csv("class,instance,mu\nA,1,2.3\n").is_err());
        assert!(parse_friction_csv("class,instance,mu\nA,1,abc\n").is_err());
    }
}
