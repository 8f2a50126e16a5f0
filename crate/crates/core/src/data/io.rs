//! CSV ingestion and output.
//!
//! Observed data: header row, required `y` (real) and `a` (0/1), optional `p`
//! (propensity of the observed arm) and `cost`; every other column is a
//! covariate, in file order. Truth files: required `y0`, `y1`, optional `mass`
//! and `cost`; a `cate` column is written for reference and ignored on load,
//! as are observed-data columns (`y`, `a`, `p`).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Design, PotentialPopulation, PotentialUnit, TrialDataset, TrialRecord};
use crate::{Error, Result};

const OBSERVED_RESERVED: [&str; 4] = ["y", "a", "p", "cost"];
const TRUTH_RESERVED: [&str; 8] = ["y0", "y1", "cate", "mass", "cost", "y", "a", "p"];

/// Load an observed dataset. `randomized` supplies the randomization
/// probability when the file has no `p` column (or asserts it when it does).
pub fn load_csv(path: impl AsRef<Path>, randomized: Option<f64>) -> Result<TrialDataset> {
    read_csv(File::open(path)?, randomized)
}

pub fn read_csv<R: Read>(reader: R, randomized: Option<f64>) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let y_col = find("y").ok_or_else(|| Error::Validation("missing required column `y`".into()))?;
    let a_col = find("a").ok_or_else(|| Error::Validation("missing required column `a`".into()))?;
    let p_col = find("p");
    let cost_col = find("cost");
    if p_col.is_none() && randomized.is_none() {
        return Err(Error::Validation(
            "no propensity column `p` and no randomization probability supplied".into(),
        ));
    }
    if let Some(p) = randomized {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Validation(format!(
                "randomization probability must lie in (0, 1), got {p}"
            )));
        }
    }
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| !OBSERVED_RESERVED.contains(&headers[j].as_str()))
        .collect();
    let names: Vec<String> = cov_cols.iter().map(|&j| headers[j].clone()).collect();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != headers.len() {
            return Err(Error::Parse {
                row: row_no,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
        }
        let field = |j: usize| parse_real(&row[j], row_no, &headers[j]);
        let y = field(y_col)?;
        let a = field(a_col)?;
        let treated = if a == 1.0 {
            true
        } else if a == 0.0 {
            false
        } else {
            return Err(Error::InvalidRecord {
                row: row_no,
                message: format!("treatment `a` must be 0 or 1, got {}", &row[a_col]),
            });
        };
        let propensity = match (p_col, randomized) {
            (Some(j), _) => field(j)?,
            (None, Some(p)) => {
                if treated {
                    p
                } else {
                    1.0 - p
                }
            }
            (None, None) => unreachable!(),
        };
        if !(propensity > 0.0 && propensity < 1.0) {
            return Err(Error::InvalidRecord {
                row: row_no,
                message: format!("propensity must lie in (0, 1), got {propensity}"),
            });
        }
        let cost = cost_col.map(&field).transpose()?;
        if let Some(c) = cost {
            if c <= 0.0 {
                return Err(Error::InvalidRecord {
                    row: row_no,
                    message: format!("cost must be positive, got {c}"),
                });
            }
        }
        let covariates = cov_cols.iter().map(|&j| field(j)).collect::<Result<Vec<_>>>()?;
        records.push(TrialRecord {
            covariates,
            treated,
            outcome: y,
            propensity,
            cost,
        });
    }
    let design = match randomized {
        Some(p) => Design::Randomized { p },
        None => Design::Observational,
    };
    TrialDataset::new(records, names, design)
}

fn parse_real(field: &str, row: usize, column: &str) -> Result<f64> {
    let text = field.trim();
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("non-finite value `{text}`"),
        }),
        Err(_) => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: if text.is_empty() {
                "missing value".to_string()
            } else {
                format!("malformed number `{text}`")
            },
        }),
    }
}

/// Write an observed dataset with columns `y,a,p[,cost],<covariates>`.
///
/// Reals are written in shortest round-trip form, so reloading reproduces
/// every value exactly.
pub fn write_csv<W: Write>(data: &TrialDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_cost = data.has_costs();
    let mut header = vec!["y".to_string(), "a".to_string(), "p".to_string()];
    if with_cost {
        header.push("cost".into());
    }
    header.extend(data.covariate_names().iter().cloned());
    wtr.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.outcome.to_string(), r.arm().to_string(), r.propensity.to_string()];
        if with_cost {
            row.push(r.cost.unwrap_or(f64::NAN).to_string());
        }
        row.extend(r.covariates.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write a truth file with columns `y0,y1,cate[,mass][,cost],<covariates>`.
pub fn write_truth_csv<W: Write>(pop: &PotentialPopulation, cate: &[f64], writer: W) -> Result<()> {
    if cate.len() != pop.len() {
        return Err(Error::Validation(format!(
            "cate has {} entries for {} units",
            cate.len(),
            pop.len()
        )));
    }
    let with_mass = pop.units().iter().any(|u| u.mass != 1.0);
    let with_cost = pop.has_costs();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["y0".to_string(), "y1".to_string(), "cate".to_string()];
    if with_mass {
        header.push("mass".into());
    }
    if with_cost {
        header.push("cost".into());
    }
    header.extend(pop.covariate_names().iter().cloned());
    wtr.write_record(&header)?;
    for (u, tau) in pop.units().iter().zip(cate) {
        let mut row = vec![u.y0.to_string(), u.y1.to_string(), tau.to_string()];
        if with_mass {
            row.push(u.mass.to_string());
        }
        if with_cost {
            row.push(u.cost.unwrap_or(f64::NAN).to_string());
        }
        row.extend(u.covariates.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_population_csv(path: impl AsRef<Path>) -> Result<PotentialPopulation> {
    read_population_csv(File::open(path)?)
}

pub fn read_population_csv<R: Read>(reader: R) -> Result<PotentialPopulation> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let y0_col = find("y0").ok_or_else(|| Error::Validation("missing required column `y0`".into()))?;
    let y1_col = find("y1").ok_or_else(|| Error::Validation("missing required column `y1`".into()))?;
    let mass_col = find("mass");
    let cost_col = find("cost");
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| !TRUTH_RESERVED.contains(&headers[j].as_str()))
        .collect();
    let names: Vec<String> = cov_cols.iter().map(|&j| headers[j].clone()).collect();

    let mut units = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != headers.len() {
            return Err(Error::Parse {
                row: row_no,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
        }
        let field = |j: usize| parse_real(&row[j], row_no, &headers[j]);
        units.push(PotentialUnit {
            covariates: cov_cols.iter().map(|&j| field(j)).collect::<Result<Vec<_>>>()?,
            y0: field(y0_col)?,
            y1: field(y1_col)?,
            mass: mass_col.map(&field).transpose()?.unwrap_or(1.0),
            cost: cost_col.map(&field).transpose()?,
        });
    }
    PotentialPopulation::with_names(units, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomized_flag_fills_propensity() {
        let csv = "y,a,c1\n1.5,1,0.2\n0.5,0,0.4\n2,1,0.9\n";
        let d = read_csv(csv.as_bytes(), Some(0.5)).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.covariate_dim(), 1);
        assert!(d.records().iter().all(|r| r.propensity == 0.5));
        assert_eq!(d.design(), Design::Randomized { p: 0.5 });
    }

    #[test]
    fn bad_treatment_names_row() {
        let csv = "y,a,c1\n1,1,0\n1,0,0\n1,1,0\n1,2,0\n";
        match read_csv(csv.as_bytes(), Some(0.5)) {
            Err(Error::InvalidRecord { row, .. }) => assert_eq!(row, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_propensity_is_observational() {
        let csv = "y,a,p,x\n1,1,0.3,0.1\n0,0,0.7,0.2\n";
        let d = read_csv(csv.as_bytes(), None).unwrap();
        assert_eq!(d.design(), Design::Observational);
        let p: Vec<f64> = d.records().iter().map(|r| r.propensity).collect();
        assert_eq!(p, vec![0.3, 0.7]);
        assert_eq!(d.covariate_names(), ["x"]);
    }

    #[test]
    fn covariate_order_preserved() {
        let csv = "z,y,b,a,c\n1,2,3,1,4\n";
        let d = read_csv(csv.as_bytes(), Some(0.5)).unwrap();
        assert_eq!(d.covariate_names(), ["z", "b", "c"]);
        assert_eq!(d.records()[0].covariates, vec![1.0, 3.0, 4.0]);
    }

    #[test]
    fn parse_and_validation_errors() {
        let malformed = "y,a,c1\n1,1,0\n1x,0,0\n";
        assert!(matches!(
            read_csv(malformed.as_bytes(), Some(0.5)),
            Err(Error::Parse { row: 2, .. })
        ));
        let missing = "y,a,c1\n1,1,\n";
        assert!(matches!(read_csv(missing.as_bytes(), Some(0.5)), Err(Error::Parse { row: 1, .. })));
        let short = "y,a,c1\n1,1\n";
        assert!(matches!(read_csv(short.as_bytes(), Some(0.5)), Err(Error::Parse { row: 1, .. })));
        let na = "y,a,c1\nNA,1,0\n";
        assert!(matches!(read_csv(na.as_bytes(), Some(0.5)), Err(Error::Parse { .. })));
        let nan = "y,a,c1\nNaN,1,0\n";
        assert!(matches!(read_csv(nan.as_bytes(), Some(0.5)), Err(Error::Parse { .. })));
        let bad_p = "y,a,p\n1,1,1.0\n";
        assert!(matches!(read_csv(bad_p.as_bytes(), None), Err(Error::InvalidRecord { row: 1, .. })));
        let bad_cost = "y,a,p,cost\n1,1,0.5,0\n";
        assert!(matches!(read_csv(bad_cost.as_bytes(), None), Err(Error::InvalidRecord { row: 1, .. })));
        let no_prop = "y,a\n1,1\n";
        assert!(matches!(read_csv(no_prop.as_bytes(), None), Err(Error::Validation(_))));
        let no_y = "a,c\n1,1\n";
        assert!(matches!(read_csv(no_y.as_bytes(), Some(0.5)), Err(Error::Validation(_))));
    }

    #[test]
    fn truth_loader_skips_observed_columns() {
        let csv = "y0,y1,cate,p,c1\n1,2,1,garbage,0.3\n";
        let pop = read_population_csv(csv.as_bytes()).unwrap();
        assert_eq!(pop.covariate_names(), ["c1"]);
        assert_eq!(pop.units()[0].effect(), 1.0);
    }

    #[test]
    fn truth_round_trip_with_mass_and_cost() {
        let pop = PotentialPopulation::new(vec![
            PotentialUnit::new(vec![0.1], 0.0, 4.0).with_mass(0.5).with_cost(1.0),
            PotentialUnit::new(vec![0.9], 0.0, 1.0).with_mass(0.5).with_cost(2.5),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&pop, &[4.0, 1.0], &mut buf).unwrap();
        let back = read_population_csv(buf.as_slice()).unwrap();
        assert_eq!(back, pop);
    }
}
