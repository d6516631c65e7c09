//! Per-load and per-plant time series.
//!
//! CSV layout: a `minute` column (integer minutes from the start of the
//! record), one column per load id holding kW, optional `<load id>:kvar`
//! columns, and one column per PV plant id holding kW. Loads without a kvar
//! column keep the power factor of their base rating.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::powerflow::InjectionState;

pub const KVAR_SUFFIX: &str = ":kvar";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    /// Minutes from the start of the record, strictly increasing.
    pub minutes: Vec<i64>,
    /// `[t][load]` kW.
    pub load_kw: Vec<Vec<f64>>,
    pub load_kvar: Vec<Vec<f64>>,
    /// `[t][plant]` kW.
    pub pv_kw: Vec<Vec<f64>>,
}

impl Profiles {
    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    /// Injection state at timestep `t` with the given controls.
    pub fn state_at(&self, t: usize, pv_kvar: &[f64], taps: &[i32]) -> InjectionState {
        InjectionState {
            load_kw: self.load_kw[t].clone(),
            load_kvar: self.load_kvar[t].clone(),
            pv_kw: self.pv_kw[t].clone(),
            pv_kvar: pv_kvar.to_vec(),
            taps: taps.to_vec(),
        }
    }

    /// Sub-range of timesteps, keeping the original minute stamps.
    pub fn slice(&self, start: usize, end: usize) -> Profiles {
        Profiles {
            minutes: self.minutes[start..end].to_vec(),
            load_kw: self.load_kw[start..end].to_vec(),
            load_kvar: self.load_kvar[start..end].to_vec(),
            pv_kw: self.pv_kw[start..end].to_vec(),
        }
    }

    /// Every `step`-th timestep.
    pub fn downsample(&self, step: usize) -> Profiles {
        let idx: Vec<usize> = (0..self.len()).step_by(step.max(1)).collect();
        Profiles {
            minutes: idx.iter().map(|&i| self.minutes[i]).collect(),
            load_kw: idx.iter().map(|&i| self.load_kw[i].clone()).collect(),
            load_kvar: idx.iter().map(|&i| self.load_kvar[i].clone()).collect(),
            pv_kw: idx.iter().map(|&i| self.pv_kw[i].clone()).collect(),
        }
    }

    pub fn check(&self, model: &FeederModel) -> Result<()> {
        let n = self.minutes.len();
        if self.load_kw.len() != n || self.load_kvar.len() != n || self.pv_kw.len() != n {
            return Err(Error::Validation("profile series lengths differ".into()));
        }
        if self.minutes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("profile minutes must be strictly increasing".into()));
        }
        let nl = model.loads().len();
        let np = model.pv_plants().len();
        for t in 0..n {
            if self.load_kw[t].len() != nl || self.load_kvar[t].len() != nl || self.pv_kw[t].len() != np {
                return Err(Error::Validation(format!("profile row {t} has wrong width")));
            }
            for (k, pv) in model.pv_plants().iter().enumerate() {
                let p = self.pv_kw[t][k];
                if !(0.0..=pv.kva).contains(&p) {
                    return Err(Error::Validation(format!(
                        "profile row {t}: plant '{}' output {p} kW outside [0, {}]",
                        pv.id, pv.kva
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, model: &FeederModel) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, model)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, model: &FeederModel) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let minute_col = *col
            .get("minute")
            .ok_or_else(|| Error::Parse("profile CSV lacks a 'minute' column".into()))?;
        let load_cols: Vec<usize> = model
            .loads()
            .iter()
            .map(|l| {
                col.get(l.id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("profile CSV lacks a column for load '{}'", l.id)))
            })
            .collect::<Result<_>>()?;
        let kvar_cols: Vec<Option<usize>> = model
            .loads()
            .iter()
            .map(|l| col.get(format!("{}{KVAR_SUFFIX}", l.id).as_str()).copied())
            .collect();
        let pv_cols: Vec<usize> = model
            .pv_plants()
            .iter()
            .map(|p| {
                col.get(p.id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("profile CSV lacks a column for plant '{}'", p.id)))
            })
            .collect::<Result<_>>()?;

        let mut out = Profiles {
            minutes: Vec::new(),
            load_kw: Vec::new(),
            load_kvar: Vec::new(),
            pv_kw: Vec::new(),
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                let s = rec.get(c).unwrap_or("").trim();
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: bad number '{s}' in column '{}'", row + 1, &headers[c])))
            };
            let minute = rec
                .get(minute_col)
                .unwrap_or("")
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::Parse(format!("row {}: bad minute", row + 1)))?;
            let kw: Vec<f64> = load_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?;
            let kvar: Vec<f64> = model
                .loads()
                .iter()
                .zip(&kvar_cols)
                .zip(&kw)
                .map(|((l, kc), p)| match kc {
                    Some(c) => num(*c),
                    None if l.kw != 0.0 => Ok(p * l.kvar / l.kw),
                    None => Ok(l.kvar),
                })
                .collect::<Result<_>>()?;
            let pv: Vec<f64> = pv_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?;
            out.minutes.push(minute);
            out.load_kw.push(kw);
            out.load_kvar.push(kvar);
            out.pv_kw.push(pv);
        }
        out.check(model)?;
        Ok(out)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, model: &FeederModel) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(file, model)
    }

    pub fn to_writer<W: std::io::Write>(&self, writer: W, model: &FeederModel) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["minute".to_string()];
        header.extend(model.loads().iter().map(|l| l.id.clone()));
        header.extend(model.loads().iter().map(|l| format!("{}{KVAR_SUFFIX}", l.id)));
        header.extend(model.pv_plants().iter().map(|p| p.id.clone()));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![self.minutes[t].to_string()];
            rec.extend(self.load_kw[t].iter().map(|v| format!("{v:.6}")));
            rec.extend(self.load_kvar[t].iter().map(|v| format!("{v:.6}")));
            rec.extend(self.pv_kw[t].iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<profile writer>", e))?;
        Ok(())
    }
}
