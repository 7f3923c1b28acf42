use std::io::Write;

use super::{SimError, Trajectory};

/// Header and rows of the CSV export: `t`, the states, the outputs, then
/// the same columns with a `_p` suffix for a primed trajectory.
pub struct CsvRows {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvRows {
    pub fn new(original: &Trajectory, primed: Option<&Trajectory>) -> Result<Self, SimError> {
        let mut header = vec!["t".to_string()];
        let names = |tr: &Trajectory| -> Vec<String> { tr.state_names.iter().chain(&tr.output_names).cloned().collect() };
        header.extend(names(original));
        if let Some(p) = primed {
            if p.times != original.times {
                return Err(SimError::InvalidInput("trajectories are sampled on different grids".into()));
            }
            header.extend(names(p).into_iter().map(|n| format!("{n}_p")));
        }
        let rows = (0..original.len())
            .map(|i| {
                let mut row = vec![original.times[i]];
                row.extend(&original.states[i]);
                row.extend(&original.outputs[i]);
                if let Some(p) = primed {
                    row.extend(&p.states[i]);
                    row.extend(&p.outputs[i]);
                }
                row
            })
            .collect();
        Ok(CsvRows { header, rows })
    }
}

pub fn write_csv<W: Write>(w: W, original: &Trajectory, primed: Option<&Trajectory>) -> Result<(), SimError> {
    let data = CsvRows::new(original, primed)?;
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| SimError::Csv(e.to_string());
    out.write_record(&data.header).map_err(err)?;
    for row in &data.rows {
        out.write_record(row.iter().map(f64::to_string)).map_err(err)?;
    }
    out.flush().map_err(|e| SimError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_indistinguishability_full, EtaSignal, SimConfig};
    use crate::transform::HivParams;

    #[test]
    fn header_and_round_trip() {
        let cfg = SimConfig {
            dense_output_points: 11,
            ..SimConfig::default()
        };
        let run = run_indistinguishability_full(&HivParams::ones(), [1.0; 3], &EtaSignal::constant(0.5), 0.2, &cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &run.original, Some(&run.primed)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,T_U,T_I,V,y1,y2,T_U_p,T_I_p,V_p,y1_p,y2_p");
        let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last[0], 10.0);
        assert_eq!(last[3], run.original.states[10][2]);
        assert_eq!(text.lines().count(), 12);

        let mut single = Vec::new();
        write_csv(&mut single, &run.original, None).unwrap();
        assert!(String::from_utf8(single).unwrap().starts_with("t,T_U,T_I,V,y1,y2\n"));
    }
}
