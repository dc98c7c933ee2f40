//! Episode traces and their CSV form.
//!
//! Columns: `t, sp_r, sp_p, sp_y, gyro_r, gyro_p, gyro_y, u0.., rpm0.., reward`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// deg/s.
    pub setpoint: [f64; 3],
    /// Measured rate, deg/s.
    pub gyro: [f64; 3],
    pub u: Vec<f64>,
    pub rpm: Vec<f64>,
    pub reward: f64,
}

impl TraceRow {
    pub fn error(&self) -> [f64; 3] {
        [0, 1, 2].map(|ax| self.setpoint[ax] - self.gyro[ax])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub motor_count: usize,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn new(dt: f64, motor_count: usize) -> Self {
        Self {
            dt,
            motor_count,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if row.u.len() != self.motor_count || row.rpm.len() != self.motor_count {
            return Err(Error::Length {
                expected: self.motor_count,
                actual: row.u.len().min(row.rpm.len()),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn header(motor_count: usize) -> Vec<String> {
        let mut h: Vec<String> = ["t", "sp_r", "sp_p", "sp_y", "gyro_r", "gyro_p", "gyro_y"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..motor_count).map(|i| format!("u{i}")));
        h.extend((0..motor_count).map(|i| format!("rpm{i}")));
        h.push("reward".into());
        h
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header(self.motor_count))?;
        for r in &self.rows {
            let mut rec: Vec<String> = Vec::with_capacity(8 + 2 * self.motor_count);
            rec.push(r.t.to_string());
            rec.extend(r.setpoint.iter().map(f64::to_string));
            rec.extend(r.gyro.iter().map(f64::to_string));
            rec.extend(r.u.iter().map(f64::to_string));
            rec.extend(r.rpm.iter().map(f64::to_string));
            rec.push(r.reward.to_string());
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::Parse(format!("csv flush failed: {e}")))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, &self.to_csv_bytes()?)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 8 || (header.len() - 8) % 2 != 0 {
            return Err(Error::Parse(format!("trace header has {} columns", header.len())));
        }
        let m = (header.len() - 8) / 2;
        if header != Self::header(m) {
            return Err(Error::Parse(format!("unexpected trace header: {}", header.join(","))));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("row {}: bad number '{s}'", line + 1)))
                })
                .collect::<Result<_>>()?;
            rows.push(TraceRow {
                t: v[0],
                setpoint: [v[1], v[2], v[3]],
                gyro: [v[4], v[5], v[6]],
                u: v[7..7 + m].to_vec(),
                rpm: v[7 + m..7 + 2 * m].to_vec(),
                reward: v[7 + 2 * m],
            });
        }
        let dt = match rows.as_slice() {
            [a, b, ..] => b.t - a.t,
            [a] => a.t,
            [] => 0.0,
        };
        let trace = Self {
            dt,
            motor_count: m,
            rows,
        };
        trace.check_uniform()?;
        Ok(trace)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(std::io::BufReader::new(f))
    }

    /// Strictly increasing time with a constant step (to 1e-6 of dt).
    pub fn check_uniform(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            let d = w[1].t - w[0].t;
            if !(d > 0.0) || (d - self.dt).abs() > 1e-6 * self.dt.abs().max(1e-12) {
                return Err(Error::Degenerate(format!(
                    "non-uniform trace time step at t = {}",
                    w[1].t
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EpisodeTrace {
        let mut t = EpisodeTrace::new(0.001, 4);
        for k in 1..=5 {
            t.push(TraceRow {
                t: k as f64 * 0.001,
                setpoint: [50.0, 0.0, -1.0 / 3.0],
                gyro: [k as f64 * 0.1, -0.2546, 1e-17],
                u: vec![0.1, 0.2, 0.3, 0.4],
                rpm: vec![86.67, 100.0, 1e4 / 3.0, 0.0],
                reward: -(k as f64) * 1.234_567_890_123_4,
            })
            .unwrap();
        }
        t
    }

    #[test]
    fn header_layout() {
        let h = EpisodeTrace::header(4).join(",");
        assert_eq!(h, "t,sp_r,sp_p,sp_y,gyro_r,gyro_p,gyro_y,u0,u1,u2,u3,rpm0,rpm1,rpm2,rpm3,reward");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample();
        let bytes = t.to_csv_bytes().unwrap();
        let back = EpisodeTrace::from_csv_reader(bytes.as_slice()).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.motor_count, 4);
        assert_eq!(back.to_csv_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_wrong_width_and_bad_header() {
        let mut t = EpisodeTrace::new(0.001, 4);
        let row = TraceRow { t: 0.001, setpoint: [0.0; 3], gyro: [0.0; 3], u: vec![0.0; 3], rpm: vec![0.0; 4], reward: 0.0 };
        assert!(t.push(row).is_err());
        assert!(EpisodeTrace::from_csv_reader("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "t,sp_r,sp_p,sp_y,gyro_r,gyro_p,gyro_y,u0,rpm0,reward\n0.001,0,0,0,0,0,0,x,0,0\n";
        assert!(matches!(EpisodeTrace::from_csv_reader(bad.as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_non_uniform_time() {
        let h = EpisodeTrace::header(1).join(",");
        let text = format!("{h}\n0.001,0,0,0,0,0,0,0,0,0\n0.002,0,0,0,0,0,0,0,0,0\n0.004,0,0,0,0,0,0,0,0,0\n");
        assert!(EpisodeTrace::from_csv_reader(text.as_bytes()).is_err());
    }
}
