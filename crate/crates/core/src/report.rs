//! Report serialization: JSON with 17 significant digits and plain CSV.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::efficiency::FrontierPoint;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Float with 17 significant digits, in scientific notation.
pub fn float17(x: f64) -> String {
    if x == 0.0 {
        // Keep the sign of negative zero out of reports.
        return format!("{:.16e}", 0.0);
    }
    format!("{x:.16e}")
}

/// Pretty JSON formatter that prints every float with 17 significant digits.
/// Non-finite floats become `null`.
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(float17(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Serializes `body` as pretty JSON.
pub fn to_json<T: Serialize>(body: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
    body.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// A report document: `body` plus schema version and report kind.
pub fn report_json<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    to_json(&Envelope {
        schema_version: SCHEMA_VERSION,
        kind,
        body,
    })
}

/// Writes a header and rows of floats.
pub fn write_csv<W: Write>(out: W, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.iter().map(|x| float17(*x))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(e.to_string())
}

fn action_columns(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["a".into()]
    } else {
        (1..=dim).map(|k| format!("a{k}")).collect()
    }
}

/// Frontier as CSV: action, bids, agent utility, principal utilities.
pub fn frontier_csv(points: &[FrontierPoint], action_dim: usize, n: usize) -> Result<String> {
    let mut header = action_columns(action_dim);
    header.extend((1..=n).map(|i| format!("b_{i}")));
    header.push("u_0".into());
    header.extend((1..=n).map(|i| format!("u_{i}")));
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            p.action
                .iter()
                .chain(&p.bids)
                .copied()
                .chain(p.utilities.to_vec())
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    write_csv(&mut out, &header, &rows)?;
    Ok(String::from_utf8(out).expect("csv writes UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Sample {
        x: f64,
        y: Vec<f64>,
        z: f64,
    }

    #[test]
    fn floats_round_trip_exactly() {
        let body = Sample {
            x: 0.1 + 0.2,
            y: vec![1.0 / 3.0, -0.0, 1e-300],
            z: f64::INFINITY,
        };
        let text = report_json("sample", &body).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["kind"], "sample");
        assert_eq!(v["x"].as_f64().unwrap(), 0.1 + 0.2);
        assert_eq!(v["y"][0].as_f64().unwrap(), 1.0 / 3.0);
        assert_eq!(v["y"][2].as_f64().unwrap(), 1e-300);
        assert!(v["z"].is_null());
        assert!(text.contains("3.0000000000000004e-1"));
    }

    #[test]
    fn csv_has_header() {
        let mut out = Vec::new();
        write_csv(&mut out, &["a".into(), "b".into()], &[vec![1.0, 0.5]]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "a,b\n1.0000000000000000e0,5.0000000000000000e-1\n");
    }
}
