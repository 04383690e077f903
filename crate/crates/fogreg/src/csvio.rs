//! The two experiment CSV files.
//!
//! `latency.csv` has one row per request, `t_ms,op,latency_ms,status`, with
//! `status` either `Ok` or `Error(<kind>)`. `convergence.csv` has one row per
//! replica per sample instant, `t_ms,replica_id,keygroup_count`.

use std::io::{Read, Write};

use fogreg_core::bench::{ConvergenceSample, LatencySample, SampleStatus};
use thiserror::Error;

pub const LATENCY_HEADER: [&str; 4] = ["t_ms", "op", "latency_ms", "status"];
pub const CONVERGENCE_HEADER: [&str; 3] = ["t_ms", "replica_id", "keygroup_count"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("malformed CSV: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shortest decimal that reads back as the same value; whole numbers carry
/// no fraction.
pub fn format_ms(ms: f64) -> String {
    format!("{ms}")
}

pub fn write_latency<W: Write>(out: W, samples: &[LatencySample], paper_zeros: bool) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LATENCY_HEADER)?;
    for s in samples {
        // the figures draw failed requests as zero-latency points
        let latency = if paper_zeros && !s.status.is_ok() {
            0.0
        } else {
            s.latency_ms
        };
        w.write_record([
            s.t_ms.to_string(),
            s.op.clone(),
            format_ms(latency),
            s.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_convergence<W: Write>(out: W, samples: &[ConvergenceSample]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONVERGENCE_HEADER)?;
    for s in samples {
        w.write_record([s.t_ms.to_string(), s.replica_id.clone(), s.keygroup_count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), CsvError> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(CsvError::Malformed(format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str) -> Result<T, CsvError> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record
        .get(i)
        .ok_or_else(|| CsvError::Malformed(format!("line {line}: missing {name}")))?;
    raw.parse()
        .map_err(|_| CsvError::Malformed(format!("line {line}: bad {name} {raw:?}")))
}

pub fn parse_status(text: &str) -> Option<SampleStatus> {
    if text == "Ok" {
        return Some(SampleStatus::Ok);
    }
    let kind = text.strip_prefix("Error(")?.strip_suffix(')')?;
    (!kind.is_empty()).then(|| SampleStatus::Error(kind.to_string()))
}

pub fn read_latency<R: Read>(input: R) -> Result<Vec<LatencySample>, CsvError> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &LATENCY_HEADER)?;
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let latency_ms: f64 = field(&record, 2, "latency_ms")?;
        if !latency_ms.is_finite() || latency_ms < 0.0 {
            return Err(CsvError::Malformed(format!(
                "negative or non-finite latency {latency_ms}"
            )));
        }
        let status: String = field(&record, 3, "status")?;
        samples.push(LatencySample {
            t_ms: field(&record, 0, "t_ms")?,
            op: field(&record, 1, "op")?,
            latency_ms,
            status: parse_status(&status).ok_or_else(|| CsvError::Malformed(format!("bad status {status:?}")))?,
        });
    }
    Ok(samples)
}

pub fn read_convergence<R: Read>(input: R) -> Result<Vec<ConvergenceSample>, CsvError> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &CONVERGENCE_HEADER)?;
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        samples.push(ConvergenceSample {
            t_ms: field(&record, 0, "t_ms")?,
            replica_id: field(&record, 1, "replica_id")?,
            keygroup_count: field(&record, 2, "keygroup_count")?,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t_ms: u64, latency_ms: f64, status: SampleStatus) -> LatencySample {
        LatencySample {
            t_ms,
            op: "CreateKeygroup".into(),
            latency_ms,
            status,
        }
    }

    #[test]
    fn latency_bytes_are_exact() {
        let samples = [
            sample(0, 0.0, SampleStatus::Ok),
            sample(250, 20.0, SampleStatus::Ok),
            sample(500, 500.0, SampleStatus::Error("NoQuorum".into())),
            sample(750, 0.125, SampleStatus::Ok),
        ];
        let mut out = Vec::new();
        write_latency(&mut out, &samples, false).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "t_ms,op,latency_ms,status\n0,CreateKeygroup,0,Ok\n250,CreateKeygroup,20,Ok\n\
             500,CreateKeygroup,500,Error(NoQuorum)\n750,CreateKeygroup,0.125,Ok\n"
        );
        assert_eq!(read_latency(&out[..]).unwrap(), samples);

        let mut zeros = Vec::new();
        write_latency(&mut zeros, &samples, true).unwrap();
        let back = read_latency(&zeros[..]).unwrap();
        assert_eq!(back[2].latency_ms, 0.0);
        assert_eq!(back[2].status, SampleStatus::Error("NoQuorum".into()));
        assert_eq!(back[1].latency_ms, 20.0);
    }

    #[test]
    fn convergence_bytes_are_exact() {
        let samples = vec![
            ConvergenceSample {
                t_ms: 0,
                replica_id: "m1".into(),
                keygroup_count: 0,
            },
            ConvergenceSample {
                t_ms: 500,
                replica_id: "m2".into(),
                keygroup_count: 2,
            },
        ];
        let mut out = Vec::new();
        write_convergence(&mut out, &samples).unwrap();
        assert_eq!(out, b"t_ms,replica_id,keygroup_count\n0,m1,0\n500,m2,2\n");
        assert_eq!(read_convergence(&out[..]).unwrap(), samples);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_latency(&b"t_ms,op,latency_ms,status\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn malformed_input_is_rejected() {
        for bad in [
            &b"t,op,latency_ms,status\n"[..],
            b"t_ms,op,latency_ms,status\nx,CreateKeygroup,1,Ok\n",
            b"t_ms,op,latency_ms,status\n1,CreateKeygroup,-1,Ok\n",
            b"t_ms,op,latency_ms,status\n1,CreateKeygroup,1,Fine\n",
            b"t_ms,op,latency_ms,status\n1,CreateKeygroup,1,Error()\n",
            b"t_ms,op,latency_ms,status\n1,CreateKeygroup,1\n",
            b"",
        ] {
            assert!(read_latency(bad).is_err(), "{}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn status_parsing() {
        assert_eq!(parse_status("Ok"), Some(SampleStatus::Ok));
        assert_eq!(
            parse_status("Error(Timeout)"),
            Some(SampleStatus::Error("Timeout".into()))
        );
        assert_eq!(parse_status("error(x)"), None);
    }
}
