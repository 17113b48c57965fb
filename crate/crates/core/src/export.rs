//! Image and table export of power maps: 16-bit binary PGM with a log-power scale, and CSV.

use std::io::{BufRead, Write};

use crate::aoa::AngleSpectrum;
use crate::dsp::Heatmap;
use crate::error::{Error, Result};

/// Dynamic range mapped onto the 16-bit scale by default.
pub const DEFAULT_RANGE_DB: f64 = 80.0;

/// Map powers to 16-bit levels: the maximum goes to 65535, anything `range_db` or more
/// below it (or non-positive) to 0, linearly in dB in between.
pub fn log_levels(data: &[f64], range_db: f64) -> Vec<u16> {
    let max = data.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0; data.len()];
    }
    let top = 10.0 * max.log10();
    data.iter()
        .map(|&v| {
            if !(v > 0.0 && v.is_finite()) {
                return 0;
            }
            let t = (10.0 * v.log10() - (top - range_db)) / range_db;
            (t.clamp(0.0, 1.0) * 65535.0).round() as u16
        })
        .collect()
}

/// Binary PGM (P5, maxval 65535, big-endian samples), `rows` by `cols`, row 0 first.
pub fn write_pgm16<W: Write>(mut w: W, rows: usize, cols: usize, data: &[f64], range_db: f64) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
    }
    write!(w, "P5\n{cols} {rows}\n65535\n")?;
    let bytes: Vec<u8> = log_levels(data, range_db).iter().flat_map(|v| v.to_be_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Read back a 16-bit PGM written by [`write_pgm16`]: `(rows, cols, levels)`.
pub fn read_pgm16<R: BufRead>(mut r: R) -> Result<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut line = String::new();
    while fields.len() < 4 {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Parse { line: 0, msg: "truncated PGM header".into() });
        }
        let content = line.split('#').next().unwrap_or("");
        fields.extend(content.split_whitespace().map(str::to_owned));
    }
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(Error::Parse { line: 1, msg: "expected a 16-bit P5 image".into() });
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse { line: 2, msg: e.to_string() });
    let (cols, rows) = (parse(&fields[1])?, parse(&fields[2])?);
    let mut buf = vec![0u8; rows * cols * 2];
    r.read_exact(&mut buf)?;
    Ok((rows, cols, buf.chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()))
}

/// Range-Doppler heatmap: Doppler rows, range columns.
pub fn heatmap_pgm<W: Write>(h: &Heatmap, w: W) -> Result<()> {
    write_pgm16(w, h.rows, h.cols, &h.data, DEFAULT_RANGE_DB)
}

/// Angle spectrum: elevation rows, azimuth columns.
pub fn angle_spectrum_pgm<W: Write>(s: &AngleSpectrum, w: W) -> Result<()> {
    write_pgm16(w, s.n, s.n, &s.data, DEFAULT_RANGE_DB)
}

/// Linear powers as CSV, one line per row.
pub fn grid_csv<W: Write>(w: W, cols: usize, data: &[f64]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in data.chunks(cols.max(1)) {
        wr.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_are_log_scaled() {
        let l = log_levels(&[1.0, 1e-4, 1e-8, 1e-9, 0.0, f64::NAN], 80.0);
        assert_eq!(l[0], 65535);
        assert_eq!(l[1], 32768);
        assert_eq!(l[2], 0);
        assert_eq!(&l[3..], &[0, 0, 0]);
        assert_eq!(log_levels(&[0.0, 0.0], 80.0), vec![0, 0]);
    }

    #[test]
    fn pgm_round_trip() {
        let h = Heatmap::new(2, 3, vec![1.0, 10.0, 100.0, 1e3, 1e4, 1e5]).unwrap();
        let mut buf = Vec::new();
        heatmap_pgm(&h, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n65535\n"));
        let (rows, cols, levels) = read_pgm16(&buf[..]).unwrap();
        assert_eq!((rows, cols), (2, 3));
        assert_eq!(levels, log_levels(&h.data, DEFAULT_RANGE_DB));
        assert_eq!(levels[5], 65535);
        assert!(write_pgm16(&mut Vec::new(), 2, 2, &[1.0], 80.0).is_err());
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        grid_csv(&mut buf, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1e0,2e0\n3e0,4e0\n");
    }
}
