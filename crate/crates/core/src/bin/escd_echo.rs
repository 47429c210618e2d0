//! Reference external predictor: `escd-echo <in.escd> <out.escd> <m_out>`.
//!
//! Copies the input rows cyclically until `m_out` rows are written, which is
//! exactly what the built-in identity predictor does.

use std::path::Path;
use std::process::ExitCode;

use anchordist::codec::escd::{read_escd, write_escd};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output, m_out] = args.as_slice() else {
        eprintln!("usage: escd-echo <in.escd> <out.escd> <m_out>");
        return ExitCode::from(2);
    };
    let m_out: usize = match m_out.parse() {
        Ok(m) if m > 0 => m,
        _ => {
            eprintln!("m_out must be a positive integer, got {m_out:?}");
            return ExitCode::from(2);
        }
    };
    let run = || -> anchordist::Result<()> {
        let m = read_escd(Path::new(input))?;
        if m.rows() == 0 {
            return Err(anchordist::Error::EmptyCloud);
        }
        let rows: Vec<usize> = (0..m_out).map(|i| i % m.rows()).collect();
        write_escd(&m.select_rows(&rows), Path::new(output))
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
