use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

use super::StepRecord;

pub const HISTORY_HEADER: &str = "step,recon_loss,kl_loss,kl_weight";

/// Plain decimal with 9 significant digits, e.g. `0.000123456789`.
/// Non-finite values print as `NaN`, `inf` or `-inf`.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00000000".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{digits}", "0".repeat((-point) as usize))
    } else if point as usize >= digits.len() {
        format!("{digits}{}", "0".repeat(point as usize - digits.len()))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    format!("{sign}{body}")
}

pub fn history_row(r: &StepRecord) -> String {
    format!(
        "{},{},{},{}",
        r.step,
        format_sig9(r.recon_loss),
        format_sig9(r.kl_loss),
        format_sig9(r.kl_weight)
    )
}

/// CSV loss curve, flushed after every row so a killed run keeps it.
pub struct HistoryWriter {
    out: BufWriter<File>,
}

impl HistoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{HISTORY_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, record: &StepRecord) -> Result<()> {
        writeln!(self.out, "{}", history_row(record))?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decimal_forms() {
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(0.5), "0.500000000");
        assert_eq!(format_sig9(4.539786870243442e-5), "0.0000453978687");
        assert_eq!(format_sig9(-123.456), "-123.456000");
        assert_eq!(format_sig9(12345678912.0), "12345678900");
        assert_eq!(format_sig9(0.0), "0.00000000");
        assert_eq!(format_sig9(f64::NAN), "NaN");
    }

    proptest! {
        #[test]
        fn nine_digits_round_trip(x in -1e6f64..1e6) {
            prop_assume!(x.abs() > 1e-6);
            let s = format_sig9(x);
            prop_assert!(!s.contains('e'));
            let back: f64 = s.parse().unwrap();
            prop_assert!(((back - x) / x).abs() <= 5e-9);
            let significant = s.trim_start_matches('-').trim_start_matches(['0', '.']).chars().filter(char::is_ascii_digit).count();
            prop_assert_eq!(significant, 9);
        }
    }
}
