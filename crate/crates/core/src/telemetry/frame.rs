use serde::{Deserialize, Serialize};

use crate::sensing::is_token_byte;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame must end with a single newline")]
    MissingNewline,
    #[error("expected 4 fields, found {0}")]
    FieldCount(usize),
    #[error("invalid {0} token")]
    BadToken(&'static str),
    #[error("tick is not a non-negative integer")]
    BadTick,
    #[error("value is not a finite decimal")]
    BadValue,
}

/// One reading on the wire. `value` keeps its exact decimal text so stores
/// can reproduce what the device sent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorFrame {
    pub device_id: String,
    pub tick: u64,
    pub channel: String,
    pub value: String,
}

impl SensorFrame {
    /// Frame with `value` rendered as its shortest round-trip decimal.
    pub fn new(device_id: &str, tick: u64, channel: &str, value: f64) -> Self {
        Self {
            device_id: device_id.to_string(),
            tick,
            channel: channel.to_string(),
            value: value.to_string(),
        }
    }

    /// Frame with `value` printed to a fixed number of decimals, as a device
    /// with a known resolution reports it.
    pub fn with_decimals(
        device_id: &str,
        tick: u64,
        channel: &str,
        value: f64,
        decimals: usize,
    ) -> Self {
        Self {
            device_id: device_id.to_string(),
            tick,
            channel: channel.to_string(),
            value: format!("{value:.decimals$}"),
        }
    }

    pub fn value_f64(&self) -> f64 {
        self.value.parse().unwrap_or(f64::NAN)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        check_token(&self.device_id, "device_id")?;
        check_token(&self.channel, "channel")?;
        if !is_decimal(&self.value) {
            return Err(FrameError::BadValue);
        }
        Ok(())
    }
}

fn check_token(t: &str, field: &'static str) -> Result<(), FrameError> {
    if !t.is_empty() && t.bytes().all(is_token_byte) {
        Ok(())
    } else {
        Err(FrameError::BadToken(field))
    }
}

/// `-?digits(.digits)?`
fn is_decimal(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    digits(int) && frac.is_none_or(digits)
}

pub fn encode_frame(f: &SensorFrame) -> Result<Vec<u8>, FrameError> {
    f.validate()?;
    Ok(format!("{},{},{},{}\n", f.device_id, f.tick, f.channel, f.value).into_bytes())
}

pub fn decode_frame(line: &[u8]) -> Result<SensorFrame, FrameError> {
    let body = line.strip_suffix(b"\n").ok_or(FrameError::MissingNewline)?;
    if body.contains(&b'\n') {
        return Err(FrameError::MissingNewline);
    }
    let fields: Vec<&[u8]> = body.split(|b| *b == b',').collect();
    if fields.len() != 4 {
        return Err(FrameError::FieldCount(fields.len()));
    }
    // every field is checked against an ASCII alphabet before conversion
    let text = |b: &[u8]| String::from_utf8_lossy(b).into_owned();
    let tick_text = text(fields[1]);
    if tick_text.is_empty() || !tick_text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(FrameError::BadTick);
    }
    let tick = tick_text.parse().map_err(|_| FrameError::BadTick)?;
    let frame = SensorFrame {
        device_id: text(fields[0]),
        tick,
        channel: text(fields[2]),
        value: text(fields[3]),
    };
    frame.validate()?;
    if tick_text != tick.to_string() {
        // leading zeros would not survive a round trip
        return Err(FrameError::BadTick);
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_definition() {
        let f = SensorFrame::new("gh01", 42, "air_temp", 21.3);
        assert_eq!(encode_frame(&f).unwrap(), b"gh01,42,air_temp,21.3\n");
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(
            decode_frame(b"gh01,42,air_temp\n"),
            Err(FrameError::FieldCount(3))
        );
        assert_eq!(
            decode_frame(b"gh01,42,air_temp,1,2\n"),
            Err(FrameError::FieldCount(5))
        );
        assert_eq!(
            decode_frame(b"gh01,42,air_temp,21.3"),
            Err(FrameError::MissingNewline)
        );
        assert_eq!(
            decode_frame(b"gh01,x,air_temp,21.3\n"),
            Err(FrameError::BadTick)
        );
        assert_eq!(
            decode_frame(b"gh01,007,air_temp,21.3\n"),
            Err(FrameError::BadTick)
        );
        assert_eq!(
            decode_frame(b"gh01,7,air_temp,NaN\n"),
            Err(FrameError::BadValue)
        );
        assert_eq!(
            decode_frame(b"gh01,7,air_temp,1e3\n"),
            Err(FrameError::BadValue)
        );
        assert_eq!(
            decode_frame(b"gh 01,7,air_temp,1\n"),
            Err(FrameError::BadToken("device_id"))
        );
        assert_eq!(
            decode_frame(b"gh01,7,,1\n"),
            Err(FrameError::BadToken("channel"))
        );
    }

    #[test]
    fn fixed_decimals_keep_trailing_zeros() {
        assert_eq!(
            SensorFrame::with_decimals("d", 0, "c", 30.0, 1).value,
            "30.0"
        );
        assert_eq!(
            SensorFrame::with_decimals("d", 0, "c", 3000.1, 1).value,
            "3000.1"
        );
        assert_eq!(
            SensorFrame::with_decimals("d", 0, "c", 441.0, 0).value,
            "441"
        );
    }

    #[test]
    fn display_never_uses_exponents() {
        for v in [1e-7, 1e21, -0.5, 3000.1, 441.0] {
            let f = SensorFrame::new("d", 0, "c", v);
            assert!(f.validate().is_ok(), "{}", f.value);
            assert_eq!(f.value_f64(), v);
        }
    }

    proptest! {
        #[test]
        fn round_trip(
            dev in "[A-Za-z0-9_.-]{1,12}",
            ch in "[A-Za-z0-9_.-]{1,12}",
            tick: u64,
            v in -1e6f64..1e6,
        ) {
            let f = SensorFrame::new(&dev, tick, &ch, v);
            let back = decode_frame(&encode_frame(&f).unwrap()).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(back.value_f64(), v);
        }
    }
}
