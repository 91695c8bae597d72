//! ESP8266-style AT command session restricted to the station, single
//! connection, transparent transmission path.
//!
//! ```text
//! Idle --CWMODE=1--> StaModeSet --RST--> Restarted --CWJAP--> Joined
//!   --CIPMUX=0--> SingleConn --CIPSTART--> TcpConnected --CIPMODE=1-->
//!   TransparentArmed --CIPSEND--> Transparent --"+++"--> TcpConnected
//! ```
//!
//! Any other command, or a command outside its source state, answers
//! `ERROR\r\n` and leaves the session untouched.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AtState {
    Idle,
    StaModeSet,
    Restarted,
    Joined,
    SingleConn,
    TcpConnected,
    TransparentArmed,
    Transparent,
}

impl AtState {
    pub const ALL: [AtState; 8] = [
        AtState::Idle,
        AtState::StaModeSet,
        AtState::Restarted,
        AtState::Joined,
        AtState::SingleConn,
        AtState::TcpConnected,
        AtState::TransparentArmed,
        AtState::Transparent,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtSession {
    pub state: AtState,
    pub ssid: Option<String>,
    pub password: Option<String>,
    pub peer: Option<(String, u16)>,
}

impl Default for AtSession {
    fn default() -> Self {
        Self::new()
    }
}

impl AtSession {
    pub fn new() -> Self {
        Self {
            state: AtState::Idle,
            ssid: None,
            password: None,
            peer: None,
        }
    }

    pub fn in_state(state: AtState) -> Self {
        Self {
            state,
            ..Self::new()
        }
    }
}

pub const OK: &[u8] = b"OK\r\n";
pub const ERROR: &[u8] = b"ERROR\r\n";
pub const READY: &[u8] = b"OK\r\nready\r\n";
pub const PROMPT: &[u8] = b">";
pub const ESCAPE: &[u8] = b"+++";

/// The Table I command sequence for the given credentials and peer.
pub fn device_script(ssid: &str, password: &str, host: &str, port: u16) -> Vec<String> {
    vec![
        "AT+CWMODE=1\r\n".to_string(),
        "AT+RST\r\n".to_string(),
        format!("AT+CWJAP=\"{ssid}\",\"{password}\"\r\n"),
        "AT+CIPMUX=0\r\n".to_string(),
        format!("AT+CIPSTART=\"TCP\", \"{host}\", {port}\r\n"),
        "AT+CIPMODE=1\r\n".to_string(),
        "AT+CIPSEND\r\n".to_string(),
    ]
}

/// Splits `"a", "b", 8000`-style argument lists. Quoted arguments must be
/// non-empty and contain no quotes.
fn split_args(args: &str) -> Option<Vec<&str>> {
    args.split(',')
        .map(|a| {
            let a = a.trim_start_matches(' ');
            if let Some(inner) = a.strip_prefix('"') {
                let inner = inner.strip_suffix('"')?;
                (!inner.is_empty() && !inner.contains('"')).then_some(inner)
            } else {
                (!a.is_empty() && !a.contains(' ')).then_some(a)
            }
        })
        .collect()
}

fn quoted(args: &str) -> bool {
    args.split(',')
        .all(|a| a.trim_start_matches(' ').starts_with('"'))
}

/// Handles one line (or transparent-mode chunk). Returns the response bytes
/// and the next session; the input session is never modified.
pub fn at_handle(s: &AtSession, line: &[u8]) -> (Vec<u8>, AtSession) {
    use AtState::*;
    if s.state == Transparent {
        // payload passes through; only a bare escape chunk changes state
        let mut next = s.clone();
        if line == ESCAPE {
            next.state = TcpConnected;
        }
        return (Vec::new(), next);
    }
    let reject = || (ERROR.to_vec(), s.clone());
    let Some(body) = line.strip_suffix(b"\r\n") else {
        return reject();
    };
    let Ok(cmd) = std::str::from_utf8(body) else {
        return reject();
    };
    let mut next = s.clone();
    let response = match (s.state, cmd) {
        (Idle, "AT+CWMODE=1") => {
            next.state = StaModeSet;
            OK
        }
        (StaModeSet, "AT+RST") => {
            next.state = Restarted;
            READY
        }
        (Restarted, c) if c.starts_with("AT+CWJAP=") => {
            let args = &c["AT+CWJAP=".len()..];
            match split_args(args) {
                Some(v) if v.len() == 2 && quoted(args) => {
                    next.ssid = Some(v[0].to_string());
                    next.password = Some(v[1].to_string());
                    next.state = Joined;
                    OK
                }
                _ => return reject(),
            }
        }
        (Joined, "AT+CIPMUX=0") => {
            next.state = SingleConn;
            OK
        }
        (SingleConn, c) if c.starts_with("AT+CIPSTART=") => {
            let args = &c["AT+CIPSTART=".len()..];
            match split_args(args) {
                Some(v) if v.len() == 3 && v[0] == "TCP" => {
                    let parts: Vec<&str> =
                        args.split(',').map(|a| a.trim_start_matches(' ')).collect();
                    if !(parts[0].starts_with('"')
                        && parts[1].starts_with('"')
                        && !parts[2].starts_with('"'))
                    {
                        return reject();
                    }
                    let Ok(port) = v[2].parse::<u16>() else {
                        return reject();
                    };
                    next.peer = Some((v[1].to_string(), port));
                    next.state = TcpConnected;
                    OK
                }
                _ => return reject(),
            }
        }
        (TcpConnected, "AT+CIPMODE=1") => {
            next.state = TransparentArmed;
            OK
        }
        (TransparentArmed, "AT+CIPSEND") => {
            next.state = Transparent;
            PROMPT
        }
        _ => return reject(),
    };
    (response.to_vec(), next)
}

/// Runs `lines` through a fresh session, returning the concatenated
/// responses and the final session.
pub fn run_script<S: AsRef<[u8]>>(lines: &[S]) -> (Vec<u8>, AtSession) {
    let mut s = AtSession::new();
    let mut transcript = Vec::new();
    for l in lines {
        let (r, n) = at_handle(&s, l.as_ref());
        transcript.extend(r);
        s = n;
    }
    (transcript, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_one() -> Vec<String> {
        device_script("xx", "xxxxxxxx", "192.168.1.100", 8000)
    }

    #[test]
    fn sta_mode_from_idle() {
        let (r, s) = at_handle(&AtSession::new(), b"AT+CWMODE=1\r\n");
        assert_eq!(r, b"OK\r\n");
        assert_eq!(s.state, AtState::StaModeSet);
    }

    #[test]
    fn out_of_order_is_rejected() {
        let (r, s) = at_handle(&AtSession::new(), b"AT+CIPSEND\r\n");
        assert_eq!(r, b"ERROR\r\n");
        assert_eq!(s, AtSession::new());
    }

    #[test]
    fn golden_transcript() {
        let (t, s) = run_script(&table_one());
        assert_eq!(t, b"OK\r\nOK\r\nready\r\nOK\r\nOK\r\nOK\r\nOK\r\n>");
        assert_eq!(s.state, AtState::Transparent);
        assert_eq!(s.ssid.as_deref(), Some("xx"));
        assert_eq!(s.password.as_deref(), Some("xxxxxxxx"));
        assert_eq!(s.peer, Some(("192.168.1.100".to_string(), 8000)));
    }

    #[test]
    fn argument_spacing_and_validation() {
        let joined = AtSession::in_state(AtState::Restarted);
        assert_eq!(
            at_handle(&joined, b"AT+CWJAP=\"a\", \"b\"\r\n").1.state,
            AtState::Joined
        );
        assert_eq!(at_handle(&joined, b"AT+CWJAP=\"\",\"b\"\r\n").0, ERROR);
        assert_eq!(at_handle(&joined, b"AT+CWJAP=\"a\"\r\n").0, ERROR);
        assert_eq!(at_handle(&joined, b"AT+CWJAP=a,b\r\n").0, ERROR);

        let single = AtSession::in_state(AtState::SingleConn);
        assert_eq!(
            at_handle(&single, b"AT+CIPSTART=\"TCP\",\"h\",1\r\n")
                .1
                .state,
            AtState::TcpConnected
        );
        assert_eq!(
            at_handle(&single, b"AT+CIPSTART=\"UDP\",\"h\",1\r\n").0,
            ERROR
        );
        assert_eq!(
            at_handle(&single, b"AT+CIPSTART=\"TCP\",\"h\",99999\r\n").0,
            ERROR
        );
        assert_eq!(
            at_handle(&single, b"AT+CIPSTART=\"TCP\",\"h\",\"1\"\r\n").0,
            ERROR
        );
    }

    #[test]
    fn missing_crlf_is_rejected() {
        assert_eq!(at_handle(&AtSession::new(), b"AT+CWMODE=1").0, ERROR);
        assert_eq!(at_handle(&AtSession::new(), b"AT+CWMODE=1\n").0, ERROR);
    }

    #[test]
    fn transparent_passes_payload_and_escapes() {
        let t = AtSession::in_state(AtState::Transparent);
        let (r, s) = at_handle(&t, b"AT+CWMODE=1\r\n");
        assert!(r.is_empty());
        assert_eq!(s.state, AtState::Transparent);
        let (r, s) = at_handle(&t, b"+++");
        assert!(r.is_empty());
        assert_eq!(s.state, AtState::TcpConnected);
        assert_eq!(at_handle(&t, b"+++\r\n").1.state, AtState::Transparent);
    }

    #[test]
    fn deterministic_responses() {
        let a = run_script(&table_one());
        let b = run_script(&table_one());
        assert_eq!(a, b);
    }
}
