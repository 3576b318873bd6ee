//! JSON wire payload for telemetry messages.
//!
//! A payload is a UTF-8 JSON object whose keys are exactly the CSV header
//! fields; absent optional fields are encoded as `null`. The routing key is
//! the decimal vehicle id.

use crate::datagen::TrafficRecordRaw;
use crate::error::{Error, Result};

/// Serializes one record to its wire payload.
pub fn encode(record: &TrafficRecordRaw) -> Vec<u8> {
    serde_json::to_vec(record).expect("record serialization is infallible")
}

/// Parses a wire payload. The error text carries the serde reason; callers
/// route failures to the dead-letter channel.
pub fn decode(payload: &[u8]) -> Result<TrafficRecordRaw> {
    serde_json::from_slice(payload).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("payload is not a telemetry record: {e}"),
    })
}

/// Routing key for a record: its vehicle id in decimal.
pub fn routing_key(record: &TrafficRecordRaw) -> Vec<u8> {
    record.vehicle_id.to_string().into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorConfig};

    #[test]
    fn round_trips_and_uses_header_keys() {
        let mut cfg = GeneratorConfig::new(200, 8);
        cfg.missing_prob = 0.2;
        let recs = generate(&cfg).unwrap();
        for rec in &recs {
            let bytes = encode(rec);
            let back = decode(&bytes).unwrap();
            assert_eq!(*rec, back);
        }
        let with_gap = recs.iter().find(|r| r.v_vel.is_none()).expect("some dropout");
        let bytes = encode(with_gap);
        let text = std::str::from_utf8(&bytes).unwrap();
        // Key order in the wire bytes follows the CSV header; checked on the raw
        // text because Value re-sorts object keys on parse.
        let mut last = 0;
        for field in crate::datagen::CSV_HEADER.split(',') {
            let pos = text
                .find(&format!("\"{field}\":"))
                .unwrap_or_else(|| panic!("missing key {field}"));
            assert!(pos >= last, "key {field} out of header order");
            last = pos;
        }
        let json: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert!(json.as_object().unwrap()["v_Vel"].is_null());
    }

    #[test]
    fn malformed_payloads_are_errors() {
        assert!(decode(b"not json").is_err());
        assert!(decode(b"{}").is_err());
        assert!(decode(br#"{"Vehicle_ID": 1, "unexpected": true}"#).is_err());
    }

    #[test]
    fn routing_key_is_the_decimal_vehicle_id() {
        let mut rec = generate(&GeneratorConfig::new(1, 0)).unwrap().remove(0);
        rec.vehicle_id = 421;
        assert_eq!(routing_key(&rec), b"421".to_vec());
    }
}
