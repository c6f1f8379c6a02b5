//! Little-endian server/vehicle messages.
//!
//! ```text
//! uplink:   u16 agent_id | u32 slot | u8 z | z x (f32 x, f32 y, f32 t, f32 value)
//! downlink: u16 agent_id | u32 slot | u8 dir_code | u8 spd_code
//! ```

use crate::error::{Error, Result};
use crate::vehicle::{Action, Record, SampleSet, MAX_SAMPLES_PER_SLOT};
use crate::world::Position;

pub const UPLINK_HEADER_BYTES: usize = 7;
pub const RECORD_BYTES: usize = 16;
pub const DOWNLINK_BYTES: usize = 8;
pub const MAX_UPLINK_BYTES: usize = UPLINK_HEADER_BYTES + RECORD_BYTES * MAX_SAMPLES_PER_SLOT;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WireRecord {
    pub x: f32,
    pub y: f32,
    pub t: f32,
    pub value: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UplinkMsg {
    pub agent_id: u16,
    pub slot: u32,
    pub records: Vec<WireRecord>,
}

impl UplinkMsg {
    /// Narrows a sample set to wire precision.
    pub fn from_samples(set: &SampleSet) -> Result<Self> {
        if set.records.len() > MAX_SAMPLES_PER_SLOT {
            return Err(Error::Codec(format!("{} records exceed the per-slot limit", set.records.len())));
        }
        Ok(Self {
            agent_id: set.agent_id,
            slot: set.slot,
            records: set
                .records
                .iter()
                .map(|r| WireRecord { x: r.pos.x as f32, y: r.pos.y as f32, t: r.t as f32, value: r.y as f32 })
                .collect(),
        })
    }

    pub fn to_samples(&self) -> SampleSet {
        SampleSet {
            agent_id: self.agent_id,
            slot: self.slot,
            records: self
                .records
                .iter()
                .map(|r| Record { pos: Position::new(r.x as f64, r.y as f64), t: r.t as f64, y: r.value as f64 })
                .collect(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        UPLINK_HEADER_BYTES + RECORD_BYTES * self.records.len()
    }
}

pub fn encode_uplink(msg: &UplinkMsg) -> Result<Vec<u8>> {
    let z = msg.records.len();
    if z > MAX_SAMPLES_PER_SLOT {
        return Err(Error::Codec(format!("uplink count {z} exceeds {MAX_SAMPLES_PER_SLOT}")));
    }
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&msg.agent_id.to_le_bytes());
    out.extend_from_slice(&msg.slot.to_le_bytes());
    out.push(z as u8);
    for r in &msg.records {
        for v in [r.x, r.y, r.t, r.value] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_uplink(bytes: &[u8]) -> Result<UplinkMsg> {
    if bytes.len() < UPLINK_HEADER_BYTES {
        return Err(Error::Truncated(format!("uplink header needs 7 bytes, got {}", bytes.len())));
    }
    let agent_id = u16::from_le_bytes([bytes[0], bytes[1]]);
    let slot = u32::from_le_bytes(bytes[2..6].try_into().unwrap());
    let z = bytes[6] as usize;
    if z > MAX_SAMPLES_PER_SLOT {
        return Err(Error::Codec(format!("uplink count {z} exceeds {MAX_SAMPLES_PER_SLOT}")));
    }
    let want = UPLINK_HEADER_BYTES + RECORD_BYTES * z;
    if bytes.len() < want {
        return Err(Error::Truncated(format!("uplink with {z} records needs {want} bytes, got {}", bytes.len())));
    }
    if bytes.len() > want {
        return Err(Error::Codec(format!("{} trailing bytes after uplink", bytes.len() - want)));
    }
    let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let records = (0..z)
        .map(|i| {
            let at = UPLINK_HEADER_BYTES + RECORD_BYTES * i;
            WireRecord { x: f(at), y: f(at + 4), t: f(at + 8), value: f(at + 12) }
        })
        .collect();
    Ok(UplinkMsg { agent_id, slot, records })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DownlinkMsg {
    pub agent_id: u16,
    pub slot: u32,
    pub dir_code: u8,
    pub spd_code: u8,
}

impl DownlinkMsg {
    pub fn new(agent_id: u16, slot: u32, action: Action) -> Self {
        Self { agent_id, slot, dir_code: action.dir, spd_code: action.spd }
    }

    pub fn action(&self) -> Result<Action> {
        Action::new(self.dir_code, self.spd_code).map_err(|e| Error::Codec(e.to_string()))
    }
}

pub fn encode_downlink(msg: &DownlinkMsg) -> Result<[u8; DOWNLINK_BYTES]> {
    msg.action()?;
    let mut out = [0u8; DOWNLINK_BYTES];
    out[..2].copy_from_slice(&msg.agent_id.to_le_bytes());
    out[2..6].copy_from_slice(&msg.slot.to_le_bytes());
    out[6] = msg.dir_code;
    out[7] = msg.spd_code;
    Ok(out)
}

pub fn decode_downlink(bytes: &[u8]) -> Result<DownlinkMsg> {
    if bytes.len() < DOWNLINK_BYTES {
        return Err(Error::Truncated(format!("downlink needs 8 bytes, got {}", bytes.len())));
    }
    if bytes.len() > DOWNLINK_BYTES {
        return Err(Error::Codec(format!("{} trailing bytes after downlink", bytes.len() - DOWNLINK_BYTES)));
    }
    let msg = DownlinkMsg {
        agent_id: u16::from_le_bytes([bytes[0], bytes[1]]),
        slot: u32::from_le_bytes(bytes[2..6].try_into().unwrap()),
        dir_code: bytes[6],
        spd_code: bytes[7],
    };
    msg.action()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record() -> impl Strategy<Value = WireRecord> {
        (any::<f32>(), any::<f32>(), any::<f32>(), any::<f32>())
            .prop_filter("NaN breaks equality", |r| !(r.0.is_nan() || r.1.is_nan() || r.2.is_nan() || r.3.is_nan()))
            .prop_map(|(x, y, t, value)| WireRecord { x, y, t, value })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn uplink_round_trip(agent_id in any::<u16>(), slot in any::<u32>(), records in prop::collection::vec(record(), 0..=10)) {
            let msg = UplinkMsg { agent_id, slot, records };
            let bytes = encode_uplink(&msg).unwrap();
            prop_assert_eq!(bytes.len(), 7 + 16 * msg.records.len());
            prop_assert_eq!(decode_uplink(&bytes).unwrap(), msg);
        }

        #[test]
        fn downlink_round_trip(agent_id in any::<u16>(), slot in any::<u32>(), dir in 0u8..8, spd in 0u8..2) {
            let msg = DownlinkMsg { agent_id, slot, dir_code: dir, spd_code: spd };
            let bytes = encode_downlink(&msg).unwrap();
            prop_assert_eq!(decode_downlink(&bytes).unwrap(), msg);
        }
    }

    #[test]
    fn uplink_sizes() {
        let r = WireRecord { x: 1.0, y: 2.0, t: 3.0, value: 4.0 };
        let full = UplinkMsg { agent_id: 1, slot: 2, records: vec![r; 10] };
        assert_eq!(encode_uplink(&full).unwrap().len(), 167);
        assert_eq!(MAX_UPLINK_BYTES, 167);
        let five = UplinkMsg { records: vec![r; 5], ..full.clone() };
        assert_eq!(encode_uplink(&five).unwrap().len(), 87);
        let over = UplinkMsg { records: vec![r; 11], ..full };
        assert!(encode_uplink(&over).is_err());
    }

    #[test]
    fn uplink_layout_is_little_endian() {
        let msg = UplinkMsg { agent_id: 0x0102, slot: 0x03040506, records: vec![WireRecord { x: 1.0, y: 0.0, t: 0.0, value: 0.0 }] };
        let b = encode_uplink(&msg).unwrap();
        assert_eq!(&b[..7], &[0x02, 0x01, 0x06, 0x05, 0x04, 0x03, 1]);
        assert_eq!(&b[7..11], &1.0f32.to_le_bytes());
    }

    #[test]
    fn uplink_rejects_damage() {
        let r = WireRecord { x: 1.0, y: 2.0, t: 3.0, value: 4.0 };
        let b = encode_uplink(&UplinkMsg { agent_id: 1, slot: 2, records: vec![r; 2] }).unwrap();
        assert!(matches!(decode_uplink(&b[..b.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(decode_uplink(&b[..3]), Err(Error::Truncated(_))));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode_uplink(&long), Err(Error::Codec(_))));
        let mut big = b;
        big[6] = 11;
        assert!(matches!(decode_uplink(&big), Err(Error::Codec(_))));
    }

    #[test]
    fn downlink_rejects_bad_codes_and_sizes() {
        let bad = DownlinkMsg { agent_id: 0, slot: 0, dir_code: 8, spd_code: 0 };
        assert!(encode_downlink(&bad).is_err());
        let mut b = encode_downlink(&DownlinkMsg { dir_code: 7, spd_code: 1, ..bad }).unwrap();
        assert_eq!(b.len(), 8);
        assert!(decode_downlink(&b[..7]).is_err());
        b[7] = 2;
        assert!(decode_downlink(&b).is_err());
    }

    #[test]
    fn samples_survive_at_wire_precision() {
        let set = SampleSet {
            agent_id: 3,
            slot: 9,
            records: vec![Record { pos: Position::new(1234.5, 678.25), t: 16200.0, y: 33.125 }],
        };
        let back = decode_uplink(&encode_uplink(&UplinkMsg::from_samples(&set).unwrap()).unwrap()).unwrap().to_samples();
        assert_eq!(back, set);
    }
}
