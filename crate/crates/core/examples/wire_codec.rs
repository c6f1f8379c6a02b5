//! Encodes a full uplink and a downlink command and shows the bytes.

use plume_core::vehicle::Action;
use plume_core::coordinator::wire::{decode_downlink, decode_uplink, encode_downlink, encode_uplink, DownlinkMsg, UplinkMsg, WireRecord};

fn main() -> plume_core::Result<()> {
    let records = (0..10)
        .map(|i| WireRecord { x: 1000.0 + 50.0 * i as f32, y: 2000.0, t: 9000.0 + 180.0 * i as f32, value: 31.5 })
        .collect();
    let up = UplinkMsg { agent_id: 2, slot: 5, records };
    let bytes = encode_uplink(&up)?;
    println!("uplink {} bytes, header {:02x?}", bytes.len(), &bytes[..7]);
    assert_eq!(decode_uplink(&bytes)?, up);

    let down = DownlinkMsg::new(2, 6, Action::new(3, 1)?);
    let bytes = encode_downlink(&down)?;
    println!("downlink {} bytes {:02x?} -> {:?}", bytes.len(), bytes, down.action()?);
    assert_eq!(decode_downlink(&bytes)?, down);
    Ok(())
}
