mod common;

use std::io::Cursor;

use common::{ethernet, ipv4_udp, synth_frames, PcapBytes};
use csiscope::pcap::{PcapError, PcapReader, PcapWriter, LINKTYPE_ETHERNET, LINKTYPE_IPV4, LINKTYPE_RAW};
use csiscope_core::codec::{encode_wire_frame, parse_wire_frame, DEFAULT_CSI_PORT};
use csiscope_core::{CsiFrame, MacAddr, SubcarrierOrder};

fn nexmon(rssi: i8, mac: [u8; 6], seq: u16, samples: &[(i16, i16)]) -> Vec<u8> {
    let mut b = vec![0u8; 18];
    b[0..2].copy_from_slice(&0x1111u16.to_le_bytes());
    b[2] = rssi as u8;
    b[4..10].copy_from_slice(&mac);
    b[10..12].copy_from_slice(&seq.to_le_bytes());
    b[14..16].copy_from_slice(&0xd024u16.to_le_bytes());
    for (re, im) in samples {
        b.extend_from_slice(&re.to_le_bytes());
        b.extend_from_slice(&im.to_le_bytes());
    }
    b
}

/// Frames as they look after a trip through the wire format.
fn quantized(name: &str, count: u64, start_us: u64) -> Vec<CsiFrame> {
    synth_frames(name, count, start_us)
        .iter()
        .map(|f| parse_wire_frame(&encode_wire_frame(f).unwrap()).unwrap())
        .collect()
}

fn read_all(bytes: Vec<u8>) -> (Vec<CsiFrame>, csiscope::pcap::PcapStats) {
    let mut r = PcapReader::new(Cursor::new(bytes)).unwrap();
    let mut out = Vec::new();
    while let Some(f) = r.next_frame().unwrap() {
        out.push(f);
    }
    (out, r.stats())
}

#[test]
fn two_valid_one_corrupt() {
    let samples: Vec<(i16, i16)> = (0..64).map(|i| (i * 4 - 100, 50 - i)).collect();
    let mac = [0x02, 0x11, 0x22, 0x33, 0x44, 0x55];
    let mut p = PcapBytes::new(LINKTYPE_ETHERNET, false, false);
    p.record(
        1_000_000,
        &ethernet(0x0800, false, &ipv4_udp(5500, &nexmon(-40, mac, 1, &samples))),
    );
    let mut corrupt = nexmon(-41, mac, 2, &samples);
    corrupt.truncate(corrupt.len() - 3);
    p.record(1_111_111, &ethernet(0x0800, false, &ipv4_udp(5500, &corrupt)));
    p.record(
        1_222_222,
        &ethernet(0x0800, true, &ipv4_udp(5500, &nexmon(-42, mac, 3, &samples))),
    );

    let (frames, stats) = read_all(p.bytes);
    assert_eq!(frames.len(), 2);
    assert_eq!(stats.records, 3);
    assert_eq!(stats.frames, 2);
    assert_eq!(stats.skipped, 1);
    assert_eq!(stats.ignored, 0);
    assert_eq!(frames[0].header.timestamp_us, 1_000_000);
    assert_eq!(frames[1].header.timestamp_us, 1_222_222);
    assert_eq!((frames[0].header.seq, frames[1].header.seq), (1, 3));
    assert_eq!((frames[0].header.rssi_dbm, frames[1].header.rssi_dbm), (-40, -42));
    assert_eq!(frames[0].header.source_mac, MacAddr(mac));
    assert_eq!(frames[0].header.subcarrier_order, SubcarrierOrder::FftOrder);
    for (s, (re, im)) in frames[1].csi.iter().zip(&samples) {
        assert_eq!((s.re, s.im), (*re as f64, *im as f64));
    }
}

#[test]
fn other_traffic_is_ignored() {
    let wef = encode_wire_frame(&synth_frames("idle", 1, 5)[0]).unwrap();
    let mut p = PcapBytes::new(LINKTYPE_ETHERNET, false, false);
    p.record(10, &ethernet(0x86dd, false, &[0u8; 60])); // IPv6
    p.record(11, &ethernet(0x0800, false, &ipv4_udp(53, &wef)));
    let mut tcp = ipv4_udp(5500, &wef);
    tcp[9] = 6;
    p.record(12, &ethernet(0x0800, false, &tcp));
    let mut frag = ipv4_udp(5500, &wef);
    frag[6] = 0x20; // more fragments
    p.record(13, &ethernet(0x0800, false, &frag));
    p.record(14, &ethernet(0x0800, false, &ipv4_udp(5500, &wef)));
    let (frames, stats) = read_all(p.bytes);
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].header.timestamp_us, 14);
    assert_eq!(stats.ignored, 4);
    assert_eq!(stats.skipped, 0);
}

#[test]
fn byte_order_resolution_and_link_types() {
    let src = &quantized("pattern-b", 3, 2_000_000)[..];
    for (linktype, big, nanos) in [
        (LINKTYPE_RAW, false, false),
        (LINKTYPE_IPV4, true, false),
        (LINKTYPE_RAW, true, true),
        (LINKTYPE_ETHERNET, false, true),
    ] {
        let mut p = PcapBytes::new(linktype, big, nanos);
        for f in src {
            let ip = ipv4_udp(5500, &encode_wire_frame(f).unwrap());
            let data = if linktype == LINKTYPE_ETHERNET {
                ethernet(0x0800, false, &ip)
            } else {
                ip
            };
            p.record(f.header.timestamp_us, &data);
        }
        let (frames, _) = read_all(p.bytes);
        assert_eq!(frames, src, "linktype {linktype} big {big} nanos {nanos}");
    }
}

#[test]
fn record_time_overrides_embedded_time() {
    let f = &quantized("idle", 1, 123_456_789)[0];
    let mut p = PcapBytes::new(LINKTYPE_RAW, false, false);
    p.record(42_000_007, &ipv4_udp(5500, &encode_wire_frame(f).unwrap()));
    let (frames, _) = read_all(p.bytes);
    assert_eq!(frames[0].header.timestamp_us, 42_000_007);
    assert_eq!(frames[0].csi, f.csi);
}

#[test]
fn truncated_last_record_ends_stream() {
    let src = synth_frames("idle", 2, 1_000_000);
    let mut p = PcapBytes::new(LINKTYPE_RAW, false, false);
    for f in &src {
        p.record(f.header.timestamp_us, &ipv4_udp(5500, &encode_wire_frame(f).unwrap()));
    }
    let full = p.bytes.len();
    let second_start = 24 + 16 + 28 + encode_wire_frame(&src[0]).unwrap().len();
    for cut in second_start + 1..full {
        let (frames, stats) = read_all(p.bytes[..cut].to_vec());
        assert_eq!(frames.len(), 1, "cut {cut}");
        assert_eq!(stats.skipped, 1, "cut {cut}");
    }
    let (frames, stats) = read_all(p.bytes[..second_start].to_vec());
    assert_eq!((frames.len(), stats.skipped), (1, 0));
}

#[test]
fn oversized_record_length_stops() {
    let mut p = PcapBytes::new(LINKTYPE_RAW, false, false);
    p.bytes.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 0]);
    p.bytes.extend_from_slice(&(1u32 << 30).to_le_bytes());
    p.bytes.extend_from_slice(&(1u32 << 30).to_le_bytes());
    p.bytes.extend_from_slice(&[0u8; 100]);
    let (frames, stats) = read_all(p.bytes);
    assert!(frames.is_empty());
    assert_eq!(stats.skipped, 1);
}

#[test]
fn header_errors() {
    assert!(matches!(
        PcapReader::new(Cursor::new(vec![0u8; 24])),
        Err(PcapError::BadPcapMagic(0))
    ));
    assert!(matches!(
        PcapReader::new(Cursor::new(vec![0xd4, 0xc3, 0xb2])),
        Err(PcapError::TruncatedHeader)
    ));
    let mut p = PcapBytes::new(147, false, false);
    p.record(0, &[1, 2, 3]);
    assert!(matches!(
        PcapReader::new(Cursor::new(p.bytes)),
        Err(PcapError::UnsupportedLinkType(147))
    ));
}

#[test]
fn writer_output_reads_back() {
    let src = quantized("pattern-c", 20, 1_600_000_000_000_000);
    let mut w = PcapWriter::new(Vec::new()).unwrap();
    for f in &src {
        w.write_udp(f.header.timestamp_us, DEFAULT_CSI_PORT, &encode_wire_frame(f).unwrap())
            .unwrap();
    }
    w.write_udp(5, 9999, b"not csi").unwrap();
    let (frames, stats) = read_all(w.into_inner());
    assert_eq!(frames, src);
    assert_eq!(stats.ignored, 1);
}

#[test]
fn custom_port() {
    let f = &synth_frames("idle", 1, 1)[0];
    let mut w = PcapWriter::new(Vec::new()).unwrap();
    w.write_udp(1, 6000, &encode_wire_frame(f).unwrap()).unwrap();
    let bytes = w.into_inner();
    assert_eq!(read_all(bytes.clone()).0.len(), 0);
    let mut r = PcapReader::with_options(Cursor::new(bytes), 6000, Default::default()).unwrap();
    assert!(r.next_frame().unwrap().is_some());
}
