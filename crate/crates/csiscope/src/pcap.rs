//! Classic libpcap files: a reader that pulls CSI frames out of UDP packets
//! and a small writer used for replay fixtures.

use std::io::{self, Read, Write};

use csiscope_core::codec::{
    parse_nexmon_payload, parse_wire_frame, CodecError, IngestLayout, DEFAULT_CSI_PORT, WEF1_MAGIC,
};
use csiscope_core::CsiFrame;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;
pub const LINKTYPE_IPV4: u32 = 228;

const MAGIC_US: u32 = 0xa1b2_c3d4;
const MAGIC_NS: u32 = 0xa1b2_3c4d;
/// Records claiming more than this are treated as corruption.
const MAX_RECORD: usize = 256 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum PcapError {
    #[error("not a pcap file (magic {0:#010x})")]
    BadPcapMagic(u32),
    #[error("unsupported link type {0}")]
    UnsupportedLinkType(u32),
    #[error("truncated pcap global header")]
    TruncatedHeader,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PcapStats {
    pub records: u64,
    pub frames: u64,
    /// CSI packets whose payload failed to parse, plus damaged records.
    pub skipped: u64,
    /// Packets that are not UDP to the CSI port.
    pub ignored: u64,
}

/// Yields one frame per UDP datagram addressed to the CSI port, in file
/// order. Each frame takes its timestamp from the pcap record header.
pub struct PcapReader<R> {
    inner: R,
    swapped: bool,
    nanos: bool,
    linktype: u32,
    port: u16,
    layout: IngestLayout,
    stats: PcapStats,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(inner: R) -> Result<Self, PcapError> {
        Self::with_options(inner, DEFAULT_CSI_PORT, IngestLayout::default())
    }

    pub fn with_options(mut inner: R, port: u16, layout: IngestLayout) -> Result<Self, PcapError> {
        let mut hdr = [0u8; 24];
        match read_full(&mut inner, &mut hdr) {
            Ok(true) => {}
            Ok(false) => return Err(PcapError::TruncatedHeader),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(PcapError::TruncatedHeader),
            Err(e) => return Err(e.into()),
        }
        let magic = u32::from_le_bytes(hdr[0..4].try_into().unwrap());
        let (swapped, nanos) = match magic {
            MAGIC_US => (false, false),
            MAGIC_NS => (false, true),
            m if m.swap_bytes() == MAGIC_US => (true, false),
            m if m.swap_bytes() == MAGIC_NS => (true, true),
            m => return Err(PcapError::BadPcapMagic(m)),
        };
        let rd = |b: &[u8]| {
            let v = u32::from_le_bytes(b.try_into().unwrap());
            if swapped {
                v.swap_bytes()
            } else {
                v
            }
        };
        let linktype = rd(&hdr[20..24]) & 0x0fff_ffff;
        if ![LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_IPV4].contains(&linktype) {
            return Err(PcapError::UnsupportedLinkType(linktype));
        }
        Ok(Self {
            inner,
            swapped,
            nanos,
            linktype,
            port,
            layout,
            stats: PcapStats::default(),
            done: false,
        })
    }

    pub fn stats(&self) -> PcapStats {
        self.stats
    }

    fn u32_at(&self, b: &[u8]) -> u32 {
        let v = u32::from_le_bytes(b.try_into().unwrap());
        if self.swapped {
            v.swap_bytes()
        } else {
            v
        }
    }

    /// Next frame, or `None` at end of file.
    pub fn next_frame(&mut self) -> Result<Option<CsiFrame>, PcapError> {
        while !self.done {
            let mut rec = [0u8; 16];
            match read_full(&mut self.inner, &mut rec) {
                Ok(true) => {}
                Ok(false) => {
                    self.done = true;
                    break;
                }
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                    self.stats.skipped += 1;
                    self.done = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
            self.stats.records += 1;
            let secs = self.u32_at(&rec[0..4]) as u64;
            let frac = self.u32_at(&rec[4..8]) as u64;
            let incl = self.u32_at(&rec[8..12]) as usize;
            if incl > MAX_RECORD {
                // The length field itself is damaged; there is no way to resync.
                self.stats.skipped += 1;
                self.done = true;
                break;
            }
            let mut data = vec![0u8; incl];
            if let Err(e) = self.inner.read_exact(&mut data) {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    self.stats.skipped += 1;
                    self.done = true;
                    break;
                }
                return Err(e.into());
            }
            let ts = secs * 1_000_000 + if self.nanos { frac / 1000 } else { frac };
            let payload = match udp_payload(&data, self.linktype, self.port) {
                Some(p) => p,
                None => {
                    self.stats.ignored += 1;
                    continue;
                }
            };
            match parse_csi_payload(payload, &self.layout) {
                Ok(mut frame) => {
                    frame.header.timestamp_us = ts;
                    self.stats.frames += 1;
                    return Ok(Some(frame));
                }
                Err(_) => self.stats.skipped += 1,
            }
        }
        Ok(None)
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<CsiFrame, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// WEF1 when the magic matches, otherwise the firmware payload layout.
pub fn parse_csi_payload(payload: &[u8], layout: &IngestLayout) -> Result<CsiFrame, CodecError> {
    if payload.starts_with(&WEF1_MAGIC) {
        parse_wire_frame(payload)
    } else {
        parse_nexmon_payload(payload, layout)
    }
}

/// `Ok(false)` on a clean EOF before the first byte, `UnexpectedEof` on a
/// partial read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn udp_payload(data: &[u8], linktype: u32, port: u16) -> Option<&[u8]> {
    let ip = match linktype {
        LINKTYPE_ETHERNET => {
            let mut off = 12;
            let mut ethertype = u16::from_be_bytes([*data.get(off)?, *data.get(off + 1)?]);
            if ethertype == 0x8100 {
                off += 4;
                ethertype = u16::from_be_bytes([*data.get(off)?, *data.get(off + 1)?]);
            }
            if ethertype != 0x0800 {
                return None;
            }
            data.get(off + 2..)?
        }
        _ => data,
    };
    if ip.len() < 20 || ip[0] >> 4 != 4 || ip[9] != 17 {
        return None;
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    let total = (u16::from_be_bytes([ip[2], ip[3]]) as usize).min(ip.len());
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    if frag & 0x3fff != 0 || ihl < 20 || total < ihl + 8 {
        return None;
    }
    let udp = &ip[ihl..total];
    let dst = u16::from_be_bytes([udp[2], udp[3]]);
    if dst != port {
        return None;
    }
    let len = (u16::from_be_bytes([udp[4], udp[5]]) as usize).clamp(8, udp.len());
    Some(&udp[8..len])
}

/// Writes microsecond pcap files with Ethernet framing.
pub struct PcapWriter<W: Write> {
    inner: W,
    ip_id: u16,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        let mut hdr = Vec::with_capacity(24);
        hdr.extend_from_slice(&MAGIC_US.to_le_bytes());
        hdr.extend_from_slice(&2u16.to_le_bytes());
        hdr.extend_from_slice(&4u16.to_le_bytes());
        hdr.extend_from_slice(&0i32.to_le_bytes());
        hdr.extend_from_slice(&0u32.to_le_bytes());
        hdr.extend_from_slice(&65535u32.to_le_bytes());
        hdr.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        inner.write_all(&hdr)?;
        Ok(Self { inner, ip_id: 0 })
    }

    /// One record holding an Ethernet/IPv4/UDP packet from 10.0.0.1:5501 to
    /// 255.255.255.255:`dst_port`.
    pub fn write_udp(&mut self, timestamp_us: u64, dst_port: u16, payload: &[u8]) -> io::Result<()> {
        let mut pkt = Vec::with_capacity(42 + payload.len());
        pkt.extend_from_slice(&[0xff; 6]);
        pkt.extend_from_slice(&[0x02, 0x00, 0x00, 0x00, 0x00, 0x01]);
        pkt.extend_from_slice(&0x0800u16.to_be_bytes());

        let total = (20 + 8 + payload.len()) as u16;
        let mut ip = [0u8; 20];
        ip[0] = 0x45;
        ip[2..4].copy_from_slice(&total.to_be_bytes());
        ip[4..6].copy_from_slice(&self.ip_id.to_be_bytes());
        ip[6] = 0x40; // don't fragment
        ip[8] = 64;
        ip[9] = 17;
        ip[12..16].copy_from_slice(&[10, 0, 0, 1]);
        ip[16..20].copy_from_slice(&[255, 255, 255, 255]);
        let sum = ipv4_checksum(&ip);
        ip[10..12].copy_from_slice(&sum.to_be_bytes());
        self.ip_id = self.ip_id.wrapping_add(1);
        pkt.extend_from_slice(&ip);

        pkt.extend_from_slice(&5501u16.to_be_bytes());
        pkt.extend_from_slice(&dst_port.to_be_bytes());
        pkt.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
        pkt.extend_from_slice(&0u16.to_be_bytes());
        pkt.extend_from_slice(payload);

        let mut rec = Vec::with_capacity(16);
        rec.extend_from_slice(&((timestamp_us / 1_000_000) as u32).to_le_bytes());
        rec.extend_from_slice(&((timestamp_us % 1_000_000) as u32).to_le_bytes());
        rec.extend_from_slice(&(pkt.len() as u32).to_le_bytes());
        rec.extend_from_slice(&(pkt.len() as u32).to_le_bytes());
        self.inner.write_all(&rec)?;
        self.inner.write_all(&pkt)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

fn ipv4_checksum(hdr: &[u8]) -> u16 {
    let mut sum: u32 = hdr.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
