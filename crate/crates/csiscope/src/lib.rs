//! Host side of csiscope: sources, recordings, the classifier bridge and the
//! live control session.

pub mod bridge;
pub mod centroid;
pub mod offline;
pub mod pcap;
pub mod recording;
pub mod server;
pub mod session;
pub mod source;
