//! Binary record and calibration files.
//!
//! All integers and floats are little-endian.
//!
//! Record file: magic `FDMREC`, version byte, reserved byte, `dt` (f64),
//! record length (u32), seed (u64), configuration hash (32 bytes), channel
//! count (u16), then per channel a UTF-8 label (u16 length + bytes), an
//! encoding byte and its volts-per-code scale (f64). Records follow until end
//! of file: tag `REC1`, index (u64), every channel's samples in its encoding,
//! and a truth flag byte optionally followed by an event count (u16) and the
//! events.
//!
//! Calibration file: magic `FDMCAL`, version byte, reserved byte, detector id
//! (u16), record length (u32), `df` (f64), records averaged (u64),
//! configuration hash, then the complex bins as (re, im) f64 pairs and one
//! validity byte per bin.

use std::io::{self, Read, Write};

use num_complex::Complex64;

use crate::detector::{EventTruth, Species};
use crate::error::{Error, Result};
use crate::signal::Spectrum;
use crate::sysid::ImpulseEstimate;

const RECORD_MAGIC: &[u8; 6] = b"FDMREC";
const CALIBRATION_MAGIC: &[u8; 6] = b"FDMCAL";
const RECORD_TAG: &[u8; 4] = b"REC1";

/// Format version written by this crate.
pub const FORMAT_VERSION: u8 = 1;

/// Storage of one channel's samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleEncoding {
    /// 16-bit codes times a scale; values must sit exactly on the code grid.
    I16 {
        /// Volts per code.
        scale: f64,
    },
    /// 32-bit codes times a scale; values are rounded to the grid.
    I32 {
        /// Volts per code.
        scale: f64,
    },
    /// Raw 64-bit floats.
    F64,
}

impl SampleEncoding {
    fn tag(self) -> u8 {
        match self {
            SampleEncoding::I16 { .. } => 1,
            SampleEncoding::I32 { .. } => 2,
            SampleEncoding::F64 => 3,
        }
    }

    fn scale(self) -> f64 {
        match self {
            SampleEncoding::I16 { scale } | SampleEncoding::I32 { scale } => scale,
            SampleEncoding::F64 => 1.0,
        }
    }

    fn from_tag(tag: u8, scale: f64) -> Result<Self> {
        match tag {
            1 => Ok(SampleEncoding::I16 { scale }),
            2 => Ok(SampleEncoding::I32 { scale }),
            3 => Ok(SampleEncoding::F64),
            t => Err(Error::Format(format!("unknown sample encoding {t}"))),
        }
    }
}

/// Name and storage of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInfo {
    /// Channel label such as `anode0` or `fanin`.
    pub label: String,
    /// Sample storage.
    pub encoding: SampleEncoding,
}

/// File-level metadata of a record file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    /// Sample interval in seconds.
    pub dt: f64,
    /// Samples per channel per record.
    pub record_len: usize,
    /// Seed of the producing run.
    pub seed: u64,
    /// Hash of the producing configuration.
    pub config_hash: [u8; 32],
    /// Channels in storage order.
    pub channels: Vec<ChannelInfo>,
}

impl RecordHeader {
    /// Position of the channel labelled `label`.
    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| Error::Format(format!("channel {label:?} not present")))
    }
}

/// One record: samples in volts per channel plus optional truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Record index within the run.
    pub index: u64,
    /// Samples per channel, in header order.
    pub channels: Vec<Vec<f64>>,
    /// Simulation truth when known.
    pub truth: Option<Vec<EventTruth>>,
}

fn put_u16(w: &mut impl Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}
fn get_u8(r: &mut impl Read) -> Result<u8> {
    Ok(take::<1>(r)?[0])
}
fn get_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(take(r)?))
}
fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}
fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r)?))
}
fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("file ends inside a structure".into())
    } else {
        Error::Io(e)
    }
}

fn check_magic(r: &mut impl Read, magic: &[u8; 6]) -> Result<()> {
    let found: [u8; 6] = take(r)?;
    if &found != magic {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&found))));
    }
    let version = get_u8(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    get_u8(r)?;
    Ok(())
}

/// Streams records to a writer.
pub struct RecordWriter<W: Write> {
    inner: W,
    header: RecordHeader,
}

impl<W: Write> RecordWriter<W> {
    /// Writes the header.
    pub fn new(mut inner: W, header: RecordHeader) -> Result<Self> {
        inner.write_all(RECORD_MAGIC)?;
        inner.write_all(&[FORMAT_VERSION, 0])?;
        put_f64(&mut inner, header.dt)?;
        put_u32(&mut inner, header.record_len as u32)?;
        put_u64(&mut inner, header.seed)?;
        inner.write_all(&header.config_hash)?;
        put_u16(&mut inner, header.channels.len() as u16)?;
        for c in &header.channels {
            put_u16(&mut inner, c.label.len() as u16)?;
            inner.write_all(c.label.as_bytes())?;
            inner.write_all(&[c.encoding.tag()])?;
            put_f64(&mut inner, c.encoding.scale())?;
        }
        Ok(Self { inner, header })
    }

    /// Appends one record.
    pub fn write(&mut self, record: &Record) -> Result<()> {
        if record.channels.len() != self.header.channels.len() {
            return Err(Error::LengthMismatch { expected: self.header.channels.len(), found: record.channels.len() });
        }
        let w = &mut self.inner;
        w.write_all(RECORD_TAG)?;
        put_u64(w, record.index)?;
        for (info, samples) in self.header.channels.iter().zip(&record.channels) {
            if samples.len() != self.header.record_len {
                return Err(Error::LengthMismatch { expected: self.header.record_len, found: samples.len() });
            }
            match info.encoding {
                SampleEncoding::I16 { scale } => {
                    for &v in samples {
                        let code = (v / scale).round();
                        if !(i16::MIN as f64..=i16::MAX as f64).contains(&code)
                            || (code * scale - v).abs() > 1e-9 * scale
                        {
                            return Err(Error::Format(format!("{v} is not a code of channel {}", info.label)));
                        }
                        w.write_all(&(code as i16).to_le_bytes())?;
                    }
                }
                SampleEncoding::I32 { scale } => {
                    for &v in samples {
                        let code = (v / scale).round();
                        if !(i32::MIN as f64..=i32::MAX as f64).contains(&code) {
                            return Err(Error::Format(format!("{v} overflows channel {}", info.label)));
                        }
                        w.write_all(&(code as i32).to_le_bytes())?;
                    }
                }
                SampleEncoding::F64 => {
                    for &v in samples {
                        put_f64(w, v)?;
                    }
                }
            }
        }
        match &record.truth {
            None => w.write_all(&[0])?,
            Some(events) => {
                w.write_all(&[1])?;
                put_u16(w, events.len() as u16)?;
                for e in events {
                    put_f64(w, e.energy_kevee)?;
                    put_f64(w, e.t_arrival)?;
                    w.write_all(&[match e.species {
                        Species::Gamma => 0,
                        Species::Neutron => 1,
                    }])?;
                    put_u16(w, e.detector_id)?;
                    put_f64(w, e.photoelectrons)?;
                    put_f64(w, e.shape_deviate)?;
                }
            }
        }
        Ok(())
    }

    /// Flushes and returns the writer.
    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streams records from a reader.
pub struct RecordReader<R: Read> {
    inner: R,
    header: RecordHeader,
}

impl<R: Read> RecordReader<R> {
    /// Reads and checks the header.
    pub fn new(mut inner: R) -> Result<Self> {
        check_magic(&mut inner, RECORD_MAGIC)?;
        let dt = get_f64(&mut inner)?;
        let record_len = get_u32(&mut inner)? as usize;
        let seed = get_u64(&mut inner)?;
        let config_hash: [u8; 32] = take(&mut inner)?;
        let n = get_u16(&mut inner)?;
        let mut channels = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let len = get_u16(&mut inner)? as usize;
            let mut label = vec![0u8; len];
            inner.read_exact(&mut label).map_err(truncated)?;
            let label = String::from_utf8(label).map_err(|_| Error::Format("channel label is not UTF-8".into()))?;
            let tag = get_u8(&mut inner)?;
            let scale = get_f64(&mut inner)?;
            channels.push(ChannelInfo { label, encoding: SampleEncoding::from_tag(tag, scale)? });
        }
        if !(dt > 0.0) || record_len == 0 {
            return Err(Error::Format("header has a non-positive sample interval or length".into()));
        }
        Ok(Self { inner, header: RecordHeader { dt, record_len, seed, config_hash, channels } })
    }

    /// File metadata.
    pub fn header(&self) -> &RecordHeader {
        &self.header
    }

    /// Next record, or `None` at a clean end of file.
    pub fn next_record(&mut self) -> Result<Option<Record>> {
        let mut tag = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            let k = self.inner.read(&mut tag[got..])?;
            if k == 0 {
                return if got == 0 { Ok(None) } else { Err(Error::Format("file ends inside a record tag".into())) };
            }
            got += k;
        }
        if &tag != RECORD_TAG {
            return Err(Error::Format("record tag mismatch".into()));
        }
        let r = &mut self.inner;
        let index = get_u64(r)?;
        let mut channels = Vec::with_capacity(self.header.channels.len());
        for info in &self.header.channels {
            let mut samples = Vec::with_capacity(self.header.record_len);
            for _ in 0..self.header.record_len {
                samples.push(match info.encoding {
                    SampleEncoding::I16 { scale } => i16::from_le_bytes(take(r)?) as f64 * scale,
                    SampleEncoding::I32 { scale } => i32::from_le_bytes(take(r)?) as f64 * scale,
                    SampleEncoding::F64 => get_f64(r)?,
                });
            }
            channels.push(samples);
        }
        let truth = match get_u8(r)? {
            0 => None,
            1 => {
                let n = get_u16(r)?;
                let mut events = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let energy_kevee = get_f64(r)?;
                    let t_arrival = get_f64(r)?;
                    let species = match get_u8(r)? {
                        0 => Species::Gamma,
                        1 => Species::Neutron,
                        s => return Err(Error::Format(format!("unknown species code {s}"))),
                    };
                    let detector_id = get_u16(r)?;
                    let photoelectrons = get_f64(r)?;
                    let shape_deviate = get_f64(r)?;
                    events.push(EventTruth {
                        energy_kevee,
                        t_arrival,
                        species,
                        detector_id,
                        photoelectrons,
                        shape_deviate,
                    });
                }
                Some(events)
            }
            f => return Err(Error::Format(format!("bad truth flag {f}"))),
        };
        Ok(Some(Record { index, channels, truth }))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

/// A stored transfer-function estimate with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFile {
    /// Detector the resonator belongs to.
    pub detector_id: u16,
    /// Hash of the producing configuration.
    pub config_hash: [u8; 32],
    /// The estimate.
    pub estimate: ImpulseEstimate,
}

impl CalibrationFile {
    /// Serialises the calibration.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let t = &self.estimate.transfer;
        w.write_all(CALIBRATION_MAGIC)?;
        w.write_all(&[FORMAT_VERSION, 0])?;
        put_u16(&mut w, self.detector_id)?;
        put_u32(&mut w, t.len() as u32)?;
        put_f64(&mut w, t.df())?;
        put_u64(&mut w, self.estimate.records_averaged as u64)?;
        w.write_all(&self.config_hash)?;
        for b in t.bins() {
            put_f64(&mut w, b.re)?;
            put_f64(&mut w, b.im)?;
        }
        let mask: Vec<u8> = self.estimate.valid.iter().map(|&v| v as u8).collect();
        w.write_all(&mask)?;
        w.flush()?;
        Ok(())
    }

    /// Parses a calibration.
    pub fn read(mut r: impl Read) -> Result<Self> {
        check_magic(&mut r, CALIBRATION_MAGIC)?;
        let detector_id = get_u16(&mut r)?;
        let n = get_u32(&mut r)? as usize;
        let df = get_f64(&mut r)?;
        let records_averaged = get_u64(&mut r)? as usize;
        let config_hash: [u8; 32] = take(&mut r)?;
        let mut bins = Vec::with_capacity(n);
        for _ in 0..n {
            let re = get_f64(&mut r)?;
            let im = get_f64(&mut r)?;
            bins.push(Complex64::new(re, im));
        }
        let mut mask = vec![0u8; n];
        r.read_exact(&mut mask).map_err(truncated)?;
        let valid = mask
            .iter()
            .map(|&m| match m {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(Error::Format(format!("bad validity byte {v}"))),
            })
            .collect::<Result<_>>()?;
        let transfer = Spectrum::new(bins, df).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { detector_id, config_hash, estimate: ImpulseEstimate { transfer, valid, records_averaged } })
    }
}

/// Fails with a format error when `found` differs from `expected`.
pub fn check_hash(expected: &[u8; 32], found: &[u8; 32], what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::Format(format!(
            "{what} was produced by configuration {} but {} is loaded",
            hex::encode(found),
            hex::encode(expected)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> RecordHeader {
        RecordHeader {
            dt: 2e-9,
            record_len: 4,
            seed: 7,
            config_hash: [3; 32],
            channels: vec![
                ChannelInfo { label: "anode0".into(), encoding: SampleEncoding::I16 { scale: 0.5 } },
                ChannelInfo { label: "recovered0".into(), encoding: SampleEncoding::I32 { scale: 0.01 } },
                ChannelInfo { label: "ideal".into(), encoding: SampleEncoding::F64 },
            ],
        }
    }

    fn record(index: u64) -> Record {
        Record {
            index,
            channels: vec![vec![0.0, 0.5, -1.5, 2.0], vec![0.01, -0.02, 0.03, 1.0], vec![0.1, 0.2, 0.3, 0.4]],
            truth: Some(vec![EventTruth {
                energy_kevee: 662.0,
                t_arrival: 2e-7,
                species: Species::Neutron,
                detector_id: 1,
                photoelectrons: 397.2,
                shape_deviate: -0.3,
            }]),
        }
    }

    #[test]
    fn records_round_trip() {
        let mut w = RecordWriter::new(Vec::new(), header()).unwrap();
        w.write(&record(0)).unwrap();
        w.write(&Record { truth: None, ..record(1) }).unwrap();
        let bytes = w.finish().unwrap();
        let mut r = RecordReader::new(bytes.as_slice()).unwrap();
        assert_eq!(r.header(), &header());
        let a = r.next_record().unwrap().unwrap();
        assert_eq!(a.truth, record(0).truth);
        assert_eq!(a.channels[0], record(0).channels[0]);
        assert_eq!(a.channels[2], record(0).channels[2]);
        assert!(a.channels[1].iter().zip(&record(0).channels[1]).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(r.next_record().unwrap().unwrap().truth.is_none());
        assert!(r.next_record().unwrap().is_none());
    }

    #[test]
    fn off_grid_values_are_rejected_for_exact_channels() {
        let mut w = RecordWriter::new(Vec::new(), header()).unwrap();
        let mut rec = record(0);
        rec.channels[0][0] = 0.3;
        assert!(matches!(w.write(&rec), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_foreign_files_are_format_errors() {
        let mut w = RecordWriter::new(Vec::new(), header()).unwrap();
        w.write(&record(0)).unwrap();
        let bytes = w.finish().unwrap();
        let mut r = RecordReader::new(&bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(r.next_record(), Err(Error::Format(_))));
        assert!(matches!(RecordReader::new(&b"NOTAFILE"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn calibration_round_trip() {
        let bins = vec![Complex64::new(1.0, 2.0), Complex64::new(0.0, 0.0), Complex64::new(-3.0, 0.5)];
        let cal = CalibrationFile {
            detector_id: 1,
            config_hash: [9; 32],
            estimate: ImpulseEstimate {
                transfer: Spectrum::new(bins, 250e3).unwrap(),
                valid: vec![true, false, true],
                records_averaged: 10_000,
            },
        };
        let mut buf = Vec::new();
        cal.write(&mut buf).unwrap();
        assert_eq!(CalibrationFile::read(buf.as_slice()).unwrap(), cal);
    }

    #[test]
    fn hash_mismatch_is_reported() {
        assert!(matches!(check_hash(&[0; 32], &[1; 32], "x"), Err(Error::Format(_))));
    }
}
