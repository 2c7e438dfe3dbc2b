//! Binary wire format for round messages.
//!
//! ```text
//! magic "FMVC" | version u8 | direction u8 | kind u8 | reserved u8
//! round u32 | client u16 | matrix count u16
//! per matrix: rows u32 | cols u32 | rows*cols f64
//! crc32 u32 over everything before it
//! ```
//!
//! All integers and floats are little-endian.

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::tensor::Matrix;

pub const MAGIC: [u8; 4] = *b"FMVC";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upload = 0,
    Download = 1,
}

/// What a message carries.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Client to server: high-level features and per-sample silhouettes.
    Upload { features: Matrix, silhouettes: Vec<f64> },
    /// Server to client: fused graph, this client's centers and pseudo-labels.
    Distribute {
        fused: AdjacencyGraph,
        centers: Matrix,
        pseudo_labels: Matrix,
    },
    /// Server to client after pre-training: fused graph only.
    GraphOnly { fused: AdjacencyGraph },
}

impl Payload {
    fn kind(&self) -> u8 {
        match self {
            Payload::Upload { .. } => 1,
            Payload::Distribute { .. } => 2,
            Payload::GraphOnly { .. } => 3,
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            Payload::Upload { .. } => Direction::Upload,
            _ => Direction::Download,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub round: u32,
    pub client: u16,
    pub payload: Payload,
}

/// Session-wide sizes every decoded message must agree with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionHeader {
    pub samples: usize,
    pub clusters: usize,
}

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Protocol("row count exceeds u32".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Protocol("column count exceeds u32".into()))?;
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.reserve(m.len() * 8);
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl RoundMessage {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mats: Vec<Matrix> = match &self.payload {
            Payload::Upload { features, silhouettes } => {
                vec![features.clone(), Matrix::column(silhouettes)]
            }
            Payload::Distribute {
                fused,
                centers,
                pseudo_labels,
            } => vec![fused.to_matrix(), centers.clone(), pseudo_labels.clone()],
            Payload::GraphOnly { fused } => vec![fused.to_matrix()],
        };
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 + mats.iter().map(|m| 8 + m.len() * 8).sum::<usize>());
        buf.extend_from_slice(&MAGIC);
        buf.push(VERSION);
        buf.push(self.payload.direction() as u8);
        buf.push(self.payload.kind());
        buf.push(0);
        buf.extend_from_slice(&self.round.to_le_bytes());
        buf.extend_from_slice(&self.client.to_le_bytes());
        buf.extend_from_slice(&(mats.len() as u16).to_le_bytes());
        for m in &mats {
            put_matrix(&mut buf, m)?;
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    /// Decode and check sizes against the session header.
    pub fn decode(bytes: &[u8], header: &SessionHeader) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::Decode(format!("message of {} bytes is too short", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Decode(format!(
                "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }
        if body[..4] != MAGIC {
            return Err(Error::Decode("bad magic bytes".into()));
        }
        if body[4] != VERSION {
            return Err(Error::Decode(format!("unsupported version {}", body[4])));
        }
        let direction = body[5];
        let kind = body[6];
        let round = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        let client = u16::from_le_bytes(body[12..14].try_into().expect("2 bytes"));
        let count = u16::from_le_bytes(body[14..16].try_into().expect("2 bytes")) as usize;

        let mut reader = Reader { buf: body, pos: HEADER_LEN };
        let mut mats = Vec::with_capacity(count);
        for _ in 0..count {
            mats.push(reader.matrix()?);
        }
        if reader.pos != body.len() {
            return Err(Error::Decode(format!("{} trailing bytes", body.len() - reader.pos)));
        }

        let n = header.samples;
        let k = header.clusters;
        let expect = |m: &Matrix, rows: usize, cols: Option<usize>, what: &str| -> Result<()> {
            if m.rows() != rows || cols.is_some_and(|c| c != m.cols()) {
                return Err(Error::Decode(format!(
                    "{what} has shape {:?}, session expects {rows} rows{}",
                    m.shape(),
                    cols.map_or(String::new(), |c| format!(" and {c} columns"))
                )));
            }
            Ok(())
        };
        let graph = |m: &Matrix| -> Result<AdjacencyGraph> {
            expect(m, n, Some(n), "fused graph")?;
            AdjacencyGraph::from_matrix(m).map_err(|e| Error::Decode(e.to_string()))
        };

        let payload = match (kind, count) {
            (1, 2) => {
                expect(&mats[0], n, None, "features")?;
                expect(&mats[1], n, Some(1), "silhouettes")?;
                let silhouettes = mats.pop().expect("two matrices").into_vec();
                let features = mats.pop().expect("one matrix");
                Payload::Upload { features, silhouettes }
            }
            (2, 3) => {
                expect(&mats[1], k, None, "centers")?;
                expect(&mats[2], n, Some(k), "pseudo-labels")?;
                let pseudo_labels = mats.pop().expect("three matrices");
                let centers = mats.pop().expect("two matrices");
                Payload::Distribute {
                    fused: graph(&mats[0])?,
                    centers,
                    pseudo_labels,
                }
            }
            (3, 1) => Payload::GraphOnly { fused: graph(&mats[0])? },
            _ => {
                return Err(Error::Decode(format!(
                    "payload kind {kind} with {count} matrices is not recognized"
                )))
            }
        };
        if payload.direction() as u8 != direction {
            return Err(Error::Decode(format!(
                "direction byte {direction} disagrees with payload kind {kind}"
            )));
        }
        Ok(Self { round, client, payload })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|l| l.checked_mul(8))
            .ok_or_else(|| Error::Decode("matrix dimensions overflow".into()))?;
        let raw = self.take(len)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> SessionHeader {
        SessionHeader { samples: 3, clusters: 2 }
    }

    fn upload() -> RoundMessage {
        RoundMessage {
            round: 4,
            client: 1,
            payload: Payload::Upload {
                features: Matrix::from_rows(&[[1.5, -0.0], [f64::MIN_POSITIVE, 2.0], [3.0, 1e300]]),
                silhouettes: vec![0.5, -1.0, 0.25],
            },
        }
    }

    #[test]
    fn upload_round_trip() {
        let m = upload();
        let back = RoundMessage::decode(&m.encode().unwrap(), &header()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn distribute_round_trip() {
        let fused = AdjacencyGraph::from_matrix(&Matrix::from_rows(&[
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ]))
        .unwrap();
        let m = RoundMessage {
            round: 2,
            client: 0,
            payload: Payload::Distribute {
                fused,
                centers: Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
                pseudo_labels: Matrix::from_rows(&[[0.2, 0.8], [1.0, 0.0], [0.5, 0.5]]),
            },
        };
        let back = RoundMessage::decode(&m.encode().unwrap(), &header()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = upload().encode().unwrap();
        bytes[20] ^= 0x01;
        let err = RoundMessage::decode(&bytes, &header()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn wrong_sample_count_rejected() {
        let bytes = upload().encode().unwrap();
        let err = RoundMessage::decode(&bytes, &SessionHeader { samples: 4, clusters: 2 }).unwrap_err();
        assert!(matches!(err, Error::Decode(_)));
    }

    #[test]
    fn truncated_rejected() {
        let bytes = upload().encode().unwrap();
        assert!(RoundMessage::decode(&bytes[..10], &header()).is_err());
    }
}
