//! Binary PPM (P6) snapshots, one pixel per lattice site.
//!
//! Aggregate sites are red, other cluster sites green, the rest blue. The
//! image covers the box's first two coordinates with the second axis pointing
//! up; in three or more dimensions it is the slice through the origin.

use std::io::{self, Write};

use crate::environment::{Environment, Site};
use crate::error::{Error, Result};
use crate::idla::Aggregate;

pub const AGGREGATE: [u8; 3] = [255, 0, 0];
pub const CLUSTER: [u8; 3] = [0, 255, 0];
pub const OFF_CLUSTER: [u8; 3] = [0, 0, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, top row first.
    pub data: Vec<u8>,
}

impl Pixmap {
    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn count(&self, color: [u8; 3]) -> usize {
        self.data.chunks_exact(3).filter(|c| *c == color).count()
    }

    /// Encode with a comment line carrying `comment`.
    pub fn write_ppm<W: Write>(&self, mut out: W, comment: &str) -> io::Result<()> {
        write!(out, "P6\n# {comment}\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }

    pub fn to_ppm(&self, comment: &str) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 64);
        self.write_ppm(&mut buf, comment).expect("writing to memory");
        buf
    }

    pub fn parse_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Parse("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the data.
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(Error::Parse("expected a P6 image with maxval 255".into()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad size {s:?}")));
        let (width, height) = (num(&fields[1])?, num(&fields[2])?);
        let data = bytes.get(pos..).unwrap_or_default().to_vec();
        if data.len() != 3 * width * height {
            return Err(Error::Parse(format!(
                "expected {} data bytes, found {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Lattice site shown at each pixel, row-major from the top left.
pub fn pixel_sites(env: &Environment) -> (usize, usize, Vec<Site>) {
    let side = env.side();
    let l = env.half_extent();
    let (width, height) = if env.dim() == 1 { (side, 1) } else { (side, side) };
    let mut sites = Vec::with_capacity(width * height);
    let mut v = vec![0i32; env.dim()];
    for row in 0..height {
        for col in 0..width {
            v[0] = col as i32 - l;
            if env.dim() > 1 {
                v[1] = l - row as i32;
            }
            sites.push(env.site(&v.clone().into()).expect("inside the box"));
        }
    }
    (width, height, sites)
}

/// Cluster membership, with aggregate sites overlaid when given.
pub fn render(env: &Environment, aggregate: Option<&Aggregate>) -> Pixmap {
    let (width, height, sites) = pixel_sites(env);
    let mut data = Vec::with_capacity(3 * sites.len());
    for s in sites {
        let color = if aggregate.is_some_and(|a| a.contains(s)) {
            AGGREGATE
        } else if env.in_cluster(s) {
            CLUSTER
        } else {
            OFF_CLUSTER
        };
        data.extend_from_slice(&color);
    }
    Pixmap {
        width,
        height,
        data,
    }
}
