//! ASCII PLY reading and writing.
//!
//! The on-disk layout is fixed:
//!
//! ```text
//! ply
//! format ascii 1.0
//! element vertex N
//! property float x
//! property float y
//! property float z
//! property uchar red
//! property uchar green
//! property uchar blue
//! property int label      (optional)
//! end_header
//! ```
//!
//! One vertex per line. Colors are quantized to 8-bit channels at this
//! boundary only; positions are printed with shortest round-trip precision
//! so a save/load cycle reproduces them bit-exactly. A label of -1 encodes
//! an unlabeled point.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::cloud::{PointCloud, UNLABELED};
use crate::error::{Error, Result};
use crate::fsutil;

const REQUIRED_PROPERTIES: [(&str, &str); 6] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
];

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, include_labels: bool) -> Result<()> {
    let path = path.as_ref();
    let with_labels = include_labels && cloud.labels().is_some();
    let mut buf = Vec::with_capacity(cloud.len() * 40 + 256);
    {
        let mut w = BufWriter::new(&mut buf);
        let header_write = (|| -> std::io::Result<()> {
            writeln!(w, "ply")?;
            writeln!(w, "format ascii 1.0")?;
            writeln!(w, "comment num_classes {}", cloud.num_classes())?;
            writeln!(w, "element vertex {}", cloud.len())?;
            for (ty, name) in REQUIRED_PROPERTIES {
                writeln!(w, "property {ty} {name}")?;
            }
            if with_labels {
                writeln!(w, "property int label")?;
            }
            writeln!(w, "end_header")?;
            for i in 0..cloud.len() {
                let p = cloud.positions()[i];
                let c = cloud.colors()[i];
                let (r, g, b) = (
                    (c[0] * 255.0).round() as u8,
                    (c[1] * 255.0).round() as u8,
                    (c[2] * 255.0).round() as u8,
                );
                if with_labels {
                    let l = cloud.labels().unwrap()[i];
                    writeln!(w, "{:?} {:?} {:?} {} {} {} {}", p[0], p[1], p[2], r, g, b, l)?;
                } else {
                    writeln!(w, "{:?} {:?} {:?} {} {} {}", p[0], p[1], p[2], r, g, b)?;
                }
            }
            w.flush()
        })();
        header_write.map_err(|e| Error::io(path, e))?;
    }
    fsutil::write_atomic(path, &buf)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}

fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();

    let mut expect = |want: &str| -> Result<()> {
        match lines.next() {
            Some((ln, got)) if got.trim() == want => {
                let _ = ln;
                Ok(())
            }
            Some((ln, got)) => Err(Error::MalformedHeader {
                line: ln + 1,
                reason: format!("expected '{want}', found '{got}'"),
            }),
            None => Err(Error::MalformedHeader {
                line: 0,
                reason: format!("unexpected end of header, expected '{want}'"),
            }),
        }
    };
    expect("ply")?;
    expect("format ascii 1.0")?;

    let mut vertex_count: Option<usize> = None;
    let mut num_classes: usize = 1;
    let mut properties: Vec<(String, String)> = Vec::new();
    let header_end_line;
    loop {
        let (ln, line) = match lines.next() {
            Some(x) => x,
            None => {
                return Err(Error::MalformedHeader {
                    line: 0,
                    reason: "missing end_header".into(),
                })
            }
        };
        let line = line.trim();
        let lineno = ln + 1;
        if line == "end_header" {
            header_end_line = lineno;
            break;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("comment") => {
                let rest: Vec<&str> = parts.collect();
                if rest.len() == 2 && rest[0] == "num_classes" {
                    num_classes = rest[1].parse().map_err(|_| Error::MalformedHeader {
                        line: lineno,
                        reason: format!("bad num_classes '{}'", rest[1]),
                    })?;
                }
            }
            Some("element") => {
                let kind = parts.next().unwrap_or("");
                if kind != "vertex" {
                    return Err(Error::MalformedHeader {
                        line: lineno,
                        reason: format!("unsupported element '{kind}'"),
                    });
                }
                let count = parts.next().ok_or_else(|| Error::MalformedHeader {
                    line: lineno,
                    reason: "element vertex missing count".into(),
                })?;
                vertex_count = Some(count.parse().map_err(|_| Error::MalformedHeader {
                    line: lineno,
                    reason: format!("bad vertex count '{count}'"),
                })?);
            }
            Some("property") => {
                let ty = parts.next().unwrap_or("").to_string();
                let name = parts.next().unwrap_or("").to_string();
                if name.is_empty() {
                    return Err(Error::MalformedHeader {
                        line: lineno,
                        reason: "property missing name".into(),
                    });
                }
                properties.push((ty, name));
            }
            Some(other) => {
                return Err(Error::MalformedHeader {
                    line: lineno,
                    reason: format!("unknown header keyword '{other}'"),
                });
            }
            None => {}
        }
    }

    let n = vertex_count.ok_or(Error::MalformedHeader {
        line: header_end_line,
        reason: "missing 'element vertex' declaration".into(),
    })?;

    for (_, name) in REQUIRED_PROPERTIES {
        if !properties.iter().any(|(_, p)| p == name) {
            return Err(Error::MissingProperty { name: name.into() });
        }
    }
    let expected: Vec<&str> = REQUIRED_PROPERTIES.iter().map(|(_, n)| *n).collect();
    let got: Vec<&str> = properties.iter().map(|(_, n)| n.as_str()).collect();
    let has_label = got.len() == 7 && got[6] == "label";
    if !(got == expected || (has_label && got[..6] == expected[..])) {
        return Err(Error::MalformedHeader {
            line: header_end_line,
            reason: format!("unsupported property layout {got:?}"),
        });
    }

    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut labels: Vec<i32> = Vec::with_capacity(if has_label { n } else { 0 });
    let want_fields = if has_label { 7 } else { 6 };
    for _ in 0..n {
        let (ln, line) = lines.next().ok_or_else(|| Error::MalformedRecord {
            line: header_end_line + positions.len() + 1,
            reason: format!("expected {n} vertices, file ended early"),
        })?;
        let lineno = ln + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != want_fields {
            return Err(Error::MalformedRecord {
                line: lineno,
                reason: format!("expected {want_fields} fields, found {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::MalformedRecord {
                line: lineno,
                reason: format!("bad float '{s}'"),
            })
        };
        let parse_u8 = |s: &str| -> Result<u8> {
            s.parse().map_err(|_| Error::MalformedRecord {
                line: lineno,
                reason: format!("bad color byte '{s}'"),
            })
        };
        positions.push([parse_f64(fields[0])?, parse_f64(fields[1])?, parse_f64(fields[2])?]);
        colors.push([
            parse_u8(fields[3])? as f64 / 255.0,
            parse_u8(fields[4])? as f64 / 255.0,
            parse_u8(fields[5])? as f64 / 255.0,
        ]);
        if has_label {
            let l: i32 = fields[6].parse().map_err(|_| Error::MalformedRecord {
                line: lineno,
                reason: format!("bad label '{}'", fields[6]),
            })?;
            labels.push(l);
        }
    }

    if has_label {
        let max_label = labels.iter().copied().filter(|&l| l != UNLABELED).max();
        if let Some(m) = max_label {
            num_classes = num_classes.max(m as usize + 1);
        }
        PointCloud::new(positions, colors, Some(labels), num_classes)
    } else {
        PointCloud::new(positions, colors, None, num_classes)
    }
}
