//! Wire formats.
//!
//! Skeleton CSV has header `t,i,x1..xd,th1..thd`. The first row is the
//! initial state with `i = 0`, each event row carries the one-based flipped
//! index and the post-switch velocity, and a final row with `i = 0` records
//! the state at the horizon. Floats are written in shortest round-trip form.
//!
//! Control JSON is `{"times": [...], "indices": [...]}` with one-based
//! indices; see [`ControlSequence`].

use std::io::{Read, Write};

use thiserror::Error;

use crate::control::ControlSequence;
use crate::model::{ModelError, Skeleton, SkeletonEvent, State, Velocity};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn skeleton_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "i".to_string()];
    h.extend((1..=dim).map(|j| format!("x{j}")));
    h.extend((1..=dim).map(|j| format!("th{j}")));
    h
}

fn row(t: f64, i: usize, x: &[f64], theta: &Velocity) -> Vec<String> {
    let mut r = Vec::with_capacity(2 + 2 * x.len());
    r.push(t.to_string());
    r.push(i.to_string());
    r.extend(x.iter().map(|v| v.to_string()));
    r.extend(theta.to_i8().iter().map(|s| s.to_string()));
    r
}

pub fn write_skeleton_csv<W: Write>(skel: &Skeleton, out: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(skeleton_header(skel.dim()))?;
    let init = skel.init();
    w.write_record(row(0.0, 0, &init.x, &init.theta))?;
    for ev in skel.events() {
        w.write_record(row(ev.time, ev.index + 1, &ev.position, &ev.velocity))?;
    }
    let end = skel.final_state();
    w.write_record(row(skel.horizon(), 0, &end.x, &end.theta))?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parses a skeleton CSV. The trailing row must agree with the replayed
/// final state.
pub fn read_skeleton_csv<R: Read>(input: R) -> Result<Skeleton, FormatError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let fields = header.len();
    if fields < 4 || fields % 2 != 0 {
        return Err(FormatError::Parse {
            line: 1,
            msg: format!("expected 2 + 2d columns, found {fields}"),
        });
    }
    let dim = (fields - 2) / 2;
    if header != skeleton_header(dim) {
        return Err(FormatError::Parse {
            line: 1,
            msg: format!("header must be {}", skeleton_header(dim).join(",")),
        });
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_f = |k: usize| -> Result<f64, FormatError> {
            rec[k].trim().parse::<f64>().map_err(|e| FormatError::Parse {
                line,
                msg: format!("column {}: {e}", header[k]),
            })
        };
        let t = parse_f(0)?;
        let i: usize = rec[1].trim().parse().map_err(|e| FormatError::Parse {
            line,
            msg: format!("column i: {e}"),
        })?;
        let x = (0..dim).map(|j| parse_f(2 + j)).collect::<Result<Vec<_>, _>>()?;
        let signs = (0..dim)
            .map(|j| {
                rec[2 + dim + j].trim().parse::<i8>().map_err(|e| FormatError::Parse {
                    line,
                    msg: format!("column {}: {e}", header[2 + dim + j]),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let theta = Velocity::from_signs(&signs).map_err(|e| FormatError::Parse {
            line,
            msg: e.to_string(),
        })?;
        rows.push((line, t, i, x, theta));
    }
    if rows.len() < 2 {
        return Err(FormatError::Parse {
            line: 2,
            msg: "need an initial row and a horizon row".into(),
        });
    }
    let (first, rest) = rows.split_first().expect("checked length");
    let (last, middle) = rest.split_last().expect("checked length");
    if first.1 != 0.0 || first.2 != 0 {
        return Err(FormatError::Parse {
            line: first.0,
            msg: "first row must be the initial state at t = 0 with i = 0".into(),
        });
    }
    if last.2 != 0 {
        return Err(FormatError::Parse {
            line: last.0,
            msg: "last row must be the horizon row with i = 0".into(),
        });
    }
    let init = State::new(first.3.clone(), first.4.clone())?;
    let mut events = Vec::with_capacity(middle.len());
    for (line, t, i, x, theta) in middle {
        if *i == 0 || *i > dim {
            return Err(FormatError::Parse {
                line: *line,
                msg: format!("event index {i} outside 1..={dim}"),
            });
        }
        events.push(SkeletonEvent {
            time: *t,
            index: i - 1,
            position: x.clone(),
            velocity: theta.clone(),
        });
    }
    let skel = Skeleton::new(init, events, last.1, false).map_err(|e| FormatError::Parse {
        line: last.0,
        msg: e.to_string(),
    })?;
    let end = skel.final_state();
    let scale = end.x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let gap = end.x.iter().zip(&last.3).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if end.theta != last.4 || gap > 1e-9 * scale {
        return Err(FormatError::Parse {
            line: last.0,
            msg: "horizon row does not match the replayed final state".into(),
        });
    }
    Ok(skel)
}

pub fn control_to_json(u: &ControlSequence) -> Result<String, FormatError> {
    Ok(serde_json::to_string_pretty(u)?)
}

pub fn control_from_json(s: &str) -> Result<ControlSequence, FormatError> {
    Ok(serde_json::from_str(s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstantExcess;
    use crate::simulate::{simulate_skeleton, SimConfig};
    use crate::targets::{GaussianTarget, RidgeTarget};

    fn v(s: &[i8]) -> Velocity {
        Velocity::from_signs(s).unwrap()
    }

    #[test]
    fn ridge_csv_has_two_rows() {
        let r = RidgeTarget::new(0.75).unwrap();
        let init = State::new(vec![0.0, 0.0], v(&[1, 1])).unwrap();
        let skel = simulate_skeleton(
            &r,
            &ConstantExcess::CANONICAL,
            &init,
            &SimConfig::new(1000.0, 1).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_skeleton_csv(&skel, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,i,x1,x2,th1,th2\n0,0,0,0,1,1\n1000,0,1000,1000,1,1\n");
    }

    #[test]
    fn round_trip() {
        let g = GaussianTarget::from_row_major(2, &[6.0, 3.0, 3.0, 2.0], None).unwrap();
        let init = State::new(vec![0.1, -0.3], v(&[1, -1])).unwrap();
        let skel = simulate_skeleton(&g, &ConstantExcess::CANONICAL, &init, &SimConfig::new(50.0, 7).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_skeleton_csv(&skel, &mut buf).unwrap();
        let back = read_skeleton_csv(buf.as_slice()).unwrap();
        assert_eq!(back, skel);
    }

    #[test]
    fn rejects_malformed_rows() {
        let bad_index = "t,i,x1,th1\n0,0,0,1\n1,2,1,-1\n2,0,0,-1\n";
        let err = read_skeleton_csv(bad_index.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
        let bad_sign = "t,i,x1,th1\n0,0,0,3\n1,0,1,1\n";
        assert!(read_skeleton_csv(bad_sign.as_bytes()).is_err());
        let bad_end = "t,i,x1,th1\n0,0,0,1\n2,0,5,1\n";
        assert!(read_skeleton_csv(bad_end.as_bytes()).is_err());
        let bad_header = "t,j,x1,th1\n0,0,0,1\n2,0,2,1\n";
        assert!(read_skeleton_csv(bad_header.as_bytes()).is_err());
    }

    #[test]
    fn control_json_round_trip() {
        let u = ControlSequence::new(vec![1.5, 0.25], vec![2]).unwrap();
        let s = control_to_json(&u).unwrap();
        assert_eq!(control_from_json(&s).unwrap(), u);
    }
}
