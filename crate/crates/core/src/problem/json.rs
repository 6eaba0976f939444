//! JSON problem files.
//!
//! ```json
//! { "nx": 1, "N": 1,
//!   "stages": [ { "A": [[1.0]], "B": [[1.0]], "Qx": [[1.0]], "Qxu": [[0.0]], "Qu": [[1.0]] } ],
//!   "QxN": [[1.0]], "x0": [1.0] }
//! ```
//!
//! Matrices are row-major nested arrays. An `n×0` matrix is written as `n`
//! empty rows and a `0×0` matrix as `[]`. Numbers use the shortest
//! representation that parses back to the identical `f64`.

use serde::{Deserialize, Serialize};

use super::{MpcProblem, StageData};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
struct StageDoc {
    #[serde(rename = "A")]
    a: Option<Rows>,
    #[serde(rename = "B")]
    b: Option<Rows>,
    #[serde(rename = "Qx")]
    qx: Option<Rows>,
    #[serde(rename = "Qxu")]
    qxu: Option<Rows>,
    #[serde(rename = "Qu")]
    qu: Option<Rows>,
}

#[derive(Serialize, Deserialize)]
struct ProblemDoc {
    nx: Option<usize>,
    #[serde(rename = "N")]
    horizon: Option<usize>,
    stages: Option<Vec<StageDoc>>,
    #[serde(rename = "QxN")]
    qxn: Option<Rows>,
    x0: Option<Vec<f64>>,
}

fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::Schema(field.to_string()))
}

fn to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: Rows, stage: Option<usize>, name: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::dims(
            stage,
            format!("{name} has rows of unequal length"),
        ));
    }
    Ok(Mat::from_row_iterator(r, c, rows.into_iter().flatten()))
}

pub fn parse_problem(text: &str) -> Result<MpcProblem> {
    let doc: ProblemDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let nx = required(doc.nx, "nx")?;
    let horizon = required(doc.horizon, "N")?;
    let stage_docs = required(doc.stages, "stages")?;
    let qxn = from_rows(required(doc.qxn, "QxN")?, None, "QxN")?;
    let x0 = Vector::from_vec(required(doc.x0, "x0")?);

    if stage_docs.len() != horizon {
        return Err(Error::dims(
            None,
            format!("N = {horizon} but {} stages given", stage_docs.len()),
        ));
    }
    if x0.len() != nx {
        return Err(Error::dims(
            None,
            format!("nx = {nx} but x0 has length {}", x0.len()),
        ));
    }

    let mut stages = Vec::with_capacity(horizon);
    for (t, s) in stage_docs.into_iter().enumerate() {
        let field = |v: Option<Rows>, name: &str| -> Result<Mat> {
            let rows = v.ok_or_else(|| Error::Schema(format!("stages[{t}].{name}")))?;
            from_rows(rows, Some(t), name)
        };
        stages.push(StageData {
            a: field(s.a, "A")?,
            b: field(s.b, "B")?,
            qx: field(s.qx, "Qx")?,
            qxu: field(s.qxu, "Qxu")?,
            qu: field(s.qu, "Qu")?,
        });
    }
    MpcProblem::new(stages, qxn, x0)
}

pub fn serialize_problem(p: &MpcProblem) -> String {
    let doc = ProblemDoc {
        nx: Some(p.nx()),
        horizon: Some(p.horizon()),
        stages: Some(
            p.stages
                .iter()
                .map(|s| StageDoc {
                    a: Some(to_rows(&s.a)),
                    b: Some(to_rows(&s.b)),
                    qx: Some(to_rows(&s.qx)),
                    qxu: Some(to_rows(&s.qxu)),
                    qu: Some(to_rows(&s.qu)),
                })
                .collect(),
        ),
        qxn: Some(to_rows(&p.qxn)),
        x0: Some(p.x0.iter().copied().collect()),
    };
    serde_json::to_string_pretty(&doc).expect("problem documents always serialize")
}
