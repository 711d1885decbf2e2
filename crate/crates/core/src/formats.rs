//! On-disk formats: weight files (float and quantized), calibration
//! reports, scenarios and trajectory CSV.
//!
//! All structured documents are JSON with a `schema_version` field. Floats
//! are written in shortest round-trip form, so every document reloads
//! bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::QuadrotorState;
use crate::fixedpoint::{OverflowMode, QFormat};
use crate::network::{Activation, DeepsetsPolicy, Layer, Mlp, HEAD, NEIGHBOR_MLP, SELF_ENCODER};
use crate::quantizer::{CalibrationReport, QuantizedLayer, QuantizedMlp, QuantizedPolicy};
use crate::simharness::{LogRecord, Scenario};

pub const WEIGHTS_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("{mlp} layer {layer}: {reason}")]
    Shape {
        mlp: &'static str,
        layer: usize,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {reason}")]
    CsvRow { row: usize, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpSet<L> {
    self_encoder: MlpDoc<L>,
    neighbor_mlp: MlpDoc<L>,
    head: MlpDoc<L>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDoc<L> {
    layers: Vec<L>,
}

/// Row-major weight matrix as a list of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc<T> {
    weights: Vec<Vec<T>>,
    bias: Vec<T>,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    schema_version: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    mlps: MlpSet<LayerDoc<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatDoc {
    frac_bits: u32,
    word_bits: u32,
    accum_bits: u32,
    #[serde(default)]
    overflow: OverflowMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantizedWeightFile {
    schema_version: u32,
    format: FormatDoc,
    mlps: MlpSet<LayerDoc<i64>>,
}

fn check_version(found: u32, expected: u32) -> Result<(), FormatError> {
    if found != expected {
        return Err(FormatError::SchemaVersion { found, expected });
    }
    Ok(())
}

fn flatten<T: Copy>(
    mlp: &'static str,
    layer: usize,
    doc: &LayerDoc<T>,
) -> Result<(usize, usize, Vec<T>), FormatError> {
    let rows = doc.weights.len();
    let cols = doc.weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(FormatError::Shape {
            mlp,
            layer,
            reason: "empty weight matrix".into(),
        });
    }
    if let Some(r) = doc.weights.iter().position(|row| row.len() != cols) {
        return Err(FormatError::Shape {
            mlp,
            layer,
            reason: format!(
                "row {r} has {} entries, expected {cols}",
                doc.weights[r].len()
            ),
        });
    }
    Ok((rows, cols, doc.weights.iter().flatten().copied().collect()))
}

fn mlp_from_doc(name: &'static str, doc: &MlpDoc<LayerDoc<f64>>) -> Result<Mlp, FormatError> {
    let layers = doc
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (rows, cols, weights) = flatten(name, i, l)?;
            Layer::new(rows, cols, weights, l.bias.clone(), l.activation).map_err(|reason| {
                FormatError::Shape {
                    mlp: name,
                    layer: i,
                    reason,
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Mlp::new(layers).map_err(|(layer, reason)| FormatError::Shape {
        mlp: name,
        layer,
        reason,
    })
}

fn mlp_to_doc(mlp: &Mlp) -> MlpDoc<LayerDoc<f64>> {
    MlpDoc {
        layers: mlp
            .layers()
            .iter()
            .map(|l| LayerDoc {
                weights: (0..l.rows()).map(|r| l.row(r).to_vec()).collect(),
                bias: l.bias().to_vec(),
                activation: l.activation(),
            })
            .collect(),
    }
}

/// Serialize a float policy.
pub fn policy_to_json(p: &DeepsetsPolicy, metadata: &BTreeMap<String, String>) -> String {
    let doc = WeightFile {
        schema_version: WEIGHTS_SCHEMA_VERSION,
        metadata: metadata.clone(),
        mlps: MlpSet {
            self_encoder: mlp_to_doc(p.self_encoder()),
            neighbor_mlp: mlp_to_doc(p.neighbor_mlp()),
            head: mlp_to_doc(p.head()),
        },
    };
    serde_json::to_string_pretty(&doc).expect("weight documents always serialize") + "\n"
}

pub fn policy_from_json(text: &str) -> Result<DeepsetsPolicy, FormatError> {
    let doc: WeightFile = serde_json::from_str(text)?;
    check_version(doc.schema_version, WEIGHTS_SCHEMA_VERSION)?;
    let policy = DeepsetsPolicy::new(
        mlp_from_doc(SELF_ENCODER, &doc.mlps.self_encoder)?,
        mlp_from_doc(NEIGHBOR_MLP, &doc.mlps.neighbor_mlp)?,
        mlp_from_doc(HEAD, &doc.mlps.head)?,
    )
    .map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(policy)
}

pub fn quantized_to_json(qp: &QuantizedPolicy) -> String {
    let f = qp.format();
    let layer_docs = |mlp: &QuantizedMlp| MlpDoc {
        layers: mlp
            .layers()
            .iter()
            .map(|l| LayerDoc {
                weights: l.weights().chunks(l.cols()).map(<[i64]>::to_vec).collect(),
                bias: l.bias().to_vec(),
                activation: l.activation(),
            })
            .collect(),
    };
    let [(_, se), (_, nb), (_, hd)] = qp.mlps();
    let doc = QuantizedWeightFile {
        schema_version: WEIGHTS_SCHEMA_VERSION,
        format: FormatDoc {
            frac_bits: f.frac_bits(),
            word_bits: f.word_bits(),
            accum_bits: f.accum_bits(),
            overflow: f.overflow(),
        },
        mlps: MlpSet {
            self_encoder: layer_docs(se),
            neighbor_mlp: layer_docs(nb),
            head: layer_docs(hd),
        },
    };
    serde_json::to_string_pretty(&doc).expect("weight documents always serialize") + "\n"
}

pub fn quantized_from_json(text: &str) -> Result<QuantizedPolicy, FormatError> {
    let doc: QuantizedWeightFile = serde_json::from_str(text)?;
    check_version(doc.schema_version, WEIGHTS_SCHEMA_VERSION)?;
    let f = doc.format;
    let format = QFormat::with_widths(f.frac_bits, f.word_bits, f.accum_bits)
        .map_err(|e| FormatError::Invalid(e.to_string()))?
        .with_overflow(f.overflow);
    let build = |name: &'static str,
                 mlp: &MlpDoc<LayerDoc<i64>>|
     -> Result<QuantizedMlp, FormatError> {
        let layers = mlp
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (rows, cols, weights) = flatten(name, i, l)?;
                QuantizedLayer::from_raw(rows, cols, weights, l.bias.clone(), l.activation, &format)
                    .map_err(|reason| FormatError::Shape {
                        mlp: name,
                        layer: i,
                        reason,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        QuantizedMlp::new(layers).map_err(|(layer, reason)| FormatError::Shape {
            mlp: name,
            layer,
            reason,
        })
    };
    QuantizedPolicy::from_parts(
        build(SELF_ENCODER, &doc.mlps.self_encoder)?,
        build(NEIGHBOR_MLP, &doc.mlps.neighbor_mlp)?,
        build(HEAD, &doc.mlps.head)?,
        format,
    )
    .map_err(|e| FormatError::Invalid(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportRow {
    n: u32,
    /// `null` when the sweep overflowed at this `n`.
    max_abs_error: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportDoc {
    schema_version: u32,
    seed: u64,
    sample_count: usize,
    word_bits: u32,
    accum_bits: u32,
    selected_n: u32,
    selected_max_abs_error: f64,
    per_n: Vec<ReportRow>,
}

pub fn report_to_json(report: &CalibrationReport) -> String {
    let doc = ReportDoc {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: report.seed,
        sample_count: report.sample_count,
        word_bits: report.word_bits,
        accum_bits: report.accum_bits,
        selected_n: report.selected_n,
        selected_max_abs_error: report.selected_error(),
        per_n: report
            .per_n
            .iter()
            .map(|(&n, &e)| ReportRow {
                n,
                max_abs_error: e.is_finite().then_some(e),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("reports always serialize") + "\n"
}

pub fn report_from_json(text: &str) -> Result<CalibrationReport, FormatError> {
    let doc: ReportDoc = serde_json::from_str(text)?;
    check_version(doc.schema_version, REPORT_SCHEMA_VERSION)?;
    let per_n: BTreeMap<u32, f64> = doc
        .per_n
        .iter()
        .map(|r| (r.n, r.max_abs_error.unwrap_or(f64::INFINITY)))
        .collect();
    if !per_n.contains_key(&doc.selected_n) {
        return Err(FormatError::Invalid(format!(
            "selected n={} missing from the table",
            doc.selected_n
        )));
    }
    Ok(CalibrationReport {
        per_n,
        selected_n: doc.selected_n,
        sample_count: doc.sample_count,
        seed: doc.seed,
        word_bits: doc.word_bits,
        accum_bits: doc.accum_bits,
    })
}

pub fn scenario_from_json(text: &str) -> Result<Scenario, FormatError> {
    let scn: Scenario = serde_json::from_str(text)?;
    scn.validate()
        .map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(scn)
}

pub fn scenario_to_json(scn: &Scenario) -> String {
    serde_json::to_string_pretty(scn).expect("scenarios always serialize") + "\n"
}

pub const CSV_HEADER: [&str; 30] = [
    "t", "x", "y", "z", "vx", "vy", "vz", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32",
    "r33", "wx", "wy", "wz", "spx", "spy", "spz", "a1", "a2", "a3", "a4", "f1", "f2", "f3", "f4",
];

fn record_fields(r: &LogRecord) -> [f64; 30] {
    let s = &r.state;
    let mut out = [0.0; 30];
    out[0] = r.t;
    out[1..4].copy_from_slice(s.position.as_slice());
    out[4..7].copy_from_slice(s.velocity.as_slice());
    for row in 0..3 {
        for col in 0..3 {
            out[7 + 3 * row + col] = s.rotation[(row, col)];
        }
    }
    out[16..19].copy_from_slice(s.angular_velocity.as_slice());
    out[19..22].copy_from_slice(r.setpoint.as_slice());
    out[22..26].copy_from_slice(&r.action);
    out[26..30].copy_from_slice(&r.motor);
    out
}

fn record_from_fields(f: &[f64; 30]) -> LogRecord {
    let v3 = |i: usize| Vector3::new(f[i], f[i + 1], f[i + 2]);
    LogRecord {
        t: f[0],
        state: QuadrotorState {
            position: v3(1),
            velocity: v3(4),
            rotation: Matrix3::from_row_slice(&f[7..16]),
            angular_velocity: v3(16),
        },
        setpoint: v3(19),
        action: [f[22], f[23], f[24], f[25]],
        motor: [f[26], f[27], f[28], f[29]],
    }
}

/// One header row plus one row per record; `{}` formatting of `f64` is the
/// shortest string that parses back to the same bits.
pub fn write_trajectory_csv<W: Write>(records: &[LogRecord], out: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(record_fields(r).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn trajectory_csv_string(records: &[LogRecord]) -> String {
    let mut buf = Vec::new();
    write_trajectory_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is ascii")
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<LogRecord>, FormatError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(FormatError::CsvRow {
            row: 0,
            reason: "unexpected header".into(),
        });
    }
    rdr.records()
        .enumerate()
        .map(|(i, row)| {
            let row = row?;
            if row.len() != CSV_HEADER.len() {
                return Err(FormatError::CsvRow {
                    row: i + 1,
                    reason: format!("{} columns", row.len()),
                });
            }
            let mut f = [0.0; 30];
            for (slot, field) in f.iter_mut().zip(row.iter()) {
                *slot = field.parse().map_err(|_| FormatError::CsvRow {
                    row: i + 1,
                    reason: format!("bad number {field:?}"),
                })?;
            }
            Ok(record_from_fields(&f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::QFormat;
    use crate::quantizer::quantize_policy;

    #[test]
    fn policy_round_trip() {
        let p = DeepsetsPolicy::random(11);
        let meta = BTreeMap::from([("source".to_string(), "random seed 11".to_string())]);
        let text = policy_to_json(&p, &meta);
        assert_eq!(policy_from_json(&text).unwrap(), p);
        assert_eq!(
            policy_to_json(&policy_from_json(&text).unwrap(), &meta),
            text
        );
    }

    #[test]
    fn shape_error_names_layer() {
        let p = DeepsetsPolicy::random(1);
        let text = policy_to_json(&p, &BTreeMap::new());
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        // Drop one input column from the head's second layer.
        let rows = doc["mlps"]["head"]["layers"][1]["weights"]
            .as_array_mut()
            .unwrap();
        for row in rows {
            row.as_array_mut().unwrap().pop();
        }
        let err = policy_from_json(&doc.to_string()).unwrap_err();
        match err {
            FormatError::Shape { mlp, layer, .. } => {
                assert_eq!(mlp, HEAD);
                assert_eq!(layer, 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_mlp_rejected() {
        let text = policy_to_json(&DeepsetsPolicy::random(1), &BTreeMap::new())
            .replace("\"head\"", "\"decoder\"");
        assert!(matches!(policy_from_json(&text), Err(FormatError::Json(_))));
    }

    #[test]
    fn quantized_round_trip() {
        let qp = quantize_policy(&DeepsetsPolicy::random(2), QFormat::new(10).unwrap()).unwrap();
        let text = quantized_to_json(&qp);
        assert_eq!(quantized_from_json(&text).unwrap(), qp);
    }

    #[test]
    fn quantized_rejects_out_of_word() {
        let qp = quantize_policy(&DeepsetsPolicy::random(2), QFormat::new(10).unwrap()).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&quantized_to_json(&qp)).unwrap();
        doc["mlps"]["self_encoder"]["layers"][0]["bias"][0] = serde_json::json!(1i64 << 40);
        assert!(quantized_from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn report_round_trip_with_overflow() {
        let report = CalibrationReport {
            per_n: BTreeMap::from([(1, 0.5), (2, 0.125), (3, f64::INFINITY)]),
            selected_n: 2,
            sample_count: 10,
            seed: 4,
            word_bits: 32,
            accum_bits: 64,
        };
        let text = report_to_json(&report);
        assert!(text.contains("null"));
        assert_eq!(report_from_json(&text).unwrap(), report);
    }

    #[test]
    fn csv_header_and_special_values() {
        let rec = LogRecord {
            t: 0.01,
            state: QuadrotorState::at_rest(Vector3::new(-0.0, 1e-300, 0.1 + 0.2)),
            setpoint: Vector3::new(1.0 / 3.0, 2.0, f64::MIN_POSITIVE),
            action: [1.0, -1.0, 0.5, 123456789.123],
            motor: [1.0, 0.0, 0.75, 1.0],
        };
        let text = trajectory_csv_string(&[rec]);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 30);
        let back = read_trajectory_csv(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(
            record_fields(&back[0]).map(f64::to_bits),
            record_fields(&rec).map(f64::to_bits)
        );
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(read_trajectory_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
