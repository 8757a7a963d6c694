//! CSV interchange for functional grid samples.
//!
//! A sample file holds one row per grid location in row-major order. A
//! leading comment line carries the metadata, e.g.
//!
//! ```text
//! # dims=25,25 basis=fourier k=15
//! coef1,coef2,...,coef15
//! ```
//!
//! Columns named `coef1..coefK` are basis coefficients. Columns named
//! `raw1..rawM` are curve values on the equidistant grid `u_j = j/(M-1)`,
//! projected onto the basis by ridge-regularized least squares.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::basis::{BasisKind, BasisSpec};
use crate::error::{Error, Result};
use crate::field::FunctionalGridSample;
use crate::numcore::{solve_spd, RealMatrix};
use crate::sfpca::{EigenField, SfpcFilterBank};
use crate::spectral::SpectralDensityField;

const PROJECTION_RIDGE: f64 = 1e-10;

/// Metadata from the `# key=value` header block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SidecarHeader {
    pub dims: Option<Vec<usize>>,
    pub basis: Option<BasisKind>,
    pub k: Option<usize>,
}

impl SidecarHeader {
    pub fn line(dims: &[usize], basis: BasisKind, k: usize) -> String {
        format!("# dims={} basis={basis} k={k}", join(dims))
    }

    fn absorb(&mut self, line: &str, row: usize) -> Result<()> {
        let body = line.trim_start_matches('#');
        for token in body.split_whitespace() {
            let Some((key, value)) = token.split_once('=') else {
                continue;
            };
            let bad = |m: String| Error::Parse {
                row,
                column: 0,
                message: m,
            };
            match key {
                "dims" => self.dims = Some(parse_dims(value).map_err(|e| bad(e.to_string()))?),
                "basis" => self.basis = Some(value.parse().map_err(|e: Error| bad(e.to_string()))?),
                "k" => {
                    self.k = Some(
                        value
                            .parse()
                            .map_err(|_| bad(format!("bad basis dimension '{value}'")))?,
                    )
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Parses `25,25` or `25x25`.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims = s
        .split([',', 'x', 'X'])
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad grid dimension '{t}' in '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "grid dimensions must be positive, got '{s}'"
        )));
    }
    Ok(dims)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Overrides for metadata not present in (or conflicting with) the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOptions {
    pub dims: Option<Vec<usize>>,
    pub basis: Option<BasisKind>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnMode {
    Coefficients,
    Raw,
}

fn column_mode(header: &csv::StringRecord, header_row: usize) -> Result<ColumnMode> {
    let mode_of = |name: &str, prefix: &str| {
        name.strip_prefix(prefix)
            .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
    };
    let mode = if header
        .iter()
        .next()
        .is_some_and(|h| mode_of(h.trim(), "coef"))
    {
        ColumnMode::Coefficients
    } else if header
        .iter()
        .next()
        .is_some_and(|h| mode_of(h.trim(), "raw"))
    {
        ColumnMode::Raw
    } else {
        return Err(Error::Parse {
            row: header_row,
            column: 1,
            message: "header must name columns coef1..coefK or raw1..rawM".into(),
        });
    };
    let prefix = if mode == ColumnMode::Coefficients {
        "coef"
    } else {
        "raw"
    };
    for (j, name) in header.iter().enumerate() {
        if name.trim() != format!("{prefix}{}", j + 1) {
            return Err(Error::Parse {
                row: header_row,
                column: j + 1,
                message: format!(
                    "expected column '{prefix}{}', found '{}'",
                    j + 1,
                    name.trim()
                ),
            });
        }
    }
    Ok(mode)
}

/// Parses sample CSV text. Data rows are numbered from 1.
pub fn parse_sample_csv(text: &str, opts: &IngestOptions) -> Result<FunctionalGridSample> {
    let mut meta = SidecarHeader::default();
    for line in text.lines().map(str::trim).filter(|t| !t.is_empty()) {
        if !line.starts_with('#') {
            break;
        }
        meta.absorb(line, 0)?;
    }

    let dims = match (&opts.dims, &meta.dims) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::InvalidConfig(format!(
                "--dims {} disagrees with the file header dims={}",
                join(a),
                join(b)
            )))
        }
        (Some(a), _) => a.clone(),
        (None, Some(b)) => b.clone(),
        (None, None) => {
            return Err(Error::InvalidConfig(
                "grid dimensions unknown: pass --dims or add a '# dims=...' header".into(),
            ))
        }
    };
    let basis_kind = opts.basis.or(meta.basis).unwrap_or(BasisKind::Fourier);
    let n: usize = dims.iter().product();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?
        .clone();
    let mode = column_mode(&header, 0)?;
    let width = header.len();

    let k = match mode {
        ColumnMode::Coefficients => {
            if let Some(k) = opts.k.or(meta.k) {
                if k != width {
                    return Err(Error::Parse {
                        row: 0,
                        column: width,
                        message: format!("expected {k} coefficient columns, found {width}"),
                    });
                }
            }
            width
        }
        ColumnMode::Raw => opts.k.or(meta.k).ok_or_else(|| {
            Error::InvalidConfig(
                "raw curves need the basis dimension: pass --k or add 'k=' to the header".into(),
            )
        })?,
    };
    let basis = BasisSpec::new(basis_kind, k)?;
    if mode == ColumnMode::Raw && width < k {
        return Err(Error::Parse {
            row: 0,
            column: width,
            message: format!("{width} raw evaluation points cannot determine {k} coefficients"),
        });
    }

    let mut values = Vec::with_capacity(n * width);
    let mut rows = 0;
    for record in reader.records() {
        let row = rows + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rows == n {
            return Err(Error::Parse {
                row,
                column: 0,
                message: format!(
                    "more rows than the {n} grid locations of dims {}",
                    join(&dims)
                ),
            });
        }
        if record.len() != width {
            return Err(Error::Parse {
                row,
                column: record.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("non-finite value '{field}'"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            row: rows + 1,
            column: 0,
            message: format!("found {rows} rows, dims {} need {n}", join(&dims)),
        });
    }

    let coeffs = match mode {
        ColumnMode::Coefficients => RealMatrix::from_row_major(n, k, values)?,
        ColumnMode::Raw => project_raw(&RealMatrix::from_row_major(n, width, values)?, &basis)?,
    };
    FunctionalGridSample::new(&dims, coeffs, basis)
}

/// Least-squares coefficients of curves sampled at `u_j = j/(M-1)`.
pub fn project_raw(raw: &RealMatrix, basis: &BasisSpec) -> Result<RealMatrix> {
    let m = raw.cols();
    let k = basis.dimension();
    let points: Vec<f64> = if m == 1 {
        vec![0.0]
    } else {
        (0..m).map(|j| j as f64 / (m - 1) as f64).collect()
    };
    let design = basis.design_matrix(&points);
    let dt = design.transpose();
    let mut normal = dt.matmul(&design)?;
    for i in 0..k {
        normal.as_mut_slice()[i * k + i] += PROJECTION_RIDGE;
    }
    let mut out = Vec::with_capacity(raw.rows() * k);
    for r in 0..raw.rows() {
        let rhs = dt.matvec(raw.row(r));
        out.extend(solve_spd(&normal, &rhs)?);
    }
    RealMatrix::from_row_major(raw.rows(), k, out)
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<FunctionalGridSample> {
    let text = fs::read_to_string(path)?;
    parse_sample_csv(&text, opts)
}

/// Coefficient-mode CSV; values are written in shortest round-trip form so
/// ingesting the output reproduces the sample exactly.
pub fn sample_to_csv(sample: &FunctionalGridSample) -> String {
    let k = sample.basis_dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=k).map(|j| format!("coef{j}")).collect();
    w.write_record(&header).expect("writing to memory");
    for s in 0..sample.len() {
        w.write_record(sample.curve(s).iter().map(|v| v.to_string()))
            .expect("writing to memory");
    }
    let body = String::from_utf8(w.into_inner().expect("flushing memory")).expect("ascii output");
    format!(
        "{}\n{body}",
        SidecarHeader::line(sample.dims(), sample.basis().kind(), k)
    )
}

pub fn write_sample_csv(path: &Path, sample: &FunctionalGridSample) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(sample_to_csv(sample).as_bytes())?;
    Ok(())
}

/// One row per frequency node: the node, the trace of the estimate and all
/// eigenvalues.
pub fn spectrum_to_csv(spec: &SpectralDensityField, eig: &EigenField) -> String {
    let d = spec.grid.ndim();
    let k = spec.basis_dim();
    let mut out = format!(
        "# grid_t={} q={}\n",
        spec.grid.points_per_dim(),
        join(&spec.q)
    );
    let mut header: Vec<String> = (1..=d).map(|i| format!("theta{i}")).collect();
    header.push("trace".into());
    header.extend((1..=k).map(|m| format!("lambda{m}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for (node, m) in spec.matrices.iter().enumerate() {
        let mut row: Vec<String> = spec.grid.node(node).iter().map(|t| t.to_string()).collect();
        row.push(m.trace().to_string());
        row.extend(eig.eigenvalues[node].iter().map(|v| v.to_string()));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One row per (level, lag) with the lag, the squared norm of the filter
/// and its coefficients.
pub fn filters_to_csv(bank: &SfpcFilterBank) -> String {
    let d = bank.ndim();
    let k = bank.basis_dim();
    let mut out = format!(
        "# levels={} max_lag={} captured_weight={}\n",
        bank.levels(),
        bank.max_lag(),
        join(&bank.captured_weight)
    );
    let mut header = vec!["level".to_string()];
    header.extend((1..=d).map(|i| format!("lag{i}")));
    header.push("norm2".into());
    header.extend((1..=k).map(|j| format!("coef{j}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for m in 0..bank.levels() {
        for (j, lag) in bank.lags().iter().enumerate() {
            let phi = bank.filter_at(m, j);
            let mut row = vec![(m + 1).to_string()];
            row.extend(lag.iter().map(|h| h.to_string()));
            row.push(phi.iter().map(|v| v * v).sum::<f64>().to_string());
            row.extend(phi.iter().map(|v| v.to_string()));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(dims: &[usize]) -> IngestOptions {
        IngestOptions {
            dims: Some(dims.to_vec()),
            ..Default::default()
        }
    }

    #[test]
    fn coefficient_passthrough() {
        let text = "coef1,coef2\n1,2\n3,4\n5,6\n7,8.5\n";
        let x = parse_sample_csv(text, &opts(&[2, 2])).unwrap();
        assert_eq!(x.dims(), &[2, 2]);
        assert_eq!(
            x.coeffs().as_slice(),
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.5]
        );
    }

    #[test]
    fn header_supplies_metadata() {
        let text = "# dims=1,3 basis=fourier k=2\ncoef1,coef2\n1,2\n3,4\n5,6\n";
        let x = parse_sample_csv(text, &IngestOptions::default()).unwrap();
        assert_eq!(x.dims(), &[1, 3]);
        let clash = parse_sample_csv(text, &opts(&[3, 1]));
        assert!(matches!(clash, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn extra_row_is_named() {
        let text = "coef1,coef2\n1,2\n3,4\n5,6\n7,8\n9,10\n";
        match parse_sample_csv(text, &opts(&[2, 2])) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_rows_and_bad_cells() {
        let short = parse_sample_csv("coef1\n1\n2\n3\n", &opts(&[2, 2]));
        assert!(matches!(short, Err(Error::Parse { row: 4, .. })));
        let nan = parse_sample_csv("coef1,coef2\n1,2\n3,NaN\n", &opts(&[2, 1]));
        assert!(matches!(
            nan,
            Err(Error::Parse {
                row: 2,
                column: 2,
                ..
            })
        ));
        let text = parse_sample_csv("coef1,coef2\n1,x\n3,4\n", &opts(&[2, 1]));
        assert!(matches!(
            text,
            Err(Error::Parse {
                row: 1,
                column: 2,
                ..
            })
        ));
        let ragged = parse_sample_csv("coef1,coef2\n1,2\n3\n", &opts(&[2, 1]));
        assert!(matches!(ragged, Err(Error::Parse { row: 2, .. })));
        let mixed = parse_sample_csv("coef1,raw2\n1,2\n", &opts(&[1, 1]));
        assert!(matches!(
            mixed,
            Err(Error::Parse {
                row: 0,
                column: 2,
                ..
            })
        ));
        let k_clash = IngestOptions {
            k: Some(3),
            ..opts(&[1, 1])
        };
        assert!(matches!(
            parse_sample_csv("coef1,coef2\n1,2\n", &k_clash),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn raw_basis_curves_project_to_unit_vectors() {
        for kind in [BasisKind::Fourier, BasisKind::Bspline] {
            let k = 5;
            let basis = BasisSpec::new(kind, k).unwrap();
            let m = 101;
            let u: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
            let design = basis.design_matrix(&u);
            let mut text = format!("# dims={k},1 basis={kind} k={k}\n");
            text.push_str(
                &(1..=m)
                    .map(|j| format!("raw{j}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
            text.push('\n');
            for i in 0..k {
                let row: Vec<String> = (0..m).map(|j| design[(j, i)].to_string()).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            let x = parse_sample_csv(&text, &IngestOptions::default()).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (x.curve(i)[j] - want).abs() < 1e-8,
                        "{kind} {i} {j}: {}",
                        x.curve(i)[j]
                    );
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let coeffs: Vec<f64> = (0..24)
            .map(|i| (i as f64 * 0.7).sin() / 3.0 + 1e-17 * i as f64)
            .collect();
        let x = FunctionalGridSample::new(
            &[2, 4],
            RealMatrix::from_row_major(8, 3, coeffs).unwrap(),
            BasisSpec::fourier(3).unwrap(),
        )
        .unwrap();
        let back = parse_sample_csv(&sample_to_csv(&x), &IngestOptions::default()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("25,25").unwrap(), vec![25, 25]);
        assert_eq!(parse_dims("12x8").unwrap(), vec![12, 8]);
        assert!(parse_dims("0,3").is_err());
        assert!(parse_dims("a").is_err());
    }
}
