//! NPY v1.0 reading and writing, restricted to little-endian float32 and
//! uint8, presented row-major regardless of the on-disk order flag.

use std::fs;
use std::io::Write;
use std::path::Path;

use cbe_core::Mat;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, thiserror::Error)]
pub enum NpyError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?} (expected '<f4' or '|u1')")]
    UnsupportedDtype(String),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("payload has {got} bytes, header shape implies {expected}")]
    PayloadSize { expected: usize, got: usize },
}

/// Row-major element buffer of one of the two supported dtypes.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

/// A dense array with explicit shape, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl DenseArray {
    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        DenseArray {
            shape,
            data: ArrayData::F32(data),
        }
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        DenseArray {
            shape,
            data: ArrayData::U8(data),
        }
    }

    /// View a 2-D array as an f64 matrix.
    pub fn to_mat(&self) -> Result<Mat, NpyError> {
        if self.shape.len() != 2 {
            return Err(NpyError::MalformedHeader(format!(
                "expected a 2-D array, got shape {:?}",
                self.shape
            )));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let data: Vec<f64> = match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Ok(Mat::from_vec(rows, cols, data))
    }

    /// An f32 on-disk image of an f64 matrix.
    pub fn from_mat(m: &Mat) -> Self {
        DenseArray::from_f32(
            vec![m.rows(), m.cols()],
            m.data().iter().map(|&v| v as f32).collect(),
        )
    }
}

fn io_err(path: &Path, source: std::io::Error) -> NpyError {
    NpyError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Extract the value of one key from the header dict literal.
fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str, NpyError> {
    let tag = format!("'{key}':");
    let start = header
        .find(&tag)
        .ok_or_else(|| NpyError::MalformedHeader(format!("missing key {key}")))?
        + tag.len();
    let rest = header[start..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')
            .ok_or_else(|| NpyError::MalformedHeader("unclosed shape tuple".into()))?
            + 1
    } else {
        rest.find(',')
            .or_else(|| rest.find('}'))
            .ok_or_else(|| NpyError::MalformedHeader(format!("unterminated value for {key}")))?
    };
    Ok(rest[..end].trim())
}

fn parse_shape(text: &str) -> Result<Vec<usize>, NpyError> {
    let inner = text
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| NpyError::MalformedHeader(format!("bad shape {text:?}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| NpyError::MalformedHeader(format!("bad shape entry {s:?}")))
        })
        .collect()
}

/// Reorder a column-major buffer to row-major for an arbitrary shape.
fn fortran_to_c<T: Copy>(data: &[T], shape: &[usize]) -> Vec<T> {
    let n = data.len();
    if shape.len() <= 1 {
        return data.to_vec();
    }
    // C strides of the target layout and F strides of the source.
    let dims = shape.len();
    let mut c_strides = vec![1usize; dims];
    for i in (0..dims - 1).rev() {
        c_strides[i] = c_strides[i + 1] * shape[i + 1];
    }
    let mut f_strides = vec![1usize; dims];
    for i in 1..dims {
        f_strides[i] = f_strides[i - 1] * shape[i - 1];
    }
    let mut out = Vec::with_capacity(n);
    let mut index = vec![0usize; dims];
    for _ in 0..n {
        let src: usize = index.iter().zip(&f_strides).map(|(&i, &s)| i * s).sum();
        out.push(data[src]);
        for d in (0..dims).rev() {
            index[d] += 1;
            if index[d] < shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    out
}

pub fn load_array(path: &Path) -> Result<DenseArray, NpyError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpyError::MalformedHeader("bad magic".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(NpyError::MalformedHeader(format!(
            "unsupported version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = 10 + header_len;
    if bytes.len() < payload_start {
        return Err(NpyError::MalformedHeader("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[10..payload_start])
        .map_err(|_| NpyError::MalformedHeader("non-ascii header".into()))?;

    let descr = header_field(header, "descr")?.trim_matches(['\'', '"']).to_string();
    let fortran = match header_field(header, "fortran_order")? {
        "False" => false,
        "True" => true,
        other => {
            return Err(NpyError::MalformedHeader(format!(
                "bad fortran_order {other:?}"
            )))
        }
    };
    let shape = parse_shape(header_field(header, "shape")?)?;
    let count: usize = shape.iter().product();
    let payload = &bytes[payload_start..];

    let data = match descr.as_str() {
        "<f4" => {
            if payload.len() != count * 4 {
                return Err(NpyError::PayloadSize {
                    expected: count * 4,
                    got: payload.len(),
                });
            }
            let mut values = Vec::with_capacity(count);
            for (i, chunk) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(NpyError::NonFinite(i));
                }
                values.push(v);
            }
            let values = if fortran { fortran_to_c(&values, &shape) } else { values };
            ArrayData::F32(values)
        }
        "|u1" => {
            if payload.len() != count {
                return Err(NpyError::PayloadSize {
                    expected: count,
                    got: payload.len(),
                });
            }
            let values = if fortran {
                fortran_to_c(payload, &shape)
            } else {
                payload.to_vec()
            };
            ArrayData::U8(values)
        }
        other => return Err(NpyError::UnsupportedDtype(other.to_string())),
    };
    Ok(DenseArray { shape, data })
}

pub fn save_array(array: &DenseArray, path: &Path) -> Result<(), NpyError> {
    let descr = match array.data {
        ArrayData::F32(_) => "<f4",
        ArrayData::U8(_) => "|u1",
    };
    let shape = match array.shape.len() {
        1 => format!("({},)", array.shape[0]),
        _ => format!(
            "({})",
            array
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    // Pad so the payload starts on a 64-byte boundary, newline-terminated.
    let unpadded = 10 + header.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    header.extend(std::iter::repeat(' ').take(padding));
    header.push('\n');

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(1);
    out.push(0);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &array.data {
        ArrayData::F32(values) => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        ArrayData::U8(values) => out.extend_from_slice(values),
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&out).map_err(|e| io_err(path, e))?;
    Ok(())
}
