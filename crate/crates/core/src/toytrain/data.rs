use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::Activation;
use crate::linalg::Matrix;
use crate::rng::Stream;
use crate::Scalar;

/// Hidden width of the random teacher behind `regression_teacher`.
pub const TEACHER_HIDDEN: usize = 32;
/// Standard deviation of blob centres around the origin.
pub const BLOB_SPREAD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RegressionTeacher,
    ClassificationBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub input_dim: usize,
    /// Regression targets per sample, or number of classes.
    pub output_dim: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    /// Label noise std (regression) or cluster std (blobs).
    #[serde(default)]
    pub noise: f64,
}

/// Inputs `[n, input_dim]` and targets `[n, output_dim]`; classification
/// targets are one-hot rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Matrix<T>,
    pub targets: Matrix<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` gathered into a new dataset.
    pub fn gather(&self, idx: &[usize]) -> Self {
        let pick = |m: &Matrix<T>| {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            for &i in idx {
                data.extend_from_slice(m.row(i));
            }
            Matrix::new(idx.len(), m.cols(), data).unwrap()
        };
        Self {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
        }
    }

    /// Class index of each row, from the argmax of the target.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len())
            .map(|r| {
                let row = self.targets.row(r);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData<T> {
    pub train: Dataset<T>,
    pub eval: Dataset<T>,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("task input_dim and output_dim must be >= 1".into()));
        }
        if self.n_train == 0 {
            return Err(Error::Config("task n_train must be >= 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("task noise must be finite and >= 0, got {}", self.noise)));
        }
        if self.kind == TaskKind::ClassificationBlobs && self.output_dim < 2 {
            return Err(Error::Config("classification_blobs needs output_dim >= 2 classes".into()));
        }
        Ok(())
    }

    /// Same task with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

fn normal_matrix(stream: &mut Stream, rows: usize, cols: usize, std: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| std * stream.normal())
}

/// Draws the task's train and eval sets; a pure function of `spec`.
///
/// `regression_teacher` labels standard-normal inputs with a random one
/// hidden layer tanh network (`N(0, 1/fan_in)` weights) plus Gaussian noise.
/// `classification_blobs` places one centre per class at `N(0, BLOB_SPREAD²
/// I)` and samples points around it with std `noise`; classes cycle through
/// the rows so every class is equally represented.
pub fn make_synthetic_task<T: Scalar>(spec: &SyntheticTask) -> Result<TaskData<T>> {
    spec.validate()?;
    let mut stream = Stream::new(spec.seed);
    let (d, k) = (spec.input_dim, spec.output_dim);
    let (train, eval) = match spec.kind {
        TaskKind::RegressionTeacher => {
            let w1 = normal_matrix(&mut stream, TEACHER_HIDDEN, d, 1.0 / (d as f64).sqrt());
            let w2 = normal_matrix(&mut stream, k, TEACHER_HIDDEN, 1.0 / (TEACHER_HIDDEN as f64).sqrt());
            let mut draw = |n: usize| {
                let x = normal_matrix(&mut stream, n, d, 1.0);
                let h = x.matmul(&w1.transpose()).unwrap().map(|v| Activation::Tanh.apply(v));
                let mut y = h.matmul(&w2.transpose()).unwrap();
                for v in y.as_mut_slice() {
                    *v += spec.noise * stream.normal();
                }
                Dataset {
                    inputs: x.cast(),
                    targets: y.cast(),
                }
            };
            (draw(spec.n_train), draw(spec.n_eval))
        }
        TaskKind::ClassificationBlobs => {
            let centres = normal_matrix(&mut stream, k, d, BLOB_SPREAD);
            let mut draw = |n: usize| {
                let mut x = Matrix::zeros(n, d);
                let mut y = Matrix::zeros(n, k);
                for r in 0..n {
                    let c = r % k;
                    for (v, &mu) in x.row_mut(r).iter_mut().zip(centres.row(c)) {
                        *v = mu + spec.noise * stream.normal();
                    }
                    y.row_mut(r)[c] = 1.0;
                }
                Dataset::<f64> { inputs: x, targets: y }
            };
            let (tr, ev) = (draw(spec.n_train), draw(spec.n_eval));
            (
                Dataset {
                    inputs: tr.inputs.cast(),
                    targets: tr.targets.cast(),
                },
                Dataset {
                    inputs: ev.inputs.cast(),
                    targets: ev.targets.cast(),
                },
            )
        }
    };
    Ok(TaskData { train, eval })
}
