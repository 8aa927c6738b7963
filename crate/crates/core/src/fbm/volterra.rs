use ndarray::{s, Array2, ArrayView1};

use super::{FbmPath, HurstParam, TimeGrid};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, DiscreteOperator};
use crate::quadrature::QuadratureConfig;
use crate::rng::{Lane, SeedStream};
use crate::scalar::Real;

// Row-block size for the lower-triangular products.
const ROW_BLOCK: usize = 256;

/// Several fBm paths built from one Brownian increment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledFamily<T> {
    pub grid: TimeGrid<T>,
    pub brownian_increments: Vec<T>,
    pub members: Vec<FbmPath<T>>,
}

impl<T: Real> CoupledFamily<T> {
    pub fn member(&self, hurst: HurstParam<T>) -> Option<&FbmPath<T>> {
        self.members.iter().find(|m| m.hurst == hurst)
    }

    pub fn hurst_values(&self) -> Vec<HurstParam<T>> {
        self.members.iter().map(|m| m.hurst).collect()
    }
}

/// Volterra sample from given Brownian increments, building the operator.
pub fn volterra_sample<T: Real>(hurst: HurstParam<T>, grid: TimeGrid<T>, brownian_increments: &[T]) -> Result<FbmPath<T>> {
    if brownian_increments.len() != grid.n_steps() {
        return Err(Error::LengthMismatch {
            expected: grid.n_steps(),
            got: brownian_increments.len(),
        });
    }
    if hurst.is_brownian() {
        return FbmPath::from_increments(grid, hurst, brownian_increments);
    }
    let op = kernel_matrix(hurst, grid, &QuadratureConfig::default())?;
    volterra_apply(&op, brownian_increments)
}

/// Volterra sample with a precomputed operator. At `H = ½` the increments are
/// cumulated directly so the member coincides bit for bit with the driver.
pub fn volterra_apply<T: Real>(op: &DiscreteOperator<T>, brownian_increments: &[T]) -> Result<FbmPath<T>> {
    if op.hurst.is_brownian() {
        return FbmPath::from_increments(op.grid, op.hurst, brownian_increments);
    }
    let values = op.apply(ArrayView1::from(brownian_increments))?;
    Ok(FbmPath {
        grid: op.grid,
        hurst: op.hurst,
        values,
    })
}

/// Scaled Brownian increments `√Δ·Z` for one path.
pub fn brownian_increments<T: Real>(grid: &TimeGrid<T>, stream: &SeedStream) -> Vec<T> {
    let sd = grid.step().sqrt();
    stream.normals::<T>(Lane::Driver, grid.n_steps()).into_iter().map(|z| z * sd).collect()
}

/// Coupled family for one path; builds every operator on each call.
pub fn coupled_family<T: Real>(h_list: &[HurstParam<T>], grid: TimeGrid<T>, stream: &SeedStream) -> Result<CoupledFamily<T>> {
    let sampler = CoupledSampler::new(h_list, grid, &QuadratureConfig::default())?;
    Ok(sampler.family(stream))
}

/// Coupled family from precomputed operators (all on the same grid).
pub fn coupled_family_with<T: Real>(ops: &[DiscreteOperator<T>], stream: &SeedStream) -> Result<CoupledFamily<T>> {
    let first = ops.first().ok_or(Error::Empty("Hurst list"))?;
    let grid = first.grid;
    if ops.iter().any(|o| o.grid != grid) {
        return Err(Error::InvalidGrid("operators on different grids".into()));
    }
    let dbm = brownian_increments(&grid, stream);
    let members = ops.iter().map(|op| volterra_apply(op, &dbm)).collect::<Result<Vec<_>>>()?;
    Ok(CoupledFamily {
        grid,
        brownian_increments: dbm,
        members,
    })
}

/// Cached Volterra operators for a list of Hurst values, with a batched
/// driver that turns many paths into one matrix product per member.
#[derive(Debug, Clone)]
pub struct CoupledSampler<T> {
    grid: TimeGrid<T>,
    ops: Vec<DiscreteOperator<T>>,
}

/// A batch of coupled paths, one row per path: Brownian increments are
/// `count × n_steps`, member node values `count × (n_steps + 1)`.
#[derive(Debug, Clone)]
pub struct CoupledBatch<T> {
    pub first_path: u64,
    pub brownian: Array2<T>,
    pub members: Vec<(HurstParam<T>, Array2<T>)>,
}

impl<T: Real> CoupledBatch<T> {
    pub fn len(&self) -> usize {
        self.brownian.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn member(&self, hurst: HurstParam<T>) -> Option<&Array2<T>> {
        self.members.iter().find(|(h, _)| *h == hurst).map(|(_, v)| v)
    }

    /// Node values of path `c` (relative to `first_path`) for member `i`.
    pub fn path(&self, i: usize, c: usize) -> &[T] {
        self.members[i].1.row(c).to_slice().expect("rows are contiguous")
    }
}

impl<T: Real> CoupledSampler<T> {
    pub fn new(h_list: &[HurstParam<T>], grid: TimeGrid<T>, q: &QuadratureConfig) -> Result<Self> {
        if h_list.is_empty() {
            return Err(Error::Empty("Hurst list"));
        }
        let ops = h_list.iter().map(|&h| kernel_matrix(h, grid, q)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, ops })
    }

    pub fn from_operators(ops: Vec<DiscreteOperator<T>>) -> Result<Self> {
        let grid = ops.first().ok_or(Error::Empty("Hurst list"))?.grid;
        if ops.iter().any(|o| o.grid != grid) {
            return Err(Error::InvalidGrid("operators on different grids".into()));
        }
        Ok(Self { grid, ops })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn operators(&self) -> &[DiscreteOperator<T>] {
        &self.ops
    }

    pub fn hurst_values(&self) -> Vec<HurstParam<T>> {
        self.ops.iter().map(|o| o.hurst).collect()
    }

    pub fn family(&self, stream: &SeedStream) -> CoupledFamily<T> {
        coupled_family_with(&self.ops, stream).expect("operators share one grid")
    }

    /// Paths `first_path .. first_path + count` under `master_seed`.
    pub fn batch(&self, master_seed: u64, first_path: u64, count: usize) -> CoupledBatch<T> {
        let n = self.grid.n_steps();
        let mut z = Array2::<T>::zeros((count, n));
        for c in 0..count {
            let inc = brownian_increments(&self.grid, &SeedStream::new(master_seed, first_path + c as u64));
            z.row_mut(c).assign(&ArrayView1::from(&inc[..]));
        }
        let members = self
            .ops
            .iter()
            .map(|op| {
                let mut out = Array2::<T>::zeros((count, n + 1));
                if op.hurst.is_brownian() {
                    for c in 0..count {
                        let mut acc = T::zero();
                        for k in 0..n {
                            acc = acc + z[[c, k]];
                            out[[c, k + 1]] = acc;
                        }
                    }
                } else {
                    // Only columns below the diagonal block contribute.
                    for r0 in (0..n).step_by(ROW_BLOCK) {
                        let r1 = (r0 + ROW_BLOCK).min(n);
                        let block = z.slice(s![.., 0..r1]).dot(&op.matrix.slice(s![r0..r1, 0..r1]).t());
                        out.slice_mut(s![.., r0 + 1..r1 + 1]).assign(&block);
                    }
                }
                (op.hurst, out)
            })
            .collect();
        CoupledBatch { first_path, brownian: z, members }
    }
}
