//! Response vector and block-structured design matrix for the functional
//! linear model.
//!
//! Entry `(i, offset_j + k)` of the design is the quadrature inner product
//! `∫ z_ij(s) ψ_k(s) ds`, with `ψ` the basis of the block that owns
//! predictor `j`. For any spline coefficient vector `b`, `Z b` is then the
//! discretized functional linear predictor.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{basis_matrix, diff_penalty, gram_matrix, weighted_basis_matrix, BasisSpec};
use crate::error::{validation, Error, Result};
use crate::linalg::block_diag;
use crate::quadrature::{check_grid, QuadratureRule};

/// Covariate trajectories on a common grid plus a scalar response.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    grid: Vec<f64>,
    n: usize,
    p: usize,
    /// Row-major `n x p x M`.
    values: Vec<f64>,
    response: Vec<f64>,
}

impl FunctionalDataset {
    pub fn new(
        grid: Vec<f64>,
        n: usize,
        p: usize,
        values: Vec<f64>,
        response: Vec<f64>,
    ) -> Result<Self> {
        check_grid(&grid)?;
        let m = grid.len();
        if values.len() != n * p * m {
            return Err(Error::Dimension(format!(
                "expected {n}x{p}x{m} = {} trajectory values, got {}",
                n * p * m,
                values.len()
            )));
        }
        if response.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} responses, got {}",
                response.len()
            )));
        }
        if n == 0 || p == 0 {
            return Err(validation(
                "dataset needs at least one subject and one predictor",
            ));
        }
        if values.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(validation("dataset contains non-finite values"));
        }
        Ok(Self {
            grid,
            n,
            p,
            values,
            response,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn trajectory(&self, i: usize, j: usize) -> &[f64] {
        let m = self.m();
        let start = (i * self.p + j) * m;
        &self.values[start..start + m]
    }

    /// `n x M` matrix of predictor `j` across subjects.
    pub fn predictor_matrix(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m(), |i, l| self.trajectory(i, j)[l])
    }

    /// Dataset with predictors reordered so that new predictor `t` is old
    /// predictor `order[t]`.
    pub fn permute_predictors(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.p {
            return Err(Error::Dimension("permutation length differs from p".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n {
            for &j in order {
                values.extend_from_slice(self.trajectory(i, j));
            }
        }
        Self::new(
            self.grid.clone(),
            self.n,
            self.p,
            values,
            self.response.clone(),
        )
    }

    pub fn scale_trajectories(&self, alpha: f64) -> Result<Self> {
        let values = self.values.iter().map(|v| v * alpha).collect();
        Self::new(
            self.grid.clone(),
            self.n,
            self.p,
            values,
            self.response.clone(),
        )
    }
}

/// A set of predictors sharing one basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGroup {
    pub predictors: Vec<usize>,
    pub spec: BasisSpec,
}

/// Column layout of the design: groups in order, predictors within a group
/// in listed order, `dim` columns per predictor.
///
/// Predictors of the dataset not listed in any group are excluded from the
/// model and their coefficient functions are identically zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockLayout {
    p: usize,
    groups: Vec<BlockGroup>,
    /// Per predictor: (group index, first column).
    slots: Vec<Option<(usize, usize)>>,
    columns: usize,
}

impl BlockLayout {
    pub fn new(p: usize, groups: Vec<BlockGroup>) -> Result<Self> {
        let mut slots = vec![None; p];
        let mut col = 0;
        for (g, group) in groups.iter().enumerate() {
            group.spec.validate()?;
            for &j in &group.predictors {
                if j >= p {
                    return Err(validation(format!(
                        "predictor index {j} out of range for p = {p}"
                    )));
                }
                if slots[j].is_some() {
                    return Err(validation(format!(
                        "predictor {j} assigned to more than one block"
                    )));
                }
                slots[j] = Some((g, col));
                col += group.spec.dim();
            }
        }
        if col == 0 {
            return Err(validation("layout contains no predictors"));
        }
        Ok(Self {
            p,
            groups,
            slots,
            columns: col,
        })
    }

    /// Every predictor in one block with a common basis.
    pub fn uniform(p: usize, spec: BasisSpec) -> Result<Self> {
        Self::new(
            p,
            vec![BlockGroup {
                predictors: (0..p).collect(),
                spec,
            }],
        )
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn groups(&self) -> &[BlockGroup] {
        &self.groups
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    /// Whether the groups cover every predictor.
    pub fn is_partition(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn group_of(&self, j: usize) -> Option<usize> {
        self.slots.get(j).copied().flatten().map(|(g, _)| g)
    }

    pub fn spec_of(&self, j: usize) -> Option<&BasisSpec> {
        self.group_of(j).map(|g| &self.groups[g].spec)
    }

    pub fn columns_of(&self, j: usize) -> Option<Range<usize>> {
        let (g, start) = self.slots.get(j).copied().flatten()?;
        Some(start..start + self.groups[g].spec.dim())
    }

    pub fn group_columns(&self, g: usize) -> Range<usize> {
        let start = self.groups[..g]
            .iter()
            .map(|gr| gr.predictors.len() * gr.spec.dim())
            .sum::<usize>();
        start..start + self.groups[g].predictors.len() * self.groups[g].spec.dim()
    }

    /// Predictors in column order.
    pub fn predictors_in_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups
            .iter()
            .flat_map(|g| g.predictors.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Center the response only (simulation protocol).
    #[default]
    Response,
    /// Center the response and every design column (applied fits with an intercept).
    Full,
}

/// Assembled penalized least-squares problem.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    z: DMatrix<f64>,
    y: DVector<f64>,
    y_mean: f64,
    column_means: Option<DVector<f64>>,
    layout: BlockLayout,
    /// One penalty block per layout group.
    penalty_blocks: Vec<DMatrix<f64>>,
    grid: Vec<f64>,
    quadrature: QuadratureRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub diff_order: usize,
    pub quadrature: QuadratureRule,
    pub centering: Centering,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            diff_order: 2,
            quadrature: QuadratureRule::Trapezoid,
            centering: Centering::Response,
        }
    }
}

pub fn build_design(
    data: &FunctionalDataset,
    layout: &BlockLayout,
    opts: &DesignOptions,
) -> Result<DesignSystem> {
    if layout.p() != data.p() {
        return Err(Error::Dimension(format!(
            "layout describes {} predictors but the dataset has {}",
            layout.p(),
            data.p()
        )));
    }
    let grid = data.grid();
    for g in layout.groups() {
        if !(g.spec.contains(grid[0]) && g.spec.contains(grid[grid.len() - 1])) {
            return Err(validation(format!(
                "observation grid [{}, {}] exceeds the basis domain [{}, {}]",
                grid[0],
                grid[grid.len() - 1],
                g.spec.domain_lo,
                g.spec.domain_hi
            )));
        }
    }
    let mut z = DMatrix::zeros(data.n(), layout.columns());
    for group in layout.groups() {
        let wb = weighted_basis_matrix(grid, &group.spec, opts.quadrature)?;
        for &j in &group.predictors {
            let block = data.predictor_matrix(j) * &wb;
            let cols = layout.columns_of(j).expect("listed predictor has columns");
            z.columns_mut(cols.start, cols.len()).copy_from(&block);
        }
    }
    DesignSystem::from_parts(
        z,
        DVector::from_column_slice(data.response()),
        layout.clone(),
        grid.to_vec(),
        opts,
    )
}

impl DesignSystem {
    /// System from an already assembled design. `y` is the raw response;
    /// it is centered here, as are the design columns under
    /// [`Centering::Full`].
    pub fn from_parts(
        mut z: DMatrix<f64>,
        y: DVector<f64>,
        layout: BlockLayout,
        grid: Vec<f64>,
        opts: &DesignOptions,
    ) -> Result<Self> {
        check_grid(&grid)?;
        if z.ncols() != layout.columns() {
            return Err(Error::Dimension(format!(
                "design has {} columns, layout expects {}",
                z.ncols(),
                layout.columns()
            )));
        }
        if z.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but response has {} entries",
                z.nrows(),
                y.len()
            )));
        }
        let n = y.len() as f64;
        let y_mean = y.sum() / n;
        let y = y.map(|v| v - y_mean);
        let column_means = match opts.centering {
            Centering::Response => None,
            Centering::Full => {
                let means = DVector::from_fn(z.ncols(), |c, _| z.column(c).sum() / n);
                for (c, mean) in means.iter().enumerate() {
                    z.column_mut(c).add_scalar_mut(-mean);
                }
                Some(means)
            }
        };
        let penalty_blocks = layout
            .groups()
            .iter()
            .map(|g| diff_penalty(g.spec.dim(), opts.diff_order))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            z,
            y,
            y_mean,
            column_means,
            layout,
            penalty_blocks,
            grid,
            quadrature: opts.quadrature,
        })
    }

    /// Replace the per-group penalty blocks (each must be square with the
    /// group's basis dimension).
    pub fn with_penalty_blocks(mut self, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.len() != self.layout.groups().len() {
            return Err(Error::Dimension(
                "one penalty block per group required".into(),
            ));
        }
        for (b, g) in blocks.iter().zip(self.layout.groups()) {
            let k = g.spec.dim();
            if b.shape() != (k, k) {
                return Err(Error::Dimension(format!(
                    "penalty block is {:?}, expected {k}x{k}",
                    b.shape()
                )));
            }
        }
        self.penalty_blocks = blocks;
        Ok(self)
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Centered response.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn column_means(&self) -> Option<&DVector<f64>> {
        self.column_means.as_ref()
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn columns(&self) -> usize {
        self.z.ncols()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn quadrature(&self) -> QuadratureRule {
        self.quadrature
    }

    pub fn penalty_blocks(&self) -> &[DMatrix<f64>] {
        &self.penalty_blocks
    }

    /// `blockdiag(scale_j R_g(j))` over predictors in column order, with one
    /// scale per predictor index (entries for excluded predictors ignored).
    pub fn penalty_per_predictor(&self, scales: &[f64]) -> DMatrix<f64> {
        assert_eq!(scales.len(), self.layout.p(), "one scale per predictor");
        let mut p = DMatrix::zeros(self.columns(), self.columns());
        for j in self.layout.predictors_in_order() {
            let g = self.layout.group_of(j).expect("listed");
            let cols = self.layout.columns_of(j).expect("listed");
            let k = cols.len();
            p.view_mut((cols.start, cols.start), (k, k))
                .copy_from(&(&self.penalty_blocks[g] * scales[j]));
        }
        p
    }

    /// Penalty with one scale per layout group.
    pub fn penalty_per_group(&self, scales: &[f64]) -> DMatrix<f64> {
        assert_eq!(
            scales.len(),
            self.layout.groups().len(),
            "one scale per group"
        );
        let mut per_pred = vec![0.0; self.layout.p()];
        for (g, group) in self.layout.groups().iter().enumerate() {
            for &j in &group.predictors {
                per_pred[j] = scales[g];
            }
        }
        self.penalty_per_predictor(&per_pred)
    }

    pub fn uniform_penalty(&self, lambda: f64) -> DMatrix<f64> {
        self.penalty_per_group(&vec![lambda; self.layout.groups().len()])
    }

    /// Unscaled block penalty `R`.
    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        self.uniform_penalty(1.0)
    }

    /// Fitted response `Z b + ȳ`.
    pub fn predict(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.columns() {
            return Err(Error::Dimension(format!(
                "coefficient vector has {} entries, design has {} columns",
                b.len(),
                self.columns()
            )));
        }
        Ok((&self.z * b).add_scalar(self.y_mean))
    }

    /// Intercept on the raw scale: `ȳ − z̄ᵀ b` when the design columns were
    /// centered, `ȳ` otherwise.
    pub fn intercept(&self, b: &DVector<f64>) -> f64 {
        match &self.column_means {
            Some(means) => self.y_mean - means.dot(b),
            None => self.y_mean,
        }
    }

    /// Coefficient functions on the observation grid, one row per
    /// predictor (zero rows for excluded predictors).
    pub fn coefficient_functions(&self, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        if b.len() != self.columns() {
            return Err(Error::Dimension("coefficient vector length".into()));
        }
        let mut out = DMatrix::zeros(self.layout.p(), self.grid.len());
        for group in self.layout.groups() {
            let basis = basis_matrix(&self.grid, &group.spec)?;
            for &j in &group.predictors {
                let cols = self.layout.columns_of(j).expect("listed");
                let beta = &basis * b.rows(cols.start, cols.len());
                out.row_mut(j).copy_from(&beta.transpose());
            }
        }
        Ok(out)
    }

    /// Block-diagonal Gram matrix in coefficient space, so that
    /// `vᵀ G v` is the summed squared L² norm of the coefficient functions.
    pub fn gram(&self) -> Result<DMatrix<f64>> {
        let mut blocks = Vec::new();
        for group in self.layout.groups() {
            let g = gram_matrix(&group.spec, &self.grid, self.quadrature)?;
            blocks.extend(std::iter::repeat_n(g, group.predictors.len()));
        }
        Ok(block_diag(&blocks))
    }

    /// Sub-system keeping only the columns of the given groups.
    pub fn restrict_to_groups(&self, keep: &[usize]) -> Result<Self> {
        let groups: Vec<BlockGroup> = keep
            .iter()
            .map(|&g| self.layout.groups()[g].clone())
            .collect();
        let layout = BlockLayout::new(self.layout.p(), groups)?;
        let mut z = DMatrix::zeros(self.n(), layout.columns());
        for j in layout.predictors_in_order().collect::<Vec<_>>() {
            let src = self.layout.columns_of(j).expect("listed");
            let dst = layout.columns_of(j).expect("listed");
            z.columns_mut(dst.start, dst.len())
                .copy_from(&self.z.columns(src.start, src.len()));
        }
        let penalty_blocks = keep
            .iter()
            .map(|&g| self.penalty_blocks[g].clone())
            .collect();
        Ok(Self {
            z,
            y: self.y.clone(),
            y_mean: self.y_mean,
            column_means: self.column_means.as_ref().map(|m| {
                let mut out = DVector::zeros(layout.columns());
                for j in layout.predictors_in_order() {
                    let src = self.layout.columns_of(j).expect("listed");
                    let dst = layout.columns_of(j).expect("listed");
                    out.rows_mut(dst.start, dst.len())
                        .copy_from(&m.rows(src.start, src.len()));
                }
                out
            }),
            layout,
            penalty_blocks,
            grid: self.grid.clone(),
            quadrature: self.quadrature,
        })
    }

    /// Stacked quadrature inner products `⟨x_j, ψ_k⟩` in column order, for
    /// functions `x` given as a `p x M` matrix on the observation grid.
    pub fn functional_weights(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.nrows() != self.layout.p() || x.ncols() != self.grid.len() {
            return Err(Error::Dimension(format!(
                "functions must be {}x{} (predictors x grid), got {}x{}",
                self.layout.p(),
                self.grid.len(),
                x.nrows(),
                x.ncols()
            )));
        }
        let mut w = DVector::zeros(self.columns());
        for group in self.layout.groups() {
            let wb = weighted_basis_matrix(&self.grid, &group.spec, self.quadrature)?;
            for &j in &group.predictors {
                let cols = self.layout.columns_of(j).expect("listed");
                let v = wb.transpose() * x.row(j).transpose();
                w.rows_mut(cols.start, cols.len()).copy_from(&v);
            }
        }
        Ok(w)
    }
}
