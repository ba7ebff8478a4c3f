//! JSON file formats and their decoders.
//!
//! Decoders only parse and validate; they never run numerics, and they cap
//! sizes so that hostile input cannot trigger huge allocations.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::action::ActionParams;
use crate::continuum::{piecewise_linear_model, FixtureSpec, GaussianProfile, LemmaGrid, QhatModel, WavePacket};
use crate::continuum::DirectOptions;
use crate::error::{CfsError, Result};
use crate::measure::{AbstractPoint, DiscreteMeasure, Point, Region};
use crate::model::{CfsModel, CompactKernel};
use crate::noether::{
    cyclic_diagonal_system, cyclic_shift_generator, killing_system, killing_variation, CfsVariation, Identity,
    KillingVariation, NoetherConfig, PathTable, PointFlow, UnitaryVariation, Variation,
};
use crate::optimizer::OptimizerConfig;
use crate::spectral::{CMatrix, CfsPoint};

pub const MAX_DIM: usize = 256;
pub const MAX_ATOMS: usize = 4096;
pub const MAX_SAMPLES: usize = 1024;

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CfsError::InvalidInput(format!("malformed JSON: {e}")))
}

fn limit(what: &str, n: usize, max: usize) -> Result<()> {
    if n > max {
        return Err(CfsError::InvalidInput(format!("{what} = {n} exceeds the limit {max}")));
    }
    Ok(())
}

/// Complex matrix as row lists of real and (optional) imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixJson {
    pub fn to_cmatrix(&self) -> Result<CMatrix> {
        let rows = self.re.len();
        let cols = self.re.first().map_or(0, Vec::len);
        limit("matrix rows", rows, MAX_DIM)?;
        limit("matrix columns", cols, MAX_DIM)?;
        if rows == 0 || cols == 0 || self.re.iter().any(|r| r.len() != cols) {
            return Err(CfsError::DimensionMismatch("matrix rows must be nonempty and of equal length".into()));
        }
        if let Some(im) = &self.im {
            if im.len() != rows || im.iter().any(|r| r.len() != cols) {
                return Err(CfsError::DimensionMismatch("imaginary part has a different shape".into()));
            }
        }
        let m = CMatrix::from_fn(rows, cols, |r, c| {
            let im = self.im.as_ref().map_or(0.0, |m| m[r][c]);
            Complex64::new(self.re[r][c], im)
        });
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CfsError::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(m)
    }

    pub fn from_cmatrix(m: &CMatrix) -> Self {
        let re = (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)].re).collect()).collect();
        let any_im = m.iter().any(|z| z.im != 0.0);
        let im = any_im.then(|| (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)].im).collect()).collect());
        Self { re, im }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomJson {
    pub psi: MatrixJson,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelJson {
    Constant { value: f64 },
    Matrix { values: Vec<Vec<f64>> },
    Diagonal { size: usize },
    Tent { radius: f64, height: f64 },
}

impl KernelJson {
    pub fn build(&self) -> Result<CompactKernel> {
        match self {
            KernelJson::Constant { value } => CompactKernel::constant(*value),
            KernelJson::Matrix { values } => {
                let n = values.len();
                limit("kernel size", n, MAX_DIM)?;
                if values.iter().any(|r| r.len() != n) {
                    return Err(CfsError::DimensionMismatch("kernel matrix must be square".into()));
                }
                CompactKernel::matrix(DMatrix::from_fn(n, n, |r, c| values[r][c]))
            }
            KernelJson::Diagonal { size } => {
                limit("kernel size", *size, MAX_DIM)?;
                if *size == 0 {
                    return Err(CfsError::InvalidInput("diagonal kernel needs a positive size".into()));
                }
                Ok(CompactKernel::diagonal(*size))
            }
            KernelJson::Tent { radius, height } => CompactKernel::tent(*radius, *height),
        }
    }

    pub fn from_kernel(k: &CompactKernel) -> Self {
        match k {
            CompactKernel::Constant { value } => KernelJson::Constant { value: *value },
            CompactKernel::Matrix { values } => KernelJson::Matrix {
                values: (0..values.nrows()).map(|r| (0..values.ncols()).map(|c| values[(r, c)]).collect()).collect(),
            },
            CompactKernel::Tent { radius, height } => KernelJson::Tent { radius: *radius, height: *height },
        }
    }
}

/// A system to analyse: either a fermion system or a compact kernel with
/// a discrete measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemFile {
    Cfs {
        spin_dim: usize,
        #[serde(default)]
        params: ActionParams,
        atoms: Vec<AtomJson>,
        /// Defaults to the sum of the weights.
        #[serde(default)]
        total_volume: Option<f64>,
    },
    /// Uniform commuting fixture with constant ell and trace.
    CyclicDiagonal {
        atoms: usize,
        alpha: f64,
        beta: f64,
        #[serde(default)]
        params: ActionParams,
    },
    Compact {
        kernel: KernelJson,
        /// Defaults to the simplex vertices of a matrix kernel.
        #[serde(default)]
        points: Option<Vec<Vec<f64>>>,
        /// Defaults to uniform weights.
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        total_volume: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    Cfs { model: CfsModel, params: ActionParams, measure: DiscreteMeasure<CfsPoint> },
    Compact { kernel: CompactKernel, measure: DiscreteMeasure<AbstractPoint> },
}

impl System {
    pub fn len(&self) -> usize {
        match self {
            System::Cfs { measure, .. } => measure.len(),
            System::Compact { measure, .. } => measure.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn measure_from<P: Point>(points: Vec<P>, weights: Option<Vec<f64>>, total: Option<f64>) -> Result<DiscreteMeasure<P>> {
    match weights {
        Some(w) => {
            let total = total.unwrap_or_else(|| w.iter().sum());
            DiscreteMeasure::new(points, w, total)
        }
        None => DiscreteMeasure::uniform(points, total.unwrap_or(1.0)),
    }
}

impl SystemFile {
    pub fn build(&self) -> Result<System> {
        match self {
            SystemFile::Cfs { spin_dim, params, atoms, total_volume } => {
                limit("atoms", atoms.len(), MAX_ATOMS)?;
                limit("spin_dim", *spin_dim, MAX_DIM)?;
                if atoms.is_empty() {
                    return Err(CfsError::InvalidInput("system needs at least one atom".into()));
                }
                params.validate()?;
                let points = atoms.iter().map(|a| CfsPoint::new(a.psi.to_cmatrix()?, *spin_dim)).collect::<Result<Vec<_>>>()?;
                let f = points[0].hilbert_dim();
                if points.iter().any(|p| p.hilbert_dim() != f) {
                    return Err(CfsError::DimensionMismatch("all atoms must act on the same Hilbert space".into()));
                }
                let weights = atoms.iter().map(|a| a.weight).collect();
                let measure = measure_from(points, Some(weights), *total_volume)?;
                Ok(System::Cfs { model: CfsModel::new(params.kappa)?, params: *params, measure })
            }
            SystemFile::CyclicDiagonal { atoms, alpha, beta, params } => {
                limit("atoms", *atoms, MAX_DIM)?;
                params.validate()?;
                let measure = cyclic_diagonal_system(*atoms, *alpha, *beta)?;
                Ok(System::Cfs { model: CfsModel::new(params.kappa)?, params: *params, measure })
            }
            SystemFile::Compact { kernel, points, weights, total_volume } => {
                let kernel = kernel.build()?;
                let points: Vec<AbstractPoint> = match (points, &kernel) {
                    (Some(p), _) => {
                        limit("points", p.len(), MAX_ATOMS)?;
                        p.iter().map(|c| AbstractPoint::new(c.clone())).collect()
                    }
                    (None, CompactKernel::Matrix { values }) => (0..values.nrows()).filter_map(|i| kernel.vertex(i)).collect(),
                    (None, _) => return Err(CfsError::InvalidInput("points are required for this kernel".into())),
                };
                if points.is_empty() {
                    return Err(CfsError::InvalidInput("system needs at least one point".into()));
                }
                for p in &points {
                    limit("point dimension", p.coords.len(), MAX_DIM)?;
                    kernel.check_point(p)?;
                }
                let measure = measure_from(points, weights.clone(), *total_volume)?;
                Ok(System::Compact { kernel, measure })
            }
        }
    }

    pub fn from_cfs(measure: &DiscreteMeasure<CfsPoint>, params: &ActionParams) -> Self {
        let spin_dim = measure.points().first().map_or(1, CfsPoint::spin_dim);
        SystemFile::Cfs {
            spin_dim,
            params: *params,
            atoms: measure
                .points()
                .iter()
                .zip(measure.weights())
                .map(|(p, w)| AtomJson { psi: MatrixJson::from_cmatrix(p.psi()), weight: *w })
                .collect(),
            total_volume: Some(measure.total_volume()),
        }
    }

    pub fn from_compact(kernel: &CompactKernel, measure: &DiscreteMeasure<AbstractPoint>) -> Self {
        SystemFile::Compact {
            kernel: KernelJson::from_kernel(kernel),
            points: Some(measure.points().iter().map(|p| p.coords.clone()).collect()),
            weights: Some(measure.weights().to_vec()),
            total_volume: Some(measure.total_volume()),
        }
    }
}

pub fn decode_system(text: &str) -> Result<System> {
    parse::<SystemFile>(text)?.build()
}

/// Sampled point of a path: a wave evaluation matrix or coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointJson {
    Matrix(MatrixJson),
    Coords(Vec<f64>),
}

fn default_tau_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariationFile {
    Identity {
        #[serde(default = "default_tau_max")]
        tau_max: f64,
    },
    /// Psi -> Psi exp(-i tau A) for a Hermitian generator A.
    Unitary { generator: MatrixJson, tau_max: f64 },
    /// Unitary variation whose time-one map cyclically shifts the basis of
    /// the Hilbert space.
    CyclicShift { tau_max: f64 },
    /// Linear paths x_i -> x_perm[i] over tau in [-1, 1].
    Permutation { perm: Vec<usize>, tau_max: f64 },
    /// Tabulated per-atom paths, sampled at common parameters.
    Paths {
        tau_max: f64,
        taus: Vec<f64>,
        paths: Vec<Vec<PointJson>>,
        #[serde(default)]
        on_measure: bool,
    },
    Composite { parts: Vec<VariationFile> },
}

/// Variations of the compact setting.
#[derive(Debug, Clone, PartialEq)]
pub enum CompactVariation {
    Identity(Identity),
    Flow(PointFlow<AbstractPoint>),
}

impl Variation<AbstractPoint> for CompactVariation {
    fn tau_max(&self) -> f64 {
        match self {
            CompactVariation::Identity(v) => Variation::<AbstractPoint>::tau_max(v),
            CompactVariation::Flow(f) => f.tau_max(),
        }
    }

    fn image(&self, atom: usize, x: &AbstractPoint, tau: f64) -> Result<AbstractPoint> {
        match self {
            CompactVariation::Identity(v) => v.image(atom, x, tau),
            CompactVariation::Flow(f) => f.image(atom, x, tau),
        }
    }
}

fn check_tau_max(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(CfsError::InvalidInput(format!("tau_max must be positive and finite, got {t}")))
    }
}

fn path_tables<P: Point, F: Fn(&PointJson) -> Result<P>>(taus: &[f64], paths: &[Vec<PointJson>], conv: F) -> Result<Vec<PathTable<P>>> {
    limit("path samples", taus.len(), MAX_SAMPLES)?;
    limit("paths", paths.len(), MAX_ATOMS)?;
    paths
        .iter()
        .map(|p| PathTable::new(taus.to_vec(), p.iter().map(&conv).collect::<Result<Vec<_>>>()?))
        .collect()
}

impl VariationFile {
    /// Builds a fermion-system variation; `hilbert_dim` and `points` come
    /// from the system it will act on.
    pub fn build_cfs(&self, measure: &DiscreteMeasure<CfsPoint>) -> Result<CfsVariation> {
        let f = measure.points().first().map_or(0, CfsPoint::hilbert_dim);
        let spin = measure.points().first().map_or(1, CfsPoint::spin_dim);
        let v = match self {
            VariationFile::Identity { tau_max } => CfsVariation::Unitary(UnitaryVariation::new(CMatrix::zeros(f, f), *tau_max)?),
            VariationFile::Unitary { generator, tau_max } => {
                check_tau_max(*tau_max)?;
                let g = generator.to_cmatrix()?;
                if g.nrows() != f || g.ncols() != f {
                    return Err(CfsError::DimensionMismatch(format!("generator must be {f}x{f}")));
                }
                CfsVariation::Unitary(UnitaryVariation::new(g, *tau_max)?)
            }
            VariationFile::CyclicShift { tau_max } => {
                check_tau_max(*tau_max)?;
                CfsVariation::Unitary(UnitaryVariation::new(cyclic_shift_generator(f), *tau_max)?)
            }
            VariationFile::Permutation { perm, tau_max } => {
                check_tau_max(*tau_max)?;
                CfsVariation::Flow(PointFlow::permutation(measure.points(), perm, *tau_max)?)
            }
            VariationFile::Paths { tau_max, taus, paths, on_measure } => {
                check_tau_max(*tau_max)?;
                let tables = path_tables(taus, paths, |p| match p {
                    PointJson::Matrix(m) => CfsPoint::new(m.to_cmatrix()?, spin),
                    PointJson::Coords(_) => Err(CfsError::InvalidInput("fermion paths need psi matrices".into())),
                })?;
                if tables.iter().flat_map(|t| t.points()).any(|p| p.hilbert_dim() != f) {
                    return Err(CfsError::DimensionMismatch("path points act on a different Hilbert space".into()));
                }
                CfsVariation::Flow(PointFlow::new(tables, *tau_max, *on_measure)?)
            }
            VariationFile::Composite { parts } => {
                limit("composite parts", parts.len(), 64)?;
                if parts.is_empty() {
                    return Err(CfsError::InvalidInput("composite variation needs at least one part".into()));
                }
                CfsVariation::Composite(parts.iter().map(|p| p.build_cfs(measure)).collect::<Result<_>>()?)
            }
        };
        v.validate(measure)?;
        Ok(v)
    }

    pub fn build_compact(&self, measure: &DiscreteMeasure<AbstractPoint>) -> Result<CompactVariation> {
        let v = match self {
            VariationFile::Identity { tau_max } => {
                check_tau_max(*tau_max)?;
                CompactVariation::Identity(Identity { tau_max: *tau_max })
            }
            VariationFile::Permutation { perm, tau_max } => {
                check_tau_max(*tau_max)?;
                CompactVariation::Flow(PointFlow::permutation(measure.points(), perm, *tau_max)?)
            }
            VariationFile::Paths { tau_max, taus, paths, on_measure } => {
                check_tau_max(*tau_max)?;
                let tables = path_tables(taus, paths, |p| match p {
                    PointJson::Coords(c) => Ok(AbstractPoint::new(c.clone())),
                    PointJson::Matrix(_) => Err(CfsError::InvalidInput("compact paths need coordinates".into())),
                })?;
                CompactVariation::Flow(PointFlow::new(tables, *tau_max, *on_measure)?)
            }
            _ => return Err(CfsError::InvalidInput("this variation kind needs a fermion system".into())),
        };
        v.validate(measure)?;
        Ok(v)
    }
}

/// Parses a variation without binding it to a system.
pub fn decode_variation(text: &str) -> Result<VariationFile> {
    let v: VariationFile = parse(text)?;
    fn check(v: &VariationFile, depth: usize) -> Result<()> {
        if depth > 16 {
            return Err(CfsError::InvalidInput("composite variations nest too deeply".into()));
        }
        match v {
            VariationFile::Identity { tau_max }
            | VariationFile::CyclicShift { tau_max }
            | VariationFile::Permutation { tau_max, .. } => check_tau_max(*tau_max),
            VariationFile::Unitary { generator, tau_max } => {
                check_tau_max(*tau_max)?;
                let g = generator.to_cmatrix()?;
                UnitaryVariation::new(g, *tau_max).map(|_| ())
            }
            VariationFile::Paths { tau_max, taus, paths, .. } => {
                check_tau_max(*tau_max)?;
                limit("path samples", taus.len(), MAX_SAMPLES)?;
                limit("paths", paths.len(), MAX_ATOMS)?;
                if paths.iter().any(|p| p.len() != taus.len()) {
                    return Err(CfsError::DimensionMismatch("every path needs one point per sample".into()));
                }
                Ok(())
            }
            VariationFile::Composite { parts } => parts.iter().try_for_each(|p| check(p, depth + 1)),
        }
    }
    check(&v, 0)?;
    Ok(v)
}

/// Region as a list of atom indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionFile {
    pub indices: Vec<usize>,
}

impl RegionFile {
    pub fn build<P: Point>(&self, m: &DiscreteMeasure<P>) -> Result<Region> {
        limit("region size", self.indices.len(), MAX_ATOMS)?;
        Region::new(self.indices.clone(), m)
    }
}

pub fn decode_region(text: &str) -> Result<RegionFile> {
    let r: RegionFile = parse(text)?;
    limit("region size", r.indices.len(), MAX_ATOMS)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KillingFile {
    /// Two-summand cyclic fixture: K is the second summand.
    Fixture {
        atoms: usize,
        alpha: f64,
        beta: f64,
        hole_alpha: f64,
        hole_beta: f64,
        tau_max: f64,
        #[serde(default)]
        kappa: f64,
    },
    Explicit {
        system: SystemFile,
        flow: VariationFile,
        generator: MatrixJson,
        /// Columns span K; absent for K = {0}.
        #[serde(default)]
        kernel_basis: Option<MatrixJson>,
        symmetry_taus: Vec<f64>,
        tau_max: f64,
    },
}

pub struct KillingSetup {
    pub model: CfsModel,
    pub measure: DiscreteMeasure<CfsPoint>,
    pub variation: KillingVariation,
}

impl KillingFile {
    pub fn build(&self) -> Result<KillingSetup> {
        match self {
            KillingFile::Fixture { atoms, alpha, beta, hole_alpha, hole_beta, tau_max, kappa } => {
                limit("atoms", *atoms, 64)?;
                check_tau_max(*tau_max)?;
                Ok(KillingSetup {
                    model: CfsModel::new(*kappa)?,
                    measure: killing_system(*atoms, *alpha, *beta, *hole_alpha, *hole_beta)?,
                    variation: killing_variation(*atoms, *tau_max)?,
                })
            }
            KillingFile::Explicit { system, flow, generator, kernel_basis, symmetry_taus, tau_max } => {
                let (model, measure) = match system.build()? {
                    System::Cfs { model, measure, .. } => (model, measure),
                    System::Compact { .. } => return Err(CfsError::InvalidInput("Killing checks need a fermion system".into())),
                };
                let flow = flow.build_cfs(&measure)?;
                let unitaries = UnitaryVariation::new(generator.to_cmatrix()?, *tau_max)?;
                let f = unitaries.generator().nrows();
                let kernel_basis = match kernel_basis {
                    Some(b) => b.to_cmatrix()?,
                    None => CMatrix::zeros(f, 0),
                };
                limit("symmetry samples", symmetry_taus.len(), MAX_SAMPLES)?;
                let variation = KillingVariation { flow, unitaries, kernel_basis, symmetry_taus: symmetry_taus.clone() };
                variation.complement_projector()?;
                Ok(KillingSetup { model, measure, variation })
            }
        }
    }
}

pub fn decode_killing(text: &str) -> Result<KillingFile> {
    let k: KillingFile = parse(text)?;
    if let KillingFile::Fixture { atoms, .. } = &k {
        limit("atoms", *atoms, 64)?;
    }
    Ok(k)
}

/// A Q-hat model given explicitly or through a piecewise-linear fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Fixture { fixture: FixtureSpec },
    Explicit(QhatModel),
}

pub fn decode_model(text: &str) -> Result<QhatModel> {
    let model = match parse::<ModelFile>(text)? {
        ModelFile::Explicit(m) => m,
        ModelFile::Fixture { fixture } => {
            limit("generations", fixture.masses.len(), 64)?;
            piecewise_linear_model(&fixture)?
        }
    };
    limit("generations", model.masses.len(), 64)?;
    limit("curve nodes", model.curve.q2.len(), 100_000)?;
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PacketFile {
    Many { packets: Vec<WavePacket> },
    One(WavePacket),
}

/// Packets are checked against a model later; here only their own fields.
pub fn decode_packets(text: &str) -> Result<Vec<WavePacket>> {
    let packets = match parse::<PacketFile>(text)? {
        PacketFile::One(p) => vec![p],
        PacketFile::Many { packets } => packets,
    };
    if packets.is_empty() {
        return Err(CfsError::InvalidInput("no packets given".into()));
    }
    limit("packets", packets.len(), 64)?;
    for p in &packets {
        let probe = crate::continuum::flat_model(&vec![1.0; p.generation.saturating_add(1).min(65)], 0.0, 0.0);
        p.validate(&probe)?;
    }
    Ok(packets)
}

fn default_dimension() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaFile {
    pub profile: GaussianProfile,
    #[serde(default = "default_dimension")]
    pub dimension: u32,
    #[serde(default)]
    pub grid: Option<LemmaGrid>,
}

pub fn decode_lemma(text: &str) -> Result<LemmaFile> {
    let l: LemmaFile = parse(text)?;
    l.profile.validate()?;
    if l.dimension != 1 && l.dimension != 3 {
        return Err(CfsError::InvalidInput(format!("dimension must be 1 or 3, got {}", l.dimension)));
    }
    Ok(l)
}

pub fn decode_optimizer_config(text: &str) -> Result<OptimizerConfig> {
    let c: OptimizerConfig = parse(text)?;
    c.validate()?;
    Ok(c)
}

pub fn decode_noether_config(text: &str) -> Result<NoetherConfig> {
    parse(text)
}

pub fn decode_direct_options(text: &str) -> Result<DirectOptions> {
    let o: DirectOptions = parse(text)?;
    o.validate()?;
    Ok(o)
}
