//! Steerable rain-kernel dictionary.
//!
//! Each of the `M` atoms is a set of Fourier coefficients per colour channel.
//! Atoms are re-discretized at `T(theta, s_l, s_w) * x_ij` and then mixed by
//! `alpha` (`M x K`) into `K` rain kernels, `C[:, :, c, k] = sum_m alpha_mk D_m[:, :, c]`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::factors::RainFactorSample;
use crate::parametrization::{BasisSet, GridSamples, TransformParams};
use crate::tensor::KernelTensor;

/// Colour channels carried by every atom.
pub const COLOR_CHANNELS: usize = 3;

const DICT_MAGIC: &[u8; 4] = b"RFK1";

/// Coefficients `w^d` of the rain kernel dictionary, `M x N x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDictionary {
    p: usize,
    m: usize,
    coeffs: Vec<f64>,
    per_atom_theta: bool,
    /// Identity-transform mass of each atom's channel mean; used to give
    /// intermediate cascade stages unit DC gain.
    atom_mass: Vec<f64>,
}

impl KernelDictionary {
    pub fn new(p: usize, m: usize, coeffs: Vec<f64>, per_atom_theta: bool) -> Result<Self> {
        if p % 2 == 0 || p == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {p}")));
        }
        if m == 0 {
            return Err(Error::invalid("dictionary needs at least one atom"));
        }
        let n = 2 * p * p;
        if coeffs.len() != m * n * COLOR_CHANNELS {
            return Err(Error::shape(format!(
                "dictionary of {m} atoms at p = {p} needs {} coefficients, got {}",
                m * n * COLOR_CHANNELS,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary coefficients must be finite"));
        }
        let mut dict = Self {
            p,
            m,
            coeffs,
            per_atom_theta,
            atom_mass: Vec::new(),
        };
        dict.atom_mass = dict.compute_atom_mass()?;
        Ok(dict)
    }

    fn compute_atom_mass(&self) -> Result<Vec<f64>> {
        let basis = BasisSet::new(self.p)?;
        let samples = basis.sample_grid(&TransformParams::identity().matrix());
        Ok((0..self.m)
            .map(|a| {
                let total: f64 = (0..COLOR_CHANNELS)
                    .map(|c| samples.apply(&self.atom_coeffs(a, c)).iter().sum::<f64>())
                    .sum();
                let mass = (total / COLOR_CHANNELS as f64).abs();
                if mass > 1e-6 { mass } else { 1.0 }
            })
            .collect())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Atom count `M`.
    pub fn atoms(&self) -> usize {
        self.m
    }

    /// Basis count `N = 2 p^2`.
    pub fn basis_len(&self) -> usize {
        2 * self.p * self.p
    }

    pub fn per_atom_theta(&self) -> bool {
        self.per_atom_theta
    }

    pub fn set_per_atom_theta(&mut self, on: bool) {
        self.per_atom_theta = on;
    }

    /// Raw coefficients in `(atom, basis, channel)` order.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn atom_mass(&self) -> &[f64] {
        &self.atom_mass
    }

    /// Coefficient vector of one atom and channel.
    pub fn atom_coeffs(&self, atom: usize, channel: usize) -> Vec<f64> {
        let n = self.basis_len();
        (0..n)
            .map(|b| self.coeffs[(atom * n + b) * COLOR_CHANNELS + channel])
            .collect()
    }

    /// Writes the `RFK1` container.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(DICT_MAGIC)?;
        for v in [self.p, self.m, self.basis_len(), COLOR_CHANNELS] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for c in &self.coeffs {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "RFK1",
            reason,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| bad(format!("header: {e}")))?;
        if &magic != DICT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut head = [0u32; 4];
        for h in head.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| bad(format!("header: {e}")))?;
            *h = u32::from_le_bytes(b);
        }
        let [p, m, n, ch] = head.map(|v| v as usize);
        if n != 2 * p * p || ch != COLOR_CHANNELS {
            return Err(bad(format!("inconsistent header p={p} N={n} channels={ch}")));
        }
        let count = m
            .checked_mul(n)
            .and_then(|v| v.checked_mul(ch))
            .ok_or_else(|| bad("header overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| bad(format!("payload: {e}")))?;
        if bytes.len() != count * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, header implies {}",
                bytes.len(),
                count * 8
            )));
        }
        let coeffs = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(p, m, coeffs, false)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }

    /// Re-discretizes all atoms under per-atom transforms (`transforms` has
    /// length 1 to broadcast, or `M`).
    pub fn discretize(
        &self,
        basis: &BasisSet,
        transforms: &[TransformParams],
        with_derivatives: bool,
    ) -> Result<DiscreteAtoms> {
        if basis.p() != self.p {
            return Err(Error::shape(format!(
                "basis p = {} does not match dictionary p = {}",
                basis.p(),
                self.p
            )));
        }
        if transforms.len() != 1 && transforms.len() != self.m {
            return Err(Error::shape(format!(
                "expected 1 or {} transforms, got {}",
                self.m,
                transforms.len()
            )));
        }
        let sample = |t: &TransformParams| -> GridSamples {
            if with_derivatives {
                basis.sample_grid_with_gradient(&t.matrix())
            } else {
                basis.sample_grid(&t.matrix())
            }
        };
        let shared = (transforms.len() == 1).then(|| sample(&transforms[0]));
        let pp = self.p * self.p;
        let mut atoms = DiscreteAtoms {
            p: self.p,
            values: Vec::with_capacity(self.m),
            d_theta: Vec::new(),
            d_s_l: Vec::new(),
            d_s_w: Vec::new(),
        };
        for a in 0..self.m {
            let t = &transforms[if shared.is_some() { 0 } else { a }];
            let own;
            let samples = match &shared {
                Some(s) => s,
                None => {
                    own = sample(t);
                    &own
                }
            };
            let mut vals = vec![0.0; pp * COLOR_CHANNELS];
            let mut dt = vec![0.0; if with_derivatives { pp * COLOR_CHANNELS } else { 0 }];
            let mut dl = dt.clone();
            let mut dw = dt.clone();
            for c in 0..COLOR_CHANNELS {
                let w = self.atom_coeffs(a, c);
                let plane = samples.apply(&w);
                for (g, v) in plane.iter().enumerate() {
                    vals[g * COLOR_CHANNELS + c] = *v;
                }
                if with_derivatives {
                    // chain rule through T: dK/dq = sum_n w_n grad phi_n(Tx) . (dT/dq x)
                    let (gx, gy) = samples.apply_spatial_gradient(&w);
                    let (dth, dsl, dsw) = (t.d_theta(), t.d_s_l(), t.d_s_w());
                    for (g, x) in basis.grid().iter().enumerate() {
                        let proj = |m: &[[f64; 2]; 2]| {
                            let d = [
                                m[0][0] * x[0] + m[0][1] * x[1],
                                m[1][0] * x[0] + m[1][1] * x[1],
                            ];
                            gx[g] * d[0] + gy[g] * d[1]
                        };
                        dt[g * COLOR_CHANNELS + c] = proj(&dth);
                        dl[g * COLOR_CHANNELS + c] = proj(&dsl);
                        dw[g * COLOR_CHANNELS + c] = proj(&dsw);
                    }
                }
            }
            atoms.values.push(vals);
            if with_derivatives {
                atoms.d_theta.push(dt);
                atoms.d_s_l.push(dl);
                atoms.d_s_w.push(dw);
            }
        }
        Ok(atoms)
    }
}

/// Discretized atoms `D_m[i, j, c]` (row-major taps, channel fastest) and
/// optionally their derivatives with respect to the transform parameters.
#[derive(Clone, Debug)]
pub struct DiscreteAtoms {
    p: usize,
    values: Vec<Vec<f64>>,
    d_theta: Vec<Vec<f64>>,
    d_s_l: Vec<Vec<f64>>,
    d_s_w: Vec<Vec<f64>>,
}

impl DiscreteAtoms {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `D_m` as `p*p*3` values.
    pub fn atom(&self, m: usize) -> &[f64] {
        &self.values[m]
    }

    pub fn has_derivatives(&self) -> bool {
        !self.d_theta.is_empty()
    }

    pub fn d_theta(&self, m: usize) -> &[f64] {
        &self.d_theta[m]
    }

    pub fn d_s_l(&self, m: usize) -> &[f64] {
        &self.d_s_l[m]
    }

    pub fn d_s_w(&self, m: usize) -> &[f64] {
        &self.d_s_w[m]
    }

    fn field(&self, field: AtomField) -> &[Vec<f64>] {
        match field {
            AtomField::Value => &self.values,
            AtomField::DTheta => &self.d_theta,
            AtomField::DSl => &self.d_s_l,
            AtomField::DSw => &self.d_s_w,
        }
    }

    /// One stage kernel built from `field` instead of the atom values.
    pub(crate) fn mix_field(
        &self,
        role: StageRole,
        alpha: &MixingWeights,
        field: AtomField,
        mass: &[f64],
    ) -> KernelTensor {
        let atoms = self.field(field);
        match role {
            StageRole::Final => self.mix_color(alpha, atoms),
            StageRole::Intermediate => self.mix_depthwise(alpha, atoms, mass),
        }
    }

    /// `<G, dC / d alpha_mk>` for every `(m, k)` given a kernel gradient `G`.
    pub(crate) fn alpha_gradient(&self, role: StageRole, g: &KernelTensor, mass: &[f64]) -> MixingWeights {
        let k_count = g.c_in();
        let pp = self.p * self.p;
        let mut out = MixingWeights::filled(self.values.len(), k_count, 0.0);
        for (m, atom) in self.values.iter().enumerate() {
            let lum = match role {
                StageRole::Final => None,
                StageRole::Intermediate => Some(self.luminance(atom, mass[m])),
            };
            for k in 0..k_count {
                let mut acc = 0.0;
                for gi in 0..pp {
                    let (i, j) = (gi / self.p, gi % self.p);
                    match &lum {
                        None => {
                            for c in 0..COLOR_CHANNELS {
                                acc += g.get(i, j, c, k) * atom[gi * COLOR_CHANNELS + c];
                            }
                        }
                        Some(l) => acc += g.get(i, j, k, k) * l[gi],
                    }
                }
                out.set(m, k, acc);
            }
        }
        out
    }

    /// `sum_m alpha_mk A_m` into a `p x p x 3 x K` kernel.
    fn mix_color(&self, alpha: &MixingWeights, atoms: &[Vec<f64>]) -> KernelTensor {
        let pp = self.p * self.p;
        let mut out = KernelTensor::zeros(self.p, COLOR_CHANNELS, alpha.k());
        for (m, atom) in atoms.iter().enumerate() {
            for k in 0..alpha.k() {
                let a = alpha.get(m, k);
                if a == 0.0 {
                    continue;
                }
                for g in 0..pp {
                    for c in 0..COLOR_CHANNELS {
                        let idx = out.index(g / self.p, g % self.p, c, k);
                        out.data_mut()[idx] += a * atom[g * COLOR_CHANNELS + c];
                    }
                }
            }
        }
        out
    }

    /// Channel-mean atom divided by its identity mass.
    fn luminance(&self, atom: &[f64], mass: f64) -> Vec<f64> {
        atom.chunks_exact(COLOR_CHANNELS)
            .map(|px| px.iter().sum::<f64>() / (COLOR_CHANNELS as f64 * mass))
            .collect()
    }

    /// Depthwise `K -> K` kernel: `C[:, :, k, k] = sum_m alpha_mk L_m`.
    fn mix_depthwise(&self, alpha: &MixingWeights, atoms: &[Vec<f64>], mass: &[f64]) -> KernelTensor {
        let pp = self.p * self.p;
        let mut out = KernelTensor::zeros(self.p, alpha.k(), alpha.k());
        for (m, atom) in atoms.iter().enumerate() {
            let lum = self.luminance(atom, mass[m]);
            for k in 0..alpha.k() {
                let a = alpha.get(m, k);
                if a == 0.0 {
                    continue;
                }
                for (g, l) in lum.iter().enumerate().take(pp) {
                    let idx = out.index(g / self.p, g % self.p, k, k);
                    out.data_mut()[idx] += a * l;
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum AtomField {
    Value,
    DTheta,
    DSl,
    DSw,
}

/// Dictionary-to-kernel mixing weights `alpha`, `M x K` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingWeights {
    m: usize,
    k: usize,
    alpha: Vec<f64>,
}

impl MixingWeights {
    pub fn new(m: usize, k: usize, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != m * k {
            return Err(Error::shape(format!(
                "alpha needs {m}x{k} entries, got {}",
                alpha.len()
            )));
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("alpha entries must be finite"));
        }
        Ok(Self { m, k, alpha })
    }

    pub fn filled(m: usize, k: usize, v: f64) -> Self {
        Self {
            m,
            k,
            alpha: vec![v; m * k],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.alpha[m * self.k + k]
    }

    pub fn set(&mut self, m: usize, k: usize, v: f64) {
        self.alpha[m * self.k + k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            alpha: self.alpha.iter().map(|v| v * s).collect(),
            ..*self
        }
    }
}

/// Whether a cascade stage keeps the `K` rain-map channels or maps them to
/// colour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageRole {
    /// `p x p x K x K`, depthwise.
    Intermediate,
    /// `p x p x 3 x K`.
    Final,
}

/// One stage of rain kernels together with the factors that produced it.
#[derive(Clone, Debug)]
pub struct RainKernels {
    pub kernel: KernelTensor,
    pub transforms: Vec<TransformParams>,
    pub alpha: MixingWeights,
    pub role: StageRole,
}

/// Ordered stages; the last one is [`StageRole::Final`].
#[derive(Clone, Debug)]
pub struct KernelCascade {
    pub stages: Vec<RainKernels>,
}

impl KernelCascade {
    pub fn depth(&self) -> usize {
        self.stages.len()
    }
}

/// `[phi(Omega)]_ij = sum_n w_n phi_n(T_Omega x_ij)` over the full grid.
pub fn discretize_kernel(
    basis: &BasisSet,
    coeffs: &[f64],
    params: &TransformParams,
) -> Result<Vec<f64>> {
    basis.check_coeffs(coeffs)?;
    Ok(basis.sample_grid(&params.matrix()).apply(coeffs))
}

/// Per-atom transforms for a factor sample, validated against the dictionary.
pub fn atom_transforms(
    dict: &KernelDictionary,
    factors: &RainFactorSample,
) -> Result<Vec<TransformParams>> {
    let thetas = factors.theta_rad();
    if dict.per_atom_theta() {
        if thetas.len() != dict.atoms() {
            return Err(Error::shape(format!(
                "per-atom orientation needs {} angles, got {}",
                dict.atoms(),
                thetas.len()
            )));
        }
    } else if thetas.len() != 1 {
        return Err(Error::shape(format!(
            "scalar orientation expected, got {} angles",
            thetas.len()
        )));
    }
    thetas
        .iter()
        .map(|&t| TransformParams::new(t, factors.s_l, factors.s_w))
        .collect()
}

fn check_alpha(dict: &KernelDictionary, alpha: &MixingWeights) -> Result<()> {
    if alpha.m() != dict.atoms() {
        return Err(Error::shape(format!(
            "alpha has {} rows, dictionary has {} atoms",
            alpha.m(),
            dict.atoms()
        )));
    }
    Ok(())
}

/// Final-stage kernels `C = alpha (.) D(theta, s_l, s_w)`.
pub fn build_rain_kernels(
    dict: &KernelDictionary,
    alpha: &MixingWeights,
    factors: &RainFactorSample,
) -> Result<RainKernels> {
    check_alpha(dict, alpha)?;
    let basis = BasisSet::new(dict.p())?;
    let transforms = atom_transforms(dict, factors)?;
    let atoms = dict.discretize(&basis, &transforms, false)?;
    Ok(RainKernels {
        kernel: atoms.mix_color(alpha, &atoms.values),
        transforms,
        alpha: alpha.clone(),
        role: StageRole::Final,
    })
}

/// Mixes already-discretized atoms into one cascade stage.
pub fn mix_stage(
    dict: &KernelDictionary,
    atoms: &DiscreteAtoms,
    alpha: &MixingWeights,
    role: StageRole,
    transforms: &[TransformParams],
) -> Result<RainKernels> {
    check_alpha(dict, alpha)?;
    let kernel = match role {
        StageRole::Final => atoms.mix_color(alpha, &atoms.values),
        StageRole::Intermediate => atoms.mix_depthwise(alpha, &atoms.values, dict.atom_mass()),
    };
    Ok(RainKernels {
        kernel,
        transforms: transforms.to_vec(),
        alpha: alpha.clone(),
        role,
    })
}

/// All cascade stages for a factor sample: one per `alpha` matrix, sharing the
/// dictionary and the transform; the last stage maps to colour.
pub fn build_cascade(dict: &KernelDictionary, factors: &RainFactorSample) -> Result<KernelCascade> {
    if factors.alpha.is_empty() {
        return Err(Error::invalid("factor sample carries no mixing weights"));
    }
    let basis = BasisSet::new(dict.p())?;
    let transforms = atom_transforms(dict, factors)?;
    let atoms = dict.discretize(&basis, &transforms, false)?;
    let last = factors.alpha.len() - 1;
    let stages = factors
        .alpha
        .iter()
        .enumerate()
        .map(|(s, alpha)| {
            let role = if s == last {
                StageRole::Final
            } else {
                StageRole::Intermediate
            };
            mix_stage(dict, &atoms, alpha, role, &transforms)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelCascade { stages })
}

/// Partial derivatives of the final-stage kernels.
#[derive(Clone, Debug)]
pub struct KernelFactorGrads {
    /// One tensor for a scalar angle, `M` for per-atom angles.
    pub d_theta: Vec<KernelTensor>,
    pub d_s_l: KernelTensor,
    pub d_s_w: KernelTensor,
    /// `dC[:, :, :, k] / d alpha_mk = D_m`, stored per atom as `p*p*3`.
    pub d_alpha: Vec<Vec<f64>>,
}

pub fn kernel_factor_grads(
    dict: &KernelDictionary,
    alpha: &MixingWeights,
    factors: &RainFactorSample,
) -> Result<KernelFactorGrads> {
    check_alpha(dict, alpha)?;
    let basis = BasisSet::new(dict.p())?;
    let transforms = atom_transforms(dict, factors)?;
    let atoms = dict.discretize(&basis, &transforms, true)?;
    let d_theta = if dict.per_atom_theta() {
        (0..dict.atoms())
            .map(|m| {
                let mut only = vec![vec![0.0; atoms.d_theta[m].len()]; dict.atoms()];
                only[m] = atoms.d_theta[m].clone();
                atoms.mix_color(alpha, &only)
            })
            .collect()
    } else {
        vec![atoms.mix_color(alpha, &atoms.d_theta)]
    };
    Ok(KernelFactorGrads {
        d_theta,
        d_s_l: atoms.mix_color(alpha, &atoms.d_s_l),
        d_s_w: atoms.mix_color(alpha, &atoms.d_s_w),
        d_alpha: atoms.values.clone(),
    })
}

/// Parameters of one rendered streak atom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreakShape {
    /// Segment length in pixels.
    pub length: f64,
    /// Gaussian cross-profile standard deviation in pixels.
    pub sigma: f64,
    pub peak: f64,
}

impl StreakShape {
    /// Rasterizes a vertical segment through the origin on the `p x p` grid.
    /// The cross-section is Gaussian; the ends use box coverage.
    pub fn render(&self, basis: &BasisSet) -> Vec<f64> {
        basis
            .grid()
            .iter()
            .map(|x| {
                let across = (-x[0] * x[0] / (2.0 * self.sigma * self.sigma)).exp();
                let along = (self.length / 2.0 + 0.5 - x[1].abs()).clamp(0.0, 1.0);
                self.peak * across * along
            })
            .collect()
    }
}

/// Dictionary from explicit streak shapes, one atom each, replicated across
/// colour channels.
pub fn dictionary_from_streaks(p: usize, shapes: &[StreakShape]) -> Result<KernelDictionary> {
    let basis = BasisSet::new(p)?;
    let n = basis.len();
    let mut coeffs = vec![0.0; shapes.len() * n * COLOR_CHANNELS];
    for (a, shape) in shapes.iter().enumerate() {
        let w = basis.fit_coefficients_ls(&shape.render(&basis))?;
        for (b, wb) in w.iter().enumerate() {
            for c in 0..COLOR_CHANNELS {
                coeffs[(a * n + b) * COLOR_CHANNELS + c] = *wb;
            }
        }
    }
    KernelDictionary::new(p, shapes.len(), coeffs, false)
}

/// Streak shapes drawn for [`streak_init_dictionary`].
pub fn streak_shapes(p: usize, m: usize, seed: u64) -> Vec<StreakShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pf = p as f64;
    (0..m)
        .map(|_| StreakShape {
            length: rng.random_range(0.4 * pf..=0.9 * pf),
            sigma: rng.random_range(0.5..=1.0),
            peak: rng.random_range(0.5..=1.0),
        })
        .collect()
}

/// Streak-like initialization: thin anti-aliased vertical segments with
/// random length, width and intensity, fitted onto the basis.
pub fn streak_init_dictionary(p: usize, m: usize, seed: u64) -> Result<KernelDictionary> {
    if p % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd, got {p}")));
    }
    if m == 0 {
        return Err(Error::invalid("dictionary needs at least one atom"));
    }
    dictionary_from_streaks(p, &streak_shapes(p, m, seed))
}
