//! Recovering rain factors from a target rain layer.
//!
//! The objective is `mean((R(v) - R*)^2) + lambda * rotTV(R(v), theta)`
//! where `R(v)` re-renders the rain layer from the fixed dictionary, noise
//! and rain-map network. Gradients are exact (ReLU, clamp and L1
//! subgradients are 0 at their kinks) and the optimizer is plain gradient
//! descent on `(theta, ln s_l, ln s_w, alpha, tau)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{cascade_fields, conv_same_adjoint, kernel_dot, kernel_gradient};
use crate::error::{Error, Result};
use crate::parametrization::{BasisSet, TransformParams};
use crate::rain_kernel::{
    dictionary_from_streaks, AtomField, KernelDictionary, MixingWeights, StageRole, StreakShape,
};
use crate::resnet::{backward_theta, forward_trace, RotResNetWeights};
use crate::rot_tv::DiffFilterSpec;
use crate::scene::standard_normal_noise;
use crate::tensor::{KernelTensor, Tensor3};

/// Which variables the optimizer may move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FreeSet {
    pub theta: bool,
    pub s_l: bool,
    pub s_w: bool,
    pub alpha: bool,
    pub tau: bool,
}

impl FreeSet {
    pub fn all() -> Self {
        Self {
            theta: true,
            s_l: true,
            s_w: true,
            alpha: true,
            tau: true,
        }
    }

    /// The transform factors `{theta, s_l, s_w}`.
    pub fn transform() -> Self {
        Self {
            theta: true,
            s_l: true,
            s_w: true,
            ..Self::default()
        }
    }

    pub fn alpha_only() -> Self {
        Self {
            alpha: true,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.theta || self.s_l || self.s_w || self.alpha || self.tau)
    }

    /// Parses a comma-separated list such as `theta,s_l,s_w`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut f = Self::default();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "theta" => f.theta = true,
                "s_l" | "sl" => f.s_l = true,
                "s_w" | "sw" => f.s_w = true,
                "alpha" => f.alpha = true,
                "tau" => f.tau = true,
                other => return Err(Error::invalid(format!("unknown free variable '{other}'"))),
            }
        }
        if f.is_empty() {
            return Err(Error::invalid("free-variable set is empty"));
        }
        Ok(f)
    }
}

/// A point in factor space; `theta` in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryVariables {
    pub theta: f64,
    pub s_l: f64,
    pub s_w: f64,
    /// One matrix per cascade stage.
    pub alpha: Vec<MixingWeights>,
    pub tau: f64,
}

impl RecoveryVariables {
    fn transform(&self) -> Result<TransformParams> {
        TransformParams::new(self.theta, self.s_l, self.s_w)
    }
}

/// Gradient with respect to the natural variables (radians, raw scales).
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryGradient {
    pub theta: f64,
    pub s_l: f64,
    pub s_w: f64,
    pub alpha: Vec<MixingWeights>,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub step: f64,
    pub max_iters: usize,
    /// Minimum best-loss improvement over `window` iterations.
    pub tolerance: f64,
    pub window: usize,
    /// Losses above this (or non-finite) end the run as diverged.
    pub divergence: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            step: 1e-2,
            max_iters: 2000,
            tolerance: 1e-10,
            window: 50,
            divergence: 1e6,
        }
    }
}

/// Fixed context plus the target and the objective weights.
#[derive(Clone, Debug)]
pub struct RecoveryProblem {
    pub target: Tensor3,
    pub dict: KernelDictionary,
    pub map_weights: RotResNetWeights,
    pub noise: Tensor3,
    pub free: FreeSet,
    pub lambda: f64,
    pub settings: OptimizerSettings,
    pub tv: DiffFilterSpec,
}

impl RecoveryProblem {
    pub fn new(
        target: Tensor3,
        dict: KernelDictionary,
        map_weights: RotResNetWeights,
        noise: Tensor3,
        free: FreeSet,
        lambda: f64,
    ) -> Result<Self> {
        let p = Self {
            target,
            dict,
            map_weights,
            noise,
            free,
            lambda,
            settings: OptimizerSettings::default(),
            tv: DiffFilterSpec::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::invalid("free-variable set is empty"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.dict.per_atom_theta() {
            return Err(Error::invalid(
                "factor recovery supports a scalar orientation only",
            ));
        }
        let (h, w, k) = self.noise.shape();
        if self.target.shape() != (h, w, 3) {
            return Err(Error::shape(format!(
                "target is {:?}, noise implies {}x{}x3",
                self.target.shape(),
                h,
                w
            )));
        }
        if self.map_weights.in_channels != k || self.map_weights.out_channels != k {
            return Err(Error::shape("rain-map network must map K -> K channels"));
        }
        Ok(())
    }

    fn check_vars(&self, v: &RecoveryVariables) -> Result<()> {
        if v.alpha.is_empty() {
            return Err(Error::invalid("at least one cascade stage is required"));
        }
        let k = self.noise.channels();
        for a in &v.alpha {
            if a.m() != self.dict.atoms() || a.k() != k {
                return Err(Error::shape(format!(
                    "alpha is {}x{}, expected {}x{}",
                    a.m(),
                    a.k(),
                    self.dict.atoms(),
                    k
                )));
            }
        }
        if !v.theta.is_finite() || !v.tau.is_finite() {
            return Err(Error::invalid("variables must be finite"));
        }
        Ok(())
    }

    /// Renders the (clamped) rain layer for `v`.
    pub fn render(&self, v: &RecoveryVariables) -> Result<Tensor3> {
        Ok(self.forward(v, false)?.layer)
    }

    fn forward(&self, v: &RecoveryVariables, with_derivatives: bool) -> Result<Forward> {
        self.check_vars(v)?;
        let t = v.transform()?;
        let basis = BasisSet::new(self.dict.p())?;
        let atoms = self.dict.discretize(&basis, &[t], with_derivatives)?;
        let last = v.alpha.len() - 1;
        let roles: Vec<StageRole> = (0..v.alpha.len())
            .map(|s| if s == last { StageRole::Final } else { StageRole::Intermediate })
            .collect();
        let mass = self.dict.atom_mass();
        let kernels: Vec<KernelTensor> = v
            .alpha
            .iter()
            .zip(&roles)
            .map(|(a, &r)| atoms.mix_field(r, a, AtomField::Value, mass))
            .collect();
        let (pre, trace) = forward_trace(&self.noise, v.theta, &self.map_weights)?;
        let map = pre.map(|x| (x - v.tau).max(0.0));
        let refs: Vec<&KernelTensor> = kernels.iter().collect();
        let fields = cascade_fields(&map, &refs)?;
        let layer = fields.last().unwrap().map(|x| x.max(0.0));
        Ok(Forward {
            atoms,
            roles,
            kernels,
            pre,
            trace,
            fields,
            layer,
        })
    }

    fn objective(&self, v: &RecoveryVariables, f: &Forward) -> Result<(f64, Option<crate::rot_tv::RotTvGrad>)> {
        let n = f.layer.data().len().max(1) as f64;
        let mse = f
            .layer
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        if self.lambda == 0.0 {
            return Ok((mse, None));
        }
        let tv = self.tv.loss_and_grad(&f.layer, v.theta)?;
        Ok((mse + self.lambda * tv.loss, Some(tv)))
    }

    /// `mean((R - R*)^2) + lambda * rotTV(R, theta)`.
    pub fn loss(&self, v: &RecoveryVariables) -> Result<f64> {
        let f = self.forward(v, false)?;
        Ok(self.objective(v, &f)?.0)
    }

    /// Loss and analytic gradient.
    pub fn loss_and_grad(&self, v: &RecoveryVariables) -> Result<(f64, RecoveryGradient)> {
        let f = self.forward(v, true)?;
        let (loss, tv) = self.objective(v, &f)?;
        let n = f.layer.data().len().max(1) as f64;
        let rpre = f.fields.last().unwrap();
        let mut g = f.layer.zip_map(&self.target, |a, b| 2.0 * (a - b) / n)?;
        let mut d_theta = 0.0;
        if let Some(tv) = &tv {
            g = g.zip_map(&tv.d_layer, |a, b| a + self.lambda * b)?;
            d_theta += self.lambda * tv.d_theta;
        }
        for (gv, &r) in g.data_mut().iter_mut().zip(rpre.data()) {
            if r <= 0.0 {
                *gv = 0.0;
            }
        }
        let mass = self.dict.atom_mass();
        let p = self.dict.p();
        let (mut d_s_l, mut d_s_w) = (0.0, 0.0);
        let mut d_alpha = vec![MixingWeights::filled(0, 0, 0.0); v.alpha.len()];
        for s in (0..v.alpha.len()).rev() {
            let role = f.roles[s];
            let diag: Vec<(usize, usize)>;
            let pairs = match role {
                StageRole::Final => None,
                StageRole::Intermediate => {
                    diag = (0..f.kernels[s].c_in()).map(|k| (k, k)).collect();
                    Some(diag.as_slice())
                }
            };
            let gk = kernel_gradient(&f.fields[s], &g, p, pairs)?;
            let a = &v.alpha[s];
            d_theta += kernel_dot(&gk, &f.atoms.mix_field(role, a, AtomField::DTheta, mass));
            d_s_l += kernel_dot(&gk, &f.atoms.mix_field(role, a, AtomField::DSl, mass));
            d_s_w += kernel_dot(&gk, &f.atoms.mix_field(role, a, AtomField::DSw, mass));
            d_alpha[s] = f.atoms.alpha_gradient(role, &gk, mass);
            g = conv_same_adjoint(&g, &f.kernels[s])?;
        }
        let mut d_tau = 0.0;
        for (gv, &x) in g.data_mut().iter_mut().zip(f.pre.data()) {
            if x > v.tau {
                d_tau -= *gv;
            } else {
                *gv = 0.0;
            }
        }
        d_theta += backward_theta(&self.map_weights, &f.trace, &g)?;
        Ok((
            loss,
            RecoveryGradient {
                theta: d_theta,
                s_l: d_s_l,
                s_w: d_s_w,
                alpha: d_alpha,
                tau: d_tau,
            },
        ))
    }

    /// Every kink indicator of the objective at `v`: network ReLUs, the map
    /// threshold, the layer clamp and (when `lambda > 0`) the L1 signs.
    pub fn activation_pattern(&self, v: &RecoveryVariables) -> Result<Vec<i8>> {
        let f = self.forward(v, false)?;
        let mut pat: Vec<i8> = f.trace.activation_pattern().map(i8::from).collect();
        pat.extend(f.pre.data().iter().map(|&x| i8::from(x > v.tau)));
        pat.extend(f.fields.last().unwrap().data().iter().map(|&x| i8::from(x > 0.0)));
        if self.lambda > 0.0 {
            let tv = self.tv.loss_and_grad(&f.layer, v.theta)?;
            pat.extend(tv.sign.data().iter().map(|&s| s as i8));
        }
        Ok(pat)
    }

    /// Names of the free coordinates in [`Self::pack`] order.
    pub fn coordinate_names(&self, v: &RecoveryVariables) -> Vec<String> {
        let mut names = Vec::new();
        if self.free.theta {
            names.push("theta".to_string());
        }
        if self.free.s_l {
            names.push("s_l".to_string());
        }
        if self.free.s_w {
            names.push("s_w".to_string());
        }
        if self.free.alpha {
            for (s, a) in v.alpha.iter().enumerate() {
                for m in 0..a.m() {
                    for k in 0..a.k() {
                        names.push(format!("alpha[{s}][{m}][{k}]"));
                    }
                }
            }
        }
        if self.free.tau {
            names.push("tau".to_string());
        }
        names
    }

    /// Free natural variables as a flat vector.
    pub fn pack(&self, v: &RecoveryVariables) -> Vec<f64> {
        let g = RecoveryGradient {
            theta: v.theta,
            s_l: v.s_l,
            s_w: v.s_w,
            alpha: v.alpha.clone(),
            tau: v.tau,
        };
        self.pack_gradient(&g)
    }

    pub fn pack_gradient(&self, g: &RecoveryGradient) -> Vec<f64> {
        let mut out = Vec::new();
        if self.free.theta {
            out.push(g.theta);
        }
        if self.free.s_l {
            out.push(g.s_l);
        }
        if self.free.s_w {
            out.push(g.s_w);
        }
        if self.free.alpha {
            for a in &g.alpha {
                out.extend_from_slice(a.values());
            }
        }
        if self.free.tau {
            out.push(g.tau);
        }
        out
    }

    /// Inverse of [`Self::pack`], filling fixed variables from `base`.
    pub fn unpack(&self, base: &RecoveryVariables, x: &[f64]) -> RecoveryVariables {
        let mut v = base.clone();
        let mut it = x.iter().copied();
        if self.free.theta {
            v.theta = it.next().unwrap();
        }
        if self.free.s_l {
            v.s_l = it.next().unwrap();
        }
        if self.free.s_w {
            v.s_w = it.next().unwrap();
        }
        if self.free.alpha {
            for a in &mut v.alpha {
                for val in a.values_mut() {
                    *val = it.next().unwrap();
                }
            }
        }
        if self.free.tau {
            v.tau = it.next().unwrap();
        }
        v
    }
}

struct Forward {
    atoms: crate::rain_kernel::DiscreteAtoms,
    roles: Vec<StageRole>,
    kernels: Vec<KernelTensor>,
    pre: Tensor3,
    trace: crate::resnet::ResNetTrace,
    fields: Vec<Tensor3>,
    layer: Tensor3,
}

pub fn recovery_loss(v: &RecoveryVariables, problem: &RecoveryProblem) -> Result<f64> {
    problem.loss(v)
}

pub fn recovery_grad(v: &RecoveryVariables, problem: &RecoveryProblem) -> Result<RecoveryGradient> {
    problem.loss_and_grad(v).map(|(_, g)| g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub sample: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(|a|, |n|)`, 0 when both are below `1e-10`.
    pub rel_error: f64,
    /// The difference stencil crossed a kink.
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub h: f64,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.entries.iter().filter(|e| !e.excluded).count()
    }

    pub fn excluded(&self) -> usize {
        self.entries.iter().filter(|e| e.excluded).count()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| !e.excluded)
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    }

    /// At least one coordinate checked and all checked within tolerance.
    pub fn passed(&self) -> bool {
        self.checked() > 0
            && self
                .entries
                .iter()
                .all(|e| e.excluded || e.rel_error <= self.tolerance)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "sample,coordinate,analytic,numeric,rel_error,excluded")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{}",
                e.sample, e.name, e.analytic, e.numeric, e.rel_error, e.excluded
            )?;
        }
        Ok(())
    }
}

/// Central-difference check of the analytic gradient at every point, for
/// every free coordinate. Coordinates whose stencil `v +- h` changes any
/// kink indicator are listed as excluded.
pub fn grad_check(
    problem: &RecoveryProblem,
    points: &[RecoveryVariables],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let mut entries = Vec::new();
    for (sample, v) in points.iter().enumerate() {
        let (_, grad) = problem.loss_and_grad(v)?;
        let analytic = problem.pack_gradient(&grad);
        let names = problem.coordinate_names(v);
        let x = problem.pack(v);
        let base_pattern = problem.activation_pattern(v)?;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let (vp, vm) = (problem.unpack(v, &xp), problem.unpack(v, &xm));
            let numeric = (problem.loss(&vp)? - problem.loss(&vm)?) / (2.0 * h);
            let excluded = problem.activation_pattern(&vp)? != base_pattern
                || problem.activation_pattern(&vm)? != base_pattern;
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs());
            let rel_error = if scale < 1e-10 { 0.0 } else { (a - numeric).abs() / scale };
            entries.push(GradCheckEntry {
                sample,
                name: names[i].clone(),
                analytic: a,
                numeric,
                rel_error,
                excluded,
            });
        }
    }
    Ok(GradCheckReport {
        h,
        tolerance,
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryStatus {
    Converged,
    IterationCapped,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub variables: RecoveryVariables,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryTrace {
    pub rows: Vec<TraceRow>,
    pub best_losses: Vec<f64>,
    pub status: RecoveryStatus,
    pub best_iteration: usize,
}

impl RecoveryTrace {
    /// `iteration,loss,grad_norm,theta_deg,s_l,s_w,tau,alpha...`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let Some(first) = self.rows.first() else {
            return writeln!(w, "iteration,loss,grad_norm,theta_deg,s_l,s_w,tau");
        };
        write!(w, "iteration,loss,grad_norm,theta_deg,s_l,s_w,tau")?;
        for (s, a) in first.variables.alpha.iter().enumerate() {
            for m in 0..a.m() {
                for k in 0..a.k() {
                    write!(w, ",alpha_{s}_{m}_{k}")?;
                }
            }
        }
        writeln!(w)?;
        for r in &self.rows {
            let v = &r.variables;
            write!(
                w,
                "{},{:e},{:e},{},{},{},{}",
                r.iteration,
                r.loss,
                r.grad_norm,
                v.theta.to_degrees(),
                v.s_l,
                v.s_w,
                v.tau
            )?;
            for a in &v.alpha {
                for x in a.values() {
                    write!(w, ",{x}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fixed-step gradient descent; returns the best iterate seen.
pub fn fit_factors(
    problem: &RecoveryProblem,
    init: &RecoveryVariables,
) -> Result<(RecoveryVariables, RecoveryTrace)> {
    problem.validate()?;
    init.transform()?;
    let st = problem.settings;
    let mut v = init.clone();
    let mut best = (f64::INFINITY, init.clone(), 0usize);
    let mut rows = Vec::new();
    let mut best_losses = Vec::new();
    let mut status = RecoveryStatus::IterationCapped;
    for it in 0..st.max_iters {
        let (loss, g) = problem.loss_and_grad(&v)?;
        // descent direction in optimizer coordinates
        let mut step = problem.pack_gradient(&g);
        let mut idx = usize::from(problem.free.theta);
        if problem.free.s_l {
            step[idx] *= v.s_l;
            idx += 1;
        }
        if problem.free.s_w {
            step[idx] *= v.s_w;
        }
        let grad_norm = step.iter().map(|x| x * x).sum::<f64>().sqrt();
        rows.push(TraceRow {
            iteration: it,
            loss,
            grad_norm,
            variables: v.clone(),
        });
        if !loss.is_finite() || loss > st.divergence || !grad_norm.is_finite() {
            status = RecoveryStatus::Diverged;
            best_losses.push(best.0);
            break;
        }
        if loss < best.0 {
            best = (loss, v.clone(), it);
        }
        best_losses.push(best.0);
        if it >= st.window && best_losses[it - st.window] - best.0 < st.tolerance {
            status = RecoveryStatus::Converged;
            break;
        }
        let mut next = v.clone();
        let mut s = step.iter().copied();
        if problem.free.theta {
            next.theta -= st.step * s.next().unwrap();
        }
        if problem.free.s_l {
            next.s_l = (v.s_l.ln() - st.step * s.next().unwrap()).exp();
        }
        if problem.free.s_w {
            next.s_w = (v.s_w.ln() - st.step * s.next().unwrap()).exp();
        }
        if problem.free.alpha {
            for a in &mut next.alpha {
                for x in a.values_mut() {
                    *x -= st.step * s.next().unwrap();
                }
            }
        }
        if problem.free.tau {
            next.tau -= st.step * s.next().unwrap();
        }
        if next.transform().is_err() {
            status = RecoveryStatus::Diverged;
            break;
        }
        v = next;
    }
    let trace = RecoveryTrace {
        rows,
        best_losses,
        status,
        best_iteration: best.2,
    };
    Ok((best.1, trace))
}

/// Recipe for a self-contained synthetic recovery problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub size: usize,
    pub p: usize,
    pub streaks: Vec<StreakShape>,
    pub maps: usize,
    pub stages: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub block_gain: f64,
    pub theta_deg: f64,
    pub s_l: f64,
    pub s_w: f64,
    pub tau: f64,
    /// Alpha entries are drawn from `[alpha_lo, alpha_hi]`.
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub lambda: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            size: 64,
            p: 11,
            streaks: vec![StreakShape {
                length: 5.0,
                sigma: 0.8,
                peak: 1.0,
            }],
            maps: 2,
            stages: 1,
            hidden: 4,
            blocks: 1,
            block_gain: 0.5,
            theta_deg: 20.0,
            s_l: 0.65,
            s_w: 1.15,
            tau: 1.0,
            alpha_lo: 0.5,
            alpha_hi: 1.0,
            lambda: 0.0,
        }
    }
}

/// A generated problem together with the variables that produced its target.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub problem: RecoveryProblem,
    pub truth: RecoveryVariables,
}

impl SyntheticSpec {
    pub fn build(&self, seed: u64, free: FreeSet) -> Result<SyntheticProblem> {
        let dict = dictionary_from_streaks(self.p, &self.streaks)?;
        let map_weights =
            RotResNetWeights::seeded(self.maps, self.hidden, self.maps, self.blocks, seed ^ 0x5eed, self.block_gain)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = standard_normal_noise(self.size, self.size, self.maps, &mut rng);
        let alpha = (0..self.stages)
            .map(|_| {
                let vals = (0..dict.atoms() * self.maps)
                    .map(|_| rng.random_range(self.alpha_lo..=self.alpha_hi))
                    .collect();
                MixingWeights::new(dict.atoms(), self.maps, vals)
            })
            .collect::<Result<Vec<_>>>()?;
        let truth = RecoveryVariables {
            theta: self.theta_deg.to_radians(),
            s_l: self.s_l,
            s_w: self.s_w,
            alpha,
            tau: self.tau,
        };
        let mut problem = RecoveryProblem::new(
            Tensor3::zeros(self.size, self.size, 3),
            dict,
            map_weights,
            noise,
            free,
            self.lambda,
        )?;
        problem.target = problem.render(&truth)?;
        Ok(SyntheticProblem { problem, truth })
    }
}
