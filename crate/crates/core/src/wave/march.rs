use std::sync::atomic::Ordering;

use sprs::CsMat;

use super::{AdjointState, DiscreteState, WaveModel};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;

/// Scratch buffers for RK4 stages, reusable across steps.
#[derive(Debug, Clone)]
pub struct Workspace {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    forcing: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &WaveModel) -> Self {
        let n = model.state_len();
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            forcing: vec![0.0; n],
        }
    }
}

fn spmv(m: &CsMat<f64>, x: &[f64], y: &mut [f64]) {
    for (row, vec) in m.outer_iterator().enumerate() {
        let mut s = 0.0;
        for (c, v) in vec.iter() {
            s += v * x[c];
        }
        y[row] = s;
    }
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

impl WaveModel {
    /// `f = M m` for one seafloor slice.
    fn load_forcing(&self, m: &[f64], out: &mut [f64]) {
        spmv(&self.forcing, m, out);
    }

    /// One RK4 solver step with the forcing `f` held fixed.
    fn rk4(&self, w: &mut [f64], ws: &mut Workspace) {
        let h = self.dt_solver;
        let Workspace { k, tmp, forcing } = ws;
        let [k1, k2, k3, k4] = k;
        let stage = |input: &[f64], out: &mut Vec<f64>| {
            spmv(&self.op, input, out);
            for (o, f) in out.iter_mut().zip(forcing.iter()) {
                *o += f;
            }
        };
        stage(w, k1);
        for ((t, x), k) in tmp.iter_mut().zip(w.iter()).zip(k1.iter()) {
            *t = x + 0.5 * h * k;
        }
        stage(tmp, k2);
        for ((t, x), k) in tmp.iter_mut().zip(w.iter()).zip(k2.iter()) {
            *t = x + 0.5 * h * k;
        }
        stage(tmp, k3);
        for ((t, x), k) in tmp.iter_mut().zip(w.iter()).zip(k3.iter()) {
            *t = x + h * k;
        }
        stage(tmp, k4);
        for (i, x) in w.iter_mut().enumerate() {
            *x += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// Reverse-mode of [`rk4`](Self::rk4): replaces `lam` by `Aᵀ lam` and
    /// adds the forcing cotangent to `forcing_bar`.
    fn rk4_transpose(&self, lam: &mut [f64], forcing_bar: &mut [f64], ws: &mut Workspace) {
        let h = self.dt_solver;
        let Workspace { k, tmp: s, .. } = ws;
        let [k1, k2, k3, k4] = k;
        for i in 0..lam.len() {
            let l = lam[i];
            k1[i] = h / 6.0 * l;
            k2[i] = h / 3.0 * l;
            k3[i] = h / 3.0 * l;
            k4[i] = h / 6.0 * l;
        }
        let mut back = |kbar: &[f64], next: Option<(&mut Vec<f64>, f64)>, s: &mut Vec<f64>| {
            spmv(&self.op_t, kbar, s);
            for i in 0..lam.len() {
                lam[i] += s[i];
                forcing_bar[i] += kbar[i];
            }
            if let Some((prev, scale)) = next {
                for (p, v) in prev.iter_mut().zip(s.iter()) {
                    *p += scale * v;
                }
            }
        };
        back(k4, Some((k3, h)), s);
        back(k3, Some((k2, 0.5 * h)), s);
        back(k2, Some((k1, 0.5 * h)), s);
        back(k1, None, s);
    }

    fn check_param_slice(&self, m: &[f64], context: &'static str) -> Result<()> {
        if m.len() != self.n_param() {
            return Err(Error::dims(context, self.n_param(), m.len()));
        }
        if !all_finite(m) {
            return Err(Error::InvalidInput(format!(
                "{context}: non-finite forcing"
            )));
        }
        Ok(())
    }

    fn check_state(&self, w: &[f64], context: &'static str) -> Result<()> {
        if w.len() != self.state_len() {
            return Err(Error::dims(context, self.state_len(), w.len()));
        }
        Ok(())
    }

    /// One solver step `w ↦ A w + C m_k`.
    pub fn step(&self, state: &DiscreteState, m_k: &[f64]) -> Result<DiscreteState> {
        self.check_state(&state.0, "WaveModel::step")?;
        self.check_param_slice(m_k, "WaveModel::step")?;
        let mut ws = Workspace::new(self);
        self.load_forcing(m_k, &mut ws.forcing);
        let mut w = state.0.clone();
        self.rk4(&mut w, &mut ws);
        let step = self.counters.solver_steps.fetch_add(1, Ordering::Relaxed);
        if !all_finite(&w) {
            return Err(Error::Integration { step });
        }
        Ok(DiscreteState(w))
    }

    /// `Aᵀ λ` for one solver step.
    pub fn step_transpose(&self, adj: &AdjointState) -> Result<AdjointState> {
        self.check_state(&adj.0, "WaveModel::step_transpose")?;
        let mut ws = Workspace::new(self);
        let mut lam = adj.0.clone();
        let mut fbar = vec![0.0; self.state_len()];
        self.rk4_transpose(&mut lam, &mut fbar, &mut ws);
        let step = self.counters.solver_steps.fetch_add(1, Ordering::Relaxed);
        if !all_finite(&lam) {
            return Err(Error::Integration { step });
        }
        Ok(AdjointState(lam))
    }

    /// `Cᵀ λ` for one solver step: the seafloor cotangent.
    pub fn collect_source_transpose(&self, adj: &AdjointState) -> Result<Vec<f64>> {
        self.check_state(&adj.0, "WaveModel::collect_source_transpose")?;
        let mut ws = Workspace::new(self);
        let mut lam = adj.0.clone();
        let mut fbar = vec![0.0; self.state_len()];
        self.rk4_transpose(&mut lam, &mut fbar, &mut ws);
        let mut out = vec![0.0; self.n_param()];
        spmv(&self.forcing_t, &fbar, &mut out);
        Ok(out)
    }

    fn check_input(&self, m: &SpaceTimeField, group: usize, context: &'static str) -> Result<()> {
        if m.n_space() != self.n_param() {
            return Err(Error::dims(
                context,
                format!("{} seafloor nodes", self.n_param()),
                m.n_space(),
            ));
        }
        if m.n_time() == 0 || m.n_time() % group != 0 {
            return Err(Error::dims(
                context,
                format!("a positive multiple of {group} time steps"),
                m.n_time(),
            ));
        }
        if (m.dt() - self.data_dt()).abs() > 1e-12 * self.data_dt() {
            return Err(Error::dims(
                context,
                format!("dt = {}", self.data_dt()),
                format!("dt = {}", m.dt()),
            ));
        }
        Ok(())
    }

    /// Forward march from the homogeneous state, calling `sample(n, w)` at the
    /// end of every data step `n`.
    pub(crate) fn forward_march(
        &self,
        m: &SpaceTimeField,
        mut sample: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let mut ws = Workspace::new(self);
        let mut w = vec![0.0; self.state_len()];
        for n in 0..m.n_time() {
            self.load_forcing(m.slice(n), &mut ws.forcing);
            for _ in 0..self.substeps {
                self.rk4(&mut w, &mut ws);
            }
            let before = self
                .counters
                .solver_steps
                .fetch_add(self.substeps as u64, Ordering::Relaxed);
            if !all_finite(&w) {
                return Err(Error::Integration {
                    step: before + self.substeps as u64,
                });
            }
            sample(n, &w);
        }
        self.counters
            .forward_marches
            .fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Transposed march over `n_time` data steps. `inject(n, λ)` adds the
    /// observation cotangent of data step `n` before stepping back through it.
    pub(crate) fn transposed_march(
        &self,
        n_time: usize,
        mut inject: impl FnMut(usize, &mut [f64]),
    ) -> Result<SpaceTimeField> {
        let mut ws = Workspace::new(self);
        let n_param = self.n_param();
        let mut lam = vec![0.0; self.state_len()];
        let mut fbar = vec![0.0; self.state_len()];
        let mut out = vec![0.0; n_param * n_time];
        for n in (0..n_time).rev() {
            inject(n, &mut lam);
            fbar.iter_mut().for_each(|v| *v = 0.0);
            for _ in 0..self.substeps {
                self.rk4_transpose(&mut lam, &mut fbar, &mut ws);
            }
            let before = self
                .counters
                .solver_steps
                .fetch_add(self.substeps as u64, Ordering::Relaxed);
            if !all_finite(&lam) {
                return Err(Error::Integration {
                    step: before + self.substeps as u64,
                });
            }
            spmv(
                &self.forcing_t,
                &fbar,
                &mut out[n * n_param..(n + 1) * n_param],
            );
        }
        self.counters
            .transposed_marches
            .fetch_add(1, Ordering::Relaxed);
        Ok(SpaceTimeField::from_raw(
            n_param,
            n_time,
            self.data_dt(),
            out,
        ))
    }

    /// Transposed march seeded by a unit impulse on state entry `state_index`
    /// at the last of `n_time` data steps: slice `n` of the result is
    /// `Cᵀ (Aᵀ)^(n_time − 1 − n) e`.
    pub(crate) fn impulse_response(
        &self,
        state_index: usize,
        n_time: usize,
    ) -> Result<SpaceTimeField> {
        self.transposed_march(n_time, |n, lam| {
            if n + 1 == n_time {
                lam[state_index] += 1.0;
            }
        })
    }

    /// `d = F m` by time marching.
    pub fn simulate_p2o(&self, m: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_input(m, 1, "WaveModel::simulate_p2o")?;
        let nd = self.n_sensors();
        let mut d = vec![0.0; nd * m.n_time()];
        self.forward_march(m, |n, w| {
            for (slot, &i) in d[n * nd..(n + 1) * nd].iter_mut().zip(&self.sensor_state) {
                *slot = w[i];
            }
        })?;
        Ok(SpaceTimeField::from_raw(nd, m.n_time(), m.dt(), d))
    }

    /// `q = F_q m`, sampled at the end of every `qoi_subsample`-th data step.
    pub fn simulate_p2q(&self, m: &SpaceTimeField) -> Result<SpaceTimeField> {
        let r = self.observation().qoi_subsample;
        self.check_input(m, r, "WaveModel::simulate_p2q")?;
        let nq = self.n_qoi();
        let ntq = m.n_time() / r;
        let mut q = vec![0.0; nq * ntq];
        self.forward_march(m, |n, w| {
            if (n + 1) % r == 0 {
                let l = (n + 1) / r - 1;
                for (slot, &i) in q[l * nq..(l + 1) * nq].iter_mut().zip(&self.qoi_state) {
                    *slot = w[i];
                }
            }
        })?;
        Ok(SpaceTimeField::from_raw(nq, ntq, m.dt() * r as f64, q))
    }

    /// `Fᵀ d̃` by a transposed march.
    pub fn simulate_p2o_transpose(&self, d: &SpaceTimeField) -> Result<SpaceTimeField> {
        let nd = self.n_sensors();
        if d.n_space() != nd || d.n_time() == 0 {
            return Err(Error::dims(
                "WaveModel::simulate_p2o_transpose",
                format!("{nd} sensors"),
                d.n_space(),
            ));
        }
        self.transposed_march(d.n_time(), |n, lam| {
            for (&i, v) in self.sensor_state.iter().zip(d.slice(n)) {
                lam[i] += v;
            }
        })
    }

    /// `F_qᵀ q̃` by a transposed march.
    pub fn simulate_p2q_transpose(&self, q: &SpaceTimeField) -> Result<SpaceTimeField> {
        let nq = self.n_qoi();
        if q.n_space() != nq || q.n_time() == 0 {
            return Err(Error::dims(
                "WaveModel::simulate_p2q_transpose",
                format!("{nq} QoI points"),
                q.n_space(),
            ));
        }
        let r = self.observation().qoi_subsample;
        self.transposed_march(q.n_time() * r, |n, lam| {
            if (n + 1) % r == 0 {
                for (&i, v) in self.qoi_state.iter().zip(q.slice((n + 1) / r - 1)) {
                    lam[i] += v;
                }
            }
        })
    }
}
