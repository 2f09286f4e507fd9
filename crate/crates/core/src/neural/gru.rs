use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::dense::sigmoid;
use super::flat;
use crate::error::{Error, Result};

/// Gated recurrent unit with the reset gate applied after the recurrent
/// product:
///
/// ```text
/// r = σ(W_xr·x + W_hr·h + b_r)
/// z = σ(W_xz·x + W_hz·h + b_z)
/// h' = (1 − z)∘h + z∘tanh(W_xh·x + r∘(W_hh·h) + b_h)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_xr: Array2<f64>,
    pub w_hr: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_xz: Array2<f64>,
    pub w_hz: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_xh: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_h: Array1<f64>,
}

struct StepCache {
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    u: Array2<f64>,
    c: Array2<f64>,
}

fn step_output(s: &StepCache) -> Array2<f64> {
    // (1 − z)∘h + z∘c
    &s.h_prev + &(&s.z * &(&s.c - &s.h_prev))
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let m = |cols| Array2::zeros((hidden, cols));
        GruCell {
            w_xr: m(input),
            w_hr: m(hidden),
            b_r: Array1::zeros(hidden),
            w_xz: m(input),
            w_hz: m(hidden),
            b_z: Array1::zeros(hidden),
            w_xh: m(input),
            w_hh: m(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    /// Uniform ±1/√fan_in on every matrix, zero biases.
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut cell = GruCell::zeros(input, hidden);
        let bx = 1.0 / (input.max(1) as f64).sqrt();
        let bh = 1.0 / (hidden.max(1) as f64).sqrt();
        for m in [&mut cell.w_xr, &mut cell.w_xz, &mut cell.w_xh] {
            m.mapv_inplace(|_| rng.random_range(-bx..bx));
        }
        for m in [&mut cell.w_hr, &mut cell.w_hz, &mut cell.w_hh] {
            m.mapv_inplace(|_| rng.random_range(-bh..bh));
        }
        cell
    }

    pub fn hidden_size(&self) -> usize {
        self.b_h.len()
    }

    pub fn input_size(&self) -> usize {
        self.w_xh.ncols()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden_size(), self.input_size());
        let ok = [&self.w_xr, &self.w_xz, &self.w_xh]
            .iter()
            .all(|m| m.dim() == (h, i) && m.is_standard_layout())
            && [&self.w_hr, &self.w_hz, &self.w_hh]
                .iter()
                .all(|m| m.dim() == (h, h) && m.is_standard_layout())
            && self.b_r.len() == h
            && self.b_z.len() == h;
        if !ok {
            return Err(Error::Dimension(format!(
                "GRU cell parameters inconsistent with hidden={h}, input={i}"
            )));
        }
        Ok(())
    }

    /// One recurrence step for a single sample.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if x.len() != self.input_size() || h_prev.len() != self.hidden_size() {
            return Err(Error::Dimension(format!(
                "GRU step expects x[{}], h[{}]; got x[{}], h[{}]",
                self.input_size(),
                self.hidden_size(),
                x.len(),
                h_prev.len()
            )));
        }
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row");
        let h = Array2::from_shape_vec((1, h_prev.len()), h_prev.to_vec()).expect("row");
        let step = self.step_batch(x, h);
        Ok(flat(step_output(&step)))
    }

    fn step_batch(&self, x: ArrayView2<f64>, h_prev: Array2<f64>) -> StepCache {
        let mut r = x.dot(&self.w_xr.t()) + h_prev.dot(&self.w_hr.t()) + &self.b_r;
        r.mapv_inplace(sigmoid);
        let mut z = x.dot(&self.w_xz.t()) + h_prev.dot(&self.w_hz.t()) + &self.b_z;
        z.mapv_inplace(sigmoid);
        let u = h_prev.dot(&self.w_hh.t());
        let mut c = x.dot(&self.w_xh.t()) + &r * &u + &self.b_h;
        c.mapv_inplace(f64::tanh);
        StepCache { h_prev, r, z, u, c }
    }

    /// Runs the cell over a batch of flattened sequences (`batch × steps·input`)
    /// from a zero state, optionally in reverse time order.
    fn run(&self, x: &Array2<f64>, reverse: bool) -> (Array2<f64>, Vec<StepCache>) {
        let input = self.input_size();
        let steps = x.ncols() / input;
        let mut h = Array2::zeros((x.nrows(), self.hidden_size()));
        let mut caches = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let xt = x.slice(s![.., t * input..(t + 1) * input]);
            let cache = self.step_batch(xt, h);
            h = step_output(&cache);
            caches.push(cache);
        }
        (h, caches)
    }

    /// Backpropagation through time. Accumulates parameter gradients into
    /// `acc` and input gradients into `dx`.
    fn backprop(
        &self,
        x: &Array2<f64>,
        caches: &[StepCache],
        reverse: bool,
        dh_last: Array2<f64>,
        acc: &mut GruCell,
        dx: &mut Array2<f64>,
    ) {
        let input = self.input_size();
        let steps = caches.len();
        let mut dh = dh_last;
        for k in (0..steps).rev() {
            let t = if reverse { steps - 1 - k } else { k };
            let st = &caches[k];
            let xt = x.slice(s![.., t * input..(t + 1) * input]);

            let dz = &dh * &(&st.c - &st.h_prev);
            let dc = &dh * &st.z;
            let mut dh_prev = &dh * &st.z.mapv(|z| 1.0 - z);

            let da_c = dc * &st.c.mapv(|c| 1.0 - c * c);
            let dr = &da_c * &st.u;
            let du = &da_c * &st.r;
            let da_z = dz * &st.z.mapv(|z| z * (1.0 - z));
            let da_r = dr * &st.r.mapv(|r| r * (1.0 - r));

            acc.w_xh += &da_c.t().dot(&xt);
            acc.b_h += &da_c.sum_axis(Axis(0));
            acc.w_hh += &du.t().dot(&st.h_prev);
            acc.w_xz += &da_z.t().dot(&xt);
            acc.w_hz += &da_z.t().dot(&st.h_prev);
            acc.b_z += &da_z.sum_axis(Axis(0));
            acc.w_xr += &da_r.t().dot(&xt);
            acc.w_hr += &da_r.t().dot(&st.h_prev);
            acc.b_r += &da_r.sum_axis(Axis(0));

            dh_prev += &du.dot(&self.w_hh);
            dh_prev += &da_z.dot(&self.w_hz);
            dh_prev += &da_r.dot(&self.w_hr);

            let dxt = da_c.dot(&self.w_xh) + da_z.dot(&self.w_xz) + da_r.dot(&self.w_xr);
            let mut slot = dx.slice_mut(s![.., t * input..(t + 1) * input]);
            slot += &dxt;

            dh = dh_prev;
        }
    }

    fn into_flat(self) -> Vec<Vec<f64>> {
        [
            flat(self.w_xr),
            flat(self.w_hr),
            flat(self.b_r),
            flat(self.w_xz),
            flat(self.w_hz),
            flat(self.b_z),
            flat(self.w_xh),
            flat(self.w_hh),
            flat(self.b_h),
        ]
        .into()
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        vec![
            self.w_xr.as_slice().expect("standard layout"),
            self.w_hr.as_slice().expect("standard layout"),
            self.b_r.as_slice().expect("standard layout"),
            self.w_xz.as_slice().expect("standard layout"),
            self.w_hz.as_slice().expect("standard layout"),
            self.b_z.as_slice().expect("standard layout"),
            self.w_xh.as_slice().expect("standard layout"),
            self.w_hh.as_slice().expect("standard layout"),
            self.b_h.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_xr.as_slice_mut().expect("standard layout"),
            self.w_hr.as_slice_mut().expect("standard layout"),
            self.b_r.as_slice_mut().expect("standard layout"),
            self.w_xz.as_slice_mut().expect("standard layout"),
            self.w_hz.as_slice_mut().expect("standard layout"),
            self.b_z.as_slice_mut().expect("standard layout"),
            self.w_xh.as_slice_mut().expect("standard layout"),
            self.w_hh.as_slice_mut().expect("standard layout"),
            self.b_h.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Two GRU cells reading a sequence in opposite directions. The output is
/// `[h_forward_last ; h_backward_last]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGruLayer {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
}

pub(crate) struct BiGruCache {
    input: Array2<f64>,
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
}

impl BiGruLayer {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let forward_cell = GruCell::new(input, hidden, rng);
        let backward_cell = GruCell::new(input, hidden, rng);
        BiGruLayer {
            forward_cell,
            backward_cell,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward_cell.hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.forward_cell.input_size()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.forward_cell.validate()?;
        self.backward_cell.validate()?;
        if self.forward_cell.hidden_size() != self.backward_cell.hidden_size()
            || self.forward_cell.input_size() != self.backward_cell.input_size()
        {
            return Err(Error::Dimension("Bi-GRU cells disagree on shape".into()));
        }
        Ok(())
    }

    /// Runs both directions over a single sequence of input vectors.
    pub fn forward(&self, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.validate()?;
        if sequence.is_empty() {
            return Err(Error::Argument("Bi-GRU needs a non-empty sequence".into()));
        }
        let input = self.input_size();
        if let Some(v) = sequence.iter().find(|v| v.len() != input) {
            return Err(Error::Dimension(format!(
                "Bi-GRU expects {input}-dim steps, got {}",
                v.len()
            )));
        }
        let seq = sequence.concat();
        let x = Array2::from_shape_vec((1, seq.len()), seq).expect("row");
        let (out, _) = self.forward_cached(&x);
        Ok(flat(out))
    }

    pub(crate) fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, BiGruCache) {
        let (hf, fwd) = self.forward_cell.run(x, false);
        let (hb, bwd) = self.backward_cell.run(x, true);
        let out = ndarray::concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same rows");
        (
            out,
            BiGruCache {
                input: x.clone(),
                fwd,
                bwd,
            },
        )
    }

    pub(crate) fn backward(
        &self,
        cache: &BiGruCache,
        grad: Array2<f64>,
        grads: &mut Vec<Vec<f64>>,
    ) -> Array2<f64> {
        let h = self.hidden_size();
        let i = self.input_size();
        let mut dx = Array2::zeros(cache.input.dim());
        let mut acc_f = GruCell::zeros(i, h);
        let mut acc_b = GruCell::zeros(i, h);
        self.forward_cell.backprop(
            &cache.input,
            &cache.fwd,
            false,
            grad.slice(s![.., ..h]).to_owned(),
            &mut acc_f,
            &mut dx,
        );
        self.backward_cell.backprop(
            &cache.input,
            &cache.bwd,
            true,
            grad.slice(s![.., h..]).to_owned(),
            &mut acc_b,
            &mut dx,
        );
        grads.extend(acc_f.into_flat());
        grads.extend(acc_b.into_flat());
        dx
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        let mut p = self.forward_cell.params();
        p.extend(self.backward_cell.params());
        p
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.forward_cell.params_mut();
        p.extend(self.backward_cell.params_mut());
        p
    }
}
