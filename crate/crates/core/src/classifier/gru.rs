use crate::embed::glorot;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Gated recurrent unit weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::config("GRU widths must be positive"));
        }
        let (i, h) = (input_dim, hidden_dim);
        let mut w =
            |store: &mut ParamStore<T>, name: &str| store.add(name, glorot(rng, &[h, i], i, h));
        let (w_z, w_r, w_h) = (
            w(store, "gru.w_z"),
            w(store, "gru.w_r"),
            w(store, "gru.w_h"),
        );
        let mut u =
            |store: &mut ParamStore<T>, name: &str| store.add(name, glorot(rng, &[h, h], h, h));
        let (u_z, u_r, u_h) = (
            u(store, "gru.u_z"),
            u(store, "gru.u_r"),
            u(store, "gru.u_h"),
        );
        let mut b = |name: &str| store.add(name, Tensor::zeros([h]));
        let (b_z, b_r, b_h) = (b("gru.b_z"), b("gru.b_r"), b("gru.b_h"));
        Ok(Self {
            input_dim,
            hidden_dim,
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
        })
    }

    /// One recurrence step on a `d_h` vector or a `B×d_h` batch:
    ///
    /// ```text
    /// z  = σ(W_z x + U_z h + b_z)
    /// r  = σ(W_r x + U_r h + b_r)
    /// h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
    /// h' = (1 - z) ⊙ h + z ⊙ h~
    /// ```
    pub fn gru_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        h_prev: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        let hs = g.shape(h_prev);
        if hs.last() != Some(&self.hidden_dim) || g.shape(x).last() != Some(&self.input_dim) {
            return Err(Error::contract(format!(
                "gru_step: hidden {:?} / input {:?} do not match widths {}/{}",
                hs,
                g.shape(x),
                self.hidden_dim,
                self.input_dim
            )));
        }
        let gate =
            |g: &mut Graph<T>, w: ParamId, u: ParamId, b: ParamId, h: NodeId| -> Result<NodeId> {
                let (w, u, b) = (g.param(store, w), g.param(store, u), g.param(store, b));
                let wx = g.affine(x, w, Some(b))?;
                let uh = g.affine(h, u, None)?;
                g.add(wx, uh)
            };
        let z = gate(g, self.w_z, self.u_z, self.b_z, h_prev)?;
        let z = g.sigmoid(z);
        let r = gate(g, self.w_r, self.u_r, self.b_r, h_prev)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h_prev)?;
        let cand = gate(g, self.w_h, self.u_h, self.b_h, rh)?;
        let cand = g.tanh(cand);
        let keep = g.one_minus(z);
        let carried = g.mul(keep, h_prev)?;
        let fresh = g.mul(z, cand)?;
        g.add(carried, fresh)
    }

    /// Folds [`gru_step`](Self::gru_step) over `inputs` from a zero state.
    pub fn encode_sequence<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("encode_sequence: empty sequence"))?;
        let mut shape = g.shape(first).to_vec();
        *shape.last_mut().expect("nonempty shape") = self.hidden_dim;
        let mut h = g.input(Tensor::zeros(shape));
        for &x in inputs {
            h = self.gru_step(g, store, h, x)?;
        }
        Ok(h)
    }
}

/// Linear layer to category logits followed by softmax.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub classes: usize,
}

impl HeadParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        hidden_dim: usize,
        classes: usize,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 categories, got {classes}"
            )));
        }
        Ok(Self {
            weight: store.add(
                "head.weight",
                glorot(rng, &[classes, hidden_dim], hidden_dim, classes),
            ),
            bias: store.add("head.bias", Tensor::zeros([classes])),
            classes,
        })
    }

    /// `w_j · e + b_j` for every category.
    pub fn logits<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        e: NodeId,
    ) -> Result<NodeId> {
        let (w, b) = (g.param(store, self.weight), g.param(store, self.bias));
        g.affine(e, w, Some(b))
    }

    /// Posterior class probabilities for `e`.
    pub fn classify<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        e: NodeId,
    ) -> Result<NodeId> {
        let z = self.logits(g, store, e)?;
        g.softmax(z)
    }
}
