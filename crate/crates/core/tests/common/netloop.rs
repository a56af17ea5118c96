//! Plain-loop evaluation of the Q network, one spot or action at a time,
//! reading weights straight from the parameter store.

use ndarray::Array2;
use topsim::nn::satop::{Activation, Mlp};
use topsim::nn::tape::LAYER_NORM_EPS;
use topsim::nn::{GeometryContext, ParamId, ParamStore, SatopNet};

pub type Rows = Vec<Vec<f64>>;

pub struct LoopNet<'a> {
    pub net: &'a SatopNet,
    pub store: &'a ParamStore,
}

pub fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (0..x.len()).map(|i| (x[i] - mean) * inv * gain[i] + bias[i]).collect()
}

/// `x · W` for a row vector `x`.
pub fn row_times(x: &[f64], w: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; w.ncols()];
    for (j, o) in out.iter_mut().enumerate() {
        for (i, xi) in x.iter().enumerate() {
            *o += xi * w[[i, j]];
        }
    }
    out
}

impl<'a> LoopNet<'a> {
    fn p(&self, id: ParamId) -> &Array2<f64> {
        self.store.get(id)
    }

    fn row(&self, id: ParamId) -> Vec<f64> {
        self.p(id).row(0).to_vec()
    }

    pub fn mlp(&self, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut x = x.to_vec();
        let last = mlp.weights.len() - 1;
        for i in 0..=last {
            let b = self.row(mlp.biases[i]);
            x = row_times(&x, self.p(mlp.weights[i]))
                .iter()
                .zip(&b)
                .map(|(v, b)| v + b)
                .collect();
            if i < last {
                x = x
                    .iter()
                    .map(|&v| match mlp.activation {
                        Activation::Elu => elu(v),
                        Activation::Tanh => v.tanh(),
                    })
                    .collect();
                if let Some(&(g, b)) = mlp.norms.get(i) {
                    x = layer_norm(&x, &self.row(g), &self.row(b));
                }
            }
        }
        x
    }

    pub fn encode_spots(&self, features: &Array2<f64>) -> Rows {
        let emb = self.p(self.net.embedding);
        (0..features.nrows())
            .map(|p| {
                let mut x = features.row(p).to_vec();
                x.extend(emb.row(p).iter());
                self.mlp(&self.net.spot_mlp, &x)
            })
            .collect()
    }

    pub fn action_target(&self, h: &Rows, ctx: &GeometryContext) -> Rows {
        let w = self.p(self.net.w_at);
        let b = self.row(self.net.b_at);
        ctx.target_spots
            .iter()
            .map(|spots| {
                let mut at = b.clone();
                for &p in spots {
                    for (o, v) in at.iter_mut().zip(row_times(&h[p], w)) {
                        *o += v;
                    }
                }
                at
            })
            .collect()
    }

    pub fn route_aggregate(&self, h: &Rows, ctx: &GeometryContext) -> Rows {
        let theta = self.p(self.net.theta)[[0, 0]];
        let d = h[0].len();
        ctx.route_spots
            .iter()
            .map(|list| {
                let mut ar = vec![0.0; d];
                for &(p, phi) in list {
                    for k in 0..d {
                        ar[k] += theta * phi * h[p][k];
                    }
                }
                ar
            })
            .collect()
    }

    pub fn action_representation(&self, ar: &Rows, at: &Rows, ctx: &GeometryContext) -> Rows {
        (0..ar.len())
            .map(|a| {
                let mut x = ar[a].clone();
                x.extend(&at[a]);
                x.push(ctx.durations[a]);
                self.mlp(&self.net.ah_mlp, &x)
            })
            .collect()
    }

    pub fn edge_importance(&self, layer: usize, ctx: &GeometryContext) -> Rows {
        let n = ctx.n_actions();
        let mlp = &self.net.future[layer].delta_mlp;
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        let r = a * n + b;
                        let x = [ctx.edge_info[[r, 0]], ctx.edge_info[[r, 1]]];
                        self.mlp(mlp, &x)[0].tanh()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn future_positioning(&self, ah0: &Rows, ctx: &GeometryContext) -> Rows {
        let n = ah0.len();
        let mut ah = ah0.clone();
        for (l, layer) in self.net.future.iter().enumerate() {
            let imp = self.edge_importance(l, ctx);
            let w = self.p(layer.weight);
            let b = self.row(layer.bias);
            let projected: Rows = ah.iter().map(|x| row_times(x, w)).collect();
            let g = self.row(layer.ln_gain);
            let beta = self.row(layer.ln_bias);
            ah = (0..n)
                .map(|a| {
                    let mut msg = b.clone();
                    for a2 in 0..n {
                        for (k, m) in msg.iter_mut().enumerate() {
                            *m += imp[a][a2] * projected[a2][k];
                        }
                    }
                    let res: Vec<f64> = msg.iter().zip(&ah0[a]).map(|(&m, r)| elu(m) + r).collect();
                    layer_norm(&res, &g, &beta)
                })
                .collect();
        }
        ah
    }

    pub fn q_head(&self, ah: &Rows) -> Vec<f64> {
        ah.iter().map(|x| self.mlp(&self.net.q_mlp, x)[0]).collect()
    }

    pub fn q_values(&self, features: &Array2<f64>, ctx: &GeometryContext) -> Vec<f64> {
        let h = self.encode_spots(features);
        let at = self.action_target(&h, ctx);
        let ar = self.route_aggregate(&h, ctx);
        let ah0 = self.action_representation(&ar, &at, ctx);
        let ah = self.future_positioning(&ah0, ctx);
        self.q_head(&ah)
    }
}
