use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::affnet::spec::*;
use crate::error::{Error, Result};
use crate::ndnn::init::{init_conv, init_fc};
use crate::ndnn::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, conv2d, conv2d_backward,
    conv2d_backward_params, fc, fc_backward, relu, relu_backward, same_output_size, sgd_update,
    softmax, softmax_cross_entropy, BatchNormCache, BatchNormState, ConvLayer, FcLayer, Mode,
    Tensor,
};
use crate::scalar::Scalar;

/// One multi-scale branch: stem conv, encapsulation block (two parallel
/// stride-2 convs summed, then a stride-2 refining conv).
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub stem: ConvLayer<T>,
    pub parallel_a: ConvLayer<T>,
    pub parallel_b: ConvLayer<T>,
    pub refine: ConvLayer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    Mfl {
        tap_fm2: FcLayer<T>,
        tap_fm3: FcLayer<T>,
        norm: BatchNormState<T>,
        classifier: FcLayer<T>,
    },
    Serial {
        first: FcLayer<T>,
        second: FcLayer<T>,
        norm: BatchNormState<T>,
        classifier: FcLayer<T>,
    },
    Direct {
        classifier: FcLayer<T>,
    },
}

/// A built network: parameters plus the spec that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    pub branches: Vec<Branch<T>>,
    pub micro_norm: BatchNormState<T>,
    pub conv_fm2: ConvLayer<T>,
    pub conv_mid: ConvLayer<T>,
    pub conv_fm3: ConvLayer<T>,
    pub head: Head<T>,
}

/// Per-layer RNG so that layers shared between variants get identical weights.
fn layer_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ h)
}

fn spatial(size: (usize, usize), halvings: u32) -> (usize, usize) {
    (0..halvings).fold(size, |(h, w), _| (same_output_size(h, 2), same_output_size(w, 2)))
}

/// Assembles the network described by `spec` with seeded He-uniform weights.
pub fn build<T: Scalar>(spec: &NetworkSpec) -> Result<Network<T>> {
    spec.validate()?;
    let seed = spec.seed;
    let conv = |name: &str, k, cin, cout, stride| init_conv::<T, _>(k, cin, cout, stride, &mut layer_rng(seed, name));
    let dense = |name: &str, din, dout| init_fc::<T, _>(din, dout, &mut layer_rng(seed, name));

    let (stem_d, par_d, ref_d) = (spec.depth(STEM_DEPTH), spec.depth(PARALLEL_DEPTH), spec.depth(REFINE_DEPTH));
    let (ea, eb) = spec.encapfeat_kernels;
    let mut branches = Vec::with_capacity(spec.kernels.len());
    let mut branch_shape = None;
    for (i, &k) in spec.kernels.iter().enumerate() {
        let p = format!("branch{}", i + 1);
        let b = Branch {
            stem: conv(&format!("{p}.stem"), k, 3, stem_d, 1),
            parallel_a: conv(&format!("{p}.parallel_a"), ea, stem_d, par_d, 2),
            parallel_b: conv(&format!("{p}.parallel_b"), eb, stem_d, par_d, 2),
            refine: conv(&format!("{p}.refine"), spec.refine_kernel(), par_d, ref_d, 2),
        };
        let strides = [b.stem.stride, b.parallel_a.stride, b.refine.stride];
        let shape = strides.iter().fold(spec.input_size, |(h, w), &s| {
            (same_output_size(h, s), same_output_size(w, s))
        });
        let shape = (shape, b.refine.out_channels());
        match branch_shape {
            None => branch_shape = Some(shape),
            Some(prev) if prev != shape => {
                return Err(Error::invalid(format!(
                    "branch {} output {shape:?} cannot be concatenated with {prev:?}",
                    i + 1
                )))
            }
            _ => {}
        }
        branches.push(b);
    }

    let micro_c = branches.len() * ref_d;
    let (fm2_d, mid_d, fm3_d) = (spec.depth(FM2_DEPTH), spec.depth(MID_DEPTH), spec.depth(FM3_DEPTH));
    let fm2_hw = spatial(spec.input_size, 3);
    let fm3_hw = spatial(spec.input_size, 5);
    let fm2_len = fm2_hw.0 * fm2_hw.1 * fm2_d;
    let fm3_len = fm3_hw.0 * fm3_hw.1 * fm3_d;
    let tap = spec.depth(TAP_WIDTH);
    let classes = spec.class_count;

    let head = match spec.head() {
        HeadKind::Mfl => Head::Mfl {
            tap_fm2: dense("mfl.tap_fm2", fm2_len, tap),
            tap_fm3: dense("mfl.tap_fm3", fm3_len, tap),
            norm: BatchNormState::new(2 * tap),
            classifier: dense("classifier", 2 * tap, classes),
        },
        HeadKind::Serial => Head::Serial {
            first: dense("lfc.first", fm3_len, tap),
            second: dense("lfc.second", tap, tap),
            norm: BatchNormState::new(tap),
            classifier: dense("classifier", tap, classes),
        },
        HeadKind::Direct => Head::Direct {
            classifier: dense("classifier", fm3_len, classes),
        },
    };

    Ok(Network {
        spec: spec.clone(),
        branches,
        micro_norm: BatchNormState::new(micro_c),
        conv_fm2: conv("fm2", 3, micro_c, fm2_d, 2),
        conv_mid: conv("mid", 3, fm2_d, mid_d, 2),
        conv_fm3: conv("fm3", 3, mid_d, fm3_d, 2),
        head,
    })
}

#[derive(Debug, Clone)]
pub struct BranchTrace<T> {
    pub stem: Tensor<T>,
    pub parallel_a: Tensor<T>,
    pub parallel_b: Tensor<T>,
    pub encap_sum: Tensor<T>,
    pub refine: Tensor<T>,
}

#[derive(Debug, Clone)]
pub enum HeadTrace<T> {
    Mfl {
        fv1: Tensor<T>,
        fv2: Tensor<T>,
        concat: Tensor<T>,
        normed: Tensor<T>,
        cache: Option<BatchNormCache<T>>,
    },
    Serial {
        first: Tensor<T>,
        second: Tensor<T>,
        normed: Tensor<T>,
        cache: Option<BatchNormCache<T>>,
    },
    Direct,
}

/// Every intermediate activation of one forward pass (post-ReLU where a
/// ReLU applies), plus the batch statistics a train-mode pass produced.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub mode: Mode,
    pub input: Tensor<T>,
    pub branches: Vec<BranchTrace<T>>,
    pub microfeat: Tensor<T>,
    pub micro_norm: Tensor<T>,
    micro_cache: Option<BatchNormCache<T>>,
    pub fm2: Tensor<T>,
    pub mid: Tensor<T>,
    pub fm3: Tensor<T>,
    pub head: HeadTrace<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    /// `(mean, var)` per normalization layer in train mode, micro then head.
    batch_stats: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Trace<T> {
    /// Looks up an activation by layer name, e.g. `branch1.stem` or `fm2`.
    pub fn activation(&self, name: &str) -> Option<&Tensor<T>> {
        if let Some(rest) = name.strip_prefix("branch") {
            let (idx, layer) = rest.split_once('.')?;
            let b = self.branches.get(idx.parse::<usize>().ok()?.checked_sub(1)?)?;
            return match layer {
                "stem" => Some(&b.stem),
                "parallel_a" => Some(&b.parallel_a),
                "parallel_b" => Some(&b.parallel_b),
                "encap_sum" => Some(&b.encap_sum),
                "refine" => Some(&b.refine),
                _ => None,
            };
        }
        match (name, &self.head) {
            ("input", _) => Some(&self.input),
            ("microfeat", _) => Some(&self.microfeat),
            ("micro_norm", _) => Some(&self.micro_norm),
            ("fm2", _) => Some(&self.fm2),
            ("mid", _) => Some(&self.mid),
            ("fm3", _) => Some(&self.fm3),
            ("logits", _) => Some(&self.logits),
            ("probs", _) => Some(&self.probs),
            ("mfl.fv1", HeadTrace::Mfl { fv1, .. }) => Some(fv1),
            ("mfl.fv2", HeadTrace::Mfl { fv2, .. }) => Some(fv2),
            ("mfl.concat", HeadTrace::Mfl { concat, .. }) => Some(concat),
            ("head.norm", HeadTrace::Mfl { normed, .. }) => Some(normed),
            ("lfc.first", HeadTrace::Serial { first, .. }) => Some(first),
            ("lfc.second", HeadTrace::Serial { second, .. }) => Some(second),
            ("head.norm", HeadTrace::Serial { normed, .. }) => Some(normed),
            _ => None,
        }
    }

    /// Sign pattern of every ReLU output in the trace; two traces with the
    /// same pattern lie on the same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut acts: Vec<&Tensor<T>> = Vec::new();
        for b in &self.branches {
            acts.extend([&b.stem, &b.parallel_a, &b.parallel_b, &b.refine]);
        }
        acts.extend([&self.fm2, &self.mid, &self.fm3]);
        match &self.head {
            HeadTrace::Mfl { fv1, fv2, .. } => acts.extend([fv1, fv2]),
            HeadTrace::Serial { first, second, .. } => acts.extend([first, second]),
            HeadTrace::Direct => {}
        }
        acts.iter()
            .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    pub fn activation_names(&self) -> Vec<String> {
        let mut names = vec!["input".to_string()];
        for i in 1..=self.branches.len() {
            for l in ["stem", "parallel_a", "parallel_b", "encap_sum", "refine"] {
                names.push(format!("branch{i}.{l}"));
            }
        }
        names.extend(["microfeat", "micro_norm", "fm2", "mid", "fm3"].map(String::from));
        match self.head {
            HeadTrace::Mfl { .. } => names.extend(["mfl.fv1", "mfl.fv2", "mfl.concat", "head.norm"].map(String::from)),
            HeadTrace::Serial { .. } => names.extend(["lfc.first", "lfc.second", "head.norm"].map(String::from)),
            HeadTrace::Direct => {}
        }
        names.extend(["logits", "probs"].map(String::from));
        names
    }
}

/// Gradients with the same layout as the network they belong to.
#[derive(Debug, Clone)]
pub struct Gradients<T>(Network<T>);

impl<T: Scalar> Gradients<T> {
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.0.named_params()
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.0.named_params().into_iter().map(|(_, t)| t.clone()).collect()
    }
}

fn norm_forward<T: Scalar>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
    stats: &mut Vec<(Vec<T>, Vec<T>)>,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    match mode {
        Mode::Train => {
            let f = batchnorm_train(x, state)?;
            stats.push((f.batch_mean, f.batch_var));
            Ok((f.output, Some(f.cache)))
        }
        Mode::Infer => Ok((batchnorm_infer(x, state)?, None)),
    }
}

fn conv_relu<T: Scalar>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    Ok(relu(&conv2d(x, layer)?))
}

fn fc_relu<T: Scalar>(x: &Tensor<T>, layer: &FcLayer<T>) -> Result<Tensor<T>> {
    Ok(relu(&fc(x, layer)?))
}

fn need_cache<T>(cache: &Option<BatchNormCache<T>>) -> Result<&BatchNormCache<T>> {
    cache
        .as_ref()
        .ok_or_else(|| Error::invalid("backward needs a train-mode trace"))
}

fn conv_refs<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, name: &str, l: &'a ConvLayer<T>) {
    out.push((format!("{name}.kernel"), &l.kernel));
    out.push((format!("{name}.bias"), &l.bias));
}

fn conv_muts<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, name: &str, l: &'a mut ConvLayer<T>) {
    out.push((format!("{name}.kernel"), &mut l.kernel));
    out.push((format!("{name}.bias"), &mut l.bias));
}

fn fc_refs<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, name: &str, l: &'a FcLayer<T>) {
    out.push((format!("{name}.weights"), &l.weights));
    out.push((format!("{name}.bias"), &l.bias));
}

fn fc_muts<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, name: &str, l: &'a mut FcLayer<T>) {
    out.push((format!("{name}.weights"), &mut l.weights));
    out.push((format!("{name}.bias"), &mut l.bias));
}

fn norm_refs<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, name: &str, s: &'a BatchNormState<T>) {
    out.push((format!("{name}.scale"), &s.scale));
    out.push((format!("{name}.shift"), &s.shift));
}

fn norm_muts<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, name: &str, s: &'a mut BatchNormState<T>) {
    out.push((format!("{name}.scale"), &mut s.scale));
    out.push((format!("{name}.shift"), &mut s.shift));
}

impl<T: Scalar> Network<T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Learnable parameters, in the same order as [`Self::named_params_mut`].
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let p = format!("branch{}", i + 1);
            conv_refs(&mut out, &format!("{p}.stem"), &b.stem);
            conv_refs(&mut out, &format!("{p}.parallel_a"), &b.parallel_a);
            conv_refs(&mut out, &format!("{p}.parallel_b"), &b.parallel_b);
            conv_refs(&mut out, &format!("{p}.refine"), &b.refine);
        }
        norm_refs(&mut out, "micro_norm", &self.micro_norm);
        conv_refs(&mut out, "fm2", &self.conv_fm2);
        conv_refs(&mut out, "mid", &self.conv_mid);
        conv_refs(&mut out, "fm3", &self.conv_fm3);
        match &self.head {
            Head::Mfl { tap_fm2, tap_fm3, norm, classifier } => {
                fc_refs(&mut out, "mfl.tap_fm2", tap_fm2);
                fc_refs(&mut out, "mfl.tap_fm3", tap_fm3);
                norm_refs(&mut out, "head.norm", norm);
                fc_refs(&mut out, "classifier", classifier);
            }
            Head::Serial { first, second, norm, classifier } => {
                fc_refs(&mut out, "lfc.first", first);
                fc_refs(&mut out, "lfc.second", second);
                norm_refs(&mut out, "head.norm", norm);
                fc_refs(&mut out, "classifier", classifier);
            }
            Head::Direct { classifier } => fc_refs(&mut out, "classifier", classifier),
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter_mut().enumerate() {
            let p = format!("branch{}", i + 1);
            conv_muts(&mut out, &format!("{p}.stem"), &mut b.stem);
            conv_muts(&mut out, &format!("{p}.parallel_a"), &mut b.parallel_a);
            conv_muts(&mut out, &format!("{p}.parallel_b"), &mut b.parallel_b);
            conv_muts(&mut out, &format!("{p}.refine"), &mut b.refine);
        }
        norm_muts(&mut out, "micro_norm", &mut self.micro_norm);
        conv_muts(&mut out, "fm2", &mut self.conv_fm2);
        conv_muts(&mut out, "mid", &mut self.conv_mid);
        conv_muts(&mut out, "fm3", &mut self.conv_fm3);
        match &mut self.head {
            Head::Mfl { tap_fm2, tap_fm3, norm, classifier } => {
                fc_muts(&mut out, "mfl.tap_fm2", tap_fm2);
                fc_muts(&mut out, "mfl.tap_fm3", tap_fm3);
                norm_muts(&mut out, "head.norm", norm);
                fc_muts(&mut out, "classifier", classifier);
            }
            Head::Serial { first, second, norm, classifier } => {
                fc_muts(&mut out, "lfc.first", first);
                fc_muts(&mut out, "lfc.second", second);
                norm_muts(&mut out, "head.norm", norm);
                fc_muts(&mut out, "classifier", classifier);
            }
            Head::Direct { classifier } => fc_muts(&mut out, "classifier", classifier),
        }
        out
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        let mut v = vec![&mut self.micro_norm];
        match &mut self.head {
            Head::Mfl { norm, .. } | Head::Serial { norm, .. } => v.push(norm),
            Head::Direct { .. } => {}
        }
        v
    }

    /// Non-learnable state: batch-norm running statistics.
    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("micro_norm.running_mean".to_string(), &self.micro_norm.running_mean),
            ("micro_norm.running_var".to_string(), &self.micro_norm.running_var),
        ];
        if let Head::Mfl { norm, .. } | Head::Serial { norm, .. } = &self.head {
            out.push(("head.norm.running_mean".to_string(), &norm.running_mean));
            out.push(("head.norm.running_var".to_string(), &norm.running_var));
        }
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("micro_norm.running_mean".to_string(), &mut self.micro_norm.running_mean),
            ("micro_norm.running_var".to_string(), &mut self.micro_norm.running_var),
        ];
        if let Head::Mfl { norm, .. } | Head::Serial { norm, .. } = &mut self.head {
            out.push(("head.norm.running_mean".to_string(), &mut norm.running_mean));
            out.push(("head.norm.running_var".to_string(), &mut norm.running_var));
        }
        out
    }

    /// Total learnable parameters, summed over the built tensors.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (h, w) = self.spec.input_size;
        let s = x.shape();
        if s.len() != 4 || s[1] != h || s[2] != w || s[3] != 3 {
            return Err(Error::invalid(format!(
                "network expects input [N, {h}, {w}, 3], got {s:?}"
            )));
        }
        Ok(())
    }

    /// Runs the network and records every activation. Does not touch the
    /// running statistics; see [`Self::forward`].
    pub fn trace(&self, x: &Tensor<T>, mode: Mode) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut stats = Vec::new();
        let mut branches = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let stem = conv_relu(x, &b.stem)?;
            let parallel_a = conv_relu(&stem, &b.parallel_a)?;
            let parallel_b = conv_relu(&stem, &b.parallel_b)?;
            let mut encap_sum = parallel_a.clone();
            encap_sum.add_assign(&parallel_b)?;
            let refine = conv_relu(&encap_sum, &b.refine)?;
            branches.push(BranchTrace {
                stem,
                parallel_a,
                parallel_b,
                encap_sum,
                refine,
            });
        }
        let parts: Vec<&Tensor<T>> = branches.iter().map(|b| &b.refine).collect();
        let microfeat = Tensor::concat_channels(&parts)?;
        let (micro_norm, micro_cache) = norm_forward(&microfeat, &self.micro_norm, mode, &mut stats)?;
        let fm2 = conv_relu(&micro_norm, &self.conv_fm2)?;
        let mid = conv_relu(&fm2, &self.conv_mid)?;
        let fm3 = conv_relu(&mid, &self.conv_fm3)?;
        let (head, logits) = match &self.head {
            Head::Mfl { tap_fm2, tap_fm3, norm, classifier } => {
                let fv1 = fc_relu(&fm2, tap_fm2)?;
                let fv2 = fc_relu(&fm3, tap_fm3)?;
                let concat = Tensor::concat_channels(&[&fv1, &fv2])?;
                let (normed, cache) = norm_forward(&concat, norm, mode, &mut stats)?;
                let logits = fc(&normed, classifier)?;
                (HeadTrace::Mfl { fv1, fv2, concat, normed, cache }, logits)
            }
            Head::Serial { first, second, norm, classifier } => {
                let h1 = fc_relu(&fm3, first)?;
                let h2 = fc_relu(&h1, second)?;
                let (normed, cache) = norm_forward(&h2, norm, mode, &mut stats)?;
                let logits = fc(&normed, classifier)?;
                (HeadTrace::Serial { first: h1, second: h2, normed, cache }, logits)
            }
            Head::Direct { classifier } => (HeadTrace::Direct, fc(&fm3, classifier)?),
        };
        logits.check_finite("logits")?;
        let probs = softmax(&logits)?;
        Ok(Trace {
            mode,
            input: x.clone(),
            branches,
            microfeat,
            micro_norm,
            micro_cache,
            fm2,
            mid,
            fm3,
            head,
            logits,
            probs,
            batch_stats: stats,
        })
    }

    /// Folds a train-mode trace's batch statistics into the running averages.
    pub fn absorb_batch_stats(&mut self, trace: &Trace<T>) {
        for (state, (mean, var)) in self.norms_mut().into_iter().zip(&trace.batch_stats) {
            state.update_running(mean, var);
        }
    }

    /// Replaces the running statistics of every batch norm with population
    /// statistics of its train-mode inputs over `batches`, weighting each
    /// batch by its size. Parameters are left untouched.
    pub fn recalibrate_batch_norm<'a>(&mut self, batches: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<()> {
        let mut count = T::zero();
        let mut sums: Vec<(Vec<T>, Vec<T>)> = Vec::new();
        for x in batches {
            let trace = self.trace(x, Mode::Train)?;
            let n = T::from_usize_lossy(x.batch());
            if sums.is_empty() {
                sums = trace
                    .batch_stats
                    .iter()
                    .map(|(m, _)| (vec![T::zero(); m.len()], vec![T::zero(); m.len()]))
                    .collect();
            }
            for ((first, second), (mean, var)) in sums.iter_mut().zip(&trace.batch_stats) {
                for i in 0..mean.len() {
                    first[i] += n * mean[i];
                    second[i] += n * (var[i] + mean[i] * mean[i]);
                }
            }
            count += n;
        }
        if count == T::zero() {
            return Ok(());
        }
        for (state, (first, second)) in self.norms_mut().into_iter().zip(sums) {
            for (i, (f, s)) in first.into_iter().zip(second).enumerate() {
                let mean = f / count;
                state.running_mean.data_mut()[i] = mean;
                state.running_var.data_mut()[i] = (s / count - mean * mean).max(T::zero());
            }
        }
        Ok(())
    }

    /// Class probabilities `[N, class_count]`. Train mode uses batch
    /// statistics and updates the running averages.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let trace = self.trace(x, mode)?;
        if mode == Mode::Train {
            self.absorb_batch_stats(&trace);
        }
        Ok(trace.probs)
    }

    /// Inference-mode probabilities without mutation.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trace(x, Mode::Infer)?.probs)
    }

    /// Backpropagates `grad_logits` through a train-mode trace.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let mut g = self.clone();
        let grad_fm3;
        let mut grad_fm2_tap = None;
        match (&self.head, &trace.head, &mut g.head) {
            (
                Head::Mfl { tap_fm2, tap_fm3, norm, classifier },
                HeadTrace::Mfl { fv1, fv2, normed, cache, .. },
                Head::Mfl { tap_fm2: g_t2, tap_fm3: g_t3, norm: g_n, classifier: g_c },
            ) => {
                let c = fc_backward(grad_logits, normed, classifier)?;
                (g_c.weights, g_c.bias) = (c.weights, c.bias);
                let n = batchnorm_backward(&c.input, need_cache(cache)?, norm)?;
                (g_n.scale, g_n.shift) = (n.scale, n.shift);
                let parts = n.input.split_channels(&[fv1.channels(), fv2.channels()])?;
                let t2 = fc_backward(&relu_backward(&parts[0], fv1), &trace.fm2, tap_fm2)?;
                (g_t2.weights, g_t2.bias) = (t2.weights, t2.bias);
                let t3 = fc_backward(&relu_backward(&parts[1], fv2), &trace.fm3, tap_fm3)?;
                (g_t3.weights, g_t3.bias) = (t3.weights, t3.bias);
                grad_fm2_tap = Some(t2.input);
                grad_fm3 = t3.input;
            }
            (
                Head::Serial { first, second, norm, classifier },
                HeadTrace::Serial { first: h1, second: h2, normed, cache },
                Head::Serial { first: g_f, second: g_s, norm: g_n, classifier: g_c },
            ) => {
                let c = fc_backward(grad_logits, normed, classifier)?;
                (g_c.weights, g_c.bias) = (c.weights, c.bias);
                let n = batchnorm_backward(&c.input, need_cache(cache)?, norm)?;
                (g_n.scale, g_n.shift) = (n.scale, n.shift);
                let s = fc_backward(&relu_backward(&n.input, h2), h1, second)?;
                (g_s.weights, g_s.bias) = (s.weights, s.bias);
                let f = fc_backward(&relu_backward(&s.input, h1), &trace.fm3, first)?;
                (g_f.weights, g_f.bias) = (f.weights, f.bias);
                grad_fm3 = f.input;
            }
            (Head::Direct { classifier }, HeadTrace::Direct, Head::Direct { classifier: g_c }) => {
                let c = fc_backward(grad_logits, &trace.fm3, classifier)?;
                (g_c.weights, g_c.bias) = (c.weights, c.bias);
                grad_fm3 = c.input;
            }
            _ => return Err(Error::invalid("trace does not belong to this network")),
        }

        let c3 = conv2d_backward(&relu_backward(&grad_fm3, &trace.fm3), &trace.mid, &self.conv_fm3)?;
        (g.conv_fm3.kernel, g.conv_fm3.bias) = (c3.kernel, c3.bias);
        let gm = c3.input.expect("input gradient requested");
        let cm = conv2d_backward(&relu_backward(&gm, &trace.mid), &trace.fm2, &self.conv_mid)?;
        (g.conv_mid.kernel, g.conv_mid.bias) = (cm.kernel, cm.bias);
        let mut g2 = cm.input.expect("input gradient requested");
        if let Some(tap) = grad_fm2_tap {
            g2.add_assign(&tap)?;
        }
        let c2 = conv2d_backward(&relu_backward(&g2, &trace.fm2), &trace.micro_norm, &self.conv_fm2)?;
        (g.conv_fm2.kernel, g.conv_fm2.bias) = (c2.kernel, c2.bias);
        let n = batchnorm_backward(
            &c2.input.expect("input gradient requested"),
            need_cache(&trace.micro_cache)?,
            &self.micro_norm,
        )?;
        (g.micro_norm.scale, g.micro_norm.shift) = (n.scale, n.shift);
        let widths: Vec<usize> = trace.branches.iter().map(|b| b.refine.channels()).collect();
        let per_branch = n.input.split_channels(&widths)?;

        for (((b, bt), gb), gr) in self
            .branches
            .iter()
            .zip(&trace.branches)
            .zip(g.branches.iter_mut())
            .zip(per_branch)
        {
            let r = conv2d_backward(&relu_backward(&gr, &bt.refine), &bt.encap_sum, &b.refine)?;
            (gb.refine.kernel, gb.refine.bias) = (r.kernel, r.bias);
            let g_sum = r.input.expect("input gradient requested");
            let pa = conv2d_backward(&relu_backward(&g_sum, &bt.parallel_a), &bt.stem, &b.parallel_a)?;
            (gb.parallel_a.kernel, gb.parallel_a.bias) = (pa.kernel, pa.bias);
            let pb = conv2d_backward(&relu_backward(&g_sum, &bt.parallel_b), &bt.stem, &b.parallel_b)?;
            (gb.parallel_b.kernel, gb.parallel_b.bias) = (pb.kernel, pb.bias);
            let mut g_stem = pa.input.expect("input gradient requested");
            g_stem.add_assign(&pb.input.expect("input gradient requested"))?;
            let st = conv2d_backward_params(&relu_backward(&g_stem, &bt.stem), &trace.input, &b.stem)?;
            (gb.stem.kernel, gb.stem.bias) = (st.kernel, st.bias);
        }
        Ok(Gradients(g))
    }

    /// Mean cross-entropy of a batch and its parameter gradients, without
    /// touching running statistics.
    pub fn loss_and_gradients(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, Gradients<T>, Trace<T>)> {
        let trace = self.trace(x, Mode::Train)?;
        let (loss, grad_logits) = softmax_cross_entropy(&trace.logits, labels)?;
        let grads = self.backward(&trace, &grad_logits)?;
        Ok((loss, grads, trace))
    }

    /// One SGD step on a batch; returns the batch loss.
    pub fn train_step(&mut self, x: &Tensor<T>, labels: &[usize], learning_rate: T) -> Result<T> {
        let (loss, grads, trace) = self.loss_and_gradients(x, labels)?;
        for (name, g) in grads.named() {
            g.check_finite(&format!("gradient of {name}"))?;
        }
        self.absorb_batch_stats(&trace);
        let params = self.named_params_mut().into_iter().map(|(_, t)| t).collect();
        sgd_update(params, &grads.into_tensors(), learning_rate)?;
        Ok(loss)
    }
}
