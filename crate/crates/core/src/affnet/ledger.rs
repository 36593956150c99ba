//! Closed-form parameter ledger computed from a [`NetworkSpec`] alone.
//!
//! This never touches a built network, so it serves as the independent check
//! on the tensor sizes that [`crate::affnet::build`] allocates.

use serde::Serialize;

use crate::affnet::spec::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub layer: String,
    pub kind: &'static str,
    /// Output shape `[H, W, C]` for conv layers, `[D]` otherwise.
    pub output: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamLedger {
    pub variant: Variant,
    pub rows: Vec<LedgerRow>,
    pub total: usize,
    /// `4 * total`: float32 storage.
    pub bytes: usize,
}

fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

fn fc_params(din: usize, dout: usize) -> usize {
    din * dout + dout
}

fn down(x: usize) -> usize {
    (x + 1) / 2
}

pub fn closed_form_ledger(spec: &NetworkSpec) -> ParamLedger {
    let mut rows = Vec::new();
    let mut row = |layer: String, kind, output: Vec<usize>, params| {
        rows.push(LedgerRow {
            layer,
            kind,
            output,
            params,
        })
    };
    let (h0, w0) = spec.input_size;
    let d = |n| spec.depth(n);
    let (ea, eb) = spec.encapfeat_kernels;
    let (h1, w1) = (down(h0), down(w0));
    let (h2, w2) = (down(h1), down(w1));
    for (i, &k) in spec.kernels.iter().enumerate() {
        let p = format!("branch{}", i + 1);
        row(format!("{p}.stem"), "conv", vec![h0, w0, d(STEM_DEPTH)], conv_params(k, 3, d(STEM_DEPTH)));
        for (name, ek) in [("parallel_a", ea), ("parallel_b", eb)] {
            row(
                format!("{p}.{name}"),
                "conv",
                vec![h1, w1, d(PARALLEL_DEPTH)],
                conv_params(ek, d(STEM_DEPTH), d(PARALLEL_DEPTH)),
            );
        }
        row(
            format!("{p}.refine"),
            "conv",
            vec![h2, w2, d(REFINE_DEPTH)],
            conv_params(spec.refine_kernel(), d(PARALLEL_DEPTH), d(REFINE_DEPTH)),
        );
    }
    let micro = spec.kernels.len() * d(REFINE_DEPTH);
    row("micro_norm".into(), "batchnorm", vec![h2, w2, micro], 2 * micro);
    let (h3, w3) = (down(h2), down(w2));
    let (h4, w4) = (down(h3), down(w3));
    let (h5, w5) = (down(h4), down(w4));
    row("fm2".into(), "conv", vec![h3, w3, d(FM2_DEPTH)], conv_params(3, micro, d(FM2_DEPTH)));
    row("mid".into(), "conv", vec![h4, w4, d(MID_DEPTH)], conv_params(3, d(FM2_DEPTH), d(MID_DEPTH)));
    row("fm3".into(), "conv", vec![h5, w5, d(FM3_DEPTH)], conv_params(3, d(MID_DEPTH), d(FM3_DEPTH)));
    let fm2_len = h3 * w3 * d(FM2_DEPTH);
    let fm3_len = h5 * w5 * d(FM3_DEPTH);
    let tap = d(TAP_WIDTH);
    let classes = spec.class_count;
    match spec.head() {
        HeadKind::Mfl => {
            row("mfl.tap_fm2".into(), "fc", vec![tap], fc_params(fm2_len, tap));
            row("mfl.tap_fm3".into(), "fc", vec![tap], fc_params(fm3_len, tap));
            row("head.norm".into(), "batchnorm", vec![2 * tap], 2 * 2 * tap);
            row("classifier".into(), "fc", vec![classes], fc_params(2 * tap, classes));
        }
        HeadKind::Serial => {
            row("lfc.first".into(), "fc", vec![tap], fc_params(fm3_len, tap));
            row("lfc.second".into(), "fc", vec![tap], fc_params(tap, tap));
            row("head.norm".into(), "batchnorm", vec![tap], 2 * tap);
            row("classifier".into(), "fc", vec![classes], fc_params(tap, classes));
        }
        HeadKind::Direct => {
            row("classifier".into(), "fc", vec![classes], fc_params(fm3_len, classes));
        }
    }
    let total = rows.iter().map(|r| r.params).sum();
    ParamLedger {
        variant: spec.variant,
        rows,
        total,
        bytes: 4 * total,
    }
}
