//! Symbolic parameter and MAC profiler.
//!
//! Counts are derived from the configuration alone by walking the same
//! structure the builder creates; one MAC is one multiply plus one add.
//! Default convention matches common segmentation profilers: convolution and
//! linear layers count `C_out * C_in/g * k^2 * H' * W'`, biases, norms,
//! activations, and interpolation are free, and the attention score/aggregate
//! matmuls (`2 N^2 d` per layer) are excluded; switch `include_attn_scores`
//! on to add them (the totals column for them is always reported). Unique
//! parameters and per-pass parameter touches (a two-round pass touches the
//! shared weights twice) are both reported.

use crate::decoder::SCALE_HEAD_BLOCKS;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::feedback::FeedbackMode;
use crate::model::ModelConfig;

/// Counting convention flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convention {
    /// Report per-pass parameter touches as the headline parameter total.
    pub per_pass_params: bool,
    pub include_bias: bool,
    pub include_norm: bool,
    pub include_attn_scores: bool,
    /// Count the training-only auxiliary head.
    pub include_aux: bool,
}

impl Default for Convention {
    fn default() -> Self {
        Convention {
            per_pass_params: false,
            include_bias: false,
            include_norm: false,
            include_attn_scores: false,
            include_aux: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileRow {
    pub name: String,
    /// Unique parameters introduced by this row.
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone)]
pub struct ProfileReport {
    pub input: (usize, usize),
    pub convention: Convention,
    pub rows: Vec<ProfileRow>,
    /// Distinct trainable scalars.
    pub unique_params: u64,
    /// Parameter touches over one full inference (two rounds touch the
    /// encoder/decoder/aux weights twice).
    pub per_pass_params: u64,
    /// Executed multiply-accumulates over one full inference.
    pub total_macs: u64,
    /// Attention score/aggregate MACs, reported regardless of the flag.
    pub attn_score_macs: u64,
}

impl ProfileReport {
    pub fn headline_params(&self) -> u64 {
        if self.convention.per_pass_params {
            self.per_pass_params
        } else {
            self.unique_params
        }
    }

    pub fn row(&self, name: &str) -> Option<&ProfileRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Aligned text table plus the convention header.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "input {}x{}  conventions: bias={} norm={} attn_scores={} aux={} params={}\n",
            self.input.0,
            self.input.1,
            onoff(self.convention.include_bias),
            onoff(self.convention.include_norm),
            onoff(self.convention.include_attn_scores),
            onoff(self.convention.include_aux),
            if self.convention.per_pass_params { "per-pass" } else { "unique" },
        ));
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(6).max(6);
        out.push_str(&format!("{:<width$} {:>14} {:>14}\n", "module", "params", "MACs", width = width));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$} {:>14} {:>14}\n",
                r.name,
                group_digits(r.params),
                group_digits(r.macs),
                width = width
            ));
        }
        out.push_str(&format!(
            "{:<width$} {:>14} {:>14}\n",
            "total",
            group_digits(self.headline_params()),
            group_digits(self.total_macs),
            width = width
        ));
        out.push_str(&format!(
            "unique params {} ({:.2}M)  per-pass params {} ({:.2}M)  MACs {:.2}G  attention-score MACs {:.2}G ({})\n",
            group_digits(self.unique_params),
            self.unique_params as f64 / 1e6,
            group_digits(self.per_pass_params),
            self.per_pass_params as f64 / 1e6,
            self.total_macs as f64 / 1e9,
            self.attn_score_macs as f64 / 1e9,
            if self.convention.include_attn_scores { "included" } else { "excluded" },
        ));
        out
    }

    /// Comma-separated rendering for machine consumption.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("module,params,macs\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.name, r.params, r.macs));
        }
        out.push_str(&format!("total,{},{}\n", self.headline_params(), self.total_macs));
        out
    }
}

fn onoff(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn group_digits(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push('_');
        }
        out.push(c);
    }
    out
}

fn conv_out(side: usize, k: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - k) / stride + 1
}

struct Counter {
    conv: Convention,
    rows: Vec<ProfileRow>,
    attn_scores: u64,
}

impl Counter {
    fn begin(&mut self, name: &str) -> (u64, u64) {
        self.rows.push(ProfileRow { name: name.to_string(), params: 0, macs: 0 });
        (0, 0)
    }

    fn row(&mut self) -> &mut ProfileRow {
        self.rows.last_mut().expect("begin() first")
    }

    fn conv2d(&mut self, ci: usize, co: usize, k: usize, groups: usize, oh: usize, ow: usize) {
        let weights = (co * (ci / groups) * k * k) as u64;
        let spatial = (oh * ow) as u64;
        let r = self.row();
        r.params += weights + co as u64;
        r.macs += weights * spatial;
        if self.conv.include_bias {
            let bias = (co as u64) * spatial;
            self.row().macs += bias;
        }
    }

    fn linear(&mut self, n: usize, ci: usize, co: usize) {
        let weights = (ci * co) as u64;
        let r = self.row();
        r.params += weights + co as u64;
        r.macs += weights * n as u64;
        if self.conv.include_bias {
            self.row().macs += (co * n) as u64;
        }
    }

    fn norm(&mut self, channels: usize, elems: usize) {
        let r = self.row();
        r.params += 2 * channels as u64;
        if self.conv.include_norm {
            // One multiply-add for the affine plus one for the whitening.
            self.row().macs += 2 * elems as u64;
        }
    }

    fn attention(&mut self, n: usize, d: usize) {
        let scores = 2 * (n * n * d) as u64;
        self.attn_scores += scores;
        if self.conv.include_attn_scores {
            self.row().macs += scores;
        }
    }

    fn scalar_param(&mut self) {
        self.row().params += 1;
    }
}

fn encoder_stage(c: &mut Counter, cfg: &EncoderConfig, stage: usize, in_ch: usize, h: usize, w: usize) -> (usize, usize) {
    let (k, s, p) = EncoderConfig::patch_embed(stage);
    let (oh, ow) = (conv_out(h, k, s, p), conv_out(w, k, s, p));
    let d = cfg.dims[stage];
    c.begin(&format!("encoder.stage{}", stage + 1));
    c.conv2d(in_ch, d, k, 1, oh, ow);
    let n = oh * ow;
    for _ in 0..cfg.depths[stage] {
        c.norm(d, n * d);
        c.linear(n, d, d); // q
        c.linear(n, d, d); // k
        c.linear(n, d, d); // v
        c.attention(n, d);
        c.linear(n, d, d); // proj
        c.norm(d, n * d);
        c.linear(n, d, d * cfg.mlp_ratio);
        c.linear(n, d * cfg.mlp_ratio, d);
    }
    c.norm(d, n * d); // stage output norm
    (oh, ow)
}

/// Profile one encoder+decoder(+aux) pass; returns stage-1 grid size too.
fn single_pass(c: &mut Counter, cfg: &ModelConfig, h: usize, w: usize) -> (usize, usize) {
    let mut sizes = [(0usize, 0usize); 4];
    let (mut ch, mut cw, mut cin) = (h, w, 3);
    for stage in 0..4 {
        let (oh, ow) = encoder_stage(c, &cfg.encoder, stage, cin, ch, cw);
        sizes[stage] = (oh, ow);
        (ch, cw, cin) = (oh, ow, cfg.encoder.dims[stage]);
    }

    let pc = cfg.decoder.channels;
    c.begin("decoder.laterals");
    for stage in 0..4 {
        let (sh, sw) = sizes[stage];
        c.conv2d(cfg.encoder.dims[stage], pc, 1, 1, sh, sw);
    }
    c.begin("decoder.fpn");
    for &(sh, sw) in &sizes {
        c.conv2d(pc, pc, 3, 1, sh, sw);
    }
    c.begin("decoder.scale_heads");
    let (t_h, t_w) = sizes[0];
    for (stage, &(sh, sw)) in sizes.iter().enumerate() {
        let (mut bh, mut bw) = (sh, sw);
        for _ in 0..SCALE_HEAD_BLOCKS[stage] {
            c.conv2d(pc, pc, 3, 1, bh, bw);
            c.norm(pc, pc * bh * bw);
            (bh, bw) = ((bh * 2).min(t_h), (bw * 2).min(t_w));
        }
    }
    c.begin("decoder.classifier");
    c.conv2d(pc, cfg.decoder.num_classes, 1, 1, t_h, t_w);

    if c.conv.include_aux {
        let (ah, aw) = sizes[2];
        c.begin("aux");
        c.conv2d(cfg.encoder.dims[2], pc, 3, 1, ah, aw);
        c.norm(pc, pc * ah * aw);
        c.conv2d(pc, cfg.decoder.num_classes, 1, 1, ah, aw);
    }
    sizes[0]
}

/// Profile the configured model for a `3 x h x w` input.
pub fn profile(cfg: &ModelConfig, h: usize, w: usize, conv: Convention) -> Result<ProfileReport> {
    cfg.validate()?;
    if !h.is_multiple_of(32) || !w.is_multiple_of(32) {
        return Err(Error::config(format!(
            "profile input {h}x{w} must have sides divisible by 32"
        )));
    }

    let mut c = Counter { conv, rows: Vec::new(), attn_scores: 0 };
    let (s1h, s1w) = single_pass(&mut c, cfg, h, w);
    let shared_params: u64 = c.rows.iter().map(|r| r.params).sum();
    let shared_macs: u64 = c.rows.iter().map(|r| r.macs).sum();

    let two_rounds = cfg.feedback.mode != FeedbackMode::None;
    if two_rounds {
        let concat_ch = 2 * cfg.decoder.channels;
        let target_ch = cfg.encoder.dims[0];
        let grid = s1h * s1w;
        match cfg.feedback.mode {
            FeedbackMode::Lite => {
                c.begin("feedback.lite");
                c.conv2d(concat_ch, concat_ch, 3, concat_ch, s1h, s1w);
                c.norm(concat_ch, concat_ch * grid);
                c.conv2d(concat_ch, target_ch, 1, 1, s1h, s1w);
                c.conv2d(target_ch, target_ch, 1, 1, s1h, s1w);
                c.scalar_param();
            }
            FeedbackMode::AttnSelf | FeedbackMode::AttnSt => {
                c.begin(&format!("feedback.{}", cfg.feedback.mode.name()));
                let q_in = if cfg.feedback.mode == FeedbackMode::AttnSelf {
                    concat_ch
                } else {
                    target_ch
                };
                c.conv2d(q_in, target_ch, 1, 1, s1h, s1w);
                c.conv2d(concat_ch, target_ch, 1, 1, s1h, s1w);
                c.conv2d(concat_ch, target_ch, 1, 1, s1h, s1w);
                let ds = cfg.feedback.attn_downsample.max(1);
                if s1h % ds != 0 || s1w % ds != 0 {
                    return Err(Error::config(format!(
                        "feedback.attn_downsample={ds} must divide the s1 grid {s1h}x{s1w}"
                    )));
                }
                c.attention((s1h / ds) * (s1w / ds), target_ch);
                c.conv2d(target_ch, target_ch, 1, 1, s1h, s1w);
                c.scalar_param();
            }
            FeedbackMode::None => unreachable!(),
        }
        c.rows.push(ProfileRow {
            name: "round2 (shared weights)".to_string(),
            params: 0,
            macs: shared_macs,
        });
    }

    let unique_params: u64 = c.rows.iter().map(|r| r.params).sum();
    let total_macs: u64 = c.rows.iter().map(|r| r.macs).sum();
    let per_pass_params = if two_rounds {
        unique_params + shared_params
    } else {
        unique_params
    };
    Ok(ProfileReport {
        input: (h, w),
        convention: conv,
        rows: c.rows,
        unique_params,
        per_pass_params,
        total_macs,
        attn_score_macs: c.attn_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeedbackFormer;

    fn s12(mode: FeedbackMode, classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(EncoderConfig::s12(), classes);
        cfg.feedback.mode = mode;
        cfg
    }

    #[test]
    fn profiled_params_equal_enumerated_params() {
        for mode in [FeedbackMode::None, FeedbackMode::Lite, FeedbackMode::AttnSelf, FeedbackMode::AttnSt] {
            let mut cfg = s12(mode, 5);
            // Small dims keep construction fast while covering every branch.
            cfg.encoder.dims = [8, 8, 16, 16];
            cfg.encoder.depths = [1, 1, 2, 1];
            cfg.encoder.heads = [1, 1, 2, 2];
            cfg.decoder.channels = 16;
            let report = profile(&cfg, 64, 64, Convention::default()).unwrap();
            let model = FeedbackFormer::<f32>::new(&cfg, 0).unwrap();
            assert_eq!(
                report.unique_params,
                model.store.num_elements() as u64,
                "mode {:?}",
                mode
            );
        }
    }

    #[test]
    fn s12_enumerated_parameters_match_profile_and_size_table() {
        let mut cfg = s12(FeedbackMode::None, 5);
        cfg.encoder.strict_input = true;
        let report = profile(&cfg, 256, 256, Convention::default()).unwrap();
        let model = FeedbackFormer::<f32>::new(&cfg, 0).unwrap();
        assert_eq!(report.unique_params, model.store.num_elements() as u64);
        let m = report.unique_params as f64 / 1e6;
        assert!((m - 18.13).abs() / 18.13 < 0.05, "S12 params {m:.2}M");
    }

    #[test]
    fn totals_equal_sum_of_rows() {
        let report = profile(&s12(FeedbackMode::Lite, 5), 256, 256, Convention::default()).unwrap();
        let params: u64 = report.rows.iter().map(|r| r.params).sum();
        let macs: u64 = report.rows.iter().map(|r| r.macs).sum();
        assert_eq!(params, report.unique_params);
        assert_eq!(macs, report.total_macs);
    }

    #[test]
    fn two_round_cost_is_exactly_twice_single_plus_module() {
        let mut single_cfg = s12(FeedbackMode::None, 5);
        single_cfg.encoder.dims = [8, 8, 16, 16];
        single_cfg.encoder.heads = [1, 1, 2, 2];
        single_cfg.decoder.channels = 16;
        let mut two_cfg = single_cfg.clone();
        two_cfg.feedback.mode = FeedbackMode::Lite;
        let single = profile(&single_cfg, 64, 64, Convention::default()).unwrap();
        let two = profile(&two_cfg, 64, 64, Convention::default()).unwrap();
        let module = two.row("feedback.lite").unwrap();
        assert_eq!(two.total_macs, 2 * single.total_macs + module.macs);
        assert_eq!(two.per_pass_params, 2 * single.unique_params + module.params);
    }

    #[test]
    fn conv_macs_quadruple_when_input_doubles() {
        let a = profile(&s12(FeedbackMode::None, 5), 128, 128, Convention::default()).unwrap();
        let b = profile(&s12(FeedbackMode::None, 5), 256, 256, Convention::default()).unwrap();
        // Lateral/fpn/classifier rows are pure convolution rows.
        for name in ["decoder.laterals", "decoder.fpn", "decoder.classifier"] {
            let ra = a.row(name).unwrap().macs;
            let rb = b.row(name).unwrap().macs;
            assert_eq!(rb, 4 * ra, "{name}");
        }
    }

    #[test]
    fn non_divisible_input_rejected() {
        assert!(profile(&s12(FeedbackMode::None, 5), 100, 100, Convention::default()).is_err());
    }
}
