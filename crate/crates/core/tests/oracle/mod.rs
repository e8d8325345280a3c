//! Brute-force reference evaluator. Deliberately naive: per-window sorts,
//! elementary-segment coverage and midpoint sampling of the ROC step curves.
#![allow(dead_code)]

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ev {
    pub class: usize,
    pub on: f64,
    pub off: f64,
}

/// Sliding median by sorting every window; even widths use `w + 1`.
pub fn median(x: &[f64], w: usize) -> Vec<f64> {
    let w = if w.is_multiple_of(2) { w + 1 } else { w };
    let h = (w / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut win: Vec<f64> = (i - h..=i + h)
                .map(|j| x[j.clamp(0, n - 1) as usize])
                .collect();
            win.sort_by(|a, b| a.partial_cmp(b).unwrap());
            win[h as usize]
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Mask {
    Min,
    Gate,
    Off,
}

pub struct Post {
    pub mask: Mask,
    pub windows: Vec<usize>,
    pub filter_binary: bool,
}

/// `rows[t][c]` probabilities → events at one threshold.
pub fn detect(rows: &[Vec<f64>], weak: &[f64], post: &Post, tau: f64) -> Vec<Ev> {
    let c = weak.len();
    let mut out = Vec::new();
    for k in 0..c {
        let mut col: Vec<f64> = rows
            .iter()
            .map(|r| match post.mask {
                Mask::Min => r[k].min(weak[k]),
                Mask::Gate => {
                    if weak[k] < 0.5 {
                        0.0
                    } else {
                        r[k]
                    }
                }
                Mask::Off => r[k],
            })
            .collect();
        let on: Vec<bool> = if post.filter_binary {
            let b: Vec<f64> = col
                .iter()
                .map(|&v| if v >= tau { 1.0 } else { 0.0 })
                .collect();
            median(&b, post.windows[k])
                .iter()
                .map(|&v| v >= 0.5)
                .collect()
        } else {
            col = median(&col, post.windows[k]);
            col.iter().map(|&v| v >= tau).collect()
        };
        let mut t = 0;
        while t < on.len() {
            if on[t] {
                let s = t;
                while t < on.len() && on[t] {
                    t += 1;
                }
                out.push(Ev {
                    class: k,
                    on: s as f64 * 0.1,
                    off: t as f64 * 0.1,
                });
            } else {
                t += 1;
            }
        }
    }
    out
}

/// Length of `[a, b]` inside at least one span, by cutting at every
/// endpoint and probing segment midpoints.
pub fn covered(a: f64, b: f64, spans: &[(f64, f64)]) -> f64 {
    let mut cuts = vec![a, b];
    for &(s, e) in spans {
        for x in [s, e] {
            if x > a && x < b {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if spans.iter().any(|&(s, e)| s <= mid && mid <= e) {
            total += w[1] - w[0];
        }
    }
    total
}

/// `(tp, fp, n_gt)` per class for one clip.
pub fn match_clip(
    dets: &[Ev],
    gts: &[Ev],
    classes: usize,
    dtc: f64,
    gtc: f64,
) -> Vec<(usize, usize, usize)> {
    (0..classes)
        .map(|c| {
            let g: Vec<(f64, f64)> = gts
                .iter()
                .filter(|e| e.class == c)
                .map(|e| (e.on, e.off))
                .collect();
            let mut valid = Vec::new();
            let mut fp = 0;
            for d in dets.iter().filter(|e| e.class == c) {
                if covered(d.on, d.off, &g) + 1e-9 >= dtc * (d.off - d.on) {
                    valid.push((d.on, d.off));
                } else {
                    fp += 1;
                }
            }
            let tp = g
                .iter()
                .filter(|&&(s, e)| covered(s, e, &valid) + 1e-9 >= gtc * (e - s))
                .count();
            (tp, fp, g.len())
        })
        .collect()
}

pub struct Scene {
    /// `(clip, rows[t][c], weak[c])`
    pub clips: Vec<(String, Vec<Vec<f64>>, Vec<f64>)>,
    pub gts: Vec<(String, Ev)>,
    pub classes: usize,
}

pub struct Params {
    pub dtc: f64,
    pub gtc: f64,
    pub alpha: f64,
    pub e_max: f64,
    pub clip_seconds: f64,
}

/// PSDS by enumerating all matches at every threshold. `None` when there is
/// no ground truth at all.
pub fn psds(scene: &Scene, post: &Post, taus: &[f64], p: &Params) -> Option<f64> {
    let c = scene.classes;
    let hours = scene.clips.len() as f64 * p.clip_seconds / 3600.0;
    // per threshold, per class: (tpr, efpr); classes without ground truth dropped
    let mut n_gt = vec![0usize; c];
    for (_, e) in &scene.gts {
        n_gt[e.class] += 1;
    }
    let scored: Vec<usize> = (0..c).filter(|&k| n_gt[k] > 0).collect();
    if scored.is_empty() {
        return None;
    }
    let mut curves: Vec<Vec<(f64, f64)>> = vec![Vec::new(); scored.len()];
    for &tau in taus {
        let mut tp = vec![0usize; c];
        let mut fp = vec![0usize; c];
        for (id, rows, weak) in &scene.clips {
            let dets = detect(rows, weak, post, tau);
            let gts: Vec<Ev> = scene
                .gts
                .iter()
                .filter(|(g, _)| g == id)
                .map(|(_, e)| *e)
                .collect();
            for (k, (t, f, _)) in match_clip(&dets, &gts, c, p.dtc, p.gtc)
                .into_iter()
                .enumerate()
            {
                tp[k] += t;
                fp[k] += f;
            }
        }
        for (j, &k) in scored.iter().enumerate() {
            curves[j].push((fp[k] as f64 / hours, tp[k] as f64 / n_gt[k] as f64));
        }
    }
    let mut cuts: Vec<f64> = vec![0.0, p.e_max];
    for curve in &curves {
        for &(e, _) in curve {
            if e < p.e_max {
                cuts.push(e);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let tprs: Vec<f64> = curves
            .iter()
            .map(|curve| {
                curve
                    .iter()
                    .filter(|&&(e, _)| e <= mid)
                    .map(|&(_, t)| t)
                    .fold(0.0, f64::max)
            })
            .collect();
        let n = tprs.len() as f64;
        let mean = tprs.iter().sum::<f64>() / n;
        let std = (tprs.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n).sqrt();
        area += (mean - p.alpha * std).max(0.0) * (w[1] - w[0]);
    }
    Some(area / p.e_max)
}
