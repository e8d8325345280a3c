//! Scene builders and the adapter from oracle scenes to the fast evaluator.
#![allow(dead_code)]

use std::collections::BTreeMap;

use jitter_core::evaluation::{
    psds, thresholds, ClipScores, Event, EventTable, MaskRule, PostProcess, PsdsParams,
};
use jitter_core::numerics::Tensor;
use rand::Rng;

use crate::oracle::{self, Ev, Mask, Post, Scene};

pub fn to_event(e: &Ev) -> Event {
    Event::new(e.class, e.on, e.off)
}

pub fn random_events(rng: &mut impl Rng, classes: usize, n: usize, span: f64) -> Vec<Ev> {
    (0..n)
        .map(|_| {
            let a = rng.random_range(0.0..span);
            let b = rng.random_range(0.0..span);
            Ev {
                class: rng.random_range(0..classes),
                on: a.min(b),
                off: a.max(b) + 1e-3,
            }
        })
        .collect()
}

pub struct Case {
    pub scene: Scene,
    pub post: Post,
    pub taus: Vec<f64>,
    pub params: oracle::Params,
}

pub fn fast_psds(case: &Case) -> jitter_core::Result<f64> {
    let c = case.scene.classes;
    let mut scores = BTreeMap::new();
    for (id, rows, weak) in &case.scene.clips {
        let strong = Tensor::from_rows(rows).unwrap();
        assert_eq!(strong.cols(), c);
        scores.insert(
            id.clone(),
            ClipScores {
                strong,
                weak: weak.clone(),
            },
        );
    }
    let mut gts = EventTable::new();
    for (id, e) in &case.scene.gts {
        gts.entry(id.clone()).or_default().push(to_event(e));
    }
    let post = PostProcess {
        mask: match case.post.mask {
            Mask::Min => MaskRule::Min,
            Mask::Gate => MaskRule::HardGate,
            Mask::Off => MaskRule::None,
        },
        windows: case.post.windows.clone(),
        filter_binary: case.post.filter_binary,
    };
    let p = &case.params;
    let params = PsdsParams {
        dtc: p.dtc,
        gtc: p.gtc,
        alpha_st: p.alpha,
        e_max: p.e_max,
    };
    Ok(psds(&scores, &gts, &post, &case.taus, p.clip_seconds, &params)?.psds)
}

pub fn random_case(rng: &mut impl Rng) -> Case {
    let classes = rng.random_range(1..=3);
    let frames = 30;
    let n_clips = rng.random_range(1..=3);
    let levels = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
    let mut clips = Vec::new();
    let mut gts = Vec::new();
    for i in 0..n_clips {
        let id = format!("clip{i}");
        let rows: Vec<Vec<f64>> = (0..frames)
            .map(|_| {
                (0..classes)
                    .map(|_| levels[rng.random_range(0..levels.len())])
                    .collect()
            })
            .collect();
        let weak: Vec<f64> = (0..classes).map(|_| rng.random_range(0.0..1.0)).collect();
        let n = rng.random_range(0..=3);
        for e in random_events(rng, classes, n, 3.0) {
            gts.push((id.clone(), e));
        }
        clips.push((id, rows, weak));
    }
    let mask = [Mask::Min, Mask::Gate, Mask::Off][rng.random_range(0..3)];
    let windows = (0..classes)
        .map(|_| [1, 2, 3, 5][rng.random_range(0..4)])
        .collect();
    let n_taus = rng.random_range(3..=20);
    Case {
        scene: Scene {
            clips,
            gts,
            classes,
        },
        post: Post {
            mask,
            windows,
            filter_binary: rng.random_bool(0.3),
        },
        taus: thresholds(n_taus),
        params: oracle::Params {
            dtc: [0.5, 0.7, 1.0][rng.random_range(0..3)],
            gtc: [0.5, 0.7, 1.0][rng.random_range(0..3)],
            alpha: [0.0, 0.5, 1.0][rng.random_range(0..3)],
            e_max: [5.0, 20.0, 100.0][rng.random_range(0..3)],
            clip_seconds: 360.0,
        },
    }
}

/// Three clips, two classes. Class 0 is detected cleanly; class 1 fires a
/// false positive in every clip and only reaches its ground truth at low
/// thresholds.
pub fn hand_scene() -> Scene {
    let mut clips = Vec::new();
    for (i, (c0, c1)) in [
        ((10, 20, 0.8), (50, 60)),
        ((30, 40, 0.6), (0, 0)),
        ((0, 0, 0.0), (20, 30)),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rows = vec![vec![0.0, 0.0]; 100];
        for r in &mut rows[c0.0..c0.1] {
            r[0] = c0.2;
        }
        for r in &mut rows[c1.0..c1.1] {
            r[1] = 0.4;
        }
        for r in &mut rows[70..80] {
            r[1] = 0.9;
        }
        clips.push((format!("clip{i}"), rows, vec![1.0, 1.0]));
    }
    let ev = |class, on, off| Ev { class, on, off };
    Scene {
        clips,
        gts: vec![
            ("clip0".into(), ev(0, 1.0, 2.0)),
            ("clip0".into(), ev(1, 5.0, 6.0)),
            ("clip1".into(), ev(0, 3.0, 4.0)),
            ("clip2".into(), ev(1, 2.0, 3.0)),
        ],
        classes: 2,
    }
}

/// `(alpha, e_max, psds)` for the hand scene. Class 1 has 3 FPs (360/h) at
/// every τ below 0.9. With e_max = 1000 its TPR is 0 on [0, 360) and 1
/// after; class 0 has TPR 1 from eFPR 0.
pub const HAND_EXPECTED: [(f64, f64, f64); 4] = [
    (0.0, 100.0, 0.5),
    (1.0, 100.0, 0.0),
    (1.0, 1000.0, 0.64),
    (0.0, 1000.0, 0.82),
];

pub fn hand_case(alpha: f64, e_max: f64) -> Case {
    Case {
        scene: hand_scene(),
        post: Post {
            mask: Mask::Min,
            windows: vec![5, 5],
            filter_binary: false,
        },
        taus: thresholds(50),
        params: oracle::Params {
            dtc: 0.7,
            gtc: 0.7,
            alpha,
            e_max,
            clip_seconds: 10.0,
        },
    }
}

/// A detector that reproduces random ground truth exactly, and the same
/// scene with all-zero scores.
pub fn perfect_and_silent(rng: &mut impl Rng) -> (Case, Case) {
    let mut clips = Vec::new();
    let mut gts = Vec::new();
    for i in 0..4 {
        let id = format!("c{i}");
        let mut rows = vec![vec![0.0; 2]; 100];
        for k in 0..2 {
            let on = rng.random_range(0..60);
            let len = rng.random_range(25..40);
            for r in &mut rows[on..on + len] {
                r[k] = 1.0;
            }
            gts.push((
                id.clone(),
                Ev {
                    class: k,
                    on: on as f64 * 0.1,
                    off: (on + len) as f64 * 0.1,
                },
            ));
        }
        clips.push((id, rows, vec![1.0, 1.0]));
    }
    let make = |clips: Vec<(String, Vec<Vec<f64>>, Vec<f64>)>| Case {
        scene: Scene {
            clips,
            gts: gts.clone(),
            classes: 2,
        },
        post: Post {
            mask: Mask::Min,
            windows: vec![5, 20],
            filter_binary: false,
        },
        taus: thresholds(50),
        params: oracle::Params {
            dtc: 0.7,
            gtc: 0.7,
            alpha: 1.0,
            e_max: 100.0,
            clip_seconds: 10.0,
        },
    };
    let silent = clips
        .iter()
        .map(|(id, rows, w)| {
            (
                id.clone(),
                rows.iter().map(|r| vec![0.0; r.len()]).collect(),
                w.clone(),
            )
        })
        .collect();
    (make(clips), make(silent))
}
