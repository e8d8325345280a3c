use crate::evaluation::Event;
use crate::numerics::Tensor;

/// Rasterizes events onto a `[frames, num_classes]` grid. Frame `i` covers
/// `[i·dt, (i+1)·dt)` and is active for a class when an event of that class
/// overlaps it by at least half of `min(dt, event duration)`, so every event
/// lights at least one frame.
pub fn rasterize(events: &[Event], num_classes: usize, frames: usize, dt: f64) -> Tensor<f32> {
    let mut out = Tensor::zeros([frames, num_classes]);
    for e in events {
        if e.class >= num_classes {
            continue;
        }
        let need = 0.5 * dt.min(e.duration());
        let first = ((e.onset / dt).floor().max(0.0) as usize).min(frames);
        let last = ((e.offset / dt).ceil().max(0.0) as usize).min(frames);
        for i in first..last {
            let lo = i as f64 * dt;
            let overlap = (e.offset.min(lo + dt) - e.onset.max(lo)).max(0.0);
            if overlap >= need {
                out.data_mut()[i * num_classes + e.class] = 1.0;
            }
        }
    }
    out
}

/// Clip-level projection of a frame grid: class present if any frame is.
pub fn project_weak(strong: &Tensor<f32>) -> Vec<f32> {
    let c = strong.cols();
    let mut w = vec![0.0; c];
    for (i, &v) in strong.data().iter().enumerate() {
        if v > 0.0 {
            w[i % c] = 1.0;
        }
    }
    w
}

/// Multi-hot clip labels from a class list.
pub fn multi_hot(classes: &[usize], num_classes: usize) -> Vec<f32> {
    let mut w = vec![0.0; num_classes];
    for &c in classes {
        if c < num_classes {
            w[c] = 1.0;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        let g = rasterize(&[Event::new(1, 1.0, 2.0)], 2, 100, 0.1);
        let active: Vec<usize> = (0..100).filter(|&i| g.at(i, 1) == 1.0).collect();
        assert_eq!(active, (10..20).collect::<Vec<_>>());
        assert!((0..100).all(|i| g.at(i, 0) == 0.0));
    }

    #[test]
    fn short_event_straddling_frames_still_lands() {
        let g = rasterize(&[Event::new(0, 0.24, 0.36)], 1, 100, 0.1);
        let active: Vec<usize> = (0..100).filter(|&i| g.at(i, 0) == 1.0).collect();
        assert_eq!(active, vec![2, 3]);
        let g = rasterize(&[Event::new(0, 0.27, 0.32)], 1, 100, 0.1);
        let active: Vec<usize> = (0..100).filter(|&i| g.at(i, 0) == 1.0).collect();
        assert_eq!(active, vec![2]);
    }

    #[test]
    fn projection_matches_class_set() {
        let ev = [Event::new(0, 0.0, 0.05), Event::new(3, 9.9, 10.0)];
        assert_eq!(
            project_weak(&rasterize(&ev, 4, 100, 0.1)),
            multi_hot(&[0, 3], 4)
        );
    }
}
