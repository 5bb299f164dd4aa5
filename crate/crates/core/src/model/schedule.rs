use std::f64::consts::PI;

/// One-cycle learning-rate policy: cosine warm-up from `max_lr / div_factor`
/// to `max_lr` at `peak_fraction` of the run, then cosine annealing to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub max_lr: f64,
    pub min_lr: f64,
    pub total_steps: usize,
    pub peak_fraction: f64,
    pub div_factor: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycle { max_lr, min_lr: 0.0, total_steps, peak_fraction: 0.3, div_factor: 25.0 }
    }

    pub fn peak_step(&self) -> usize {
        (self.peak_fraction * self.total_steps.saturating_sub(1) as f64).round() as usize
    }

    pub fn lr(&self, step: usize) -> f64 {
        let start = self.max_lr / self.div_factor;
        if self.total_steps < 2 {
            return start;
        }
        let last = self.total_steps - 1;
        let step = step.min(last);
        let peak = self.peak_step();
        let cos = |from: f64, to: f64, pct: f64| to + (from - to) * 0.5 * (1.0 + (PI * pct).cos());
        if step <= peak {
            if peak == 0 {
                return self.max_lr;
            }
            cos(start, self.max_lr, step as f64 / peak as f64)
        } else {
            cos(self.max_lr, self.min_lr, (step - peak) as f64 / (last - peak) as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shape_of_the_cycle() {
        let s = OneCycle::new(1e-3, 1000);
        assert!(s.lr(0) < 1e-3);
        assert_eq!(s.lr(s.peak_step()), 1e-3);
        assert_eq!(s.peak_step(), 300);
        assert!(s.lr(999) <= 1e-6 * 1e-3);
        let max = (0..1000).map(|i| s.lr(i)).fold(0.0, f64::max);
        assert_eq!(max, 1e-3);
    }

    proptest! {
        #[test]
        fn bounded_and_rises_then_falls(total in 2usize..5000) {
            let s = OneCycle::new(1e-3, total);
            let lrs: Vec<f64> = (0..total).map(|i| s.lr(i)).collect();
            let peak = s.peak_step();
            prop_assert!(lrs.iter().all(|&v| (0.0..=1e-3).contains(&v)));
            prop_assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(lrs[total - 1] <= 1e-9);
        }
    }
}
