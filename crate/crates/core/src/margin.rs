/// Smallest decision gap seen while running a deterministic selection.
///
/// Every argmax/argmin, neighborhood boundary and sign choice that feeds
/// anchor selection records the gap between the winner and the runner-up.
/// When the overall margin exceeds [`MARGIN_THRESHOLD`], round-off from a
/// rigid motion cannot flip any decision, so the selection is equivariant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin(f64);

pub const MARGIN_THRESHOLD: f64 = 1e-9;

impl Default for Margin {
    fn default() -> Self {
        Margin(f64::INFINITY)
    }
}

impl Margin {
    pub fn observe(&mut self, gap: f64) {
        let gap = gap.abs();
        if gap < self.0 || gap.is_nan() {
            self.0 = if gap.is_nan() { 0.0 } else { gap };
        }
    }

    pub fn merge(&mut self, other: Margin) {
        self.observe(other.0);
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_safe(&self) -> bool {
        self.0 > MARGIN_THRESHOLD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_smallest_gap() {
        let mut m = Margin::default();
        assert!(m.is_safe());
        m.observe(0.5);
        m.observe(-0.1);
        m.observe(3.0);
        assert_eq!(m.value(), 0.1);
        m.merge(Margin(1e-12));
        assert!(!m.is_safe());
    }
}
