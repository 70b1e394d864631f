//! The 14 binary speech-abnormality attributes and their per-task
//! applicability.

use crate::corpus::TaskKind;
use crate::error::{Error, Result};

/// Attribute labels in canonical (manifest) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    LoudnessVariability,
    PitchVariability,
    Breathy,
    Distortions,
    Flutter,
    HoarseHarsh,
    IrregularBreakdowns,
    LoudnessDecay,
    RapidRate,
    SlowRate,
    Strained,
    SyllableSegmentation,
    Tremor,
    Unsteady,
}

pub const NUM_ATTRIBUTES: usize = 14;

pub const ALL_ATTRIBUTES: [Attribute; NUM_ATTRIBUTES] = [
    Attribute::LoudnessVariability,
    Attribute::PitchVariability,
    Attribute::Breathy,
    Attribute::Distortions,
    Attribute::Flutter,
    Attribute::HoarseHarsh,
    Attribute::IrregularBreakdowns,
    Attribute::LoudnessDecay,
    Attribute::RapidRate,
    Attribute::SlowRate,
    Attribute::Strained,
    Attribute::SyllableSegmentation,
    Attribute::Tremor,
    Attribute::Unsteady,
];

impl Attribute {
    pub fn index(&self) -> usize {
        ALL_ATTRIBUTES.iter().position(|a| a == self).unwrap()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Attribute::LoudnessVariability => "abnormal_loudness_variability",
            Attribute::PitchVariability => "abnormal_pitch_variability",
            Attribute::Breathy => "breathy",
            Attribute::Distortions => "distortions",
            Attribute::Flutter => "flutter",
            Attribute::HoarseHarsh => "hoarse_harsh",
            Attribute::IrregularBreakdowns => "irregular_articulatory_breakdowns",
            Attribute::LoudnessDecay => "loudness_decay",
            Attribute::RapidRate => "rapid_rate",
            Attribute::SlowRate => "slow_rate",
            Attribute::Strained => "strained",
            Attribute::SyllableSegmentation => "syllable_segmentation",
            Attribute::Tremor => "tremor",
            Attribute::Unsteady => "unsteady",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_ATTRIBUTES
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown attribute '{s}'")))
    }

    /// Which attributes can be annotated for which task.
    ///
    /// The sustained-vowel task carries the phonatory attributes; the
    /// syllabic tasks carry articulation/timing attributes plus the two
    /// phonatory labels (breathy, strained) they share with VP. Rate and
    /// segmentation never apply to VP.
    pub fn applies_to(&self, task: TaskKind) -> bool {
        use Attribute::*;
        match task {
            TaskKind::Vp => matches!(
                self,
                LoudnessVariability
                    | PitchVariability
                    | Breathy
                    | Flutter
                    | HoarseHarsh
                    | LoudnessDecay
                    | Strained
                    | Tremor
                    | Unsteady
            ),
            TaskKind::Amr | TaskKind::Smr => matches!(
                self,
                Breathy
                    | Strained
                    | Distortions
                    | IrregularBreakdowns
                    | RapidRate
                    | SlowRate
                    | SyllableSegmentation
            ),
        }
    }

    pub fn applicable(task: TaskKind) -> Vec<Attribute> {
        ALL_ATTRIBUTES
            .iter()
            .filter(|a| a.applies_to(task))
            .copied()
            .collect()
    }
}

/// 14 named booleans in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttributeSet {
    bits: u16,
}

impl AttributeSet {
    pub fn empty() -> Self {
        AttributeSet { bits: 0 }
    }

    pub fn get(&self, attr: Attribute) -> bool {
        self.bits & (1 << attr.index()) != 0
    }

    pub fn set(&mut self, attr: Attribute, value: bool) {
        if value {
            self.bits |= 1 << attr.index();
        } else {
            self.bits &= !(1 << attr.index());
        }
    }

    pub fn iter_set(&self) -> impl Iterator<Item = Attribute> + '_ {
        ALL_ATTRIBUTES.iter().copied().filter(|a| self.get(*a))
    }

    pub fn to_bools(&self) -> [bool; NUM_ATTRIBUTES] {
        let mut out = [false; NUM_ATTRIBUTES];
        for (i, a) in ALL_ATTRIBUTES.iter().enumerate() {
            out[i] = self.get(*a);
        }
        out
    }

    pub fn from_bools(bits: &[bool]) -> Result<Self> {
        if bits.len() != NUM_ATTRIBUTES {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_ATTRIBUTES} label bits, got {}",
                bits.len()
            )));
        }
        let mut set = AttributeSet::empty();
        for (i, &b) in bits.iter().enumerate() {
            set.set(ALL_ATTRIBUTES[i], b);
        }
        Ok(set)
    }

    /// Rate exclusivity and per-task applicability.
    pub fn validate(&self, task: TaskKind) -> Result<()> {
        if self.get(Attribute::RapidRate) && self.get(Attribute::SlowRate) {
            return Err(Error::Data(
                "rapid_rate and slow_rate are mutually exclusive".into(),
            ));
        }
        for attr in self.iter_set() {
            if !attr.applies_to(task) {
                return Err(Error::Data(format!(
                    "attribute {} does not apply to task {}",
                    attr.name(),
                    task.as_str()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_stable() {
        assert_eq!(ALL_ATTRIBUTES[0].name(), "abnormal_loudness_variability");
        assert_eq!(ALL_ATTRIBUTES[13].name(), "unsteady");
        for (i, a) in ALL_ATTRIBUTES.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Attribute::parse(a.name()).unwrap(), *a);
        }
    }

    #[test]
    fn vp_never_carries_rate_or_segmentation() {
        for a in [
            Attribute::RapidRate,
            Attribute::SlowRate,
            Attribute::SyllableSegmentation,
        ] {
            assert!(!a.applies_to(TaskKind::Vp));
        }
    }

    #[test]
    fn breathy_and_strained_are_shared_between_vp_and_amr() {
        for a in [Attribute::Breathy, Attribute::Strained] {
            assert!(a.applies_to(TaskKind::Vp));
            assert!(a.applies_to(TaskKind::Amr));
        }
    }

    #[test]
    fn rate_exclusivity_enforced() {
        let mut set = AttributeSet::empty();
        set.set(Attribute::RapidRate, true);
        set.set(Attribute::SlowRate, true);
        assert!(set.validate(TaskKind::Amr).is_err());
        set.set(Attribute::SlowRate, false);
        assert!(set.validate(TaskKind::Amr).is_ok());
    }

    #[test]
    fn applicability_validation() {
        let mut set = AttributeSet::empty();
        set.set(Attribute::SyllableSegmentation, true);
        assert!(set.validate(TaskKind::Vp).is_err());
        assert!(set.validate(TaskKind::Smr).is_ok());
    }

    #[test]
    fn bool_round_trip() {
        let mut set = AttributeSet::empty();
        set.set(Attribute::Tremor, true);
        set.set(Attribute::Breathy, true);
        let back = AttributeSet::from_bools(&set.to_bools()).unwrap();
        assert_eq!(back, set);
    }
}
