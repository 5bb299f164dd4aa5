//! Comparisons between masks: centred differences, per-band energies,
//! exceed fractions and a linear probe on flattened single-image masks.

mod probe;

pub use probe::{linear_probe, pca_project, pca_scatter, ProbeConfig, ProbeModel, ProbeReport, ScatterPoint};

use std::collections::BTreeMap;

use crate::data::augment::AugmentKind;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::spectral::{band_energy, fftshift, BandKind, BandSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct MaskEntry {
    pub mask: Mask,
    pub id: u64,
    pub label: usize,
    /// Augmentation policy of the model the mask was learned for.
    pub model: AugmentKind,
}

/// Masks of a common side length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskSet {
    entries: Vec<MaskEntry>,
}

impl MaskSet {
    pub fn new(entries: Vec<MaskEntry>) -> Result<Self> {
        if let Some(first) = entries.first() {
            if let Some(bad) = entries.iter().find(|e| e.mask.side() != first.mask.side()) {
                return Err(Error::shape(
                    "mask_set",
                    format!("mask for image {} has side {}, expected {}", bad.id, bad.mask.side(), first.mask.side()),
                ));
            }
        }
        Ok(MaskSet { entries })
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn side(&self) -> Option<usize> {
        self.entries.first().map(|e| e.mask.side())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

/// `fftshift(a − b)`: the difference with the zero frequency at the centre.
pub fn mask_diff_centered(a: &Mask, b: &Mask) -> Result<Vec<f64>> {
    a.same_side(b)?;
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    fftshift(&diff, a.side())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyProfile {
    pub kind: BandKind,
    pub energies: Vec<f64>,
}

pub fn energy_profile(mask: &Mask, bands: &BandSpec) -> Result<EnergyProfile> {
    check_bands(mask, bands)?;
    Ok(EnergyProfile { kind: bands.kind(), energies: band_energy(mask.values(), bands)? })
}

/// Per-band `‖M_i‖₂ − ‖M_N‖₂`.
pub fn energy_difference(mi: &Mask, mn: &Mask, bands: &BandSpec) -> Result<Vec<f64>> {
    mi.same_side(mn)?;
    let a = energy_profile(mi, bands)?.energies;
    let b = energy_profile(mn, bands)?.energies;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

fn check_bands(mask: &Mask, bands: &BandSpec) -> Result<()> {
    if mask.side() != bands.side() {
        return Err(Error::shape(
            "band_energy",
            format!("mask side {} but bands built for {}", mask.side(), bands.side()),
        ));
    }
    Ok(())
}

/// Per band, the fraction of image ids whose energy in `a` is strictly
/// greater than in `b`. Ties do not count as exceeding.
pub fn exceed_fraction(a: &MaskSet, b: &MaskSet, bands: &BandSpec) -> Result<Vec<f64>> {
    let (ia, ib) = (index_by_id(a)?, index_by_id(b)?);
    let unpaired: Vec<u64> =
        ia.keys().filter(|k| !ib.contains_key(k)).chain(ib.keys().filter(|k| !ia.contains_key(k))).copied().collect();
    if !unpaired.is_empty() {
        let mut ids = unpaired;
        ids.sort_unstable();
        return Err(Error::Unpaired(ids));
    }
    if ia.is_empty() {
        return Err(Error::InvalidArgument("no mask pairs to compare".into()));
    }
    let mut counts = vec![0usize; bands.bands()];
    for (id, ma) in &ia {
        let ea = energy_profile(ma, bands)?.energies;
        let eb = energy_profile(ib[id], bands)?.energies;
        for (c, (x, y)) in counts.iter_mut().zip(ea.iter().zip(&eb)) {
            if x > y {
                *c += 1;
            }
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / ia.len() as f64).collect())
}

fn index_by_id(s: &MaskSet) -> Result<BTreeMap<u64, &Mask>> {
    let mut m = BTreeMap::new();
    for e in s.entries() {
        if m.insert(e.id, &e.mask).is_some() {
            return Err(Error::InvalidArgument(format!("image id {} appears twice in one set", e.id)));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(d: usize, seed: u64) -> Mask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Mask::from_values(d, Mask::symmetrized(d, &raw)).unwrap()
    }

    fn set(masks: Vec<Mask>) -> MaskSet {
        MaskSet::new(
            masks
                .into_iter()
                .enumerate()
                .map(|(i, mask)| MaskEntry { mask, id: i as u64, label: i % 2, model: AugmentKind::None })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn centered_difference_examples() {
        let a = random_mask(8, 1);
        assert!(mask_diff_centered(&a, &a).unwrap().iter().all(|&v| v == 0.0));
        let mut dc = a.values().to_vec();
        dc[0] += 1.0;
        let b = Mask::from_values(8, dc).unwrap();
        let diff = mask_diff_centered(&b, &a).unwrap();
        for (i, v) in diff.iter().enumerate() {
            assert_eq!(*v != 0.0, i == 4 * 8 + 4, "index {i}");
        }
        assert!(mask_diff_centered(&a, &Mask::ones(16).unwrap()).is_err());
    }

    #[test]
    fn energy_difference_examples() {
        let bands = BandSpec::radial(16, 8).unwrap();
        let m = random_mask(16, 2);
        assert!(energy_difference(&m, &m, &bands).unwrap().iter().all(|&v| v == 0.0));
        let diff = energy_difference(&m.scaled(2.0).unwrap(), &m, &bands).unwrap();
        let e = band_energy(m.values(), &bands).unwrap();
        for (x, y) in diff.iter().zip(&e) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn exceed_fraction_examples() {
        let bands = BandSpec::radial(8, 4).unwrap();
        let base: Vec<Mask> = (0..5).map(|s| random_mask(8, s)).collect();
        let a = set(base.clone());
        assert!(exceed_fraction(&a, &a, &bands).unwrap().iter().all(|&v| v == 0.0));
        let doubled = set(base.iter().map(|m| m.scaled(2.0).unwrap()).collect());
        assert!(exceed_fraction(&doubled, &a, &bands).unwrap().iter().all(|&v| v == 1.0));
        let fewer = set(base[..3].to_vec());
        match exceed_fraction(&a, &fewer, &bands) {
            Err(Error::Unpaired(ids)) => assert_eq!(ids, vec![3, 4]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixed_sides_are_rejected() {
        let e = |d| MaskEntry { mask: Mask::ones(d).unwrap(), id: d as u64, label: 0, model: AugmentKind::None };
        assert!(MaskSet::new(vec![e(8), e(16)]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn exceed_is_asymmetric(seed in any::<u64>()) {
            let bands = BandSpec::angular(8, 4).unwrap();
            let a = set((0..6).map(|i| random_mask(8, seed.wrapping_add(i))).collect());
            let b = set((0..6).map(|i| random_mask(8, seed.wrapping_add(100 + i))).collect());
            let ab = exceed_fraction(&a, &b, &bands).unwrap();
            let ba = exceed_fraction(&b, &a, &bands).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!(x + y <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn centered_difference_is_antisymmetric(seed in any::<u64>()) {
            let (a, b) = (random_mask(8, seed), random_mask(8, seed ^ 5));
            let ab = mask_diff_centered(&a, &b).unwrap();
            let ba = mask_diff_centered(&b, &a).unwrap();
            prop_assert!(ab.iter().zip(&ba).all(|(x, y)| *x == -*y));
        }
    }
}
