//! Multi-dimensional resource quantities with exact accounting.
//!
//! Quantities are fixed-point with three decimal places, so that offers,
//! allocations and capacity checks never accumulate rounding error.

use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const SCALE: u64 = 1000;

/// A non-negative quantity in thousandths of a unit (cores or GiB).
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn units(n: u64) -> Self {
        Amount(n * SCALE)
    }

    pub const fn from_milli(milli: u64) -> Self {
        Amount(milli)
    }

    pub const fn milli(self) -> u64 {
        self.0
    }

    /// Converts a decimal quantity, rounding to the nearest thousandth.
    /// Rejects negative, non-finite and absurdly large values.
    pub fn from_f64(v: f64) -> Option<Self> {
        if !v.is_finite() || v < 0.0 || v > 1.0e12 {
            return None;
        }
        Some(Amount((v * SCALE as f64 + 0.5) as u64))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    pub fn saturating_sub(self, rhs: Amount) -> Amount {
        Amount(self.0.saturating_sub(rhs.0))
    }

    /// Whole units, rounded up.
    pub fn ceil_units(self) -> u64 {
        self.0.div_ceil(SCALE)
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / SCALE;
        let frac = self.0 % SCALE;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let mut digits = alloc::format!("{frac:03}");
            while digits.ends_with('0') {
                digits.pop();
            }
            write!(f, "{whole}.{digits}")
        }
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 % SCALE == 0 {
            s.serialize_u64(self.0 / SCALE)
        } else {
            s.serialize_f64(self.as_f64())
        }
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Amount::from_f64(v).ok_or_else(|| serde::de::Error::custom("quantity must be finite and >= 0"))
    }
}

/// cpu in cores, mem and disk in GiB.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: Amount,
    pub mem: Amount,
    #[serde(default)]
    pub disk: Amount,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu: Amount::ZERO, mem: Amount::ZERO, disk: Amount::ZERO };

    /// Whole-unit constructor.
    pub const fn new(cpu: u64, mem: u64, disk: u64) -> Self {
        ResourceVector { cpu: Amount::units(cpu), mem: Amount::units(mem), disk: Amount::units(disk) }
    }

    pub fn dims(&self) -> [Amount; 3] {
        [self.cpu, self.mem, self.disk]
    }

    fn from_dims(d: [Amount; 3]) -> Self {
        ResourceVector { cpu: d[0], mem: d[1], disk: d[2] }
    }

    pub fn is_zero(&self) -> bool {
        self.dims().iter().all(|a| a.is_zero())
    }

    /// Componentwise `self <= other`.
    pub fn fits_in(&self, other: &ResourceVector) -> bool {
        self.cpu <= other.cpu && self.mem <= other.mem && self.disk <= other.disk
    }

    pub fn strictly_positive(&self) -> bool {
        !self.cpu.is_zero() && !self.mem.is_zero() && !self.disk.is_zero()
    }

    pub fn checked_sub(&self, rhs: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            cpu: self.cpu.checked_sub(rhs.cpu)?,
            mem: self.mem.checked_sub(rhs.mem)?,
            disk: self.disk.checked_sub(rhs.disk)?,
        })
    }

    pub fn saturating_sub(&self, rhs: &ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu: self.cpu.saturating_sub(rhs.cpu),
            mem: self.mem.saturating_sub(rhs.mem),
            disk: self.disk.saturating_sub(rhs.disk),
        }
    }

    pub fn max(&self, other: &ResourceVector) -> ResourceVector {
        let (a, b) = (self.dims(), other.dims());
        ResourceVector::from_dims([a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])])
    }

    /// `max_r self_r / total_r`, skipping dimensions with zero total.
    pub fn dominant_share(&self, total: &ResourceVector) -> Share {
        let mut best = Share::ZERO;
        for (a, t) in self.dims().iter().zip(total.dims().iter()) {
            if t.is_zero() {
                continue;
            }
            let s = Share::new(a.milli(), t.milli());
            if s > best {
                best = s;
            }
        }
        best
    }

    /// `k` copies of `self`, saturating.
    pub fn times(&self, k: u64) -> ResourceVector {
        let d = self.dims();
        ResourceVector::from_dims(d.map(|a| Amount::from_milli(a.milli().saturating_mul(k))))
    }

    /// Smallest `k` such that `k` copies of `unit` cover `self` in every dimension.
    /// `None` when some demanded dimension has zero size in `unit`.
    pub fn ceil_div(&self, unit: &ResourceVector) -> Option<u64> {
        let mut k = 0;
        for (a, u) in self.dims().iter().zip(unit.dims().iter()) {
            if a.is_zero() {
                continue;
            }
            if u.is_zero() {
                return None;
            }
            k = k.max(a.milli().div_ceil(u.milli()));
        }
        Some(k)
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector { cpu: self.cpu + rhs.cpu, mem: self.mem + rhs.mem, disk: self.disk + rhs.disk }
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: ResourceVector) {
        *self = *self + rhs;
    }
}

/// Panics on underflow; callers check `fits_in` first.
impl Sub for ResourceVector {
    type Output = ResourceVector;
    fn sub(self, rhs: ResourceVector) -> ResourceVector {
        self.checked_sub(&rhs).expect("resource vector underflow")
    }
}

impl core::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{} cpu, {} GiB mem, {} GiB disk>", self.cpu, self.mem, self.disk)
    }
}

/// An exact non-negative fraction, compared by cross-multiplication.
#[derive(Copy, Clone, Debug)]
pub struct Share {
    num: u64,
    den: u64,
}

impl Share {
    pub const ZERO: Share = Share { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "share denominator must be positive");
        Share { num, den }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialEq for Share {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Share {}

impl PartialOrd for Share {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Share {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl Serialize for Share {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amount_display_and_rounding() {
        assert_eq!(Amount::from_f64(0.5).unwrap().to_string(), "0.5");
        assert_eq!(Amount::from_f64(2.0).unwrap().to_string(), "2");
        assert_eq!(Amount::from_f64(1.2345).unwrap().milli(), 1235);
        assert!(Amount::from_f64(-1.0).is_none());
        assert!(Amount::from_f64(f64::NAN).is_none());
    }

    #[test]
    fn dominant_share_matches_hand_values() {
        let total = ResourceVector::new(9, 18, 0);
        assert_eq!(ResourceVector::new(3, 12, 0).dominant_share(&total), Share::new(2, 3));
        assert_eq!(ResourceVector::new(6, 2, 0).dominant_share(&total), Share::new(2, 3));
        assert_eq!(ResourceVector::ZERO.dominant_share(&ResourceVector::ZERO), Share::ZERO);
    }

    #[test]
    fn ceil_div_takes_worst_dimension() {
        let unit = ResourceVector::new(4, 8, 0);
        assert_eq!(ResourceVector::new(2, 4, 0).ceil_div(&unit), Some(1));
        assert_eq!(ResourceVector::new(5, 4, 0).ceil_div(&unit), Some(2));
        assert_eq!(ResourceVector::new(1, 1, 1).ceil_div(&unit), None);
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let v = ResourceVector { cpu: Amount::from_milli(1500), mem: Amount::units(4), disk: Amount::ZERO };
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"{"cpu":1.5,"mem":4,"disk":0}"#);
        assert_eq!(serde_json::from_str::<ResourceVector>(&text).unwrap(), v);
    }
}
