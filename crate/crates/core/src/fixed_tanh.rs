//! Integer-only tanh for the trend computation.
//!
//! Values are Q6.10 fixed point (`raw / 1024`). The table samples tanh on
//! `[0, 4]` at a step of 1/64 and is interpolated linearly; negative inputs
//! use odd symmetry and `|x| >= 4` saturates to `±1023/1024`.

use std::fmt::Write as _;
use std::ops::Neg;

pub const FRAC_BITS: u32 = 10;
pub const ONE: i32 = 1 << FRAC_BITS;

/// Table step is 1/64, i.e. 16 raw units.
const STEP_SHIFT: u32 = FRAC_BITS - 6;
const STEP_RAW: i32 = 1 << STEP_SHIFT;
pub const TABLE_LEN: usize = 257;
/// Inputs at or beyond 4.0 saturate.
const SATURATION_RAW: i32 = 4 * ONE;

/// Q6.10 fixed-point number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FixedQ(pub i32);

impl FixedQ {
    pub const ZERO: FixedQ = FixedQ(0);

    pub const fn from_raw(raw: i32) -> Self {
        FixedQ(raw)
    }

    pub const fn raw(self) -> i32 {
        self.0
    }

    /// Rounds to the nearest representable value, saturating at the i32 range.
    pub fn from_f64(x: f64) -> Self {
        FixedQ((x * ONE as f64).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
    }

    /// Integer quotient `num / den` in Q10, truncated toward zero.
    pub fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        let q = (num as i128 * ONE as i128) / den as i128;
        FixedQ(q.clamp(i32::MIN as i128, i32::MAX as i128) as i32)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / ONE as f64
    }
}

impl Neg for FixedQ {
    type Output = FixedQ;
    fn neg(self) -> FixedQ {
        FixedQ(self.0.saturating_neg())
    }
}

/// round(tanh(i/64) * 1024) for i in 0..=256, computed offline with 50-digit
/// arithmetic.
static GOLDEN: [i16; TABLE_LEN] = [
    0, 16, 32, 48, 64, 80, 96, 112, 127, 143, 159, 174, 190, 205, 220, 236, 251, 266, 281, 295, 310, 324, 339, 353,
    367, 381, 395, 408, 421, 435, 448, 461, 473, 486, 498, 510, 522, 534, 545, 557, 568, 579, 590, 600, 611, 621, 631,
    641, 650, 660, 669, 678, 687, 696, 704, 713, 721, 729, 737, 744, 752, 759, 766, 773, 780, 787, 793, 799, 805, 812,
    817, 823, 829, 834, 839, 845, 850, 855, 859, 864, 869, 873, 877, 882, 886, 890, 894, 897, 901, 905, 908, 911, 915,
    918, 921, 924, 927, 930, 932, 935, 938, 940, 943, 945, 948, 950, 952, 954, 956, 958, 960, 962, 964, 966, 968, 969,
    971, 972, 974, 975, 977, 978, 980, 981, 982, 984, 985, 986, 987, 988, 989, 990, 991, 992, 993, 994, 995, 996, 997,
    998, 999, 999, 1000, 1001, 1001, 1002, 1003, 1003, 1004, 1005, 1005, 1006, 1006, 1007, 1007, 1008, 1008, 1009,
    1009, 1010, 1010, 1011, 1011, 1012, 1012, 1012, 1013, 1013, 1013, 1014, 1014, 1014, 1015, 1015, 1015, 1015, 1016,
    1016, 1016, 1016, 1017, 1017, 1017, 1017, 1018, 1018, 1018, 1018, 1018, 1018, 1019, 1019, 1019, 1019, 1019, 1019,
    1020, 1020, 1020, 1020, 1020, 1020, 1020, 1020, 1021, 1021, 1021, 1021, 1021, 1021, 1021, 1021, 1021, 1021, 1021,
    1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1022, 1023, 1023, 1023,
    1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023, 1023,
    1023, 1023, 1023, 1023,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TanhTable {
    entries: [i16; TABLE_LEN],
}

impl TanhTable {
    pub fn entries(&self) -> &[i16; TABLE_LEN] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> FixedQ {
        FixedQ(self.entries[i] as i32)
    }

    /// Odd-symmetric lookup with linear interpolation.
    pub fn eval(&self, x: FixedQ) -> FixedQ {
        let neg = x.0 < 0;
        let mag = x.0.unsigned_abs().min(SATURATION_RAW as u32) as i32;
        let y = if mag >= SATURATION_RAW {
            self.entries[TABLE_LEN - 1] as i32
        } else {
            let idx = (mag >> STEP_SHIFT) as usize;
            let frac = mag & (STEP_RAW - 1);
            let lo = self.entries[idx] as i32;
            let hi = self.entries[idx + 1] as i32;
            lo + ((hi - lo) * frac + STEP_RAW / 2) / STEP_RAW
        };
        FixedQ(if neg { -y } else { y })
    }

    /// Audit export with header `x_q,theta_q`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_q,theta_q\n");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{},{}", (i as i32) << STEP_SHIFT, e);
        }
        out
    }
}

pub fn build_table() -> TanhTable {
    TanhTable { entries: GOLDEN }
}

static TABLE: TanhTable = TanhTable { entries: GOLDEN };

/// tanh of a Q10 input using the shared table.
pub fn tanh_fixed(x: FixedQ) -> FixedQ {
    TABLE.eval(x)
}
