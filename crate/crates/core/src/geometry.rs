//! NV crystallographic frame: projecting lab-frame fields onto the four NV
//! axes and recovering lab-frame vectors and uncertainties from axis data.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat3;
use crate::scalar::Real;

/// Magnetic field in Gauss, lab frame. Serializes as `[bx, by, bz]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Deserialize)]
#[serde(from = "[T; 3]")]
pub struct FieldVector<T> {
    pub bx: T,
    pub by: T,
    pub bz: T,
}

impl<T> From<[T; 3]> for FieldVector<T> {
    fn from([bx, by, bz]: [T; 3]) -> Self {
        Self { bx, by, bz }
    }
}

impl<T: Serialize> Serialize for FieldVector<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [&self.bx, &self.by, &self.bz].serialize(s)
    }
}

impl<T> From<FieldVector<T>> for [T; 3] {
    fn from(v: FieldVector<T>) -> Self {
        [v.bx, v.by, v.bz]
    }
}

impl<T: Real> FieldVector<T> {
    pub const fn new(bx: T, by: T, bz: T) -> Self {
        Self { bx, by, bz }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(v: [T; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.bx, self.by, self.bz]
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn dot(self, o: Self) -> T {
        self.bx * o.bx + self.by * o.by + self.bz * o.bz
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.by * o.bz - self.bz * o.by,
            self.bz * o.bx - self.bx * o.bz,
            self.bx * o.by - self.by * o.bx,
        )
    }

    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn magnitude(self) -> T {
        // hypot chain avoids overflow for extreme inputs
        self.bx.hypot(self.by).hypot(self.bz)
    }

    /// Unit vector, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.magnitude();
        (n > T::zero() && n.is_finite()).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }

    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.bx), f(self.by), f(self.bz))
    }

    /// Angle to `o` in `[0, π]`, robust near 0 and π.
    pub fn angle_to(self, o: Self) -> T {
        self.cross(o).magnitude().atan2(self.dot(o))
    }

    pub fn max_abs_diff(self, o: Self) -> T {
        let d = self - o;
        d.bx.abs().max(d.by.abs()).max(d.bz.abs())
    }

    pub fn cast<U: Real>(self) -> FieldVector<U> {
        FieldVector::new(
            U::lit(self.bx.to_f64_lossy()),
            U::lit(self.by.to_f64_lossy()),
            U::lit(self.bz.to_f64_lossy()),
        )
    }
}

impl<T: Real> Add for FieldVector<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.bx + o.bx, self.by + o.by, self.bz + o.bz)
    }
}

impl<T: Real> Sub for FieldVector<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.bx - o.bx, self.by - o.by, self.bz - o.bz)
    }
}

impl<T: Real> AddAssign for FieldVector<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for FieldVector<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Neg for FieldVector<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.bx, -self.by, -self.bz)
    }
}

impl<T: Real> Mul<T> for FieldVector<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.bx * s, self.by * s, self.bz * s)
    }
}

impl<T: Real> Div<T> for FieldVector<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.bx / s, self.by / s, self.bz / s)
    }
}

impl<T: Real> fmt::Display for FieldVector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f.precision() {
            Some(p) => write!(f, "({:.*}, {:.*}, {:.*})", p, self.bx, p, self.by, p, self.bz),
            None => write!(f, "({}, {}, {})", self.bx, self.by, self.bz),
        }
    }
}

/// One of the four NV orientations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    A,
    B,
    C,
    D,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::A, Axis::B, Axis::C, Axis::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }
}

/// Subset of the NV axes used for reconstruction. Serializes as its letters,
/// e.g. `"abd"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct AxisSet(u8);

impl From<AxisSet> for String {
    fn from(s: AxisSet) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for AxisSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl AxisSet {
    pub const ALL: AxisSet = AxisSet(0b1111);

    pub fn from_axes(axes: &[Axis]) -> Self {
        AxisSet(axes.iter().fold(0, |m, a| m | (1 << a.index())))
    }

    pub fn without(axis: Axis) -> Self {
        AxisSet(Self::ALL.0 & !(1 << axis.index()))
    }

    pub fn contains(self, axis: Axis) -> bool {
        self.0 & (1 << axis.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Axis> {
        Axis::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// The three axes with the lowest uncertainty; ties go to the earlier axis
    /// in `a < b < c < d` order.
    pub fn best_three<T: Real>(sigma_axes: [T; 4]) -> Self {
        let mut order = Axis::ALL;
        order.sort_by(|x, y| {
            sigma_axes[x.index()]
                .partial_cmp(&sigma_axes[y.index()])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.cmp(y))
        });
        Self::from_axes(&order[..3])
    }
}

impl fmt::Display for AxisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.iter() {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

impl std::str::FromStr for AxisSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for ch in s.trim().chars() {
            let axis = match ch.to_ascii_lowercase() {
                'a' => Axis::A,
                'b' => Axis::B,
                'c' => Axis::C,
                'd' => Axis::D,
                _ => return Err(Error::invalid("axes", format!("unknown NV axis `{ch}`"))),
            };
            axes.push(axis);
        }
        let set = Self::from_axes(&axes);
        if set.len() < 3 {
            return Err(Error::invalid("axes", "at least three NV axes are required"));
        }
        Ok(set)
    }
}

/// Field projections on the NV axes `a..d`, Gauss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisProjection<T> {
    pub ba: T,
    pub bb: T,
    pub bc: T,
    pub bd: T,
}

impl<T: Real> AxisProjection<T> {
    pub fn from_array(v: [T; 4]) -> Self {
        Self {
            ba: v[0],
            bb: v[1],
            bc: v[2],
            bd: v[3],
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.ba, self.bb, self.bc, self.bd]
    }

    pub fn get(self, axis: Axis) -> T {
        self.to_array()[axis.index()]
    }
}

/// How per-axis uncertainties are carried into the lab frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// `sqrt(diag(W Σ Wᵀ))` for independent Gaussian axis noise. Matches the
    /// empirical scatter of [`OrientationBasis::recover_field`].
    #[default]
    Quadrature,
    /// `|W| σ'`: the recovery matrix applied directly to the uncertainty vector
    /// with absolute-valued entries, a worst-case (fully correlated) bound.
    /// Three 150 mG axes give about 260 mG per lab axis this way.
    Linear,
}

/// Lab-frame directions of the four NV axes plus the precomputed recovery
/// matrix for the full set.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationBasis<T> {
    axes: [FieldVector<T>; 4],
    full_recovery: RecoveryMatrix<T>,
}

/// 3×4 map from axis projections to the lab frame; columns of unselected
/// axes are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryMatrix<T> {
    pub rows: [[T; 4]; 3],
    pub selection: AxisSet,
}

impl<T: Real> RecoveryMatrix<T> {
    pub fn apply(&self, proj: AxisProjection<T>) -> FieldVector<T> {
        let p = proj.to_array();
        let row = |r: &[T; 4]| r.iter().zip(p).fold(T::zero(), |acc, (w, v)| acc + *w * v);
        FieldVector::new(row(&self.rows[0]), row(&self.rows[1]), row(&self.rows[2]))
    }
}

impl<T: Real> OrientationBasis<T> {
    /// The four tetrahedral NV directions of a diamond lattice,
    /// `(1,1,1), (1,−1,−1), (−1,1,−1), (−1,−1,1)` over √3.
    pub fn tetrahedral() -> Self {
        let one = T::one();
        let raw = [
            FieldVector::new(one, one, one),
            FieldVector::new(one, -one, -one),
            FieldVector::new(-one, one, -one),
            FieldVector::new(-one, -one, one),
        ];
        Self::from_axes(raw).expect("tetrahedral axes span the lab frame")
    }

    /// Builds a basis from arbitrary (not necessarily normalized) axis
    /// directions.
    pub fn from_axes(raw: [FieldVector<T>; 4]) -> Result<Self> {
        let mut axes = raw;
        for (axis, v) in Axis::ALL.iter().zip(axes.iter_mut()) {
            if !v.is_finite() {
                return Err(Error::invalid("axes", format!("axis {} is not finite", axis.letter())));
            }
            *v = v
                .normalized()
                .ok_or_else(|| Error::invalid("axes", format!("axis {} has zero length", axis.letter())))?;
        }
        let full_recovery = recovery_for(&axes, AxisSet::ALL)?;
        Ok(Self { axes, full_recovery })
    }

    pub fn axes(&self) -> &[FieldVector<T>; 4] {
        &self.axes
    }

    pub fn axis(&self, axis: Axis) -> FieldVector<T> {
        self.axes[axis.index()]
    }

    /// 4×3 projection matrix with the axes as rows.
    pub fn projection_matrix(&self) -> [[T; 3]; 4] {
        self.axes.map(|a| a.to_array())
    }

    pub fn rotated(&self, r: &Mat3<T>) -> Result<Self> {
        Self::from_axes(self.axes.map(|a| r.mul_vec(a)))
    }

    /// Moore-Penrose left inverse of the selected rows; the exact inverse when
    /// three axes are selected.
    pub fn recovery_matrix(&self, selection: AxisSet) -> Result<RecoveryMatrix<T>> {
        if selection == AxisSet::ALL {
            return Ok(self.full_recovery);
        }
        recovery_for(&self.axes, selection)
    }

    pub fn project_field(&self, b: FieldVector<T>) -> AxisProjection<T> {
        AxisProjection::from_array(self.axes.map(|a| a.dot(b)))
    }

    pub fn recover_field(&self, proj: AxisProjection<T>, selection: AxisSet) -> Result<FieldVector<T>> {
        Ok(self.recovery_matrix(selection)?.apply(proj))
    }

    /// Per-lab-axis standard deviation from independent per-NV-axis
    /// standard deviations.
    pub fn propagate_axis_uncertainty(
        &self,
        sigma_axes: [T; 4],
        selection: AxisSet,
        mode: Propagation,
    ) -> Result<FieldVector<T>> {
        if sigma_axes.iter().any(|s| !(*s >= T::zero()) || !s.is_finite()) {
            return Err(Error::invalid("sigma_axes", "must be finite and non-negative"));
        }
        let w = self.recovery_matrix(selection)?;
        let row = |r: &[T; 4]| match mode {
            Propagation::Quadrature => r
                .iter()
                .zip(sigma_axes)
                .fold(T::zero(), |acc, (w, s)| acc + (*w * s).powi(2))
                .sqrt(),
            Propagation::Linear => r.iter().zip(sigma_axes).fold(T::zero(), |acc, (w, s)| acc + w.abs() * s),
        };
        Ok(FieldVector::new(row(&w.rows[0]), row(&w.rows[1]), row(&w.rows[2])))
    }
}

impl<T: Real> Default for OrientationBasis<T> {
    fn default() -> Self {
        Self::tetrahedral()
    }
}

/// The standard tetrahedral basis (see [`OrientationBasis::tetrahedral`]).
pub fn default_basis<T: Real>() -> OrientationBasis<T> {
    OrientationBasis::tetrahedral()
}

fn recovery_for<T: Real>(axes: &[FieldVector<T>; 4], selection: AxisSet) -> Result<RecoveryMatrix<T>> {
    if selection.len() < 3 {
        return Err(Error::RankDeficient);
    }
    let gram = selection
        .iter()
        .fold(Mat3::zeros(), |g, a| g + Mat3::outer(axes[a.index()], axes[a.index()]));
    // Unit axes: eigenvalues of the Gram matrix are O(1), so an absolute floor
    // on the smallest one is a rank test.
    let eig = gram.symmetric_eigenvalues();
    if !(eig[0] > T::lit(1e-9).max(T::epsilon() * T::lit(1e3))) {
        return Err(Error::RankDeficient);
    }
    let inv = gram.inverse().ok_or(Error::RankDeficient)?;
    let mut rows = [[T::zero(); 4]; 3];
    for a in selection.iter() {
        let col = inv.mul_vec(axes[a.index()]).to_array();
        for r in 0..3 {
            rows[r][a.index()] = col[r];
        }
    }
    Ok(RecoveryMatrix { rows, selection })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> OrientationBasis<f64> {
        default_basis()
    }

    #[test]
    fn first_axis_is_normalized_diagonal() {
        let a = basis().axis(Axis::A);
        let s = 1.0 / 3f64.sqrt();
        assert!(a.max_abs_diff(FieldVector::new(s, s, s)) < 1e-15);
        assert!((s - 0.57735).abs() < 1e-5);
    }

    #[test]
    fn tetrahedral_dot_products() {
        let b = basis();
        for i in 0..4 {
            assert!((b.axes()[i].magnitude() - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!((b.axes()[i].dot(b.axes()[j]) + 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_of_first_axis() {
        let b = basis();
        let p = b.project_field(b.axis(Axis::A)).to_array();
        let want = [1.0, -1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (g, w) in p.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_of_zero_and_x() {
        let b = basis();
        assert_eq!(b.project_field(FieldVector::zeros()).to_array(), [0.0; 4]);
        for v in b.project_field(FieldVector::new(1.0, 0.0, 0.0)).to_array() {
            assert!((v.abs() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_round_trips() {
        let b = basis();
        let field = FieldVector::new(0.3, -0.7, 1.1);
        let proj = b.project_field(field);
        let all = b.recover_field(proj, AxisSet::ALL).unwrap();
        assert!(all.max_abs_diff(field) < 1e-10);
        let abc = AxisSet::from_axes(&[Axis::A, Axis::B, Axis::C]);
        assert!(b.recover_field(proj, abc).unwrap().max_abs_diff(field) < 1e-10);
        let zero = b.recover_field(AxisProjection::default(), AxisSet::ALL).unwrap();
        assert_eq!(zero, FieldVector::zeros());
    }

    #[test]
    fn two_axes_or_degenerate_user_basis_is_rank_deficient() {
        let b = basis();
        let two = AxisSet::from_axes(&[Axis::A, Axis::B]);
        assert_eq!(b.recovery_matrix(two), Err(Error::RankDeficient));

        let x = FieldVector::new(1.0, 0.0, 0.0);
        let y = FieldVector::new(0.0, 1.0, 0.0);
        let coplanar = OrientationBasis::from_axes([x, y, x + y, x - y]);
        assert_eq!(coplanar, Err(Error::RankDeficient));

        let z = FieldVector::new(0.0, 0.0, 1.0);
        let user = OrientationBasis::from_axes([x, y, z, x]).unwrap();
        let xyx = AxisSet::from_axes(&[Axis::A, Axis::B, Axis::D]);
        assert_eq!(user.recovery_matrix(xyx), Err(Error::RankDeficient));
    }

    #[test]
    fn zero_length_axis_rejected() {
        let x = FieldVector::new(1.0, 0.0, 0.0);
        let err = OrientationBasis::from_axes([x, FieldVector::zeros(), x, x]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "axes", .. }));
    }

    #[test]
    fn zero_sigma_propagates_to_zero() {
        let s = basis()
            .propagate_axis_uncertainty([0.0; 4], AxisSet::ALL, Propagation::Quadrature)
            .unwrap();
        assert_eq!(s, FieldVector::zeros());
    }

    #[test]
    fn linear_propagation_reproduces_260_mg() {
        let abc = AxisSet::from_axes(&[Axis::A, Axis::B, Axis::C]);
        let s = basis()
            .propagate_axis_uncertainty([0.150; 4], abc, Propagation::Linear)
            .unwrap();
        for v in s.to_array() {
            // Each row of the inverse holds two entries of sqrt(3)/2.
            assert!((v - 0.150 * 3f64.sqrt()).abs() < 1e-12);
            assert!((v - 0.260).abs() < 5e-4);
        }
    }

    #[test]
    fn quadrature_propagation_three_axes() {
        // (AᵀA)⁻¹ for three tetrahedral axes has diagonal 3/2.
        let abc = AxisSet::from_axes(&[Axis::A, Axis::B, Axis::C]);
        let s = basis()
            .propagate_axis_uncertainty([1.0; 4], abc, Propagation::Quadrature)
            .unwrap();
        for v in s.to_array() {
            assert!((v - 1.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn best_three_breaks_ties_by_index() {
        assert_eq!(AxisSet::best_three([1.0, 1.0, 1.0, 1.0]).to_string(), "abc");
        assert_eq!(AxisSet::best_three([2.0, 1.0, 1.0, 1.0]).to_string(), "bcd");
        assert_eq!(AxisSet::best_three([0.1, 0.3, 0.2, 0.3]).to_string(), "abc");
        assert_eq!(AxisSet::best_three([0.1, 0.3, 0.4, 0.2]).to_string(), "abd");
    }

    #[test]
    fn axis_set_parsing() {
        assert_eq!("abd".parse::<AxisSet>().unwrap(), AxisSet::without(Axis::C));
        assert!("ab".parse::<AxisSet>().is_err());
        assert!("abx".parse::<AxisSet>().is_err());
    }

    #[test]
    fn f32_basis_round_trip() {
        let b: OrientationBasis<f32> = default_basis();
        let f = FieldVector::new(0.3f32, -0.7, 1.1);
        let r = b.recover_field(b.project_field(f), AxisSet::ALL).unwrap();
        assert!(r.max_abs_diff(f) < 1e-5);
    }
}
