//! Periodic and time-invariant state-space models and the cyclic
//! reformulation that maps one onto the other.

use crate::error::{Error, Result};
use crate::linalg::{block_diag, Mat};

/// Constant quadruple `(A, B, C, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiStateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl LtiStateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n
            || b.nrows() != n
            || c.ncols() != n
            || d.nrows() != c.nrows()
            || d.ncols() != b.ncols()
        {
            return Err(Error::DimensionMismatch(format!(
                "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Strictly proper system (`D = 0`).
    pub fn strictly_proper(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let d = Mat::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `(T^-1 A T, T^-1 B, C T, D)`.
    pub fn similarity(&self, t: &Mat) -> Result<Self> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("similarity transform is singular".into()))?;
        Ok(Self {
            a: &t_inv * &self.a * t,
            b: &t_inv * &self.b,
            c: &self.c * t,
            d: self.d.clone(),
        })
    }
}

/// `M`-periodic quadruple `{A_k, B_k, C_k, D_k}`, `k = 0..M-1`.
///
/// Phase indices are always taken modulo the period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicStateSpace {
    a: Vec<Mat>,
    b: Vec<Mat>,
    c: Vec<Mat>,
    d: Vec<Mat>,
}

impl PeriodicStateSpace {
    pub fn new(a: Vec<Mat>, b: Vec<Mat>, c: Vec<Mat>, d: Vec<Mat>) -> Result<Self> {
        let m = a.len();
        if m == 0 {
            return Err(Error::InvalidConfig("period must be at least 1".into()));
        }
        if b.len() != m || c.len() != m || d.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "period mismatch: {} A, {} B, {} C, {} D matrices",
                m,
                b.len(),
                c.len(),
                d.len()
            )));
        }
        let shape = |v: &[Mat]| v[0].shape();
        for (name, list) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if let Some(k) = list.iter().position(|x| x.shape() != shape(list)) {
                return Err(Error::DimensionMismatch(format!(
                    "{name}_{k} has shape {:?}, expected {:?}",
                    list[k].shape(),
                    shape(list)
                )));
            }
        }
        // Reuse the LTI checks on phase 0 for cross-matrix consistency.
        LtiStateSpace::new(a[0].clone(), b[0].clone(), c[0].clone(), d[0].clone())?;
        Ok(Self { a, b, c, d })
    }

    /// Strictly proper periodic system (`D_k = 0`).
    pub fn strictly_proper(a: Vec<Mat>, b: Vec<Mat>, c: Vec<Mat>) -> Result<Self> {
        let d = b
            .iter()
            .zip(&c)
            .map(|(b, c)| Mat::zeros(c.nrows(), b.ncols()))
            .collect();
        Self::new(a, b, c, d)
    }

    /// A time-invariant system viewed as periodic with the given period.
    pub fn from_lti(sys: &LtiStateSpace, period: usize) -> Result<Self> {
        Self::new(
            vec![sys.a.clone(); period],
            vec![sys.b.clone(); period],
            vec![sys.c.clone(); period],
            vec![sys.d.clone(); period],
        )
    }

    pub fn period(&self) -> usize {
        self.a.len()
    }

    pub fn n_states(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c[0].nrows()
    }

    fn idx(&self, k: i64) -> usize {
        k.rem_euclid(self.period() as i64) as usize
    }

    pub fn a(&self, k: i64) -> &Mat {
        &self.a[self.idx(k)]
    }

    pub fn b(&self, k: i64) -> &Mat {
        &self.b[self.idx(k)]
    }

    pub fn c(&self, k: i64) -> &Mat {
        &self.c[self.idx(k)]
    }

    pub fn d(&self, k: i64) -> &Mat {
        &self.d[self.idx(k)]
    }

    pub fn a_all(&self) -> &[Mat] {
        &self.a
    }

    pub fn b_all(&self) -> &[Mat] {
        &self.b
    }

    pub fn c_all(&self) -> &[Mat] {
        &self.c
    }

    pub fn d_all(&self) -> &[Mat] {
        &self.d
    }

    /// Monodromy matrix `A_{M-1} ... A_1 A_0`.
    pub fn monodromy(&self) -> Mat {
        self.transition(0, self.period())
    }

    /// State transition over `steps` samples starting at phase `k`:
    /// `A_{k+steps-1} ... A_{k+1} A_k` (identity when `steps == 0`).
    pub fn transition(&self, k: i64, steps: usize) -> Mat {
        let n = self.n_states();
        let mut phi = Mat::identity(n, n);
        for s in 0..steps {
            phi = self.a(k + s as i64) * phi;
        }
        phi
    }

    /// The block-cyclic LTI system `(Ǎ, B̌, Č, Ď)`.
    ///
    /// `Ǎ` carries `A_k` in block `(k+1 mod M, k)`, `B̌` likewise with `B_k`;
    /// `Č` and `Ď` are block diagonal.
    pub fn cyclic_reformulate(&self) -> LtiStateSpace {
        let m = self.period();
        let (n, mi) = (self.n_states(), self.n_inputs());
        let mut a = Mat::zeros(m * n, m * n);
        let mut b = Mat::zeros(m * n, m * mi);
        for k in 0..m {
            let r = (k + 1) % m;
            a.view_mut((r * n, k * n), (n, n)).copy_from(&self.a[k]);
            b.view_mut((r * n, k * mi), (n, mi)).copy_from(&self.b[k]);
        }
        LtiStateSpace {
            a,
            b,
            c: block_diag(&self.c),
            d: block_diag(&self.d),
        }
    }

    pub fn with_zero_feedthrough(&self) -> Self {
        let d = self.d.iter().map(|d| Mat::zeros(d.nrows(), d.ncols())).collect();
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues, multiset_distance, Complex64};
    use crate::presets;

    #[test]
    fn monodromy_identity_for_unit_period() {
        let sys = PeriodicStateSpace::strictly_proper(
            vec![Mat::identity(3, 3)],
            vec![Mat::zeros(3, 1)],
            vec![Mat::zeros(1, 3)],
        )
        .unwrap();
        assert_eq!(sys.monodromy(), Mat::identity(3, 3));
    }

    #[test]
    fn unstable_plant_monodromy_eigenvalues() {
        let plant = presets::example2().plant;
        let mut ev: Vec<f64> = eigenvalues(&plant.monodromy())
            .unwrap()
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-12);
                z.re
            })
            .collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - (-0.501)).abs() < 5e-4, "{ev:?}");
        assert!((ev[1] - 1.581).abs() < 5e-4, "{ev:?}");
    }

    #[test]
    fn unit_period_reformulation_is_identity_map() {
        let a = Mat::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let b = Mat::from_row_slice(2, 1, &[1.0, 2.0]);
        let c = Mat::from_row_slice(1, 2, &[1.0, -1.0]);
        let d = Mat::from_row_slice(1, 1, &[0.5]);
        let p = PeriodicStateSpace::new(vec![a.clone()], vec![b.clone()], vec![c.clone()], vec![d.clone()])
            .unwrap();
        let cyc = p.cyclic_reformulate();
        assert_eq!(cyc, LtiStateSpace::new(a, b, c, d).unwrap());
    }

    #[test]
    fn cyclic_block_layout_of_example1() {
        let plant = presets::example1().plant;
        let cyc = plant.cyclic_reformulate();
        assert_eq!(cyc.a.shape(), (6, 6));
        let mut nonzero_slots = 0;
        for r in 0..3 {
            for c in 0..3 {
                let blk = cyc.a.view((2 * r, 2 * c), (2, 2)).into_owned();
                if blk.norm() > 0.0 {
                    nonzero_slots += 1;
                    assert_eq!(r, (c + 1) % 3, "block ({r},{c}) off the cyclic pattern");
                    assert_eq!(&blk, plant.a(c as i64));
                }
            }
        }
        assert_eq!(nonzero_slots, 3);
        let b_slots: Vec<(usize, usize)> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .filter(|&(r, c)| cyc.b.view((2 * r, c), (2, 1)).norm() > 0.0)
            .collect();
        assert_eq!(b_slots, vec![(0, 2), (1, 0), (2, 1)]);
    }

    #[test]
    fn cycled_spectrum_is_mth_roots_of_monodromy() {
        let a = vec![
            Mat::from_row_slice(2, 2, &[0.3, -1.2, 0.8, 0.1]),
            Mat::from_row_slice(2, 2, &[1.1, 0.4, -0.2, 0.7]),
            Mat::from_row_slice(2, 2, &[-0.5, 0.9, 0.6, 0.2]),
        ];
        let b = vec![Mat::zeros(2, 1); 3];
        let c = vec![Mat::zeros(1, 2); 3];
        let p = PeriodicStateSpace::strictly_proper(a, b, c).unwrap();
        let cyc = eigenvalues(&p.cyclic_reformulate().a).unwrap();
        let mono = eigenvalues(&p.monodromy()).unwrap();
        let roots: Vec<Complex64> = mono
            .iter()
            .flat_map(|lam| {
                let (r, th) = lam.to_polar();
                (0..3).map(move |j| {
                    Complex64::from_polar(r.cbrt(), (th + 2.0 * std::f64::consts::PI * j as f64) / 3.0)
                })
            })
            .collect();
        assert!(multiset_distance(&cyc, &roots) < 1e-10);
    }

    #[test]
    fn rejects_inconsistent_phases() {
        let err = PeriodicStateSpace::strictly_proper(
            vec![Mat::zeros(2, 2), Mat::zeros(3, 3)],
            vec![Mat::zeros(2, 1); 2],
            vec![Mat::zeros(1, 2); 2],
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }
}
