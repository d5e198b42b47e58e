use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::nn::{FeatureMap, Real};

use super::MiError;

/// Flat sampling sites `b*H*W + i*W + j` on the shallower map's grid behind a
/// [`PairBatch`], kept so the objective gradient can be scattered back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSites {
    /// `(batch, H, W)` of the shallower map.
    pub grid: (usize, usize, usize),
    /// `(h, w)` of the deeper map; each of its cells covers an
    /// `(H/h) x (W/w)` block of `grid`.
    pub right_grid: (usize, usize),
    pub joint: Vec<usize>,
    pub marginal_left: Vec<usize>,
    pub marginal_right: Vec<usize>,
}

impl PairSites {
    /// `(batch index, row, col)` of a flat site.
    pub fn location(&self, site: usize) -> (usize, usize, usize) {
        let (_, h, w) = self.grid;
        (site / (h * w), (site / w) % h, site % w)
    }

    /// Flat index on the deeper map of the cell that nearest-neighbour
    /// upsampling copies to `site`.
    pub fn right_site(&self, site: usize) -> usize {
        let (bi, i, j) = self.location(site);
        let (_, h, w) = self.grid;
        let (rh, rw) = self.right_grid;
        (bi * rh + i * rh / h) * rw + j * rw / w
    }
}

/// Joint samples (both halves from the same image and location) and
/// product-of-marginals samples (halves drawn independently), each `m x N`
/// with `N = C_l + C_{l+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch<T> {
    pub joint: Array2<T>,
    pub marginal: Array2<T>,
    pub layer_pair_id: usize,
    pub left_channels: usize,
    pub sites: PairSites,
}

/// `(C, B, H, W)` as a `(B*H*W, C)` matrix, so one site's channels are contiguous.
fn site_major<T: Real>(fm: &FeatureMap<T>) -> Array2<T> {
    let (b, c, h, w) = fm.shape();
    fm.cnhw()
        .view()
        .into_shape_with_order((c, b * h * w))
        .expect("feature maps are contiguous")
        .t()
        .as_standard_layout()
        .into_owned()
}

fn channel_major<T: Real>(rows: Array2<T>, (b, h, w): (usize, usize, usize)) -> FeatureMap<T> {
    let c = rows.ncols();
    let cnhw = rows
        .t()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, b, h, w))
        .expect("element count preserved");
    FeatureMap::from_cnhw(cnhw)
}

fn add_row<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Real> PairBatch<T> {
    pub fn len(&self) -> usize {
        self.joint.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.joint.ncols()
    }

    /// Scatters per-vector gradients back onto the two maps the pairs were
    /// drawn from: `(left, right)` with `right` on its own grid.
    pub fn scatter(&self, djoint: ArrayView2<T>, dmarginal: ArrayView2<T>) -> (FeatureMap<T>, FeatureMap<T>) {
        let (b, h, w) = self.sites.grid;
        let (rh, rw) = self.sites.right_grid;
        let cl = self.left_channels;
        let cr = self.width() - cl;
        let mut left = Array2::<T>::zeros((b * h * w, cl));
        let mut right = Array2::<T>::zeros((b * rh * rw, cr));
        let mut put = |row: ndarray::ArrayView1<T>, s1: usize, s2: usize| {
            let row = row.as_slice().expect("standard layout");
            add_row(left.row_mut(s1).into_slice().unwrap(), &row[..cl]);
            add_row(right.row_mut(self.sites.right_site(s2)).into_slice().unwrap(), &row[cl..]);
        };
        let djoint = djoint.as_standard_layout();
        let dmarginal = dmarginal.as_standard_layout();
        for (row, &s) in djoint.outer_iter().zip(&self.sites.joint) {
            put(row, s, s);
        }
        for ((row, &s1), &s2) in dmarginal
            .outer_iter()
            .zip(&self.sites.marginal_left)
            .zip(&self.sites.marginal_right)
        {
            put(row, s1, s2);
        }
        (channel_major(left, (b, h, w)), channel_major(right, (b, rh, rw)))
    }
}

/// Draws `m` joint and `m` marginal pair vectors.
///
/// `right` is either on `left`'s grid or on a coarser grid whose side lengths
/// divide `left`'s; in the latter case it is read through nearest-neighbour
/// upsampling without materializing it, so the result equals
/// `sample_pairs(left, &upsample_nearest(right, left.spatial()), ..)`.
///
/// Joint: one uniform site `(b, i, j)` of `left`'s grid, halves
/// `left[b, :, i, j]` and `right_up[b, :, i, j]`. Marginal: two independent
/// uniform sites, so halves may come from different images.
pub fn sample_pairs<T: Real, R: Rng + ?Sized>(
    left: &FeatureMap<T>,
    right: &FeatureMap<T>,
    m: usize,
    layer_pair_id: usize,
    rng: &mut R,
) -> Result<PairBatch<T>, MiError> {
    let (b, cl, h, w) = left.shape();
    let (b2, cr, rh, rw) = right.shape();
    let divides = |big: usize, small: usize| small > 0 && small <= big && big % small == 0;
    if b != b2 || !divides(h, rh) || !divides(w, rw) {
        return Err(MiError::ShapeMismatch(format!(
            "left {:?} vs right {:?}",
            left.shape(),
            right.shape()
        )));
    }
    if m == 0 {
        return Err(MiError::ZeroSamples);
    }
    let sites_total = b * h * w;
    if sites_total == 0 {
        return Err(MiError::ShapeMismatch("empty feature map".into()));
    }
    let joint: Vec<usize> = (0..m).map(|_| rng.random_range(0..sites_total)).collect();
    let mut marginal_left = Vec::with_capacity(m);
    let mut marginal_right = Vec::with_capacity(m);
    for _ in 0..m {
        marginal_left.push(rng.random_range(0..sites_total));
        marginal_right.push(rng.random_range(0..sites_total));
    }
    let sites = PairSites {
        grid: (b, h, w),
        right_grid: (rh, rw),
        joint,
        marginal_left,
        marginal_right,
    };

    let ls = site_major(left);
    let rs = site_major(right);
    let n = cl + cr;
    let fill = |out: &mut Array2<T>, lefts: &[usize], rights: &[usize]| {
        for ((mut row, &s1), &s2) in out.axis_iter_mut(Axis(0)).zip(lefts).zip(rights) {
            let row = row.as_slice_mut().expect("fresh array is contiguous");
            row[..cl].copy_from_slice(ls.row(s1).as_slice().unwrap());
            row[cl..].copy_from_slice(rs.row(sites.right_site(s2)).as_slice().unwrap());
        }
    };
    let mut jm = Array2::<T>::zeros((m, n));
    let mut mm = Array2::<T>::zeros((m, n));
    fill(&mut jm, &sites.joint, &sites.joint);
    fill(&mut mm, &sites.marginal_left, &sites.marginal_right);
    Ok(PairBatch {
        joint: jm,
        marginal: mm,
        layer_pair_id,
        left_channels: cl,
        sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_fields_give_constant_pairs() {
        let left = FeatureMap::from_fn(2, 3, 4, 4, |_, _, _, _| 3.0f64);
        let right = FeatureMap::from_fn(2, 2, 4, 4, |_, _, _, _| 5.0f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_pairs(&left, &right, 50, 0, &mut rng).unwrap();
        for row in p.joint.outer_iter().chain(p.marginal.outer_iter()) {
            assert_eq!(row.to_vec(), vec![3.0, 3.0, 3.0, 5.0, 5.0]);
        }
    }

    #[test]
    fn joint_halves_share_a_site() {
        // Encode the site in the value so each half reveals where it came from.
        let left = FeatureMap::from_fn(3, 2, 4, 4, |b, c, i, j| (b * 1000 + i * 10 + j) as f64 + c as f64 * 0.0);
        let right = FeatureMap::from_fn(3, 1, 4, 4, |b, _, i, j| (b * 1000 + i * 10 + j) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_pairs(&left, &right, 200, 1, &mut rng).unwrap();
        for row in p.joint.outer_iter() {
            assert_eq!(row[0], row[2]);
        }
        let mixed = p.marginal.outer_iter().filter(|r| r[0] != r[2]).count();
        assert!(mixed > 150, "marginal halves should rarely coincide: {mixed}");
    }

    #[test]
    fn mismatched_grids_and_zero_m() {
        let left = FeatureMap::<f32>::zeros(2, 3, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for right in [
            FeatureMap::<f32>::zeros(2, 3, 3, 3),
            FeatureMap::<f32>::zeros(1, 3, 2, 2),
            FeatureMap::<f32>::zeros(2, 3, 8, 8),
        ] {
            assert!(matches!(
                sample_pairs(&left, &right, 4, 0, &mut rng),
                Err(MiError::ShapeMismatch(_))
            ));
        }
        assert_eq!(
            sample_pairs(&left, &left, 0, 0, &mut rng).unwrap_err(),
            MiError::ZeroSamples
        );
    }

    #[test]
    fn coarse_right_map_reads_through_upsampling() {
        let left = FeatureMap::from_fn(3, 2, 8, 8, |b, c, i, j| (b * 1000 + c * 100 + i * 8 + j) as f64);
        let right = FeatureMap::from_fn(3, 4, 2, 2, |b, c, i, j| -((b * 1000 + c * 100 + i * 2 + j) as f64));
        let up = super::super::upsample_nearest(&right, (8, 8)).unwrap();
        let direct = sample_pairs(&left, &right, 300, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let via_up = sample_pairs(&left, &up, 300, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(direct.joint, via_up.joint);
        assert_eq!(direct.marginal, via_up.marginal);

        let dj = Array2::from_shape_fn(direct.joint.dim(), |(r, c)| (r * 7 + c) as f64 * 0.01);
        let dm = Array2::from_shape_fn(direct.joint.dim(), |(r, c)| (r * 3 + c) as f64 * -0.02);
        let (l1, r1) = direct.scatter(dj.view(), dm.view());
        let (l2, r2_up) = via_up.scatter(dj.view(), dm.view());
        let r2 = super::super::upsample_nearest_backward(&r2_up, (2, 2)).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(r1.shape(), r2.shape());
        for (a, b) in r1.cnhw().iter().zip(r2.cnhw().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
