//! Quantum Fisher information and its gradients with respect to the controls.
//!
//! Three gradient paths coexist on purpose. The analytic path differentiates
//! the sliced evolution in closed form (first order in dt). The
//! rotation-insertion path reconstructs the same first-order derivative from
//! population measurements after inserting ±π/2 rotations, which is what a
//! real device can do. Central finite differences over the amplitudes serve
//! as the model-independent oracle: they differentiate the exact objective,
//! so their deviation from the other two quantifies the first-order slice
//! approximation rather than an implementation bug.

use crate::encoding::{propagate, ControlGrid, ControlHamiltonianSpec, EncodingHamiltonian};
use crate::error::{Error, Result};
use crate::quantum::{
    hermiticity_deviation, trace_product, CMatrix, CVector, DensityMatrix, C64, HERMITIAN_TOL,
};
use crate::sensor::{Insertion, RotationSign, Sensor};

/// QFI in both unit conventions.
///
/// `raw` carries the 4T² prefactor (units s²). `normalized` is raw/T², the
/// dimensionless convention in which the two-qubit NOON bound is exactly 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfiValue {
    pub raw: f64,
    pub normalized: f64,
}

/// Gradient of the raw QFI over a control grid, in s² per (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientGrid {
    k: usize,
    m: usize,
    entries: Vec<f64>,
}

impl GradientGrid {
    pub fn new(k: usize, m: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != k * m {
            return Err(Error::Dimension(format!(
                "expected {} gradient entries for a {}x{} grid, got {}",
                k * m,
                k,
                m,
                entries.len()
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidState("non-finite gradient entry".into()));
        }
        Ok(Self { k, m, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, line: usize, slice: usize) -> f64 {
        assert!(line < self.k && slice < self.m);
        self.entries[line * self.m + slice]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradientGrid) -> f64 {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> GradientGrid {
        GradientGrid {
            k: self.k,
            m: self.m,
            entries: self.entries.iter().map(|e| e * factor).collect(),
        }
    }
}

fn check_generator(rho: &DensityMatrix, dh: &CMatrix) -> Result<()> {
    if dh.nrows() != dh.ncols() || dh.nrows() != rho.dim() {
        return Err(Error::Dimension(format!(
            "generator is {}x{} but the state has dimension {}",
            dh.nrows(),
            dh.ncols(),
            rho.dim()
        )));
    }
    let dev = hermiticity_deviation(dh);
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    Ok(())
}

/// Variance-form QFI: raw = 4T²(Tr[ρ·dh²] − Tr[ρ·dh]²).
///
/// The normalized value is computed first and raw as T² times it, so T = 0 is
/// well defined (raw 0, normalized still the variance).
pub fn qfi(rho: &DensityMatrix, dh: &CMatrix, t: f64) -> Result<QfiValue> {
    check_generator(rho, dh)?;
    let dh2 = dh * dh;
    let second = trace_product(rho.matrix(), &dh2).re;
    let first = trace_product(rho.matrix(), dh).re;
    // same arithmetic shape as qfi_from_diagonals so the two agree exactly
    // for the diagonal reference generator
    let normalized = 4.0 * second - 4.0 * (first * first);
    Ok(QfiValue {
        raw: t * t * normalized,
        normalized,
    })
}

/// Two-qubit specialization for the generator (σz¹+σz²)/2: only ⟨00|ρ|00⟩
/// and ⟨11|ρ|11⟩ enter, giving normalized = 4(p00+p11) − 4(p00−p11)².
pub fn qfi_from_diagonals(p00: f64, p11: f64, t: f64) -> Result<QfiValue> {
    const TOL: f64 = 1e-3;
    if !(-1e-9..=1.0 + TOL).contains(&p00) || !(-1e-9..=1.0 + TOL).contains(&p11) {
        return Err(Error::OutOfRange(format!(
            "populations out of range: p00 = {p00}, p11 = {p11}"
        )));
    }
    if p00 + p11 > 1.0 + TOL {
        return Err(Error::OutOfRange(format!(
            "p00 + p11 = {} exceeds 1 beyond tolerance",
            p00 + p11
        )));
    }
    Ok(qfi_from_diagonals_unchecked(p00, p11, t))
}

/// The same arithmetic without the precondition gate, for measured values
/// whose statistical noise may legitimately exceed the model-level tolerance.
pub(crate) fn qfi_from_diagonals_unchecked(p00: f64, p11: f64, t: f64) -> QfiValue {
    let sum = p00 + p11;
    let diff = p00 - p11;
    let normalized = 4.0 * sum - 4.0 * (diff * diff);
    QfiValue {
        raw: t * t * normalized,
        normalized,
    }
}

/// Closed-form gradient of the raw QFI under the first-order slice
/// derivative: for entry (k, m),
/// ρ' = −i·dt·W [σ_k, S_m] W† with S_m the state after slice m and W the
/// remaining window, and
/// g = 4T²(Tr[ρ'·dh²] − 2·Tr[ρ'·dh]·Tr[ρ(T)·dh]).
pub fn analytic_gradient(
    h: &EncodingHamiltonian,
    specs: &[ControlHamiltonianSpec],
    u: &ControlGrid,
    rho0: &DensityMatrix,
    dh: &CMatrix,
) -> Result<GradientGrid> {
    check_generator(rho0, dh)?;
    if specs.len() != u.k() {
        return Err(Error::Dimension(format!(
            "{} control specs for a grid with {} lines",
            specs.len(),
            u.k()
        )));
    }
    let dim = h.dim();
    let m_slices = u.m();
    let dt = u.dt();
    let t_total = u.total_time();

    // forward states after each slice and per-slice propagators
    let mut props = Vec::with_capacity(m_slices);
    let mut states = Vec::with_capacity(m_slices + 1);
    states.push(rho0.matrix().clone());
    for slice in 0..m_slices {
        let prop = crate::encoding::slice_propagator(h, specs, u, slice)?;
        let next = prop.conjugate(states.last().expect("nonempty"));
        states.push(next);
        props.push(prop);
    }
    // windows[j] = product of propagators for slices j..M (identity at j = M)
    let mut windows = vec![CMatrix::identity(dim, dim); m_slices + 1];
    for slice in (0..m_slices).rev() {
        windows[slice] = &windows[slice + 1] * props[slice].matrix();
    }

    let dh2 = dh * dh;
    let d_ref = trace_product(&states[m_slices], dh).re;
    let minus_i_dt = C64::new(0.0, -dt);

    let mut entries = vec![0.0; u.k() * m_slices];
    for (line, spec) in specs.iter().enumerate() {
        let sigma = spec.matrix();
        for slice in 0..m_slices {
            let state = &states[slice + 1];
            let window = &windows[slice + 1];
            let comm = sigma * state - state * sigma;
            let rho_prime = (window * comm * window.adjoint()).map(|e| e * minus_i_dt);
            let g_normalized = 4.0
                * (trace_product(&rho_prime, &dh2).re
                    - 2.0 * trace_product(&rho_prime, dh).re * d_ref);
            entries[line * m_slices + slice] = t_total * t_total * g_normalized;
        }
    }
    GradientGrid::new(u.k(), m_slices, entries)
}

/// Measured counterpart of [`analytic_gradient`]: each entry comes from two
/// sensor evolutions with R(±π/2) inserted after the entry's slice, using
/// [σ,ρ] = i(R⁺ρR⁺† − R⁻ρR⁻†) to realize the commutator as a population
/// difference. Costs exactly 2·K·M sensor evolutions.
///
/// `d_ref` is Tr[ρ(T)·dh] from the caller's reference measurement of the
/// unmodified pulse; sharing it keeps a full iteration at 2KM+1 evolutions.
pub fn rotation_insertion_gradient(
    sensor: &mut Sensor,
    u: &ControlGrid,
    d_ref: f64,
) -> Result<GradientGrid> {
    let dt = u.dt();
    let t_total = u.total_time();
    let mut entries = vec![0.0; u.k() * u.m()];
    for line in 0..u.k() {
        for slice in 0..u.m() {
            let plus = sensor.evolve(
                u,
                &[Insertion {
                    control: line,
                    sign: RotationSign::Plus,
                    after_slice: slice,
                }],
            )?;
            let (p00_plus, p11_plus) = sensor.measure_diagonals(&plus)?;
            let minus = sensor.evolve(
                u,
                &[Insertion {
                    control: line,
                    sign: RotationSign::Minus,
                    after_slice: slice,
                }],
            )?;
            let (p00_minus, p11_minus) = sensor.measure_diagonals(&minus)?;
            let sum_diff = (p00_plus + p11_plus) - (p00_minus + p11_minus);
            let mean_diff = (p00_plus - p11_plus) - (p00_minus - p11_minus);
            let g_normalized = dt * 4.0 * (sum_diff - 2.0 * mean_diff * d_ref);
            entries[line * u.m() + slice] = t_total * t_total * g_normalized;
        }
    }
    GradientGrid::new(u.k(), u.m(), entries)
}

/// Central finite differences of an arbitrary objective over the grid.
pub fn finite_difference_gradient<F>(
    mut objective: F,
    u: &ControlGrid,
    step: f64,
) -> Result<GradientGrid>
where
    F: FnMut(&ControlGrid) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::OutOfRange(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut entries = vec![0.0; u.k() * u.m()];
    let mut probe = u.clone();
    for line in 0..u.k() {
        for slice in 0..u.m() {
            let center = u.get(line, slice);
            probe.set_unchecked(line, slice, center + step);
            let f_plus = objective(&probe);
            probe.set_unchecked(line, slice, center - step);
            let f_minus = objective(&probe);
            probe.set_unchecked(line, slice, center);
            entries[line * u.m() + slice] = (f_plus - f_minus) / (2.0 * step);
        }
    }
    GradientGrid::new(u.k(), u.m(), entries)
}

/// (|00⟩ + e^{iφ}|11⟩)/√2.
pub fn noon_state(phi: f64) -> DensityMatrix {
    let mut ket = CVector::zeros(4);
    ket[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    ket[3] = C64::new(phi.cos(), phi.sin()) * std::f64::consts::FRAC_1_SQRT_2;
    DensityMatrix::from_pure(&ket).expect("unit norm")
}

/// Best normalized overlap with any NOON state, maximized over the phase:
/// ((ρ₀₀+ρ₃₃)/2 + |ρ₀₃|) / √Tr(ρ²).
pub fn noon_fidelity(rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(Error::Dimension(format!(
            "NOON fidelity is defined for two qubits, got dimension {}",
            rho.dim()
        )));
    }
    let m = rho.matrix();
    let overlap = (m[(0, 0)].re + m[(3, 3)].re) / 2.0 + m[(0, 3)].norm();
    Ok(overlap / rho.purity().sqrt())
}

/// Exact QFI of the final state reached by a control grid (noiseless).
pub fn exact_qfi_of_controls(
    h: &EncodingHamiltonian,
    specs: &[ControlHamiltonianSpec],
    u: &ControlGrid,
    rho0: &DensityMatrix,
    dh: &CMatrix,
) -> Result<QfiValue> {
    let rho_t = propagate(h, specs, u, rho0)?;
    qfi(&rho_t, dh, u.total_time())
}

#[cfg(test)]
// reference values below are transcribed at full printed length
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::encoding::{default_amplitude_bound, default_control_specs};
    use crate::quantum::{identity, random_mixed_state, random_pure_state, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const T: f64 = 9e-3;
    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn reference() -> (EncodingHamiltonian, Vec<ControlHamiltonianSpec>) {
        (
            EncodingHamiltonian::two_qubit(TWO_PI * 50.0, 214.5),
            default_control_specs(),
        )
    }

    #[test]
    fn qfi_reference_states() {
        let (h, _) = reference();
        let dh = h.dh_domega();
        for phi in [0.0, 0.7, 2.1, -1.3] {
            let v = qfi(&noon_state(phi), dh, T).unwrap();
            assert!((v.normalized - 4.0).abs() < 1e-12, "phi {phi}: {}", v.normalized);
            assert!((v.raw - 4.0 * T * T).abs() < 1e-12);
        }
        let ground = DensityMatrix::basis_state(0, 2);
        assert_eq!(qfi(&ground, dh, T).unwrap().normalized, 0.0);
        // (|00> + |01>)/sqrt(2): variance of the generator is 1/4
        let mut ket = CVector::zeros(4);
        ket[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        ket[1] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let superpos = DensityMatrix::from_pure(&ket).unwrap();
        assert!((qfi(&superpos, dh, T).unwrap().normalized - 1.0).abs() < 1e-13);
    }

    #[test]
    fn qfi_depolarized_noon() {
        let eps = 0.11205014050222434;
        let noon = noon_state(0.0);
        let m = noon.matrix().map(|e| e * C64::new(1.0 - eps, 0.0))
            + identity(4).map(|e| e * C64::new(eps / 4.0, 0.0));
        let mixed = DensityMatrix::new(m).unwrap();
        let (h, _) = reference();
        let v = qfi(&mixed, h.dh_domega(), T).unwrap();
        assert!((v.normalized - 3.7758997189955505).abs() < 1e-13, "{}", v.normalized);
    }

    #[test]
    fn qfi_rejects_bad_generator() {
        let rho = DensityMatrix::basis_state(0, 2);
        let mut skew = CMatrix::zeros(4, 4);
        skew[(0, 1)] = C64::new(1.0, 0.0);
        assert!(qfi(&rho, &skew, T).is_err());
        assert!(qfi(&rho, &CMatrix::identity(2, 2), T).is_err());
    }

    #[test]
    fn diagonal_formula_examples() {
        assert_eq!(qfi_from_diagonals(0.5, 0.5, T).unwrap().normalized, 4.0);
        assert_eq!(qfi_from_diagonals(1.0, 0.0, T).unwrap().normalized, 0.0);
        assert_eq!(qfi_from_diagonals(0.25, 0.25, T).unwrap().normalized, 2.0);
        assert!(qfi_from_diagonals(0.6, 0.6, T).is_err());
        assert!(qfi_from_diagonals(-0.1, 0.5, T).is_err());
        assert!(qfi_from_diagonals(1.2, 0.0, T).is_err());
    }

    #[test]
    fn diagonal_formula_matches_general_exactly() {
        let (h, _) = reference();
        let dh = h.dh_domega();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let rho = random_mixed_state(2, &mut rng);
            let full = qfi(&rho, dh, T).unwrap();
            let reduced =
                qfi_from_diagonals(rho.population(0), rho.population(3), T).unwrap();
            assert_eq!(full.normalized, reduced.normalized);
            assert_eq!(full.raw, reduced.raw);
        }
    }

    #[test]
    fn qfi_invariant_under_generator_rotation() {
        let (h, _) = reference();
        let dh = h.dh_domega();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let rho = random_mixed_state(2, &mut rng);
            let before = qfi(&rho, dh, T).unwrap().normalized;
            let theta: f64 = rng.random_range(-3.0..3.0);
            let rot = crate::quantum::expm_unitary(dh, theta).unwrap();
            let rotated = DensityMatrix::new(rot.conjugate(rho.matrix())).unwrap();
            let after = qfi(&rotated, dh, T).unwrap().normalized;
            assert!((before - after).abs() < 1e-10);
        }
    }

    #[test]
    fn qfi_bounds_on_random_pure_states() {
        let (h, _) = reference();
        let dh = h.dh_domega();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..1000 {
            let rho = random_pure_state(2, &mut rng);
            let v = qfi(&rho, dh, T).unwrap().normalized;
            assert!((-1e-12..=4.0 + 1e-9).contains(&v), "out of bound: {v}");
        }
    }

    #[test]
    fn analytic_gradient_frozen_single_line_case() {
        // one x control on qubit 0, two slices, u = [100, -50] rad/s
        let (h, _) = reference();
        let dh = h.dh_domega();
        let spec = vec![ControlHamiltonianSpec::new(0, Axis::X, 2).unwrap()];
        let u = ControlGrid::new(1, 2, T, default_amplitude_bound(), vec![100.0, -50.0]).unwrap();
        let rho0 = DensityMatrix::basis_state(0, 2);
        let rho_t = propagate(&h, &spec, &u, &rho0).unwrap();
        assert!((rho_t.population(0) - 0.96620723815186649).abs() < 1e-12);
        assert!((rho_t.population(2) - 0.033792761848133165).abs() < 1e-12);
        assert!(rho_t.population(1).abs() < 1e-15);
        let v = qfi(&rho_t, dh, T).unwrap();
        assert!((v.normalized - 0.13060324437923532).abs() < 1e-12);
        assert!((v.raw - 1.0578862794718059e-05).abs() < 1e-18);
        let g = analytic_gradient(&h, &spec, &u, &rho0, dh).unwrap();
        // frozen values are in normalized units; entries store raw = T² x that
        let expect = [-0.0016727768853911419, 0.006058037551466321];
        for (i, &e) in expect.iter().enumerate() {
            let got = g.entries()[i] / (T * T);
            assert!((got - e).abs() < 1e-11, "entry {i}: {got} vs {e}");
        }
    }

    #[test]
    fn finite_difference_on_quadratic_objective() {
        let coeffs: Vec<f64> = (0..8).map(|i| 0.5 + i as f64 * 0.25).collect();
        let u = ControlGrid::new(
            2,
            4,
            T,
            default_amplitude_bound(),
            vec![10.0, -20.0, 30.0, 5.0, -15.0, 25.0, 0.0, 40.0],
        )
        .unwrap();
        let c = coeffs.clone();
        let objective = move |grid: &ControlGrid| -> f64 {
            grid.amplitudes()
                .iter()
                .zip(&c)
                .map(|(a, cc)| cc * a * a)
                .sum()
        };
        let g = finite_difference_gradient(objective, &u, 1e-2).unwrap();
        for (i, c) in coeffs.iter().enumerate() {
            let expect = 2.0 * c * u.amplitudes()[i];
            assert!((g.entries()[i] - expect).abs() < 1e-8, "entry {i}");
        }
        assert!(finite_difference_gradient(|_| 0.0, &u, 0.0).is_err());
    }

    #[test]
    fn finite_difference_step_plateau() {
        let (h, specs) = reference();
        let dh = h.dh_domega().clone();
        let rho0 = DensityMatrix::basis_state(0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let amps: Vec<f64> = (0..24).map(|_| rng.random_range(-200.0..200.0)).collect();
        let u = ControlGrid::new(4, 6, T, default_amplitude_bound(), amps).unwrap();
        let objective = |grid: &ControlGrid| -> f64 {
            exact_qfi_of_controls(&h, &specs, grid, &rho0, &dh)
                .expect("valid")
                .raw
        };
        let g_coarse = finite_difference_gradient(objective, &u, 1e-2).unwrap();
        let g_mid = finite_difference_gradient(objective, &u, 1e-3).unwrap();
        let g_fine = finite_difference_gradient(objective, &u, 1e-4).unwrap();
        let scale = g_coarse.norm();
        let d1 = g_coarse
            .entries()
            .iter()
            .zip(g_mid.entries())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let d2 = g_mid
            .entries()
            .iter()
            .zip(g_fine.entries())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(d1 / scale < 1e-5, "coarse vs mid: {}", d1 / scale);
        assert!(d2 / scale < 1e-5, "mid vs fine: {}", d2 / scale);
    }

    #[test]
    fn noon_fidelity_examples() {
        assert!((noon_fidelity(&noon_state(0.3)).unwrap() - 1.0).abs() < 1e-12);
        // ((1+0)/2 + 0)/sqrt(1) for the ground state
        let f = noon_fidelity(&DensityMatrix::basis_state(0, 2)).unwrap();
        assert!((f - 0.5).abs() < 1e-15, "got {f}");
        assert!(noon_fidelity(&DensityMatrix::new(identity(2).scale(0.5)).unwrap()).is_err());
    }

    #[test]
    fn noon_fidelity_is_phase_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..20 {
            let rho = random_mixed_state(2, &mut rng);
            let nf = noon_fidelity(&rho).unwrap();
            let mut best = 0.0f64;
            for i in 0..400 {
                let phi = i as f64 * std::f64::consts::TAU / 400.0;
                let f = crate::quantum::fidelity(&rho, &noon_state(phi)).unwrap();
                best = best.max(f);
            }
            assert!(best <= nf + 1e-12, "grid max {best} exceeds closed form {nf}");
            assert!(nf - best <= 1e-3, "closed form {nf} vs grid max {best}");
        }
    }

    #[test]
    fn gradient_grid_shape_checks() {
        assert!(GradientGrid::new(2, 3, vec![0.0; 5]).is_err());
        assert!(GradientGrid::new(2, 3, vec![f64::NAN; 6]).is_err());
        let g = GradientGrid::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(g.get(1, 0), 4.0);
        assert!((g.norm() - 91.0f64.sqrt()).abs() < 1e-12);
        let h = g.scaled(2.0);
        assert_eq!(h.get(1, 0), 8.0);
        assert!((g.dot(&g) - 91.0).abs() < 1e-12);
    }
}
