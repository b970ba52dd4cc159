//! Assembly and direct solution of the primal-dual system
//!
//! ```text
//! [ M_O + gamma S   B^T              ] [u]   [l]
//! [ B               -gamma_star S_star] [z] = [0]
//! ```
//!
//! with `B[w, u] = a_h(u, w)`. The primal block comes first.

use std::sync::Arc;
use std::time::Instant;

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::prelude::Solve;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, CholeskySymbolicParams, SymmetricOrdering};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{DiscreteField, FESpace};
use crate::forms::{
    assemble_data_functional, assemble_dual_stabilizer, assemble_observation_mass, assemble_primal_stabilizer,
    assemble_wave_form, observation_mass_patches, MeshSizeWeighting, StabVariant,
};
use crate::problems::ObservationData;
use crate::sparse::SparseMatrix;

/// Relative residual above which a solve is flagged as ill conditioned.
pub const RESIDUAL_GATE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleParams {
    pub gamma: f64,
    pub gamma_star: f64,
    pub variant: StabVariant,
    pub weighting: MeshSizeWeighting,
    /// Accept `p < q`.
    pub allow_locking: bool,
    /// Accept `gamma = 0`.
    pub allow_unstable: bool,
}

impl Default for SaddleParams {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            gamma_star: 1.0,
            variant: StabVariant::default(),
            weighting: MeshSizeWeighting::Global,
            allow_locking: false,
            allow_unstable: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub n_primal: usize,
    pub n_dual: usize,
    pub params: SaddleParams,
    pub primal: Arc<FESpace>,
    pub dual: Arc<FESpace>,
    /// `(u, v)_O` on the primal space.
    pub observation_mass: SparseMatrix,
    /// `s(u, v)` on the primal space.
    pub primal_stab: SparseMatrix,
    /// `s*(z, w)` on the dual space.
    pub dual_stab: SparseMatrix,
    /// `B[w, u] = a_h(u, w)`: dual rows, primal columns.
    pub wave: SparseMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Ok,
    Singular,
    IllConditionedWarning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    /// `||K x - b|| / ||b||` (absolute residual when `b = 0`).
    pub residual: f64,
    pub status: SolveStatus,
    pub seconds: f64,
    pub n_primal: usize,
    pub n_dual: usize,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report is plain data")
    }
}

pub fn build_system(
    primal: &Arc<FESpace>,
    dual: &Arc<FESpace>,
    data: &ObservationData,
    params: SaddleParams,
) -> Result<SaddleSystem> {
    if !primal.same_mesh(dual) {
        return Err(Error::MeshMismatch);
    }
    let (p, q) = (primal.degree(), dual.degree());
    if p < q && !params.allow_locking {
        return Err(Error::DegreeOrder { p, q });
    }
    if !(params.gamma >= 0.0 && params.gamma_star >= 0.0) || !params.gamma.is_finite() || !params.gamma_star.is_finite()
    {
        return Err(Error::Config(format!(
            "stabilization weights must be nonnegative, got gamma={} gamma_star={}",
            params.gamma, params.gamma_star
        )));
    }
    if params.gamma == 0.0 && !params.allow_unstable {
        return Err(Error::Unstable("gamma = 0 requires allow_unstable".into()));
    }
    params.variant.check_degrees(p, q)?;

    let observation_mass = assemble_observation_mass(primal, &data.omega)?.matrix;
    let primal_stab = assemble_primal_stabilizer(primal, params.variant.primal, params.weighting).matrix;
    let dual_stab = assemble_dual_stabilizer(dual, params.variant.dual, params.weighting).matrix;
    let wave = assemble_wave_form(primal, dual)?.matrix;
    let load = assemble_data_functional(primal, data)?;

    let (np, nq) = (primal.n_dofs, dual.n_dofs);
    let mut triplets =
        Vec::with_capacity(observation_mass.nnz() + primal_stab.nnz() + 2 * wave.nnz() + dual_stab.nnz());
    triplets.extend(observation_mass.iter());
    triplets.extend(primal_stab.iter().map(|(r, c, v)| (r, c, params.gamma * v)));
    for (r, c, v) in wave.iter() {
        triplets.push((np + r, c, v));
        triplets.push((c, np + r, v));
    }
    triplets.extend(dual_stab.iter().map(|(r, c, v)| (np + r, np + c, -params.gamma_star * v)));
    let matrix = SparseMatrix::from_triplets(np + nq, np + nq, triplets);

    let mut rhs = load;
    rhs.resize(np + nq, 0.0);
    Ok(SaddleSystem {
        matrix,
        rhs,
        n_primal: np,
        n_dual: nq,
        params,
        primal: primal.clone(),
        dual: dual.clone(),
        observation_mass,
        primal_stab,
        dual_stab,
        wave,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sparse LU solve of `K x = b`.
pub fn solve_sparse(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.nrows;
    let a = {
        let triplets: Vec<Triplet<usize, usize, f64>> = matrix.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::<usize, f64>::try_new_from_triplets(n, matrix.ncols, &triplets)
            .map_err(|e| Error::Singular(format!("{e:?}")))?
    };
    let lu = a.sp_lu().map_err(|e| Error::Singular(format!("{e:?}")))?;
    drop(a);
    let b = faer::Col::<f64>::from_fn(n, |i| rhs[i]);
    let x = lu.solve(&b);
    finite((0..n).map(|i| x[i]).collect())
}

/// Sparse `L D L^T` solve of a symmetric `K x = b` with an approximate
/// minimum degree ordering and no pivoting. Succeeds for symmetric
/// quasi-definite matrices such as the stabilized saddle system.
pub fn solve_symmetric(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.nrows;
    let a = {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            matrix.iter().filter(|&(r, c, _)| r >= c).map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Singular(format!("{e:?}")))?
    };
    let symbolic = factorize_symbolic_cholesky(
        a.symbolic(),
        Side::Lower,
        SymmetricOrdering::Amd,
        CholeskySymbolicParams::default(),
    )
    .map_err(|e| Error::Singular(format!("{e:?}")))?;
    let mut values = vec![0.0; symbolic.len_val()];
    let par = Par::Seq;
    let mut mem = MemBuffer::new(StackReq::any_of(&[
        symbolic.factorize_numeric_ldlt_scratch::<f64>(par, Default::default()),
        symbolic.solve_in_place_scratch::<f64>(1, par),
    ]));
    let stack = MemStack::new(&mut mem);
    let ldlt = symbolic
        .factorize_numeric_ldlt(
            &mut values,
            a.as_ref(),
            Side::Lower,
            Default::default(),
            par,
            stack,
            Default::default(),
        )
        .map_err(|e| Error::Singular(format!("{e:?}")))?;
    drop(a);
    let mut x = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    ldlt.solve_in_place_with_conj(Conj::No, x.as_mut(), par, stack);
    finite((0..n).map(|i| x[(i, 0)]).collect())
}

fn finite(x: Vec<f64>) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("zero pivot in the factorization".into()));
    }
    Ok(x)
}

fn relative_residual(matrix: &SparseMatrix, x: &[f64], rhs: &[f64]) -> f64 {
    let r: Vec<f64> = matrix.matvec(x).iter().zip(rhs).map(|(a, b)| a - b).collect();
    let bnorm = norm(rhs);
    if bnorm > 0.0 {
        norm(&r) / bnorm
    } else {
        norm(&r)
    }
}

impl SaddleSystem {
    pub fn n_dofs(&self) -> usize {
        self.n_primal + self.n_dual
    }

    /// Split a global vector into `(u_h, z_h)`.
    pub fn split(&self, x: &[f64]) -> Result<(DiscreteField, DiscreteField)> {
        let u = DiscreteField::new(self.primal.clone(), x[..self.n_primal].to_vec())?;
        let z = DiscreteField::new(self.dual.clone(), x[self.n_primal..].to_vec())?;
        Ok((u, z))
    }

    /// `[u; z]`.
    pub fn join(&self, u: &DiscreteField, z: &DiscreteField) -> Vec<f64> {
        u.coeffs.iter().chain(&z.coeffs).copied().collect()
    }

    /// `A_h[(u, z), (v, w)] = (u, v)_O + gamma s(u, v) + a_h(v, z) + a_h(u, w) - gamma* s*(z, w)`.
    pub fn form(&self, u: &DiscreteField, z: &DiscreteField, v: &DiscreteField, w: &DiscreteField) -> f64 {
        self.matrix.bilinear(&self.join(v, w), &self.join(u, z))
    }

    /// `||u||_O^2 + gamma s(u, u) + gamma* s*(z, z)` and `A_h[(u, z), (u, -z)]`,
    /// which agree for every pair.
    pub fn stability_identity(&self, u: &DiscreteField, z: &DiscreteField) -> (f64, f64) {
        let g = &self.params;
        let lhs = self.observation_mass.quadratic(&u.coeffs)
            + g.gamma * self.primal_stab.quadratic(&u.coeffs)
            + g.gamma_star * self.dual_stab.quadratic(&z.coeffs);
        let neg_z = DiscreteField { space: z.space.clone(), coeffs: z.coeffs.iter().map(|c| -c).collect() };
        (lhs, self.form(u, z, u, &neg_z))
    }
}

pub fn solve(system: &SaddleSystem) -> Result<(DiscreteField, DiscreteField, SolveReport)> {
    let start = Instant::now();
    let (k, b) = (&system.matrix, &system.rhs);
    // LU fallback when the unpivoted factorization breaks down or loses accuracy
    let symmetric = solve_symmetric(k, b).ok().map(|x| {
        let r = relative_residual(k, &x, b);
        (x, r)
    });
    let (x, residual) = match symmetric {
        Some((x, r)) if r <= RESIDUAL_GATE => (x, r),
        _ => {
            let x = solve_sparse(k, b)?;
            let r = relative_residual(k, &x, b);
            (x, r)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let status = if residual <= RESIDUAL_GATE { SolveStatus::Ok } else { SolveStatus::IllConditionedWarning };
    let (u, z) = system.split(&x)?;
    let report = SolveReport { residual, status, seconds, n_primal: system.n_primal, n_dual: system.n_dual };
    Ok((u, z, report))
}

/// Galerkin orthogonality test: the largest value of
/// `|A_h[(u - u_h, -z_h), (v_h, w_h)]| / (||v_h||_{H^1} + ||w_h||_{H^1})` over
/// the supplied test pairs, with `u` represented by `exact` (a field on a
/// finer space of the same mesh, typically the `P_3` nodal interpolant).
pub fn check_galerkin_orthogonality(
    system: &SaddleSystem,
    exact: &DiscreteField,
    u_h: &DiscreteField,
    z_h: &DiscreteField,
    tests: &[(DiscreteField, DiscreteField)],
) -> Result<f64> {
    let fine = exact.space.clone();
    if !fine.same_mesh(&system.primal) {
        return Err(Error::MeshMismatch);
    }
    let g = system.params;
    let mass_mixed = SparseMatrix::from_patches(
        system.n_primal,
        fine.n_dofs,
        &observation_mass_patches(&fine, &system.primal, &system.primal.mesh.omega)?,
    );
    let stab_fine = assemble_primal_stabilizer(&fine, g.variant.primal, g.weighting).matrix;
    let wave_fine = assemble_wave_form(&fine, &system.dual)?.matrix;
    let m_u = mass_mixed.matvec(&exact.coeffs);
    let s_u = stab_fine.matvec(&exact.coeffs);
    let b_u = wave_fine.matvec(&exact.coeffs);
    let k_x = system.matrix.matvec(&system.join(u_h, z_h));

    let mut worst: f64 = 0.0;
    for (v, w) in tests {
        let v_fine = v.interpolate_into(&fine)?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let exact_part = dot(&m_u, &v.coeffs) + g.gamma * dot(&s_u, &v_fine.coeffs) + dot(&b_u, &w.coeffs);
        let discrete_part = dot(&k_x, &system.join(v, w));
        let scale = crate::analysis::norm_h1(v) + crate::analysis::norm_h1(w);
        if scale > 0.0 {
            worst = worst.max((exact_part - discrete_part).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::interpolate_nodal;
    use crate::mesh::{Interval, SpacetimeMesh, SplitPattern};
    use crate::problems::{example1, make_observation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spaces(nx: usize, nt: usize, p: usize, q: usize) -> (Arc<FESpace>, Arc<FESpace>) {
        let omega = Interval::new(0.0, 0.5).unwrap();
        let m = Arc::new(SpacetimeMesh::build_structured(nx, nt, 2.0, omega, SplitPattern::Crisscross).unwrap());
        (FESpace::new(m.clone(), p).unwrap(), FESpace::new(m, q).unwrap())
    }

    fn random_field(space: &Arc<FESpace>, rng: &mut ChaCha8Rng) -> DiscreteField {
        let c = (0..space.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DiscreteField::new(space.clone(), c).unwrap()
    }

    #[test]
    fn system_is_symmetric_with_zero_dual_rhs() {
        let (vp, vq) = spaces(4, 8, 2, 1);
        let data = make_observation(Arc::new(example1()), vp.mesh.omega, 2.0);
        let sys = build_system(&vp, &vq, &data, SaddleParams::default()).unwrap();
        assert_eq!(sys.n_dofs(), vp.n_dofs + vq.n_dofs);
        assert!(sys.matrix.asymmetry() <= 1e-13 * sys.matrix.max_abs());
        assert!(sys.rhs[sys.n_primal..].iter().all(|&v| v == 0.0));
        assert!(sys.rhs[..sys.n_primal].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (vp, vq) = spaces(4, 8, 2, 1);
        let data = ObservationData::zero(vp.mesh.omega, 2.0);
        let sys = build_system(&vp, &vq, &data, SaddleParams::default()).unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        let (u, z, report) = solve(&sys).unwrap();
        assert!(u.norm_l2_coeffs() + z.norm_l2_coeffs() <= 1e-10);
        assert_eq!(report.status, SolveStatus::Ok);
        assert!(report.to_json().contains("\"status\":\"ok\""));
    }

    #[test]
    fn degree_order_and_stability_guards() {
        let (v1, v2) = spaces(2, 2, 1, 2);
        let data = ObservationData::zero(v1.mesh.omega, 2.0);
        let err = build_system(&v1, &v2, &data, SaddleParams::default()).unwrap_err();
        assert!(matches!(err, Error::DegreeOrder { p: 1, q: 2 }));
        let locking = SaddleParams { allow_locking: true, ..Default::default() };
        assert!(build_system(&v1, &v2, &data, locking).is_ok());

        let unstable = SaddleParams { gamma: 0.0, ..Default::default() };
        assert!(matches!(build_system(&v2, &v1, &data, unstable), Err(Error::Unstable(_))));
        let allowed = SaddleParams { gamma: 0.0, allow_unstable: true, ..Default::default() };
        assert!(build_system(&v2, &v1, &data, allowed).is_ok());

        let (other, _) = spaces(2, 2, 1, 1);
        assert!(matches!(build_system(&v1, &other, &data, SaddleParams::default()), Err(Error::MeshMismatch)));
    }

    #[test]
    fn stability_identity_holds_for_random_pairs() {
        let (vp, vq) = spaces(4, 6, 2, 2);
        let data = ObservationData::zero(vp.mesh.omega, 2.0);
        let sys = build_system(&vp, &vq, &data, SaddleParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (u, z) = (random_field(&vp, &mut rng), random_field(&vq, &mut rng));
            let (lhs, rhs) = sys.stability_identity(&u, &z);
            assert!(lhs > 0.0);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs);
        }
    }

    #[test]
    fn block_form_matches_its_definition() {
        let (vp, vq) = spaces(4, 6, 2, 1);
        let data = ObservationData::zero(vp.mesh.omega, 2.0);
        let sys = build_system(&vp, &vq, &data, SaddleParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (u, z) = (random_field(&vp, &mut rng), random_field(&vq, &mut rng));
        let (v, w) = (random_field(&vp, &mut rng), random_field(&vq, &mut rng));
        let g = sys.params;
        let want = sys.observation_mass.bilinear(&v.coeffs, &u.coeffs)
            + g.gamma * sys.primal_stab.bilinear(&v.coeffs, &u.coeffs)
            + sys.wave.bilinear(&z.coeffs, &v.coeffs)
            + sys.wave.bilinear(&w.coeffs, &u.coeffs)
            - g.gamma_star * sys.dual_stab.bilinear(&w.coeffs, &z.coeffs);
        let got = sys.form(&u, &z, &v, &w);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));

        // with u replaced by u_h the primal part of the error vanishes and only
        // the dual block remains
        let zero_u = DiscreteField::zeros(vp.clone());
        let neg_z = DiscreteField::new(vq.clone(), z.coeffs.iter().map(|c| -c).collect()).unwrap();
        let got = sys.form(&zero_u, &neg_z, &v, &w);
        let want =
            -sys.wave.bilinear(&z.coeffs, &v.coeffs) + g.gamma_star * sys.dual_stab.bilinear(&w.coeffs, &z.coeffs);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn orthogonality_trivial_for_zero_tests() {
        let (vp, vq) = spaces(4, 8, 1, 1);
        let data = make_observation(Arc::new(example1()), vp.mesh.omega, 2.0);
        let sys = build_system(&vp, &vq, &data, SaddleParams::default()).unwrap();
        let (u, z, _) = solve(&sys).unwrap();
        let p3 = FESpace::new(vp.mesh.clone(), 3).unwrap();
        let e = example1();
        let exact = interpolate_nodal(&p3, |t, x| crate::problems::ExactSolution::value(&e, t, x));
        let tests = vec![(DiscreteField::zeros(vp.clone()), DiscreteField::zeros(vq.clone()))];
        assert_eq!(check_galerkin_orthogonality(&sys, &exact, &u, &z, &tests).unwrap(), 0.0);
    }
}
