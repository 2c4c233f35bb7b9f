"""Numerical certificates for the fractional-moment bound chains.

Each certificate returns a JSON-ready report.  Every entry of ``terms`` is
one quantity of a chain: its value, a Monte Carlo standard error (0 for
exact terms), the inequality it instantiates and whether that inequality
holds within ``tol`` combined standard errors.  ``pass`` is ``True`` when
every gating term holds.

The chains are evaluated at desk scale: the instance is kept small and
the corridor sums are split into a Monte Carlo part (the box of the
simulation) and exact one-block factors from the walk semigroup.
"""

import math

import numpy as np

from .. import rng
from ..env_field import EnvironmentField, LatticeSpec
from ..errors import ConfigurationError, DomainError
from ..parallel import map_chunks
from ..spde_solver import SolverSpec, evolve_corridors, log_partition_series
from ..stats import Estimate, log_mean_exp, mean_and_stderr, variance_and_stderr
from ..walk_sampler import WalkSpec, PolymerPath, path_max_norm, sample_paths
from .geometry import Block, CoarseGrainSpec, _dist, block_volume, blocks_for, corridor_count
from .kernel import (
    CorrelationKernel,
    block_increments,
    f_K,
    occupation_grid,
    r_statistic,
    variance_Q_R,
)
from .path_integrals import D_n_quadrature, Y_value
from .slices import (
    block_stay_probability,
    endpoint_factors_1d,
    origin_cell,
    slice_factors_d1,
    tail_sum,
)

TOL = 3.0


def _term(name, value, stderr, inequality, holds=None, gating=True, **extra):
    out = {"name": name, "value": float(value), "stderr": float(stderr), "inequality": inequality}
    if holds is not None:
        out["holds"] = bool(holds)
        out["gating"] = bool(gating)
    out.update(extra)
    return out


def _le(a, se_a, b, se_b=0.0, tol=TOL):
    return a <= b + tol * math.hypot(se_a, se_b)


def _finish(report):
    report["pass"] = all(t["holds"] for t in report["terms"] if t.get("gating") and "holds" in t)
    return report


# fractional moments ---------------------------------------------------------


def fractional_moment(sampler, evaluator, theta, reps, chunk=256):
    """Monte Carlo ``Q[Z**theta]`` accumulated in log space.

    ``sampler(start, count)`` returns an environment batch and
    ``evaluator(env)`` the matching ``log Z`` values.  The metadata records
    the sample mean of ``log Z`` for the Jensen ordering
    ``mean log Z <= (1/theta) log Q[Z**theta]``.
    """
    if reps < 2:
        raise DomainError("reps must be >= 2")
    if not 0 < theta <= 1:
        raise DomainError("theta must lie in (0, 1]")
    parts = []
    for s in range(0, reps, chunk):
        c = min(chunk, reps - s)
        parts.append(np.asarray(evaluator(sampler(s, c)), dtype=float).reshape(c))
    return moment_from_logs(np.concatenate(parts), theta)


def moment_from_logs(log_z, theta):
    """``Q[Z**theta]`` from samples of ``log Z``, as an :class:`Estimate`."""
    log_z = np.asarray(log_z, dtype=float).ravel()
    lm, rel = log_mean_exp(theta * log_z)
    val = math.exp(lm)
    ml, sl = mean_and_stderr(log_z) if np.all(np.isfinite(log_z)) else (-math.inf, math.nan)
    meta = {"theta": theta, "mean_log_Z": float(ml), "mean_log_Z_se": float(sl)}
    return Estimate(val, val * rel, log_z.shape[0], meta, log_value=lm)


def _log_z_chunk(start, count, solver, seed):
    env = EnvironmentField.replicas(solver.lattice, seed, count, start)
    return log_partition_series(env, solver, [solver.T])[:, 0]


def _lhs(solver, beta, theta, reps, seed, chunk, workers):
    if beta == 0:
        # Z = 1 identically on the infinite lattice
        return Estimate(1.0, 0.0, reps, {"theta": theta, "exact": True}, log_value=0.0)
    lz = map_chunks(_log_z_chunk, reps, solver, seed, chunk=chunk, workers=workers)
    return moment_from_logs(lz, theta)


# d = 1 ----------------------------------------------------------------------


def _block_drift(lattice, cg, center_label, sign):
    y = np.arange(-lattice.L, lattice.L + 1)
    inside = np.abs(y - center_label * cg.sqrt_n) < cg.C1 * cg.sqrt_n
    return sign * cg.delta * inside.astype(float)


def _link_tree(labels):
    steps = list(labels)

    def children(k, prefix):
        last = prefix[-1] if prefix else 0
        return [last + s for s in steps]

    return children


def _d1_link_chunk(start, count, solver, cg, seed, steps, sign, offset):
    lat = solver.lattice
    children = _link_tree(steps)
    base = EnvironmentField.replicas(lat, seed, count, start + offset)
    plain = evolve_corridors(base, solver, cg.n, cg.m, children)
    tilted_env = EnvironmentField.replicas(lat, seed, count, start + 2 * offset)

    def drift_for(k, prefix):
        return _block_drift(lat, cg, prefix[-1] if prefix else 0, sign)

    tilted = evolve_corridors(tilted_env, solver, cg.n, cg.m, children, drift_for)
    keys = sorted(plain)
    return np.stack([np.stack([plain[k] for k in keys], axis=-1), np.stack([tilted[k] for k in keys], axis=-1)], -1)


def _link_keys(m, steps):
    keys = [()]
    for _ in range(m):
        keys = [p + ((p[-1] if p else 0) + s,) for p in keys for s in steps]
    return sorted(keys)


def d1_bound_certificate(spec, beta, reps, seed=0, kappa=1.0, L=64, dt=2.0 ** -5, link_reps=None,
                         link_steps=(-1, 0, 1), tilt_sign=-1.0, chunk=256, workers=1, tol=TOL):
    """Evaluate the d = 1 chain on one instance.

    Chain (normalised tilt density, block ``k`` centred at ``z_k sqrt n``)::

        Q[Z_T^theta] <= sum_Z Q[Zbar^theta]
                     <= F1 * sum_Z Qtilde[Zbar]^theta
                     <= F1 * (sum_z S_z^theta)^m,
        F1 = exp(theta delta^2 |J| / (2 (1 - theta))),
        S_z = max_{x in I_0} P_x[exp(-beta delta T_{J_0}) 1{X_n in I_z}].

    The left-hand side is Monte Carlo on an absorbing box of half-width
    ``L`` (which can only lower it).  ``S_z`` is exact from the killed
    semigroup.  The two middle links are checked by Monte Carlo for the
    sequences built from ``link_steps``.  ``tilt_sign=+1`` applies the drift
    with the wrong sign while the bounds keep ``-delta``; the slicing link
    then fails.
    """
    if not isinstance(spec, CoarseGrainSpec) or spec.d != 1:
        raise ConfigurationError("d1_bound_certificate needs a d = 1 CoarseGrainSpec")
    corridor_count(spec)
    theta, n, m, delta = spec.theta, spec.n, spec.m, spec.delta
    solver = SolverSpec(LatticeSpec(1, L, "absorbing"), beta, kappa, spec.T, dt)
    link_reps = max(2, reps // 5) if link_reps is None else link_reps
    terms = []

    lhs = _lhs(solver, beta, theta, reps, seed, chunk, workers)

    vol = block_volume([0] * m, spec)
    F1 = math.exp(theta * delta ** 2 * vol / (2 * (1 - theta)))
    F1_unnorm = math.exp(theta ** 2 * delta ** 2 * vol / (2 * (1 - theta)))
    labels, S = slice_factors_d1(n, kappa, beta, delta, spec.C1)
    total = float((S ** theta).sum())
    tail, near = tail_sum(labels, S, theta, spec.R)
    rhs = F1 * total ** m
    in_block = math.exp(-beta * delta * n)
    p_exit = 1.0 - block_stay_probability(n, kappa, spec.C1 * spec.sqrt_n)
    crude = F1 * ((2 * spec.R + 1) * (in_block + p_exit) ** theta + tail) ** m

    terms.append(_term("lhs_fractional_moment", lhs.value, lhs.stderr, "Q[Z_T^theta] (Monte Carlo, absorbing box)",
                       box_half_width=L, dt=dt, replicas=reps, mean_log_Z=lhs.metadata.get("mean_log_Z")))
    terms.append(_term("holder_factor", F1, 0.0, "Q[(dQtilde/dQ)^(-theta/(1-theta))]^(1-theta), normalised density",
                       block_volume=vol, unnormalised_value=F1_unnorm, relaxed_factor=math.exp(m),
                       holds=F1 <= math.exp(m) * (1 + 1e-12), gating=False))
    terms.append(_term("slice_factor_sum", total, 0.0, "sum_z max_x P_x[exp(-beta delta T_J0) 1{X_n in I_z}]^theta",
                       labels=labels.tolist(), factors=S.tolist()))
    terms.append(_term("tail_sum", tail, 0.0, "sum_{|z|>R} S_z^theta", R=spec.R, near_sum=near,
                       tail_by_R=[tail_sum(labels, S, theta, r)[0] for r in range(0, spec.R + 4)]))
    terms.append(_term("in_block_factor", in_block, 0.0, "exp(-beta delta n)"))
    terms.append(_term("exit_probability", p_exit, 0.0, "max_x P_x[walk leaves the block before n]"))
    terms.append(_term("crude_rhs", crude, 0.0, "F1 ((2R+1)(exp(-beta delta n) + P_exit)^theta + tail)^m"))
    terms.append(_term("chain", lhs.value, lhs.stderr, "Q[Z_T^theta] <= F1 (sum_z S_z^theta)^m", rhs=rhs,
                       holds=_le(lhs.value, lhs.stderr, rhs, tol=tol)))

    # per-sequence links; tilted and plain environments use disjoint replica ranges
    keys = _link_keys(m, link_steps)
    if beta != 0:
        data = map_chunks(_d1_link_chunk, link_reps, solver, spec, seed, tuple(link_steps), tilt_sign,
                          max(reps, link_reps), chunk=max(1, chunk // 4), workers=workers)
    else:
        data = None
    lab_index = {int(z): i for i, z in enumerate(labels)}
    F1_box = math.exp(theta * delta ** 2 * block_volume([0] * m, spec, solver.lattice) / (2 * (1 - theta)))
    links = []
    for j, key in enumerate(keys):
        prod = 1.0
        prev = 0
        for z in key:
            prod *= S[lab_index[z - prev]]
            prev = z
        if data is None:
            continue
        plain = moment_from_logs(data[:, j, 0], theta)
        tilted = Estimate.from_samples(np.exp(data[:, j, 1]))
        bound_h = F1_box * tilted.value ** theta
        se_h = F1_box * theta * tilted.value ** (theta - 1) * tilted.stderr if tilted.value > 0 else 0.0
        links.append({
            "corridors": list(key),
            "Q_Zbar_theta": plain.value, "Q_Zbar_theta_se": plain.stderr,
            "Qtilde_Zbar": tilted.value, "Qtilde_Zbar_se": tilted.stderr,
            "slice_product": float(prod),
            "holder_holds": bool(_le(plain.value, plain.stderr, bound_h, se_h, tol)),
            "slicing_holds": bool(_le(tilted.value, tilted.stderr, prod, tol=tol)),
        })
    if links:
        terms.append(_term("holder_links", sum(l["holder_holds"] for l in links), 0.0,
                           "Q[Zbar^theta] <= F1 Qtilde[Zbar]^theta for each linked sequence",
                           holds=all(l["holder_holds"] for l in links), sequences=len(links)))
        terms.append(_term("slicing_links", sum(l["slicing_holds"] for l in links), 0.0,
                           "Qtilde[Zbar] <= prod_k S_{z_k - z_(k-1)} for each linked sequence",
                           holds=all(l["slicing_holds"] for l in links), sequences=len(links)))
    report = {
        "certificate": "d1",
        "instance": dict(spec.to_dict(), beta=beta, kappa=kappa, L=L, dt=dt, reps=reps, link_reps=link_reps,
                         seed=seed, tilt_sign=tilt_sign, tolerance=tol),
        "terms": terms,
        "links": links,
        "lhs": lhs.value,
        "rhs": rhs,
        "decay_bound_m_over_theta_T": -m / (theta * spec.T),
    }
    return _finish(report)


# d = 2 ----------------------------------------------------------------------


def _r_box(cg):
    return LatticeSpec(2, int(math.ceil(cg.C3 * cg.sqrt_n)) + 1, "absorbing")


def _kernel(cg):
    return CorrelationKernel(cg.C3, cg.C4, cg.n, cg.norm)


def _origin_block(cg):
    return Block(0, 0.0, float(cg.n), (0.0, 0.0), cg.C3 * cg.sqrt_n, cg.norm)


def _r0_chunk(start, count, cg, seed):
    env = EnvironmentField.replicas(_r_box(cg), seed, count, start)
    A = block_increments(env, _origin_block(cg), cg.dt_R)
    return np.atleast_1d(r_statistic(A, _kernel(cg), cg.dt_R, 2))


def _shifted_path(path, x):
    return PolymerPath(path.jump_times, path.positions + np.asarray(x, dtype=np.int64), path.T)


def _second_chunk(start, count, cg, beta, kappa, seed, x):
    """Per sample: ``R0`` under the path-tilted environment and path diagnostics."""
    block = _origin_block(cg)
    kern = _kernel(cg)
    env = EnvironmentField.replicas(_r_box(cg), seed, count, start)
    A = block_increments(env, block, cg.dt_R)
    pseeds = rng.replica_seeds(seed ^ 0x51CE, count, start)
    out = np.empty((count, 8))
    a_all = np.empty_like(A)
    paths = []
    for i, ps in enumerate(pseeds):
        p = _shifted_path(sample_paths(int(ps), WalkSpec(2, kappa, cg.n), 1)[0], x)
        paths.append(p)
        a_all[i] = beta * occupation_grid(p, block, cg.dt_R)
    R = np.atleast_1d(r_statistic(A + a_all, kern, cg.dt_R, 2))
    shift = np.atleast_1d(r_statistic(a_all, kern, cg.dt_R, 2))
    for i, p in enumerate(paths):
        end = p.positions[-1]
        lab = np.floor(end / cg.sqrt_n).astype(int)
        stays = bool(np.all(_dist(p.positions.astype(float), cg.norm) < cg.C3 * cg.sqrt_n))
        Y = Y_value(p, cg.n, cg.C4, cg.norm)
        out[i] = [R[i], shift[i], lab[0], lab[1], stays, Y, math.exp(f_K(R[i], cg.K)), 0.0]
    return out


def _var_chunk(start, count, cg, beta, seed, path):
    block = _origin_block(cg)
    env = EnvironmentField.replicas(_r_box(cg), seed, count, start)
    A = block_increments(env, block, cg.dt_R) + beta * occupation_grid(path, block, cg.dt_R)
    return np.atleast_1d(r_statistic(A, _kernel(cg), cg.dt_R, 2))


def _d2_link_chunk(start, count, solver, cg, seed, labels):
    env = EnvironmentField.replicas(solver.lattice, seed, count, start)
    labels = [tuple(z) for z in labels]
    tree = evolve_corridors(env, solver, cg.n, cg.m, lambda k, p: labels)
    kern = _kernel(cg)
    cache = {}
    keys = sorted(tree)
    out = np.empty((count, len(keys), 2))
    for j, key in enumerate(keys):
        fk = np.zeros(count)
        for b in blocks_for(list(key), cg):
            c = b.center
            if (b.k, c) not in cache:
                cache[(b.k, c)] = np.atleast_1d(r_statistic(block_increments(env, b, cg.dt_R), kern, cg.dt_R, 2))
            fk = fk + f_K(cache[(b.k, c)], cg.K)
        out[:, j, 0] = tree[key]
        out[:, j, 1] = fk
    return out


def d2_bound_certificate(spec, beta, reps, seed=0, kappa=1.0, L=12, dt=2.0 ** -5, second_reps=None,
                         r0_reps=None, var_spec=None, var_reps=None, link_reps=None,
                         link_labels=((0, 0), (1, 0)), exit_reps=None, chunk=128, workers=1, tol=TOL):
    """Evaluate the d = 2 chain on one instance.

    Chain::

        Q[Z_T^theta] <= F1 * (sum_z S_z^theta)^m,
        F1 = (1 + p (exp(theta K / (1 - theta)) - 1))^(m (1 - theta)),
        p = Q[R_0 > exp K^2] <= Var_Q(R_0) exp(-2 K^2),
        S_z = max_{x in I_0} P_x Qhat_X[exp(f_K(R_0)) 1{X_n in I_z}].

    ``S_z`` is Monte Carlo for ``|z|_sup <= R``; the remaining labels use the
    exact bound ``max_x P_x[X_n in I_z]``.  Side checks: the mean shift of
    ``R_0`` under ``Qhat_X`` computed two ways, ``Var_Qhat(R_0) <= 2`` at the
    constants of ``var_spec`` (default ``C3 = C4 = 10``), the first factor
    against ``2^(m (1 - theta))`` and the Hölder link on sequences built
    from ``link_labels``.  The three-term bound on ``max_x P_x Qhat_X[exp f_K(R_0)]``
    is reported without gating: it needs ``n`` of order ``exp(C5 / beta^4)``.
    """
    if not isinstance(spec, CoarseGrainSpec) or spec.d != 2:
        raise ConfigurationError("d2_bound_certificate needs a d = 2 CoarseGrainSpec")
    corridor_count(spec)
    theta, n, m, K = spec.theta, spec.n, spec.m, spec.K
    solver = SolverSpec(LatticeSpec(2, L, "absorbing"), beta, kappa, spec.T, dt)
    for key in _tuple_keys(m, [tuple(z) for z in link_labels]):
        for b in blocks_for(list(key), spec):
            if np.abs(b.sites()).max() > L:
                raise ConfigurationError(f"block {b.k} of link sequence {list(key)} leaves the box; increase L")
    second_reps = max(2, reps // 2) if second_reps is None else second_reps
    r0_reps = 4 * reps if r0_reps is None else r0_reps
    var_reps = reps if var_reps is None else var_reps
    link_reps = max(2, reps // 5) if link_reps is None else link_reps
    exit_reps = 10 * reps if exit_reps is None else exit_reps
    terms = []

    lhs = _lhs(solver, beta, theta, reps, seed, chunk, workers)
    terms.append(_term("lhs_fractional_moment", lhs.value, lhs.stderr, "Q[Z_T^theta] (Monte Carlo, absorbing box)",
                       box_half_width=L, dt=dt, replicas=reps))

    # first factor
    block = _origin_block(spec)
    kern = _kernel(spec)
    var_q = variance_Q_R(block, kern, spec.dt_R)
    r0 = map_chunks(_r0_chunk, r0_reps, spec, seed + 1, chunk=chunk, workers=workers)
    thr = math.exp(K ** 2)
    p_hat = Estimate.from_samples(r0 > thr)
    p_bound = min(1.0, var_q * math.exp(-2 * K ** 2))
    lift = math.exp(theta * K / (1 - theta)) - 1.0
    F1 = (1.0 + p_bound * lift) ** (m * (1 - theta))
    F1_hat = (1.0 + p_hat.value * lift) ** (m * (1 - theta))
    r0_mean, r0_se = mean_and_stderr(r0)
    r0_var, r0_var_se = variance_and_stderr(r0)
    terms.append(_term("R0_mean_under_Q", r0_mean, r0_se, "Q[R_0] = 0", holds=abs(r0_mean) <= tol * r0_se))
    terms.append(_term("R0_variance_under_Q", r0_var, r0_var_se, "Var_Q(R_0) <= exact discrete variance",
                       exact=var_q, holds=_le(r0_var, r0_var_se, var_q, tol=tol)))
    terms.append(_term("R0_tail_probability", p_hat.value, p_hat.stderr, "Q[R_0 > exp K^2] <= exp(-2 K^2)",
                       bound=math.exp(-2 * K ** 2), holds=_le(p_hat.value, p_hat.stderr, math.exp(-2 * K ** 2), tol=tol)))
    terms.append(_term("first_factor", F1, 0.0, "Q[g^(-theta/(1-theta))]^(1-theta) <= 2^(m(1-theta))",
                       monte_carlo=F1_hat, bound=2.0 ** (m * (1 - theta)),
                       holds=F1 <= 2.0 ** (m * (1 - theta))))

    # second factors
    cells = origin_cell(n)
    xs = [(a, b) for a in cells for b in cells]
    R = spec.R
    near = [(a, b) for a in range(-R, R + 1) for b in range(-R, R + 1)]
    per_x = []
    samples = []
    for i, x in enumerate(xs):
        smp = map_chunks(_second_chunk, second_reps, spec, beta, kappa, seed + 10 + i, x,
                         chunk=max(1, chunk // 2), workers=workers)
        samples.append(smp)
        w = smp[:, 6]
        row = {}
        for z in near:
            hit = (smp[:, 2] == z[0]) & (smp[:, 3] == z[1])
            row[z] = mean_and_stderr(w * hit)
        per_x.append(row)
    S_near, S_near_se = [], []
    for z in near:
        vals = [per_x[i][z] for i in range(len(xs))]
        best = int(np.argmax([v[0] for v in vals]))
        S_near.append(vals[best][0])
        S_near_se.append(vals[best][1])
    S_near = np.array(S_near)
    S_near_se = np.array(S_near_se)
    near_sum = float((S_near ** theta).sum())
    pos = S_near > 0
    near_se = float(np.sqrt(((theta * S_near[pos] ** (theta - 1) * S_near_se[pos]) ** 2).sum()))
    lab1, q1 = endpoint_factors_1d(n, kappa)
    qt = q1 ** theta
    close1 = np.abs(lab1) <= R
    far = float(qt.sum() ** 2 - qt[close1].sum() ** 2)
    second = near_sum + far
    rhs = F1 * second ** m
    rhs_se = F1 * m * second ** (m - 1) * near_se
    terms.append(_term("second_factor_near", near_sum, near_se,
                       "sum_{|z|<=R} max_x P_x Qhat_X[exp(f_K(R_0)) 1{X_n in I_z}]^theta", R=R,
                       replicas_per_start=second_reps))
    terms.append(_term("second_factor_far", far, 0.0, "sum_{|z|>R} max_x P_x[X_n in I_z]^theta (exact)"))
    terms.append(_term("chain", lhs.value, lhs.stderr, "Q[Z_T^theta] <= F1 (sum_z S_z^theta)^m", rhs=rhs,
                       rhs_se=rhs_se, holds=_le(lhs.value, lhs.stderr, rhs, rhs_se, tol)))

    # mean shift of R_0 two ways, pooled over starting points
    allsmp = np.concatenate(samples)
    diff_m, diff_se = mean_and_stderr(allsmp[:, 0] - allsmp[:, 1])
    mc_m, mc_se = mean_and_stderr(allsmp[:, 0])
    an_m = float(allsmp[:, 1].mean())
    cont = beta ** 2 * float(allsmp[:, 5].mean()) / (100 * spec.C3 * spec.C4)
    terms.append(_term("mean_shift", mc_m, mc_se,
                       "Qhat_X[R_0] = beta^2 sum V(s,X_s)(u,X_u) (Monte Carlo vs path functional)",
                       path_functional=an_m, paired_difference=float(diff_m), paired_difference_se=float(diff_se),
                       continuum=cont, holds=abs(diff_m) <= tol * diff_se if diff_se > 0 else diff_m == 0))

    # Var_Qhat(R_0) at the variance constants
    vspec = var_spec or CoarseGrainSpec(d=2, n=spec.n, m=1, C3=10.0, C4=10.0, K=K, dt_R=spec.dt_R, norm=spec.norm)
    vpath = sample_paths(seed ^ 0xA11, WalkSpec(2, kappa, vspec.n), 1)[0]
    vr = map_chunks(_var_chunk, var_reps, vspec, beta, seed + 2, vpath, chunk=max(1, chunk // 4), workers=workers)
    v, v_se = variance_and_stderr(vr)
    vq = variance_Q_R(_origin_block(vspec), _kernel(vspec), vspec.dt_R)
    terms.append(_term("variance_under_Qhat", v, v_se, "Var_Qhat(R_0) <= 2", C3=vspec.C3, C4=vspec.C4, n=vspec.n,
                       variance_under_Q=vq, holds=_le(v, v_se, 2.0, tol=tol)))

    # exit probability and the three-term bound (reported)
    ex_paths = sample_paths(seed ^ 0xE417, WalkSpec(2, kappa, n), exit_reps)
    radius = (spec.C3 - 1) * spec.sqrt_n
    ex = Estimate.from_samples([path_max_norm(p, spec.norm) >= radius for p in ex_paths])
    D = D_n_quadrature(n)
    small = Estimate.from_samples(allsmp[:, 5] <= D / 2)
    delta_small = small.value / 2
    three = 2 * delta_small + math.exp(-K) + 3 * math.exp(-2 * K ** 2)
    toto = [float(s[:, 6].mean()) for s in samples]
    terms.append(_term("exit_probability", ex.value, ex.stderr, "P_0[max |X_s| >= (C3-1) sqrt n]",
                       replicas=exit_reps))
    terms.append(_term("three_term_bound", max(toto), 0.0, "max_x P_x Qhat_X[exp f_K(R_0)] <= 2 delta + e^-K + 3 e^-2K^2",
                       bound=three, delta_from_Y=delta_small, D_n=D, exit_probability=ex.value,
                       holds=max(toto) <= three, gating=False))

    # Hölder link per sequence
    labels = [tuple(z) for z in link_labels]
    links = []
    if beta != 0 and labels:
        data = map_chunks(_d2_link_chunk, link_reps, solver, spec, seed + 3, tuple(labels),
                          chunk=max(1, chunk // 4), workers=workers)
        keys = sorted(_tuple_keys(m, labels))
        for j, key in enumerate(keys):
            plain = moment_from_logs(data[:, j, 0], theta)
            gz = Estimate.from_samples(np.exp(data[:, j, 0] + data[:, j, 1]))
            bound = F1 * gz.value ** theta
            se_b = F1 * theta * gz.value ** (theta - 1) * gz.stderr if gz.value > 0 else 0.0
            links.append({"corridors": [list(z) for z in key], "Q_Zbar_theta": plain.value,
                          "Q_Zbar_theta_se": plain.stderr, "Q_gZbar": gz.value, "Q_gZbar_se": gz.stderr,
                          "holder_holds": bool(_le(plain.value, plain.stderr, bound, se_b, tol))})
        terms.append(_term("holder_links", sum(l["holder_holds"] for l in links), 0.0,
                           "Q[Zbar^theta] <= F1 Q[g Zbar]^theta for each linked sequence",
                           holds=all(l["holder_holds"] for l in links), sequences=len(links)))
    report = {
        "certificate": "d2",
        "instance": dict(spec.to_dict(), beta=beta, kappa=kappa, L=L, dt=dt, reps=reps, second_reps=second_reps,
                         r0_reps=r0_reps, var_reps=var_reps, link_reps=link_reps, seed=seed, tolerance=tol),
        "terms": terms,
        "links": links,
        "lhs": lhs.value,
        "rhs": rhs,
    }
    return _finish(report)


def _tuple_keys(m, labels):
    keys = [()]
    for _ in range(m):
        keys = [p + (z,) for p in keys for z in labels]
    return keys
