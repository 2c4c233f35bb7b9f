"""Monte Carlo estimators built on the solver and the path sampler.

Every estimator is a pure function of its arguments and ``seed``: replica
``r`` of a run always sees the environment ``replica_seeds(seed, .., r)``,
whatever the chunking or worker count.
"""

import math

import numpy as np

from . import rng
from .env_field import EnvironmentField, LatticeSpec
from .errors import ConfigurationError, DomainError
from .parallel import DEFAULT_CHUNK, map_chunks
from .spde_solver import SolverSpec, default_dt, log_partition_series, survival_mass
from .stats import Estimate, log_mean_exp, mean_and_stderr, ols_slope, variance_and_stderr, wls_slope, z_score
from .walk_sampler import WalkSpec, hamiltonians, sample_paths

_PATH_SALT = 0x9A7B
ESS_FRACTION = 0.01


def default_half_width(d, kappa, T, sigmas=4.0):
    """Box half-width of ``sigmas`` walk standard deviations ``sqrt(2 kappa T)``."""
    return max(2, int(math.ceil(sigmas * math.sqrt(2.0 * kappa * T))))


def make_solver(d, beta, kappa, T, L=None, boundary="absorbing", dt=None, scheme="exponential_euler"):
    L = default_half_width(d, kappa, T) if L is None else int(L)
    return SolverSpec(LatticeSpec(d, L, boundary), float(beta), float(kappa), float(T), dt, scheme)


# replica workers (module level so that they pickle) -------------------------


def _log_z_chunk(start, count, spec, seed, times):
    env = EnvironmentField.replicas(spec.lattice, seed, count, start)
    return log_partition_series(env, spec, times)


def sample_log_Z(spec, reps, seed, times=None, chunk=DEFAULT_CHUNK, workers=1):
    """``ln Z_t`` for ``reps`` environments at ``times`` (default ``[T]``), shape ``(reps, len(times))``."""
    times = [spec.T] if times is None else [float(t) for t in times]
    if reps < 1:
        raise DomainError("reps must be >= 1")
    return map_chunks(_log_z_chunk, reps, spec, seed, times, chunk=chunk, workers=workers)


def _path_log_z_chunk(start, count, lattice, beta, kappa, T, n_paths, seed):
    seeds = rng.replica_seeds(seed, count, start)
    out = np.empty(count)
    walk = WalkSpec(lattice.d, kappa, T)
    for i, s in enumerate(seeds):
        env = EnvironmentField(lattice, int(s))
        paths = sample_paths(int(s) ^ _PATH_SALT, walk, n_paths)
        H = hamiltonians(paths, env, out_of_box="nan")
        logw = np.where(np.isnan(H), -np.inf, beta * H - 0.5 * T * beta ** 2)
        out[i] = log_mean_exp(logw)[0]
    return out


def sample_log_Z_paths(lattice, beta, kappa, T, reps, n_paths, seed, chunk=16, workers=1):
    """Path Monte Carlo ``ln( mean_i exp(beta H_i - T beta**2 / 2) )`` per environment.

    Paths leaving an absorbing box contribute zero, as in the solver.
    """
    return map_chunks(_path_log_z_chunk, reps, lattice, beta, kappa, T, n_paths, seed, chunk=chunk, workers=workers)


def path_partition_estimate(env, beta, T, kappa, n_paths, seed):
    """``Z_T`` of one environment by exact path sampling, as an :class:`Estimate`."""
    paths = sample_paths(seed, WalkSpec(env.lattice.d, kappa, T), n_paths)
    H = hamiltonians(paths, env, out_of_box="nan")
    w = np.where(np.isnan(H), 0.0, np.exp(beta * H - 0.5 * T * beta ** 2))
    est = Estimate.from_samples(w, metadata={"seed": seed, "n_paths": n_paths})
    est.flags = ["paths_left_box"] if np.isnan(H).any() else []
    return est


# free energy ----------------------------------------------------------------


def free_energy(beta, kappa, T, reps, seed=0, d=1, L=None, boundary="absorbing", dt=None,
                backend="solver", n_paths=10_000, chunk=DEFAULT_CHUNK, workers=1):
    """``(1/T)`` times the mean of ``ln Z_T`` over independent environments."""
    if T <= 0 or reps < 2:
        raise DomainError("need T > 0 and reps >= 2")
    spec = make_solver(d, beta, kappa, T, L, boundary, dt)
    meta = {"beta": beta, "kappa": kappa, "T": T, "d": d, "L": spec.lattice.L, "boundary": boundary,
            "dt": spec.dt, "backend": backend, "seed": seed}
    lost = 0.0 if boundary == "periodic" else 1.0 - survival_mass(spec)
    meta["lost_mass"] = lost
    if beta == 0:
        # Z = 1 identically; the box truncation is reported in lost_mass only
        return Estimate(0.0, 0.0, reps, meta)
    if backend == "solver":
        lz = sample_log_Z(spec, reps, seed, chunk=chunk, workers=workers)[:, 0]
    elif backend == "path":
        lz = sample_log_Z_paths(spec.lattice, beta, kappa, T, reps, n_paths, seed, workers=workers)
        meta["n_paths"] = n_paths
    else:
        raise ConfigurationError(f"unknown backend {backend!r}")
    flags = []
    if np.any(~np.isfinite(lz)):
        flags.append("zero_restricted_mass")
    psi = lz / T
    m, se = mean_and_stderr(psi[np.isfinite(psi)]) if np.isfinite(psi).sum() > 1 else (-math.inf, math.nan)
    meta["median"] = float(np.median(psi))
    est = Estimate(float(m), float(se), reps, meta, flags=flags)
    est.samples = psi
    return est


def martingale_check(beta, kappa, T, reps, seed=0, d=1, L=6, dt=None, chunk=DEFAULT_CHUNK, workers=1):
    """Mean of ``Z_T`` over environments on a periodic box (should be 1)."""
    spec = make_solver(d, beta, kappa, T, L, "periodic", dt)
    lz = sample_log_Z(spec, reps, seed, chunk=chunk, workers=workers)[:, 0]
    est = Estimate.from_samples(np.exp(lz), metadata={"beta": beta, "kappa": kappa, "T": T, "d": d, "L": L,
                                                       "dt": spec.dt, "seed": seed})
    est.metadata["z"] = (est.value - 1.0) / est.stderr if est.stderr > 0 else 0.0
    return est


# kappa rescaling ------------------------------------------------------------


def kappa_rescale_check(beta, kappa, T, reps, seed=0, d=1, L=None, dt=None, chunk=DEFAULT_CHUNK, workers=1):
    """Compare ``ln Z_T^{kappa, beta}`` with ``ln Z_{kappa T}^{1, beta / sqrt(kappa)}``.

    The second arm uses step ``kappa * dt`` so that both discretisations have
    the same law, and disjoint replica indices so that the arms are
    independent.  With ``kappa = 1`` the arms coincide and ``z = 0``.
    """
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    L = default_half_width(d, kappa, T) if L is None else L
    dt_a = default_dt(d, kappa, beta) if dt is None else dt
    if 2 * d * kappa * dt_a >= 1:
        raise ConfigurationError("step is unstable for the first arm")
    spec_a = SolverSpec(LatticeSpec(d, L), beta, kappa, T, dt_a)
    spec_b = SolverSpec(LatticeSpec(d, L), beta / math.sqrt(kappa), 1.0, kappa * T, kappa * dt_a)
    a = sample_log_Z(spec_a, reps, seed, chunk=chunk, workers=workers)[:, 0]
    if kappa == 1.0:
        b = a.copy()
    else:
        b = map_chunks(_log_z_chunk_offset, reps, spec_b, seed, reps, chunk=chunk, workers=workers)
    ma, sa = mean_and_stderr(a)
    mb, sb = mean_and_stderr(b)
    va, sva = variance_and_stderr(a)
    vb, svb = variance_and_stderr(b)
    psi_a = Estimate(ma / T, sa / T, reps)
    # kappa * Psi(1, beta / sqrt(kappa)) with Psi(1, .) estimated over time kappa * T
    psi_b = Estimate(mb / T, sb / T, reps)
    return {
        "arm_a": {"kappa": kappa, "beta": beta, "T": T, "dt": dt_a, "mean": float(ma), "mean_se": float(sa),
                  "var": va, "var_se": sva},
        "arm_b": {"kappa": 1.0, "beta": beta / math.sqrt(kappa), "T": kappa * T, "dt": kappa * dt_a,
                  "mean": float(mb), "mean_se": float(sb), "var": vb, "var_se": svb},
        "z_mean": z_score(ma, sa, mb, sb),
        "z_var": z_score(va, sva, vb, svb),
        "psi": psi_a.to_dict(),
        "kappa_psi_rescaled": psi_b.to_dict(),
        "z_psi": z_score(psi_a.value, psi_a.stderr, psi_b.value, psi_b.stderr),
        "replicas": reps,
        "seed": seed,
    }


def _log_z_chunk_offset(start, count, spec, seed, offset):
    return _log_z_chunk(start + offset, count, spec, seed, [spec.T])[:, 0]


# overlap ----------------------------------------------------------------------


def pair_overlap(paths, weights, T):
    """Self-normalised two-replica coincidence time.

    Returns ``sum_{i != j} w_i w_j O_ij / sum_{i != j} w_i w_j`` with
    ``O_ij = int_0^T 1{X^i_s = X^j_s} ds``, computed by sweeping the merged
    jump times: on each constant stretch the pair sum equals
    ``sum_sites (sum of weights at site)**2 - sum_i w_i**2``.
    """
    w = np.asarray(weights, dtype=float)
    N = len(paths)
    if N < 2:
        raise DomainError("need at least two paths")
    times, who = [], []
    for i, p in enumerate(paths):
        times.append(p.jump_times)
        who.append(np.full(p.n_jumps, i))
    times = np.concatenate(times)
    who = np.concatenate(who)
    order = np.argsort(times, kind="stable")
    times, who = times[order], who[order]
    cursor = np.zeros(N, dtype=np.int64)
    site_w = {}
    cur = []
    for i, p in enumerate(paths):
        s = tuple(int(c) for c in p.positions[0])
        cur.append(s)
        site_w[s] = site_w.get(s, 0.0) + w[i]
    s2 = sum(v * v for v in site_w.values())
    diag = float((w ** 2).sum())
    num = 0.0
    last = 0.0
    for t, i in zip(times, who):
        num += (s2 - diag) * (t - last)
        last = t
        old = cur[i]
        cursor[i] += 1
        new = tuple(int(c) for c in paths[i].positions[cursor[i]])
        vo = site_w[old]
        s2 -= vo * vo
        vo -= w[i]
        s2 += vo * vo
        site_w[old] = vo
        vn = site_w.get(new, 0.0)
        s2 -= vn * vn
        vn += w[i]
        s2 += vn * vn
        site_w[new] = vn
        cur[i] = new
    num += (s2 - diag) * (T - last)
    den = float(w.sum() ** 2 - diag)
    return num / den if den > 0 else math.nan


def _overlap_chunk(start, count, lattice, beta, kappa, T, n_paths, seed):
    seeds = rng.replica_seeds(seed, count, start)
    out = np.empty((count, 2))
    walk = WalkSpec(lattice.d, kappa, T)
    for k, s in enumerate(seeds):
        paths = sample_paths(int(s) ^ _PATH_SALT, walk, n_paths)
        if beta == 0:
            logw = np.zeros(n_paths)
        else:
            env = EnvironmentField(lattice, int(s))
            H = hamiltonians(paths, env, out_of_box="nan")
            logw = np.where(np.isnan(H), -np.inf, beta * H)
        w = np.exp(logw - logw.max())
        out[k, 0] = pair_overlap(paths, w, T)
        out[k, 1] = w.sum() ** 2 / (w ** 2).sum()
    return out


def overlap(beta, T, reps, n_paths, seed=0, d=1, kappa=1.0, L=None, chunk=8, workers=1):
    """Environment average of the importance-sampled replica overlap ``J_T``.

    The estimate carries the flag ``low_ess`` when some environment has an
    effective sample size below ``0.01 * n_paths``.
    """
    if n_paths < 2 or reps < 2:
        raise DomainError("need n_paths >= 2 and reps >= 2")
    L = default_half_width(d, kappa, T, sigmas=6.0) if L is None else L
    lat = LatticeSpec(d, L, "absorbing")
    res = map_chunks(_overlap_chunk, reps, lat, beta, kappa, T, n_paths, seed, chunk=chunk, workers=workers)
    J, ess = res[:, 0], res[:, 1]
    est = Estimate.from_samples(J, metadata={"beta": beta, "T": T, "d": d, "kappa": kappa, "n_paths": n_paths,
                                             "seed": seed, "min_ess": float(ess.min())})
    if np.any(ess < ESS_FRACTION * n_paths):
        est.flags.append("low_ess")
    return est


def free_walk_overlap(T, kappa, d, reps, seed=0):
    """``int_0^T P[X_s = Xhat_s] ds`` by direct simulation of independent walk pairs."""
    walk = WalkSpec(d, kappa, T)
    a = sample_paths(seed, walk, reps)
    b = sample_paths(seed ^ 0x5EED, walk, reps)
    vals = np.empty(reps)
    for k, (p, q) in enumerate(zip(a, b)):
        edges = np.unique(np.concatenate([[0.0], p.jump_times, q.jump_times, [T]]))
        mids = 0.5 * (edges[:-1] + edges[1:])
        ip = np.searchsorted(p.jump_times, mids, side="right")
        iq = np.searchsorted(q.jump_times, mids, side="right")
        same = np.all(p.positions[ip] == q.positions[iq], axis=1)
        vals[k] = float((np.diff(edges) * same).sum())
    return Estimate.from_samples(vals, metadata={"T": T, "kappa": kappa, "d": d, "seed": seed})


def free_walk_overlap_exact(T, kappa, d):
    """``int_0^T P[X_s = Xhat_s] ds``: the difference walk has rate ``2 kappa`` per axis pair."""
    from scipy import integrate
    from scipy.special import ive

    # X - Xhat is a walk with generator 2 kappa Delta; P[0 at s] = (e^{-4 kappa s} I_0(4 kappa s))^d
    val, _ = integrate.quad(lambda s: ive(0, 4 * kappa * s) ** d, 0.0, T, limit=200)
    return val


def lnZ_overlap_identity(betas, T, reps, n_paths, seed=0, d=1, kappa=1.0, L=None, dt=None, workers=1):
    """Compare ``mean ln Z_T(beta)`` with ``-int_0^beta b J_T(b) db`` (trapezoid rule)."""
    betas = np.asarray(sorted(betas), dtype=float)
    if betas.shape[0] < 3 or betas[0] != 0:
        raise DomainError("need at least three beta values starting at 0")
    L = default_half_width(d, kappa, T, sigmas=6.0) if L is None else L
    lhs, lhs_se, J, J_se, flags = [], [], [], [], []
    for k, b in enumerate(betas):
        fe = free_energy(b, kappa, T, reps, seed + k, d, L, "absorbing", dt, workers=workers)
        lhs.append(fe.value * T)
        lhs_se.append(fe.stderr * T)
        ov = overlap(b, T, reps, n_paths, seed + 1000 + k, d, kappa, L, workers=workers)
        J.append(ov.value)
        J_se.append(ov.stderr)
        flags.append(list(ov.flags))
    J = np.array(J)
    J_se = np.array(J_se)
    f, f_se = betas * J, betas * J_se
    rhs, rhs_var = [], []
    for k in range(betas.shape[0]):
        # trapezoid weights on betas[0..k]; the J estimates are independent
        w = np.zeros_like(betas)
        h = np.diff(betas[: k + 1])
        w[:k] += 0.5 * h
        w[1 : k + 1] += 0.5 * h
        rhs.append(-float(w @ f))
        rhs_var.append(float(((w * f_se) ** 2).sum()))
    rows = []
    for k, b in enumerate(betas):
        se = math.hypot(lhs_se[k], math.sqrt(rhs_var[k]))
        rows.append({"beta": float(b), "mean_lnZ": lhs[k], "mean_lnZ_se": lhs_se[k], "J": float(J[k]),
                     "J_se": float(J_se[k]), "rhs": float(rhs[k]), "rhs_se": math.sqrt(rhs_var[k]),
                     "z": (lhs[k] - rhs[k]) / se if se > 0 else 0.0, "flags": flags[k]})
    return {"T": T, "d": d, "kappa": kappa, "reps": reps, "n_paths": n_paths, "rows": rows,
            "rhs_non_increasing": bool(np.all(np.diff(rhs) <= 1e-15))}


# beta^4 fit -------------------------------------------------------------------


def beta4_fit(betas, psi, se=None, z=3.0):
    """Slope of ``log(-psi)`` against ``log beta``.

    Points whose ``z``-sigma interval reaches 0 are excluded.  With fewer than
    three usable points the report is marked inconclusive.
    """
    betas = np.asarray(betas, dtype=float)
    psi = np.asarray(psi, dtype=float)
    se = np.zeros_like(psi) if se is None else np.asarray(se, dtype=float)
    use = (psi + z * se < 0) & (betas > 0)
    out = {"betas": betas.tolist(), "psi": psi.tolist(), "stderr": se.tolist(), "used": use.tolist()}
    if use.sum() < 3:
        out.update(conclusive=False, slope=math.nan, slope_se=math.nan)
        return out
    x = np.log(betas[use])
    y = np.log(-psi[use])
    if np.all(se[use] == 0):
        slope, slope_se, icpt = ols_slope(x, y)
    else:
        slope, slope_se, icpt = wls_slope(x, y, se[use] / np.abs(psi[use]))
    lo, hi = slope - 1.96 * slope_se, slope + 1.96 * slope_se
    out.update(conclusive=True, slope=slope, slope_se=slope_se, intercept=icpt, ci95=[lo, hi],
               contains_4=bool(lo <= 4.0 <= hi))
    return out


def beta4_slope(betas, kappa, T, reps, seed=0, d=1, L=None, dt=None, workers=1):
    """Run the free-energy pipeline on ``betas`` and fit the exponent."""
    psi, se = [], []
    for k, b in enumerate(betas):
        fe = free_energy(b, kappa, T, reps, seed + k, d, L, "absorbing", dt, workers=workers)
        psi.append(fe.value)
        se.append(fe.stderr)
    out = beta4_fit(betas, psi, se)
    out.update(kappa=kappa, T=T, reps=reps, d=d)
    return out


# fractional moments -------------------------------------------------------


def fractional_moment_curve(log_z, theta):
    """``log Q[Z_t**theta]`` per column of ``log_z`` with the delta-method covariance."""
    log_z = np.asarray(log_z, dtype=float)
    n = log_z.shape[0]
    a = theta * log_z
    shift = a.max(axis=0)
    w = np.exp(a - shift)
    mean = w.mean(axis=0)
    logq = np.log(mean) + shift
    rel = w / mean
    cov = np.cov(rel, rowvar=False, ddof=1) / n
    return logq, np.atleast_2d(cov)


def fractional_decay(theta, beta, Ts, reps, seed=0, d=1, kappa=1.0, L=None, dt=None, chunk=DEFAULT_CHUNK,
                     workers=1):
    """Slope of ``log Q[Z_T**theta]`` against ``T`` from one evolution per environment."""
    if not 0 < theta <= 1:
        raise DomainError("theta must lie in (0, 1]")
    Ts = [float(t) for t in Ts]
    if any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise DomainError("T grid must be increasing")
    Tmax = Ts[-1]
    spec = make_solver(d, beta, kappa, Tmax, L, "absorbing", dt)
    if beta == 0:
        logq = np.zeros(len(Ts))
        cov = np.zeros((len(Ts), len(Ts)))
    else:
        lz = sample_log_Z(spec, reps, seed, times=Ts, chunk=chunk, workers=workers)
        logq, cov = fractional_moment_curve(lz, theta)
    if beta == 0:
        slope, se, icpt = 0.0, 0.0, 0.0
    else:
        slope, se, icpt = ols_slope(np.array(Ts), logq, cov)
    return {"theta": theta, "beta": beta, "kappa": kappa, "d": d, "T": Ts, "log_moment": logq.tolist(),
            "log_moment_se": np.sqrt(np.diag(cov)).tolist(), "slope": slope, "slope_se": se, "intercept": icpt,
            "negative_by_3se": bool(slope + 3 * se < 0), "reps": reps, "L": spec.lattice.L, "dt": spec.dt,
            "seed": seed}


# large beta -----------------------------------------------------------------


def fit_alpha2(betas, p):
    """Least-squares ``alpha**2`` in ``p = beta**2/2 - alpha**2 beta**2 / (4 log beta**2)``."""
    betas = np.asarray(betas, dtype=float)
    p = np.asarray(p, dtype=float)
    x = betas ** 2 / (4.0 * np.log(betas ** 2))
    y = betas ** 2 / 2.0 - p
    return float((x @ y) / (x @ x))


def large_beta_profile(betas, T, reps, seed=0, d=1, kappa=1.0, L=None, dt=None, workers=1):
    """``psi / beta**2`` against ``1 / log beta**2`` over a large-beta grid.

    The asymptotic profile concerns ``p = psi + beta**2 / 2``, the growth
    rate of ``P[exp(beta H_t)]``; ``alpha**2`` is fitted on ``p``.
    """
    betas = np.asarray(betas, dtype=float)
    if np.any(betas < 2) or np.any(betas > 6):
        raise DomainError("the large-beta profile uses beta in [2, 6]")
    rows = []
    for k, b in enumerate(betas):
        fe = free_energy(b, kappa, T, reps, seed + k, d, L, "absorbing", dt, workers=workers)
        rows.append({"beta": float(b), "psi": fe.value, "psi_se": fe.stderr, "p": fe.value + b ** 2 / 2,
                     "p_over_beta2": (fe.value + b ** 2 / 2) / b ** 2, "ratio_se": fe.stderr / b ** 2,
                     "inv_log_beta2": 1.0 / math.log(b ** 2), "below_beta2_half": bool(fe.value < 0)})
    r = np.array([row["p_over_beta2"] for row in rows])
    rs = np.array([row["ratio_se"] for row in rows])
    monotone = bool(np.all(np.diff(r) > -3 * np.hypot(rs[1:], rs[:-1])))
    alpha2 = fit_alpha2(betas, [row["p"] for row in rows])
    return {"T": T, "reps": reps, "d": d, "kappa": kappa, "rows": rows, "all_below_beta2_half": all(
        row["below_beta2_half"] for row in rows), "ratio_monotone_within_error": monotone, "alpha2_fit": alpha2}
