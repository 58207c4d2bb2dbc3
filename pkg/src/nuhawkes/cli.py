"""Reproducible experiment runner and command-line interface.

Experiments are described by a single JSON object and produce a run directory
of CSV/JSONL artifacts plus a ``manifest.json`` listing every artifact with a
content hash.  Outputs are a pure function of ``(config, seed)``: sub-streams
are derived per path, so the thread count never changes results.

Config schema (see also ``config_schema.json`` next to this module)::

    {
      "kind": "resolvent" | "hawkes" | "meanfield" | "limit"
              | "regime-compare" | "acceptance-suite",
      "seed": <uint64>,                          # required
      "grid": {"T": 1.0, "h": 0.001},            # defaults shown
      "paths": 10000,
      "kernel":  {"form": "exponential", "params": {"alpha": ..., "beta": ...}}
               | {"form": "powerlaw",    "params": {"scale": ..., "exponent": ..., "cutoff": ...}}
               | {"form": "grid",        "params": {"step": ..., "values": [...]}},
      "baseline": 1.0 | [..],                    # hawkes
      "method": "thinning" | "cluster",          # hawkes / meanfield
      "z_values": [0.5, 1.0, 2.0],               # resolvent identity checks
      "family": {"base": <kernel>, "c": 1.0, "b_power": 0.5, "a": 1.0},
      "n": 100, "K": 5, "coupled": false,        # meanfield
      "times": [0.5, 1.0],                       # meanfield snapshots
      "n_list": [50, 200, 800],                  # regime-compare
      "limit": {"model": "cir" | "sve-exponential" | "sve-fractional", ...},
      "out": "runs/my-experiment"
    }

Matrix-valued kernel parameters are nested lists; scalars denote 1x1 kernels.
Unknown keys anywhere are rejected, and all constraint violations are
reported together, each naming the offending key.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .grids import Grid
from .hawkes import (
    HawkesParams,
    ensemble,
    events_to_csv,
    nodes_to_csv,
    simulate_cluster,
    simulate_thinning,
)
from .kernels import (
    BernsteinTriplet,
    ExponentialKernel,
    Kernel,
    kernel_from_spec,
    l1_and_stability,
    make_jr_family,
)
from .limits import (
    CIRParams,
    LimitKernelSpec,
    cir_correspondence,
    ensemble_cir,
    ensemble_sve,
)
from .meanfield import (
    MeanFieldParams,
    empirical_snapshot,
    simulate_coupled_auxiliary,
    simulate_particles,
    snapshot_to_csv,
)
from .resolvent import resolvent_grid, table_to_csv, verify_laplace_identity
from .rng import substream_seed
from .stats import TestReport, ks_distance, qv_identity_check

__all__ = ["ConfigError", "ExperimentConfig", "validate_config", "run_experiment", "main"]

KINDS = ("resolvent", "hawkes", "meanfield", "limit", "regime-compare", "acceptance-suite")

_TOP_KEYS = {
    "kind", "seed", "grid", "paths", "kernel", "baseline", "method", "z_values",
    "family", "n", "K", "coupled", "times", "n_list", "limit", "zeta", "out",
}
_GRID_KEYS = {"T", "h"}
_FAMILY_KEYS = {"base", "c", "b_power", "a"}
_LIMIT_KEYS = {"model", "m", "lambda", "alpha", "normalization", "mass",
               "b", "a", "sigma", "xi0"}


class ConfigError(ValueError):
    """Validation failure carrying the full list of offending keys."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass
class ExperimentConfig:
    """Normalized experiment description with defaults applied."""

    kind: str
    seed: int
    grid: Grid
    paths: int
    raw: dict = field(repr=False, default_factory=dict)
    kernel: Kernel | None = None
    baseline: np.ndarray | None = None
    method: str = "thinning"
    z_values: tuple = (0.5, 1.0, 2.0)
    family: dict | None = None
    n: int | None = None
    K: int = 0
    coupled: bool = False
    times: tuple = (1.0,)
    n_list: tuple = ()
    limit: dict | None = None
    zeta: float | None = None
    out: str | None = None

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()

    def build_family(self):
        base = kernel_from_spec(self.family["base"])
        return make_jr_family(base, self.family["c"], self.family["b_power"],
                              self.family["a"])


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config; aggregate all errors."""
    errors: list[str] = []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"document: not valid JSON ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["document: must be a JSON object"])

    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"{key}: unknown key")

    kind = raw.get("kind")
    if kind not in KINDS:
        errors.append(f"kind: must be one of {', '.join(KINDS)}")

    seed = raw.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or not (0 <= seed < 2**64):
        errors.append("seed: required unsigned 64-bit integer")
        seed = 0

    grid_raw = raw.get("grid", {})
    T, h = 1.0, 1e-3
    if not isinstance(grid_raw, dict):
        errors.append("grid: must be an object with keys T, h")
    else:
        for key in sorted(set(grid_raw) - _GRID_KEYS):
            errors.append(f"grid.{key}: unknown key")
        T = grid_raw.get("T", 1.0)
        h = grid_raw.get("h", 1e-3)
        if not (isinstance(T, (int, float)) and T > 0):
            errors.append("grid.T: must be a positive number")
            T = 1.0
        if not (isinstance(h, (int, float)) and h > 0):
            errors.append("grid.h: must be a positive number")
            h = 1e-3
        if h > T:
            errors.append("grid.h: must not exceed grid.T")
            h = T
    grid = Grid(float(T), float(h))

    paths = raw.get("paths", 10_000)
    if not isinstance(paths, int) or isinstance(paths, bool) or paths < 1:
        errors.append("paths: must be a positive integer")
        paths = 1

    kernel = None
    if "kernel" in raw:
        try:
            kernel = kernel_from_spec(raw["kernel"])
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"kernel: {exc}")

    baseline = None
    if "baseline" in raw:
        base_raw = raw["baseline"]
        arr = np.atleast_1d(np.asarray(base_raw, dtype=float))
        if np.any(arr < 0):
            errors.append("baseline: rates must be nonnegative")
        baseline = arr

    method = raw.get("method", "thinning")
    if method not in ("thinning", "cluster"):
        errors.append("method: must be 'thinning' or 'cluster'")
        method = "thinning"

    z_values = tuple(raw.get("z_values", (0.5, 1.0, 2.0)))
    if any(not isinstance(z, (int, float)) or z <= 0 for z in z_values):
        errors.append("z_values: entries must be positive numbers")

    family = raw.get("family")
    if family is not None:
        if not isinstance(family, dict):
            errors.append("family: must be an object")
            family = None
        else:
            for key in sorted(set(family) - _FAMILY_KEYS):
                errors.append(f"family.{key}: unknown key")
            if "base" not in family:
                errors.append("family.base: required kernel spec")
            family = {"base": family.get("base"), "c": float(family.get("c", 1.0)),
                      "b_power": float(family.get("b_power", 1.0)),
                      "a": float(family.get("a", 1.0))}
            if family["c"] <= 0:
                errors.append("family.c: must be positive")

    n = raw.get("n")
    K = raw.get("K", 0)
    if n is not None and (not isinstance(n, int) or n < 1):
        errors.append("n: must be a positive integer")
        n = 1
    if not isinstance(K, int) or K < 0:
        errors.append("K: must be a nonnegative integer")
        K = 0
    if kind == "meanfield" and n is not None and K > n:
        errors.append("K: must not exceed n; n: see K")

    times = tuple(raw.get("times", (grid.T,)))
    bad_times = [t for t in times if not isinstance(t, (int, float)) or t < 0 or t > grid.T]
    if bad_times:
        errors.append(f"times: entries must lie in [0, grid.T]; offending {bad_times}")

    n_list = tuple(raw.get("n_list", ()))
    if any(not isinstance(v, int) or v < 1 for v in n_list):
        errors.append("n_list: entries must be positive integers")

    limit = raw.get("limit")
    if limit is not None:
        if not isinstance(limit, dict):
            errors.append("limit: must be an object")
            limit = None
        else:
            for key in sorted(set(limit) - _LIMIT_KEYS):
                errors.append(f"limit.{key}: unknown key")
            if limit.get("model") not in ("cir", "sve-exponential", "sve-fractional"):
                errors.append("limit.model: must be cir, sve-exponential, or sve-fractional")

    zeta = raw.get("zeta")
    if zeta is not None:
        if zeta == "infinity":
            zeta = float("inf")
        elif isinstance(zeta, (int, float)) and zeta >= 0:
            zeta = float(zeta)
        else:
            errors.append("zeta: must be a nonnegative number or 'infinity'")
            zeta = None

    # kind-specific requirements
    if kind == "resolvent" and kernel is None and "kernel" not in raw:
        errors.append("kernel: required for kind=resolvent")
    if kind == "hawkes":
        if kernel is None and "kernel" not in raw:
            errors.append("kernel: required for kind=hawkes")
        if baseline is None:
            errors.append("baseline: required for kind=hawkes")
    if kind == "meanfield":
        if n is None:
            errors.append("n: required for kind=meanfield")
        if family is None and kernel is None:
            errors.append("family: kernel or family required for kind=meanfield")
        if family is None and "baseline" not in raw and kernel is not None:
            errors.append("baseline: required for kind=meanfield with an explicit kernel")
    if kind == "limit" and limit is None:
        errors.append("limit: required for kind=limit")
    if kind == "regime-compare":
        if family is None:
            errors.append("family: required for kind=regime-compare")
        if not n_list:
            errors.append("n_list: required for kind=regime-compare")

    if errors:
        raise ConfigError(errors)

    if kernel is not None and baseline is not None and baseline.size != kernel.dimension:
        raise ConfigError(["baseline: length must match the kernel dimension"])

    return ExperimentConfig(
        kind=kind, seed=seed, grid=grid, paths=paths, raw=raw, kernel=kernel,
        baseline=baseline, method=method, z_values=z_values, family=family,
        n=n, K=K, coupled=bool(raw.get("coupled", False)), times=times,
        n_list=n_list, limit=limit, zeta=zeta, out=raw.get("out"),
    )


# ---------------------------------------------------------------------------
# experiment execution


@dataclass
class RunResult:
    out_dir: Path
    manifest: dict
    reports: list
    passed: bool


def _write_reports(reports, path: Path):
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json_line() + "\n")


def _float_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _run_resolvent(config: ExperimentConfig, out: Path, threads: int):
    derived = {}
    table = resolvent_grid(config.kernel, config.grid)
    reports = []
    for res in verify_laplace_identity(config.kernel, table, config.z_values):
        reports.append(TestReport(
            description=f"Laplace identity at z={res.z}",
            statistic=res.max_residual if not res.singular else float("inf"),
            passed=(not res.singular) and res.max_residual <= 1e-3,
            tolerance=1e-3,
            details={"singular": res.singular},
        ))
    table_to_csv(table, out / "resolvent.csv")
    if isinstance(config.kernel, ExponentialKernel) and config.kernel.dimension == 1:
        alpha = float(config.kernel.alpha[0, 0])
        rate = float(config.kernel.beta[0, 0])
        mids = config.grid.midpoints()
        exact = alpha * np.exp(-(rate - alpha) * mids)
        err = np.abs(table.psi[:, 0, 0] - exact)
        _float_csv(out / "resolvent_error.csv", ["t", "psi", "closed_form", "abs_error"],
                   np.column_stack([mids, table.psi[:, 0, 0], exact, err]))
        derived["max_abs_error_vs_closed_form"] = float(err.max())
        reports.append(TestReport("resolvent vs closed form", float(err.max()),
                                  bool(err.max() <= 1e-3), tolerance=1e-3))
    return reports, derived


def _run_hawkes(config: ExperimentConfig, out: Path, threads: int):
    params = HawkesParams(config.baseline, config.kernel, config.grid.T)
    rep_stability = l1_and_stability(config.kernel)
    summaries = ensemble(params, config.seed, config.paths, method=config.method,
                         extract=lambda p: p.total_counts(), threads=threads)
    d = params.dimension
    _float_csv(out / "summary.csv", ["path"] + [f"N_{i+1}" for i in range(d)],
               [[float(i)] + list(row) for i, row in enumerate(summaries)])
    first = {"thinning": simulate_thinning, "cluster": simulate_cluster}[config.method](
        params, substream_seed(config.seed, "path", 0))
    if config.method == "thinning":
        first = first.with_node_series(config.grid)
        nodes_to_csv(first, out / "first_path_nodes.csv")
    events_to_csv(first, out / "first_path_events.csv")
    reports = [qv_identity_check(first)]
    counts = np.asarray(summaries)
    reports.append(TestReport(
        description="ensemble summary",
        statistic=float(counts.sum(axis=1).mean()),
        passed=True,
        sample_sizes=(config.paths,),
        details={"mean_counts": counts.mean(axis=0).tolist()},
    ))
    derived = {"spectral_radius": rep_stability.spectral_radius,
               "stable": rep_stability.stable}
    return reports, derived


def _run_meanfield(config: ExperimentConfig, out: Path, threads: int):
    if config.family is not None:
        fam = config.build_family()
        params = MeanFieldParams.from_family(fam, config.n, config.K, config.grid.T)
    else:
        params = MeanFieldParams(n=config.n, mu0=float(config.baseline[0]),
                                 kernel=config.kernel, K=config.K, T=config.grid.T,
                                 beta_n=1.0 / np.sqrt(config.n))
    reports = []
    if config.coupled and config.K >= 1:
        violations = 0
        for i in range(config.paths):
            main, aux = simulate_coupled_auxiliary(
                params, substream_seed(config.seed, "path", i), grid=config.grid)
            ok = (np.all(aux.theta <= main.lambda0 + 1e-12)
                  and np.all(aux.tagged_counts <= main.tagged_counts))
            violations += 0 if ok else 1
        reports.append(TestReport("coupled dominance", float(violations),
                                  violations == 0, sample_sizes=(config.paths,)))
        path = main
    else:
        path = simulate_particles(params, substream_seed(config.seed, "path", 0),
                                  grid=config.grid, method=config.method)
    snaps = empirical_snapshot(path, list(config.times))
    snapshot_to_csv(snaps, out / "snapshots.csv")
    mean_count = float(np.mean([s.marginal(0).mean() for s in snaps]))
    reports.append(TestReport("snapshot summary", mean_count, True,
                              details={"times": list(config.times)}))
    derived = {"beta_n": params.beta_n, "mu0": params.mu0}
    return reports, derived


def _run_limit(config: ExperimentConfig, out: Path, threads: int):
    spec = config.limit
    model = spec["model"]
    reports, derived = [], {}
    nodes = config.grid.nodes()
    if model == "cir":
        params = CIRParams(b=float(spec.get("b", 1.0)), a=float(spec.get("a", 1.0)),
                           sigma=float(spec.get("sigma", 0.5)), xi0=float(spec.get("xi0", 0.0)))
        values = ensemble_cir(params, config.grid, config.seed, config.paths)
        mc_mean, mc_var = values.mean(axis=0), values.var(axis=0)
        th_mean, th_var = params.mean_at(nodes), params.variance_at(nodes)
        _float_csv(out / "cir_nodes.csv",
                   ["t", "mc_mean", "mc_var", "theory_mean", "theory_var"],
                   np.column_stack([nodes, mc_mean, mc_var, th_mean, th_var]))
        at_T = values[:, -1]
        se = at_T.std() / np.sqrt(config.paths)
        z = abs(at_T.mean() - th_mean[-1]) / se if se > 0 else 0.0
        reports.append(TestReport("CIR mean at horizon", float(z), z <= 3.0,
                                  tolerance=3.0, sample_sizes=(config.paths,)))
        derived["cir"] = {"b": params.b, "a": params.a, "sigma": params.sigma}
    else:
        mass = float(spec.get("mass", 1.0))
        if model == "sve-exponential":
            tri = BernsteinTriplet.affine(float(spec.get("m", 1.0)),
                                          float(spec.get("lambda", 1.0)))
            kspec = LimitKernelSpec.from_triplet(tri, config.grid)
            derived["cir_correspondence"] = vars(cir_correspondence(tri, mass))
        else:
            kspec = LimitKernelSpec.fractional(float(spec.get("alpha", 0.75)), config.grid,
                                               spec.get("normalization", "gamma-complement"))
        Y, X = ensemble_sve(kspec, mass, config.seed, config.paths)
        F = kspec.distribution_nodes[:, 0, 0]
        _float_csv(out / "sve_nodes.csv", ["t", "mc_mean_Y", "F_times_a", "mc_mean_X"],
                   np.column_stack([nodes, Y.mean(axis=0), F * mass, X.mean(axis=0)]))
        sd = Y.std(axis=0)
        live = sd > 1e-9
        zmax = float(np.max(np.abs(Y.mean(axis=0)[live] - F[live] * mass)
                            * np.sqrt(config.paths) / sd[live]))
        reports.append(TestReport("SVE mean law (all nodes)", zmax, zmax <= 3.0,
                                  tolerance=3.0, sample_sizes=(config.paths,)))
        derived["kernel_pair"] = kspec.provenance
    return reports, derived


def _run_regime_compare(config: ExperimentConfig, out: Path, threads: int):
    fam = config.build_family()
    if not (isinstance(fam.base, ExponentialKernel) and fam.base.dimension == 1):
        raise ValueError("regime-compare needs a univariate exponential base kernel")
    base_rate = float(fam.base.beta[0, 0])
    # light-tail limit of the family: Phi(z) = 1 + z / (base_rate * c)
    tri = BernsteinTriplet.affine(1.0, 1.0 / (base_rate * fam.c))
    cir = cir_correspondence(tri, fam.a)
    marg_grid = Grid(config.grid.T, config.grid.h)
    rows, distances, reports = [], [], []
    for n in config.n_list:
        kern = fam.kernel_at(n)
        mu = float(fam.mu(n)[0])
        beta = fam.beta(n)
        alpha, rate = float(kern.alpha[0, 0]), float(kern.beta[0, 0])
        horizon = config.grid.T

        def lam_T(path):
            lags = horizon - path.times
            return mu + alpha * float(np.exp(-rate * lags).sum())

        vals = ensemble(HawkesParams(np.array([mu]), kern, horizon),
                        substream_seed(config.seed, "hawkes", n), config.paths,
                        method="cluster", extract=lam_T, threads=threads)
        sample = beta**2 * np.asarray(vals)
        marginal = ensemble_cir(cir, marg_grid,
                                substream_seed(config.seed, "cir", n), config.paths)[:, -1]
        rep = ks_distance(sample, marginal,
                          description=f"KS rescaled intensity vs CIR marginal, n={n}")
        distances.append(rep.statistic)
        reports.append(rep)
        rows.append([float(n), beta, rep.statistic, rep.p_value])
    _float_csv(out / "compare.csv", ["n", "beta_n", "ks_statistic", "ks_p_value"], rows)
    trend_ok = all(a > b for a, b in zip(distances, distances[1:]))
    reports.append(TestReport("KS distance decreasing along n_list",
                              float(distances[-1]), trend_ok,
                              details={"distances": distances}))
    derived = {"cir_correspondence": {"b": cir.b, "a": cir.a, "sigma": cir.sigma}}
    return reports, derived


def _run_acceptance(config: ExperimentConfig, out: Path, threads: int):
    from .acceptance import run_all

    reports = run_all(config.seed)
    with open(out / "acceptance_summary.txt", "w") as fh:
        for rep in reports:
            fh.write(f"{'PASS' if rep.passed else 'FAIL'}  {rep.description}\n")
    return reports, {}


_RUNNERS = {
    "resolvent": _run_resolvent,
    "hawkes": _run_hawkes,
    "meanfield": _run_meanfield,
    "limit": _run_limit,
    "regime-compare": _run_regime_compare,
    "acceptance-suite": _run_acceptance,
}


def run_experiment(config: ExperimentConfig, out_dir=None, threads: int = 1) -> RunResult:
    """Execute a validated config and write artifacts plus a hashed manifest.

    The manifest contains the config and its hash, the seed, package and
    library versions, derived parameters, every report, and a content hash of
    every artifact file.  It contains nothing volatile, so identical
    ``(config, seed)`` runs are byte-identical regardless of ``threads``.
    """
    out = Path(out_dir if out_dir is not None else
               config.out or f"runs/{config.kind}-{config.config_hash()[:8]}")
    out.mkdir(parents=True, exist_ok=True)
    reports, derived = _RUNNERS[config.kind](config, out, threads)
    _write_reports(reports, out / "reports.jsonl")

    artifacts = []
    for path in sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        artifacts.append({"path": str(path.relative_to(out)),
                          "sha256": digest, "bytes": path.stat().st_size})
    manifest = {
        "schema_version": 1,
        "kind": config.kind,
        "seed": config.seed,
        "config": config.raw,
        "config_sha256": config.config_hash(),
        "package_version": __version__,
        "library_versions": {"numpy": np.__version__,
                             "scipy": __import__("scipy").__version__},
        "derived_parameters": derived,
        "reports": [json.loads(rep.to_json_line()) for rep in reports],
        "artifacts": artifacts,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    passed = all(rep.passed for rep in reports)
    return RunResult(out, manifest, reports, passed)


# ---------------------------------------------------------------------------
# command line


_SUBCOMMAND_KIND = {
    "simulate": "hawkes",
    "resolvent": "resolvent",
    "meanfield": "meanfield",
    "limit": "limit",
    "compare": "regime-compare",
    "accept": "acceptance-suite",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nuhawkes",
        description="simulate nearly unstable self-exciting systems and check their limits",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in _SUBCOMMAND_KIND.items():
        p = sub.add_parser(name, help=f"run a {kind} experiment")
        p.add_argument("--config", type=Path, default=None,
                       help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    kind = _SUBCOMMAND_KIND[args.command]
    try:
        if args.config is not None:
            config = validate_config(args.config.read_text())
            if config.kind != kind:
                print(f"error: config kind {config.kind!r} does not match "
                      f"subcommand {args.command!r}", file=sys.stderr)
                return 2
        elif args.command == "accept":
            from .acceptance import DEFAULT_SEED

            config = validate_config(json.dumps(
                {"kind": "acceptance-suite", "seed": DEFAULT_SEED}))
        else:
            print("error: --config is required for this subcommand", file=sys.stderr)
            return 2
        if args.seed is not None:
            raw = dict(config.raw)
            raw["seed"] = args.seed
            config = validate_config(json.dumps(raw))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2

    try:
        result = run_experiment(config, out_dir=args.out, threads=args.threads)
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as exc:
        print(f"simulation refused: {exc}", file=sys.stderr)
        return 4

    for rep in result.reports:
        print(f"{'PASS' if rep.passed else 'FAIL'}  {rep.description}")
    print(f"artifacts written to {result.out_dir}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
