"""Command-line front end and the plain-text file formats.

Formats (line oriented, ``#`` comments, ``key = value`` pairs, ``[section]``
headers, lists in brackets):

array file      virtual_dims, spacing, then either ``full_grid = true`` or a
                ``[positions]`` section with one integer triple per line.
manifest        top-level keys (array, solver, virtual_dims, trials, seed,
                out) plus ``[sweep]`` (axis, values), ``[scene]`` (K, snr_db,
                tau) and ``[solver_params]`` overrides.
measurement     one complex entry per line as ``re,im``.
generator file  dims plus a ``[generator]`` section of ``a b c re im`` rows
                (missing conjugate lags are filled by symmetry).

Exit codes: 0 ok, 2 input error, 3 non-convergence, 4 hypothesis violation.
All indices in reports are 0-based.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import evalkit, geometry, solvers
from .errors import (
    GridlessError,
    HypothesisViolation,
    InputError,
    NotConverged,
    ParseError,
)
from .geometry import (
    ArrayDeployment,
    canonicalize,
    embed_in_virtual,
    find_embedded_uniform,
    invert_permutation,
    min_antennas_probabilistic,
    permute_triples,
    resolvable_region,
)
from .mlt import MLTMatrix
from .solvers import SolverParams
from .vandermonde import decompose

__all__ = [
    "ExperimentManifest",
    "parse_array_file",
    "parse_manifest",
    "parse_measurement_file",
    "parse_generator_file",
    "cmd_analyze",
    "cmd_decompose",
    "cmd_recover",
    "cmd_mc",
    "cmd_tau_sweep",
    "main",
]


# ---------------------------------------------------------------------------
# parsing


def _parse_scalar(text: str):
    t = text.strip()
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def _parse_value(text: str, path, lineno):
    t = text.strip()
    if t.startswith("["):
        if not t.endswith("]"):
            raise ParseError("unterminated list", path, lineno)
        inner = t[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(p) for p in inner.split(",")]
    return _parse_scalar(t)


def _read_document(path):
    """key = value pairs grouped by section; bare lines kept as row lists."""
    sections = {None: {}}
    rows = {}
    current = None
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(str(exc), path) from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, {})
            rows.setdefault(current, [])
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            sections.setdefault(current, {})[key.strip().lower()] = _parse_value(
                value, path, lineno
            )
        else:
            if current is None:
                raise ParseError(f"unexpected bare line {line!r}", path, lineno)
            rows.setdefault(current, []).append((lineno, line))
    return sections, rows


def parse_array_file(path) -> ArrayDeployment:
    sections, rows = _read_document(path)
    top = sections[None]
    if "virtual_dims" not in top:
        raise ParseError("missing virtual_dims", path)
    dims = top["virtual_dims"]
    spacing = top.get("spacing", [0.5, 0.5, 0.5])
    try:
        if top.get("full_grid", False):
            return ArrayDeployment.uniform(dims, tuple(spacing))
        if "positions" not in rows or not rows["positions"]:
            raise ParseError("need full_grid = true or a [positions] section", path)
        positions = []
        for lineno, line in rows["positions"]:
            parts = line.replace(",", " ").split()
            if len(parts) != 3:
                raise ParseError("positions need three integers", path, lineno)
            try:
                positions.append([int(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"bad integer: {exc}", path, lineno) from exc
        return ArrayDeployment.from_positions(positions, tuple(spacing), dims)
    except InputError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), path) from exc


def parse_measurement_file(path) -> np.ndarray:
    values = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(str(exc), path) from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError("expected 're,im'", path, lineno)
        try:
            values.append(complex(float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", path, lineno) from exc
    if not values:
        raise ParseError("empty measurement file", path)
    return np.array(values)


def parse_generator_file(path) -> MLTMatrix:
    sections, rows = _read_document(path)
    top = sections[None]
    if "dims" not in top:
        raise ParseError("missing dims", path)
    dims = tuple(int(d) for d in top["dims"])
    shape = tuple(2 * d - 1 for d in dims)
    gen = np.full(shape, np.nan + 0j)
    for lineno, line in rows.get("generator", []):
        parts = line.replace(",", " ").split()
        if len(parts) != 5:
            raise ParseError("generator rows need 'a b c re im'", path, lineno)
        try:
            a, b, c = (int(p) for p in parts[:3])
            val = complex(float(parts[3]), float(parts[4]))
        except ValueError as exc:
            raise ParseError(f"bad generator row: {exc}", path, lineno) from exc
        idx = (a + dims[0] - 1, b + dims[1] - 1, c + dims[2] - 1)
        if any(i < 0 or i >= s for i, s in zip(idx, shape)):
            raise ParseError(f"lag ({a},{b},{c}) out of range", path, lineno)
        gen[idx] = val
    # fill omitted conjugate lags, then demand completeness
    flipped = np.flip(gen).conj()
    hole = np.isnan(gen)
    gen[hole] = flipped[hole]
    if np.isnan(gen).any():
        raise ParseError("generator table is incomplete", path)
    try:
        return MLTMatrix(dims, gen)
    except InputError as exc:
        raise ParseError(str(exc), path) from exc


@dataclass(frozen=True)
class ExperimentManifest:
    """Parsed experiment description."""

    array_path: Path
    array: ArrayDeployment
    solver: str
    virtual_dims: tuple[int, int, int]
    trials: int
    seed: int
    axis: str | None
    values: tuple
    k: int | None
    snr_db: float | None
    tau: float | None
    params: SolverParams
    out: Path | None


def parse_manifest(path) -> ExperimentManifest:
    sections, _ = _read_document(path)
    top = sections[None]
    if "array" not in top:
        raise ParseError("missing array path", path)
    array_path = Path(str(top["array"]))
    if not array_path.is_absolute():
        array_path = Path(path).parent / array_path
    array = parse_array_file(array_path)
    solver = str(top.get("solver", "l1")).lower()
    if solver not in ("l0", "l1", "l2l1"):
        raise ParseError(f"unknown solver {solver!r}", path)
    vdims = tuple(int(d) for d in top.get("virtual_dims", array.dims))
    trials = int(top.get("trials", 1))
    if trials < 1:
        raise ParseError("trials must be at least 1", path)
    seed = int(top.get("seed", 0))
    out = top.get("out")
    sweep = sections.get("sweep", {})
    axis = sweep.get("axis")
    if axis is not None:
        axis = str(axis)
        if axis not in ("K", "snr_db", "tau"):
            raise ParseError(f"unknown sweep axis {axis!r}", path)
    values = tuple(sweep.get("values", ()))
    scene = sections.get("scene", {})
    k = scene.get("k")
    snr_db = scene.get("snr_db")
    tau = scene.get("tau")
    overrides = sections.get("solver_params", {})
    valid = {f.name for f in fields(SolverParams)}
    unknown = set(overrides) - valid
    if unknown:
        raise ParseError(f"unknown solver_params {sorted(unknown)}", path)
    try:
        params = SolverParams(**overrides)
    except InputError as exc:
        raise ParseError(str(exc), path) from exc
    return ExperimentManifest(
        array_path=array_path,
        array=array,
        solver=solver,
        virtual_dims=vdims,
        trials=trials,
        seed=seed,
        axis=axis,
        values=values,
        k=None if k is None else int(k),
        snr_db=None if snr_db is None else float(snr_db),
        tau=None if tau is None else float(tau),
        params=params,
        out=None if out is None else Path(str(out)),
    )


# ---------------------------------------------------------------------------
# canonical problem assembly


def _canonical_sensing(array: ArrayDeployment, virtual_dims):
    """Embed in the canonicalized virtual grid; returns (sensing, perm)."""
    cdims, perm = canonicalize(virtual_dims)
    pos = permute_triples(array.positions, perm)
    spacing = tuple(array.spacing[p] for p in perm)
    dims = tuple(int(pos[:, a].max()) + 1 for a in range(3))
    carray = ArrayDeployment(dims, pos, spacing)
    return embed_in_virtual(carray, cdims), perm


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(array_path, eps: float = 0.01, out=None, stream=None):
    stream = stream or sys.stdout
    array = parse_array_file(array_path)
    A = embed_in_virtual(array, array.dims)
    report = find_embedded_uniform(A)
    d = array.d
    region = resolvable_region(report, max(d, 1))
    lines = [
        f"array: {array_path}",
        f"dims = {list(array.dims)}",
        f"N = {array.n_antennas}",
        f"N_virtual = {A.n_virtual}",
        f"d = {d}",
        f"embedded sub_dims = {list(report.sub_dims)}",
        f"embedded strides = {list(report.strides)}",
        f"embedded offsets = {list(report.offsets)}",
        f"I_c = {report.indices.tolist()}",
        f"S_c={report.s_c}, N_c={report.n_c}, "
        f"K_cor={region['k_corollary']}, K_conj={region['k_conjecture']}",
    ]
    counts = []
    for k in range(1, max(region["k_conjecture"], 1) + 1):
        counts.append((k, min_antennas_probabilistic(k, eps)))
    lines.append(
        "theorem-2 antenna counts (eps=%g): " % eps
        + ", ".join(f"K={k}: N>={n}" for k, n in counts)
    )
    text = "\n".join(lines) + "\n"
    stream.write(text)
    if out is not None:
        csv = ["key,value"]
        csv.append(f"N,{array.n_antennas}")
        csv.append(f"N_virtual,{A.n_virtual}")
        csv.append(f"d,{d}")
        csv.append(f"S_c,{report.s_c}")
        csv.append(f"N_c,{report.n_c}")
        csv.append(f"K_cor,{region['k_corollary']}")
        csv.append(f"K_conj,{region['k_conjecture']}")
        for k, n in counts:
            csv.append(f"min_antennas_K{k},{n}")
        Path(out).write_text("\n".join(csv) + "\n")
    return 0


def _emit_decomposition(dec, dims, perm, out, stream):
    "CSV rows in the original (file) axis order."
    triples = dec.freqs.triples(dims)
    if perm is not None:
        triples = permute_triples(triples, invert_permutation(perm))
    lines = ["k,fx,fy,fz,power,amplitude_re,amplitude_im"]
    amps = dec.freqs.amplitudes
    for i in range(dec.rank_used):
        amp = amps[i] if amps is not None else complex(math.nan, math.nan)
        t = triples[i]
        lines.append(
            ",".join(
                [
                    str(i),
                    _fmt(t[0]),
                    _fmt(t[1]),
                    _fmt(t[2]),
                    _fmt(dec.powers[i]),
                    _fmt(amp.real),
                    _fmt(amp.imag),
                ]
            )
        )
    text = "\n".join(lines) + "\n"
    if out is not None:
        Path(out).write_text(text)
    else:
        stream.write(text)


def cmd_decompose(generator_path, rank_tol=1e-8, seed=0, out=None, stream=None):
    stream = stream or sys.stdout
    M = parse_generator_file(generator_path)
    if not M.canonical:
        raise InputError(f"generator dims {M.dims} are not canonical; reorder axes")
    dec = decompose(M, rank_tol=rank_tol, rng_seed=seed)
    _emit_decomposition(dec, M.dims, None, out, stream)
    return 0


def cmd_recover(manifest_path, measurement_path, seed=None, out=None, stream=None):
    stream = stream or sys.stdout
    man = parse_manifest(manifest_path)
    y = parse_measurement_file(measurement_path)
    if y.size != man.array.n_antennas:
        raise InputError(
            f"measurement has {y.size} entries, array has {man.array.n_antennas}"
        )
    A, perm = _canonical_sensing(man.array, man.virtual_dims)
    dims = A.virtual_dims
    params = man.params if seed is None else replace(man.params, rng_seed=seed)
    out = out or man.out
    if float(np.linalg.norm(y)) == 0.0:
        text = "k,fx,fy,fz,power,amplitude_re,amplitude_im\n"
        (Path(out).write_text(text) if out is not None else stream.write(text))
        return 0
    exit_code = 0
    if man.solver == "l1":
        sol = solvers.solve_l1_an(y, A, dims, params)
    elif man.solver == "l2l1":
        tau = man.tau
        if tau is None:
            if man.snr_db is None:
                raise InputError("l2l1 recovery needs tau or snr_db in [scene]")
            sigma = evalkit.noise_std_for_snr_db(man.snr_db, A.n_virtual)
            tau = solvers.tau_bounds(math.sqrt(A.n_virtual) * sigma, A.n)[1]
        sol = solvers.solve_l2_l1_an(y, A, dims, tau, params)
    else:
        k_max = man.k if man.k is not None else max(dims) - 1
        try:
            sol = solvers.solve_l0_rank_min(y, A, dims, params, k_max)
        except NotConverged as exc:
            if exc.solution is None:
                raise
            sol, exit_code = exc.solution, 3
    if not sol.converged:
        exit_code = 3
    rank = man.k
    if man.solver == "l0":
        rank = int(sol.scalar)
    dec = solvers.extract_frequencies(sol, params.rank_tol, params.rng_seed, rank=rank)
    _emit_decomposition(dec, dims, perm, out, stream)
    return exit_code


def _manifest_config(man: ExperimentManifest, seed, threads, timing):
    A, _ = _canonical_sensing(man.array, man.virtual_dims)
    if man.axis is None or not man.values:
        raise InputError("manifest needs a [sweep] section with axis and values")
    return evalkit.MonteCarloConfig(
        sensing=A,
        solver=man.solver,
        axis=man.axis,
        values=man.values,
        trials=man.trials,
        seed=man.seed if seed is None else seed,
        k=man.k,
        snr_db=man.snr_db,
        params=man.params,
        threads=threads,
        timing=timing,
    )


def cmd_mc(manifest_path, seed=None, threads=1, timing=False, out=None, stream=None):
    stream = stream or sys.stdout
    man = parse_manifest(manifest_path)
    config = _manifest_config(man, seed, threads, timing)
    table = evalkit.run_monte_carlo(config)
    text = table.to_csv()
    target = out or man.out
    (Path(target).write_text(text) if target is not None else stream.write(text))
    return 0


def cmd_tau_sweep(manifest_path, seed=None, threads=1, timing=False, out=None,
                  stream=None):
    stream = stream or sys.stdout
    man = parse_manifest(manifest_path)
    config = _manifest_config(man, seed, threads, timing)
    table, _ = evalkit.sweep_tau(config)
    text = table.to_csv()
    target = out or man.out
    (Path(target).write_text(text) if target is not None else stream.write(text))
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    p = argparse.ArgumentParser(
        prog="gridlessdoa",
        description="Gridless multidimensional frequency estimation on "
        "arbitrary 3D antenna arrays.",
    )
    p.add_argument("--seed", type=int, default=None, help="override manifest seed")
    p.add_argument("--threads", type=int, default=1, help="trial pool size")
    p.add_argument("--out", type=str, default=None, help="output path override")
    p.add_argument(
        "--timing",
        action="store_true",
        help="record wall-clock timings (forfeits byte-identical reruns)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="geometry and resolvable-region report")
    a.add_argument("array_file")
    a.add_argument("--epsilon", type=float, default=0.01)

    d = sub.add_parser("decompose", help="multilevel Vandermonde decomposition")
    d.add_argument("generator_file")
    d.add_argument("--rank-tol", type=float, default=1e-8)

    r = sub.add_parser("recover", help="recover frequencies from one measurement")
    r.add_argument("manifest")
    r.add_argument("measurement")

    m = sub.add_parser("mc", help="Monte Carlo sweep")
    m.add_argument("manifest")

    t = sub.add_parser("tau-sweep", help="tau sweep with closed-form bracket")
    t.add_argument("manifest")
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(args.array_file, eps=args.epsilon, out=args.out)
        if args.command == "decompose":
            return cmd_decompose(
                args.generator_file,
                rank_tol=args.rank_tol,
                seed=args.seed or 0,
                out=args.out,
            )
        if args.command == "recover":
            return cmd_recover(args.manifest, args.measurement, seed=args.seed,
                               out=args.out)
        if args.command == "mc":
            return cmd_mc(args.manifest, seed=args.seed, threads=args.threads,
                          timing=args.timing, out=args.out)
        if args.command == "tau-sweep":
            return cmd_tau_sweep(args.manifest, seed=args.seed, threads=args.threads,
                                 timing=args.timing, out=args.out)
        raise InputError(f"unknown command {args.command!r}")
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except HypothesisViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GridlessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
