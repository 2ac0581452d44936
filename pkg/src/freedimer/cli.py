"""
Command line entry point: ``freedimer <command> [options]``.

Every command validates its options before computing.  Tables go to
stdout or to ``--out``; a file output gets a manifest JSON next to it
(``<out>.manifest.json``) recording versions, the config hash and the
tolerances in force.  Exit status: 0 on success, 2 on invalid input, 1
when a module reports a numerical breakdown.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, _accel

FORMATS = ("csv", "json")

BREAKDOWN_ERRORS: tuple = (ArithmeticError, np.linalg.LinAlgError)


def _breakdown_errors() -> tuple:
    from .kasteleyn import KasteleynError, NoDimerCover
    from .walks import DivergentGreen, NeedLargerN
    return BREAKDOWN_ERRORS + (KasteleynError, NoDimerCover, NeedLargerN, DivergentGreen)


# --------------------------------------------------------------------------
# option helpers
# --------------------------------------------------------------------------

def _positive(ctx, param, value):
    if value is not None and not (math.isfinite(value) and value > 0):
        raise click.BadParameter(f"must be a positive finite number, got {value}")
    return value


def _delta(ctx, param, value):
    vals = value if isinstance(value, tuple) else (value,)
    for v in vals:
        if v is not None and not (math.isfinite(v) and 0 < v <= 1):
            raise click.BadParameter(f"mesh size must lie in (0, 1], got {v}")
    return value


def _domain(ctx, param, value):
    from .lattice import DomainError, parse_domain_spec
    if value is None:
        return None
    ctx.meta.setdefault("raw", {})[param.name] = value
    try:
        return parse_domain_spec(value)
    except DomainError as exc:
        detail = "; ".join(exc.problems) if getattr(exc, "problems", None) else ""
        raise click.BadParameter(f"{exc}{': ' + detail if detail else ''}")


def _raw(ctx, name: str):
    """Option value as typed, before callbacks parsed it."""
    return ctx.meta.get("raw", {}).get(name)


def _complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise click.BadParameter(f"not a complex number: {text!r}") from None


def _threads(value: int | None) -> int:
    env = os.environ.get("FREEDIMER_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise click.UsageError(f"FREEDIMER_THREADS must be an integer, got {env!r}")
    value = value or os.cpu_count() or 1
    if value < 1:
        raise click.UsageError("thread count must be at least 1")
    return value


domain_option = click.option("--domain", "domain", required=True, callback=_domain,
                             help="rect:WxH or a JSON domain file.")
z_option = click.option("--z", "z", type=float, default=1.0, show_default=True,
                        callback=_positive, help="Boundary monomer weight.")
out_option = click.option("--out", "out", default="csv", show_default=True,
                          help="'csv' or 'json' to print, or a file path (.json selects JSON).")
threads_option = click.option("--threads", type=int, default=None,
                              help="Worker threads (FREEDIMER_THREADS overrides).")


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _versions() -> dict:
    import scipy
    out = {"freedimer": __version__, "python": platform.python_version(),
           "numpy": np.__version__, "scipy": scipy.__version__}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


def _plain(value):
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if hasattr(value, "xy") or hasattr(value, "vertices"):
        return repr(value)
    return value


def _config_hash(config: dict) -> str:
    blob = json.dumps(_plain(config), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def emit(ctx: click.Context, header: list, rows: list, config: dict, tolerances: dict | None = None,
         extra: dict | None = None) -> None:
    """Write a table as CSV or JSON, plus a manifest when writing a file."""
    out = ctx.obj["out"]
    fmt = out if out in FORMATS else ("json" if str(out).endswith(".json") else "csv")
    rows = [[_plain(v) for v in r] for r in rows]
    if fmt == "json":
        text = json.dumps({"columns": header, "rows": rows, **_plain(extra or {})}, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        text = buf.getvalue()
    if out in FORMATS:
        click.echo(text, nl=False)
        return
    path = Path(out)
    path.write_text(text)
    manifest = {
        "command": ctx.info_name,
        "config": _plain(config),
        "config_hash": _config_hash(config),
        "versions": _versions(),
        "backend": "numba" if _accel.use_numba() else "python",
        "tolerances": tolerances or {},
        "output": str(path),
        "format": fmt,
        "rows": len(rows),
    }
    if extra:
        manifest["summary"] = _plain(extra)
    Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    click.echo(f"wrote {path} ({len(rows)} rows)", err=True)


class Cli(click.Group):
    """Group that maps module breakdown errors to exit status 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except _breakdown_errors() as exc:
            click.echo(f"numerical breakdown: {type(exc).__name__}: {exc}", err=True)
            ctx.exit(1)
        except (ValueError, KeyError) as exc:
            click.echo(f"error: invalid input: {exc}", err=True)
            ctx.exit(2)


@click.group(cls=Cli, context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="freedimer")
def main():
    """Exact computations and Monte Carlo for the free boundary dimer model."""


def _start(ctx: click.Context, out: str, threads: int | None = None) -> None:
    ctx.ensure_object(dict)
    ctx.obj["out"] = out
    ctx.obj["threads"] = _threads(threads)


def _augment(domain, z, n_side, mode):
    from .lattice import augment
    return augment(domain, z, n_side=n_side, corner_weight_mode=mode)


mode_option = click.option("--mode", type=click.Choice(["explicit", "finite"]), default=None,
                           help="Corner weights: explicit z' (default when n-side is 0) or finite-N.")
nside_option = click.option("--n-side", type=click.IntRange(min=0), default=0, show_default=True,
                            help="Extra top vertices per side (finite-N graph).")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

@main.command()
@domain_option
@z_option
@nside_option
@mode_option
@click.option("--tol", type=float, default=0.0, show_default=True,
              help="Drop matrix entries with modulus at most this.")
@out_option
@click.pass_context
def build(ctx, domain, z, n_side, mode, tol, out):
    """Build the augmented graph and write its Kasteleyn matrix entries."""
    from .kasteleyn import kasteleyn_matrix
    _start(ctx, out)
    aug = _augment(domain, z, n_side, mode)
    k = kasteleyn_matrix(aug, sparse=True).entries.tocoo()
    verts = aug.vertices
    rows = [[verts[i].x, verts[i].y, verts[j].x, verts[j].y, v.real, v.imag]
            for i, j, v in zip(k.row, k.col, k.data) if abs(v) > tol]
    rows.sort(key=lambda r: (r[1], r[0], r[3], r[2]))
    summary = {"vertices": len(aug), "edges": len(aug.edges), "apexes": len(aug.apexes),
               "triangles": aug.k, "mode": aug.corner_weight_mode}
    click.echo(json.dumps(summary), err=True)
    emit(ctx, ["u_x", "u_y", "v_x", "v_y", "re", "im"], rows,
         {"domain": _raw(ctx, "domain"), "z": z, "n_side": n_side, "mode": mode},
         extra=summary)


@main.command()
@domain_option
@z_option
@nside_option
@mode_option
@out_option
@click.pass_context
def stats(ctx, domain, z, n_side, mode, out):
    """Partition function and single-edge probabilities."""
    from .kasteleyn import edge_probabilities, partition_function
    from .lattice import LEG
    _start(ctx, out)
    aug = _augment(domain, z, n_side, mode)
    zval = partition_function(aug)
    probs = edge_probabilities(aug)
    verts = aug.vertices
    rows = []
    for e, (a, b) in enumerate(aug.edges):
        kind = {0: "lattice", 1: "side", 2: "apex_row", 3: "leg"}.get(int(aug.kinds[e]), str(aug.kinds[e]))
        rows.append([verts[a].x, verts[a].y, verts[b].x, verts[b].y, kind,
                     float(aug.weights[e]), float(probs[e])])
    mon = sum(float(probs[e]) for e in range(len(aug.edges)) if aug.kinds[e] == LEG)
    summary = {"partition_function": zval, "expected_monomers": mon, "vertices": len(aug)}
    click.echo(json.dumps(summary), err=True)
    emit(ctx, ["u_x", "u_y", "v_x", "v_y", "kind", "weight", "probability"], rows,
         {"domain": _raw(ctx, "domain"), "z": z, "n_side": n_side, "mode": mode},
         extra=summary)


@main.command()
@domain_option
@z_option
@click.option("--method", type=click.Choice(["exact", "mcmc"]), default="exact", show_default=True)
@click.option("--samples", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--thin", type=click.IntRange(min=1), default=100, show_default=True,
              help="Steps between recorded MCMC states.")
@click.option("--seed", type=click.IntRange(min=0, max=2 ** 64 - 1), default=0, show_default=True)
@click.option("--stream", type=click.IntRange(min=0), default=0, show_default=True)
@out_option
@click.pass_context
def sample(ctx, domain, z, method, samples, thin, seed, stream, out):
    """Draw monomer-dimer covers (exact sequential sampler or Metropolis chain)."""
    from . import mc
    _start(ctx, out)
    aug = _augment(domain, z, 0, None)
    rng = mc.RngStream(seed, stream)
    g = mc.MdGraph.of(aug)
    if method == "exact":
        mates = mc.sample_exact_batch(aug, samples, rng)
    else:
        mates = mc.run_mcmc(aug, samples * thin, rng, thin=thin).samples
    verts = aug.vertices
    rows = []
    for s, mate in enumerate(mates):
        mon = [verts[i] for i in g.row0 if mate[i] == -1]
        dim = [(verts[i], verts[j]) for i in g.md for j in [int(mate[i])] if j > i]
        rows.append([s, len(mon), " ".join(f"{m.x},{m.y}" for m in mon),
                     " ".join(f"{a.x},{a.y}-{b.x},{b.y}" for a, b in dim)])
    emit(ctx, ["sample", "monomers", "monomer_sites", "dimers"], rows,
         {"domain": _raw(ctx, "domain"), "z": z, "method": method, "samples": samples,
          "thin": thin, "seed": seed, "stream": stream})


def _load_pairs(path: str) -> list:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read pairs file: {exc}", param_hint="--pairs")
    pairs = data["pairs"] if isinstance(data, dict) else data
    out = []
    try:
        for a, b in pairs:
            out.append(tuple(complex(*p) if isinstance(p, list) else _complex(str(p)) for p in (a, b)))
    except (TypeError, ValueError):
        raise click.BadParameter("pairs must be a list of [[x, y], [x, y]] pairs",
                                 param_hint="--pairs")
    if not out:
        raise click.BadParameter("no pairs given", param_hint="--pairs")
    return out


@main.command()
@click.option("--pairs", "pairs_path", required=True, help="JSON list of [[x, y], [x, y]] point pairs.")
@click.option("--delta", type=float, multiple=True, required=True, callback=_delta,
              help="Mesh size (repeatable).")
@click.option("--z", "zs", type=float, multiple=True, default=(1.0,), show_default=True,
              help="Monomer weight (repeatable).")
@click.option("--margin", type=float, default=8.0, show_default=True, callback=_positive,
              help="Box margin in configuration diameters.")
@click.option("--rho", type=float, default=0.5, show_default=True, callback=_positive)
@out_option
@click.pass_context
def heights(ctx, pairs_path, delta, zs, margin, rho, out):
    """Exact height moments on box truncations against the free-field prediction."""
    from .fields import half_plane_moment
    for z in zs:
        _positive(ctx, None, z)
    _start(ctx, out)
    pairs = _load_pairs(pairs_path)
    rows = []
    for z in zs:
        for d in delta:
            res = half_plane_moment(pairs, d, z=z, rho=rho, margin=margin)
            rows.append([res.k, res.measured, res.predicted, res.rel_err, d, z, res.radius])
    emit(ctx, ["k", "measured", "predicted", "rel_err", "delta", "z", "radius"], rows,
         {"pairs": [[p.real, p.imag] for pr in pairs for p in pr], "delta": list(delta),
          "z": list(zs), "margin": margin, "rho": rho},
         tolerances={"rel_err": 0.05})


@main.command()
@click.option("--x", "x", required=True, help="Macroscopic point, e.g. 0.5+1i.")
@click.option("--y", "y", required=True, help="Macroscopic point.")
@click.option("--step", type=click.Choice(["1", "-1", "i", "-i"]), default="1", show_default=True)
@click.option("--delta", type=float, multiple=True, default=(1 / 16, 1 / 32), callback=_delta,
              show_default=True)
@click.option("--walk", type=click.Choice(["even", "odd"]), default="even", show_default=True)
@click.option("--same-class/--different-class", default=True, show_default=True)
@z_option
@threads_option
@out_option
@click.pass_context
def pk(ctx, x, y, step, delta, walk, same_class, z, threads, out):
    """Potential-kernel increment a(x', y) - a(x, y) against its scaling form."""
    from .potential import pk_scaling_check
    _start(ctx, out, threads)
    xs, ys = _complex(x), _complex(y)
    st = {"1": 1, "-1": -1, "i": 1j, "-i": -1j}[step]
    rep = pk_scaling_check(xs, ys, step=st, same_class=same_class, walk=walk,
                           deltas=tuple(sorted(delta, reverse=True)), z=z,
                           workers=ctx.obj["threads"])
    ratios = [math.nan] + rep.ratios
    rows = [[r.delta, r.measured, r.predicted, r.abs_err, q] for r, q in zip(rep.rows, ratios)]
    emit(ctx, ["delta", "measured", "predicted", "abs_err", "ratio"], rows,
         {"x": [xs.real, xs.imag], "y": [ys.real, ys.imag], "step": step, "delta": list(delta),
          "walk": walk, "same_class": same_class, "z": z},
         tolerances={"ratio": 0.6})


@main.command()
@z_option
@click.option("--kmax", type=click.IntRange(min=0), default=None,
              help="Largest offset (default: |gamma|^k < 1e-14).")
@click.option("--domain", "domain", default=None, callback=_domain,
              help="Also record q^N convergence on this domain.")
@click.option("--n", "ns", type=click.IntRange(min=1), multiple=True, default=(30, 60, 120),
              show_default=True)
@out_option
@click.pass_context
def walks(ctx, z, kmax, domain, ns, out):
    """Boundary jump law q_k of the effective walk (and q^N convergence)."""
    from .walks import aux_params, effective_jump_weights, qn_convergence, total_jump_mass
    _start(ctx, out)
    pr = aux_params(z)
    q = effective_jump_weights(z, kmax)
    rows = [["q", k, float(v)] for k, v in enumerate(q)]
    if domain is not None:
        rows += [["qN_error", n, e] for n, e in zip(ns, qn_convergence(domain, z, ns))]
    summary = {"gamma": pr.gamma, "p": pr.p, "mass": total_jump_mass(q),
               "parity_change": 0.5 * float(q[1::2].sum())}
    click.echo(json.dumps(_plain(summary)), err=True)
    emit(ctx, ["series", "k", "value"], rows,
         {"z": z, "kmax": kmax, "domain": _raw(ctx, "domain"), "n": list(ns)},
         extra=summary)


@main.command(name="mc")
@click.option("--experiment", type=click.Choice(["sampler", "walk", "coloured", "coupling"]),
              required=True)
@click.option("--seed", type=click.IntRange(min=0, max=2 ** 64 - 1), default=0, show_default=True)
@click.option("--trials", type=click.IntRange(min=1), default=10000, show_default=True)
@click.option("--domain", "domain", default="rect:3x3", callback=_domain, show_default=True,
              help="Domain for the sampler experiment.")
@z_option
@click.option("--p", "p", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=None,
              help="Colour flip probability (default: parity change at z).")
@click.option("--t", "ts", type=click.IntRange(min=2), multiple=True,
              default=tuple(2 ** k for k in range(8, 15)), show_default=True,
              help="Coupling horizons (repeatable).")
@out_option
@click.pass_context
def mc_command(ctx, experiment, seed, trials, domain, z, p, ts, out):
    """Monte Carlo experiments: sampler check, jump law, coloured walk, coupling."""
    from . import mc
    _start(ctx, out)
    rng = mc.RngStream(seed)
    config = {"experiment": experiment, "seed": seed, "trials": trials, "z": z}
    if experiment == "sampler":
        aug = _augment(domain, z, 0, None)
        law = mc.cover_law(aug)
        g = mc.MdGraph.of(aug)
        ex = mc.sample_exact_batch(aug, trials, rng.substream(0))
        ch = mc.run_mcmc(aug, trials * 10, rng.substream(1), thin=10).samples
        rows = [["exact", *mc.goodness_of_fit(g.keys(ex), law)],
                ["mcmc", *mc.goodness_of_fit(g.keys(ch), law)]]
        config["domain"] = _raw(ctx, "domain")
        emit(ctx, ["sampler", "chi2", "p_value"], rows, config, tolerances={"p_value": 1e-3})
    elif experiment == "walk":
        law = mc.jump_law(z)
        jumps = mc.sample_jumps(law, trials, rng)
        rows = []
        for k in range(0, min(int(law.offsets.max()), 12) + 1):
            obs = float(np.mean(jumps == k))
            exp = float(law.probs[law.offsets == k][0])
            rows.append([k, obs, exp, math.sqrt(exp * (1 - exp) / trials)])
        emit(ctx, ["k", "observed", "q_k", "sigma"], rows, config,
             extra={"parity_change": law.parity_change})
    elif experiment == "coloured":
        pp = p if p is not None else mc.parity_change_probability(z)
        rep = mc.coloured_walk_experiment(pp, (0, 2), 1, trials, rng)
        rows = [list(r) for r in rep.table()]
        config["p"] = pp
        emit(ctx, ["visits", "count", "bias", "predicted_bias"], rows, config,
             tolerances={"base": 0.05},
             extra={"lambda": rep.lam, "fitted_base": rep.fitted_base,
                    "fitted_stderr": rep.fitted_stderr, "truncated": rep.truncated})
    else:
        rep = mc.coupling_experiment((0, 1024), (0, 1026), list(ts), trials, rng, z=z)
        rows = [[r.t, r.r, r.trials, r.failures, r.probability, r.ci_low, r.ci_high,
                 r.real_line_failures] for r in rep.rows]
        config["t"] = list(ts)
        emit(ctx, ["t", "r", "trials", "failures", "p_fail", "ci_low", "ci_high", "real_line"],
             rows, config, tolerances={"slope": [-0.65, -0.35]},
             extra={"slope": rep.slope, "slope_stderr": rep.slope_stderr,
                    "breaches": rep.breaches, "divergences": rep.divergences})


@main.command()
@domain_option
@z_option
@click.option("--n-side", type=click.IntRange(min=1), default=None,
              help="Side size for the Schur check (default: adaptive).")
@out_option
@click.pass_context
def verify(ctx, domain, z, n_side, out):
    """Run the Schur, Kasteleyn-face and random-walk suites; print a pass/fail table.

    The Schur and random-walk checks run on the finite-N graph at the
    adaptive side size (or ``--n-side``).
    """
    from .kasteleyn import kasteleyn_face_violations, orient
    from .walks import adaptive_n, schur_identity_residual, verify_rw_representation
    _start(ctx, out)
    aug = _augment(domain, z, 0, None)
    if n_side is None:
        n_side, fin = adaptive_n(domain, z)
    else:
        fin = _augment(domain, z, n_side, None)
    checks = []
    bad_faces = len(kasteleyn_face_violations(aug, orient(aug, check=False)))
    checks.append(("kasteleyn_faces", float(bad_faces), 0.0))
    checks.append(("schur_identity", schur_identity_residual(fin), 1e-10))
    rep = verify_rw_representation(fin)
    checks.append(("rw_odd_block", rep.odd_block, 1e-8))
    checks.append(("rw_even_block", rep.even_block, 1e-8))
    checks.append(("rw_mixed_parity_full_inverse", rep.mixed, 1e-12))
    checks.append(("rw_odd_full_inverse", rep.odd, 1e-8))
    checks.append(("rw_even_full_inverse", rep.even, 1e-8))
    rows = [[name, val, tol, "pass" if val <= tol else "fail"] for name, val, tol in checks]
    if ctx.obj["out"] in FORMATS and ctx.obj["out"] == "csv":
        width = max(len(r[0]) for r in rows)
        for r in rows:
            click.echo(f"{r[0]:<{width}}  {r[1]:.3e}  (tol {r[2]:.0e})  {r[3]}", err=True)
    emit(ctx, ["check", "value", "tolerance", "status"], rows,
         {"domain": _raw(ctx, "domain"), "z": z, "n_side": n_side},
         tolerances={r[0]: r[2] for r in rows}, extra={"defects": rep.defects})


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
