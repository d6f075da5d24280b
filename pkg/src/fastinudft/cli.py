"""Command-line entry point ``fastinudft``.

Subcommands ``approx-error``, ``direct-solve``, ``iterative-compare``,
``rank-probe`` and ``error-decomp`` write CSV tables; ``solve`` reads a
problem from files and writes the computed coefficients.

Settings may come from a plain ``key = value`` file (``--config``) whose keys
are the long flag names; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .problem import NudftProblem
from .transforms import set_fft_workers

__all__ = ["main", "build_parser", "read_config", "format_value", "read_vector", "write_vector"]

OUTPUT_DIR_ENV = "FASTINUDFT_OUTPUT_DIR"

log = logging.getLogger("fastinudft")


# ------------------------------------------------------------ value parsing


def _int_token(tok):
    tok = tok.strip()
    for sep in ("^", "**"):
        if sep in tok:
            b, e = tok.split(sep, 1)
            return int(b) ** int(e)
    return int(tok)


def _int_list(text):
    return tuple(_int_token(t) for t in str(text).split(",") if t.strip())


def _float_list(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _str_list(text):
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    v = str(text).strip().lower()
    return None if v in ("", "none", "auto") else int(v)


# flag name -> (config field, parser, help)
_OPTIONS = {
    "case": ("cases", _str_list, "point distribution(s): pp, rp (comma list)"),
    "n-list": ("n_list", _int_list, "comma list of N, e.g. 1024,2^14"),
    "m-ratio": ("M_ratio", int, "M / N (default 4)"),
    "alpha": ("alpha_list", _float_list, "frequency perturbation(s), comma list"),
    "beta": ("beta", float, "sample-point perturbation (default 0.4)"),
    "R": ("R_list", _int_list, "extra columns on each side, comma list"),
    "rho": ("rho_list", _float_list, "accuracy parameter(s), comma list"),
    "precond-rho": ("precond_rho", float, "rho of the PCG preconditioner (default 1e-7)"),
    "k": ("k", _opt_int, "HSS rank of H (default ceil(5 log2 N))"),
    "leaf-size": ("leaf_size", int, "HSS leaf size (default 128)"),
    "seed": ("seed", int, "base random seed (default 0)"),
    "seeds": ("n_seeds", int, "number of seeds to average over"),
    "tol": ("tol", float, "CG/PCG tolerance (default 1e-12)"),
    "maxit": ("maxit", int, "CG/PCG iteration cap (default 500)"),
    "probes": ("n_probes", int, "probes of the Frobenius error estimator (default 30)"),
    "eps": ("eps", float, "relative threshold of the eps-rank (default 1e-7)"),
    "repeats": ("repeats", int, "timing repeats; cells report the median"),
    "full": ("full", _bool, "lift the desk-scale cap N <= 2^16"),
    "threads": ("threads", int, "FFT worker threads (default 1)"),
    "output": ("output", str, "CSV path ('-' for stdout)"),
}


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment.

    Keys are long flag names (``n-list`` or ``n_list``).  Returns a mapping
    from flag name to the raw string value.
    """
    out = {}
    known = {k.replace("-", "_").lower(): k for k in _OPTIONS}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            norm = key.replace("-", "_").lower()
            if norm not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[known[norm]] = value
    return out


def _config_from(args, command) -> ex.ExperimentConfig:
    raw = read_config(args.config) if args.config else {}
    for flag in _OPTIONS:
        v = getattr(args, flag.replace("-", "_"), None)
        if v is not None:
            raw[flag] = v
    kw = {}
    for flag, value in raw.items():
        name, parse, _ = _OPTIONS[flag]
        kw[name] = parse(value) if isinstance(value, str) else value
    return ex.ExperimentConfig(command=command, **kw)


# ------------------------------------------------------------------- output


def format_value(v) -> str:
    """CSV cell: floats in scientific notation with 4 significant digits,
    booleans as true/false, None as an empty field."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return f"{v:.3e}"
    return str(v)


def _output_path(cfg, command):
    if cfg.output == "-":
        return None
    if cfg.output:
        return Path(cfg.output)
    d = os.environ.get(OUTPUT_DIR_ENV)
    return Path(d) / f"{command}.csv" if d else None


def _write_rows(rows, path):
    fh = sys.stdout if path is None else open(path, "w", newline="", encoding="utf-8")
    try:
        writer = None
        n = 0
        for row in rows:
            if writer is None:
                writer = csv.writer(fh)
                writer.writerow(list(row))
            writer.writerow([format_value(v) for v in row.values()])
            fh.flush()
            n += 1
        return n
    finally:
        if path is not None:
            fh.close()


# --------------------------------------------------------------- solve I/O


def _is_csv(path, fmt):
    if fmt != "auto":
        return fmt == "csv"
    return str(path).lower().endswith((".csv", ".txt"))


def read_vector(path, complex_values=False, fmt="auto") -> np.ndarray:
    """Read reals (one per line/value) or complex values (``re, im`` pairs).

    Binary files are raw little-endian float64; complex values are stored
    interleaved.  CSV files may carry ``#`` comment lines.
    """
    if _is_csv(path, fmt):
        a = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=np.float64)
        if complex_values:
            if a.shape[1] != 2:
                raise ValueError(f"{path}: expected two columns (re, im)")
            return a[:, 0] + 1j * a[:, 1]
        if a.shape[1] != 1:
            raise ValueError(f"{path}: expected one column")
        return a[:, 0].copy()
    a = np.fromfile(path, dtype="<f8")
    if complex_values:
        if a.size % 2:
            raise ValueError(f"{path}: odd number of float64 values for complex data")
        return a[0::2] + 1j * a[1::2]
    return a.astype(np.float64)


def write_vector(path, u, fmt="auto"):
    """Write complex ``u`` as ``re, im`` CSV rows or interleaved ``<f8``."""
    u = np.asarray(u, dtype=np.complex128)
    if _is_csv(path, fmt):
        np.savetxt(path, np.column_stack((u.real, u.imag)), delimiter=",", fmt="%.17e",
                   header="re,im")
    else:
        np.column_stack((u.real, u.imag)).astype("<f8").tofile(path)


def _cmd_solve(args):
    x = read_vector(args.points, fmt=args.format)
    w = read_vector(args.frequencies, fmt=args.format)
    f = read_vector(args.values, complex_values=True, fmt=args.format)
    if f.size != x.size:
        raise ValueError(f"{f.size} values for {x.size} points")
    problem = NudftProblem(x, w)
    rho = _float_list(args.rho)[0] if args.rho else 1e-12
    R = _int_list(args.R)[0] if args.R else 0
    k = _opt_int(args.k) if args.k is not None else None
    u, info = ex.solve_problem(problem, f, rho=rho, k=k, R=R,
                               leaf_size=args.leaf_size or 128, refine=args.refine,
                               seed=args.seed or 0)
    write_vector(args.out, u, fmt=args.format)
    print(f"M={problem.M} N={problem.N} build={info['t_build']:.3e}s "
          f"pcg_steps={info['iterations']} residual={info['residual']:.3e}", file=sys.stderr)
    return 0


# ------------------------------------------------------------------- parser


def _add_common(p):
    p.add_argument("--config", help="key = value settings file; flags override it")
    for flag, (_, _, help_) in _OPTIONS.items():
        if flag == "full":
            p.add_argument("--full", action="store_const", const=True, default=None, help=help_)
        else:
            p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None, help=help_)
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastinudft",
        description="Fast direct solver and preconditioner for the type-3 inverse NUDFT.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "approx-error": "relative Frobenius error of A_fast vs R and alpha",
        "direct-solve": "stage timings and residuals of the direct solver",
        "iterative-compare": "CG vs PCG iteration counts and timings",
        "rank-probe": "eps-rank of the top-right block of B_fast^+ A",
        "error-decomp": "errors of B_fast, H_hss and A_fast vs rho",
    }
    for name in ex.COMMANDS:
        _add_common(sub.add_parser(name, help=helps[name]))
    ps = sub.add_parser("solve", help="solve one problem read from files")
    ps.add_argument("--points", required=True, help="sample points x_j in [0, 1)")
    ps.add_argument("--frequencies", required=True, help="frequencies w_k in [-1/2, N-1/2)")
    ps.add_argument("--values", required=True, help="values f_j as (re, im)")
    ps.add_argument("--out", required=True, help="output coefficients u_k as (re, im)")
    ps.add_argument("--format", choices=("auto", "csv", "bin"), default="auto",
                    help="file format; auto picks csv for .csv/.txt, else binary <f8")
    ps.add_argument("--rho", default=None, help="accuracy parameter (default 1e-12)")
    ps.add_argument("--R", default=None, help="extra columns on each side (default 0)")
    ps.add_argument("--k", default=None, help="HSS rank of H")
    ps.add_argument("--leaf-size", dest="leaf_size", type=int, default=None)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--refine", type=int, default=0,
                    help="up to this many PCG steps after the direct solve")
    ps.add_argument("--threads", type=int, default=None)
    ps.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "solve":
            set_fft_workers(args.threads or 1)
            return _cmd_solve(args)
        cfg = _config_from(args, args.command).resolved()
        set_fft_workers(cfg.threads)
        path = _output_path(cfg, args.command)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
        n = _write_rows(ex.run_command(cfg), path)
        if path is not None:
            print(f"wrote {n} rows to {path}", file=sys.stderr)
        return 0
    except (ValueError, OSError) as err:
        print(f"fastinudft: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
