#!/usr/bin/env python3
"""Render figures from the CSV outputs of the sepmix CLI.

Stateless: every plotted number comes from an input CSV; nothing is
recomputed here.  One figure per invocation:

    render.py --kind shape       --in eigenfunction_1.csv [...] --out shape.png
    render.py --kind gap-scaling --in eigenvalues_A.csv [...]   --out gaps.png
    render.py --kind tv-curve    --in tv_curve.csv              --out tv.png
    render.py --kind bracket     --in cutoff.csv                --out bracket.png

Outputs are pixel-deterministic for fixed inputs on a fixed machine.
"""

from __future__ import annotations

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SCHEMAS = {
    "shape": ["x", "g", "reference_shape"],
    "gap-scaling": ["index", "eigenvalue", "N2_scaled"],
    "tv-curve": ["t", "d", "lower_sandwich", "upper_sandwich"],
    "bracket": ["N", "k", "eps", "lower", "upper", "predicted_gap",
                "predicted_universal", "exact_tmix", "ratio_upper_lower",
                "wilson_flag", "coalescence_censored"],
}

SAVE_OPTS = dict(dpi=120, metadata={"Software": "sepmix-render"})


class SchemaMismatch(ValueError):
    pass


def read_table(path: str, kind: str) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    want = SCHEMAS[kind]
    if header != want:
        missing = [c for c in want if c not in header]
        extra = [c for c in header if c not in want]
        raise SchemaMismatch(
            f"{path}: header mismatch for kind {kind!r}: "
            f"missing {missing or 'none'}, unexpected {extra or 'none'}, "
            f"order expected {want}"
        )
    cols = {name: [] for name in header}
    for row in body:
        for name, val in zip(header, row):
            cols[name].append(val)
    return cols


def _floats(cols, name):
    return [float(v) for v in cols[name]]


def render_shape(paths, out):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for path in paths:
        cols = read_table(path, "shape")
        x = _floats(cols, "x")
        ax.plot(x, _floats(cols, "g"), lw=1.5, label=f"{_label(path)}")
        ax.plot(x, _floats(cols, "reference_shape"), lw=1.0, ls="--",
                label=f"{_label(path)} reference")
    ax.set_xlabel("site index x")
    ax.set_ylabel("eigenfunction value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, **SAVE_OPTS)
    plt.close(fig)


def render_gap_scaling(paths, out):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for path in paths:
        cols = read_table(path, "gap-scaling")
        idx = _floats(cols, "index")
        ax.plot(idx, _floats(cols, "N2_scaled"), marker="o", ms=4, lw=1.0,
                label=_label(path))
    if paths:
        idx = sorted(set(idx))
        ax.plot(idx, [i * i for i in idx], color="k", ls=":", lw=1.0,
                label="square-integer reference")
    ax.set_xlabel("mode index i")
    ax.set_ylabel(r"scaled decay rate $N^2 \lambda_i / \pi^2$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, **SAVE_OPTS)
    plt.close(fig)


def render_tv_curve(paths, out, eps_lines=(0.25, 0.05)):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for path in paths:
        cols = read_table(path, "tv-curve")
        t = _floats(cols, "t")
        ax.plot(t, _floats(cols, "d"), lw=1.6, label=f"{_label(path)} distance")
        ax.plot(t, _floats(cols, "lower_sandwich"), lw=0.8, ls="--",
                label="relaxation lower envelope")
        ax.plot(t, _floats(cols, "upper_sandwich"), lw=0.8, ls="--",
                label="relaxation upper envelope")
    for e in eps_lines:
        ax.axhline(e, color="gray", lw=0.6, ls=":")
    ax.set_xlabel("time t")
    ax.set_ylabel("total-variation distance to equilibrium")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, **SAVE_OPTS)
    plt.close(fig)


def render_bracket(paths, out):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for path in paths:
        cols = read_table(path, "bracket")
        n = _floats(cols, "N")
        lower = _floats(cols, "lower")
        upper = _floats(cols, "upper")
        ax.fill_between(n, lower, upper, alpha=0.25, label="lower/upper bracket")
        ax.plot(n, _floats(cols, "predicted_universal"), marker="s", ms=4,
                lw=1.0, label="cutoff prediction")
        exact = [(x, float(v)) for x, v in zip(n, cols["exact_tmix"])
                 if v not in ("", "nan")]
        if exact:
            ax.plot([x for x, _ in exact], [v for _, v in exact], marker="x",
                    ms=5, lw=0.8, label="exact mixing time")
    ax.set_xlabel("segment length N")
    ax.set_ylabel("time")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, **SAVE_OPTS)
    plt.close(fig)


RENDERERS = {
    "shape": render_shape,
    "gap-scaling": render_gap_scaling,
    "tv-curve": render_tv_curve,
    "bracket": render_bracket,
}


def _label(path: str) -> str:
    name = path.rsplit("/", 1)[-1]
    return name[:-4] if name.endswith(".csv") else name


def render(kind: str, paths, out: str) -> str:
    if kind not in RENDERERS:
        raise ValueError(f"unknown figure kind {kind!r}")
    RENDERERS[kind](list(paths), out)
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kind", required=True, choices=sorted(RENDERERS))
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    help="input CSV file(s)")
    ap.add_argument("--out", required=True, help="output image path")
    args = ap.parse_args(argv)
    try:
        render(args.kind, args.inputs, args.out)
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
