"""Rebuild full-precision geometries from the rounded published tables.

The published slit half-widths and centres are rounded to about four digits,
which moves the coupling vector d away from its tabulated value and destroys
the exact period lattice of the first geometry.  This script

* solves for the half-widths that reproduce the tabulated d exactly, and
* for the first geometry, snaps every slit centre to the nearest point of the
  k~ = 173 lattice (plane offsets +a / -a cancel in every path sum).

Usage: python3 tools/reconstruct_configs.py [--out configs]
"""
from __future__ import annotations

import argparse
from dataclasses import replace
from decimal import Decimal
from pathlib import Path

import mpmath as mp

from qpc.config import dumps_config, parse_config_text
from qpc.numerics import PrecisionPolicy
from qpc.propagator import coupling_for

ROOT = Path(__file__).resolve().parent.parent
WORK_DIGITS = 60
BETA_DIGITS = 22
CENTER_DIGITS = 22

TABLE_D = {
    "sim1": ["-11825366721.5", "-114848915118.2"],
    "sim2": ["-36852879374.3", "-37760536805", "-25967723254.4", "-26078529374"],
}
SIM1_PERIOD = 173
# common lattice offset; any value in [-0.0360345, -0.0360273] keeps every
# centre within 0.05 nm of its printed value
SIM1_OFFSET = "-0.036031"


def _dec(x, digits) -> Decimal:
    return Decimal(mp.nstr(x, digits, strip_zeros=False, min_fixed=-1, max_fixed=-1))


def coupling_d(consts, geom, betas):
    g = replace(geom, slit_half_widths=tuple(Decimal(mp.nstr(b, 40)) for b in betas))
    with PrecisionPolicy(WORK_DIGITS).context():
        c = coupling_for(g, consts)
        return [mp.mpf(str(v)) for v in c.d_vec]


def solve_betas(consts, geom, target):
    target = [mp.mpf(t) for t in target]
    scale = mp.mpf("1e-9")

    def residual(*b_nm):
        d = coupling_d(consts, geom, [b * scale for b in b_nm])
        return [(di - ti) / 1e9 for di, ti in zip(d, target)]

    start = [mp.mpf(str(b)) / scale for b in geom.slit_half_widths]
    sol = mp.findroot(residual, start)
    sol = [sol] if geom.slit_plane_count == 1 else list(sol)
    return [b * scale for b in sol]


def snap_centers(geom, d, sampling_interval, period, offset):
    Ts = mp.mpf(str(sampling_interval))
    a = mp.mpf(offset)
    out = []
    for j, (dj, plane) in enumerate(zip(d, geom.slit_centers)):
        s = period * Ts / (2 * mp.pi) * dj
        off = a if j == 0 else -a
        out.append(tuple(_dec((mp.nint(s * mp.mpf(str(x)) - off) + off) / s, CENTER_DIGITS) for x in plane))
    return tuple(out)


def rebuild(name: str, out_dir: Path) -> Path:
    mp.mp.dps = WORK_DIGITS
    text = (ROOT / "configs" / f"{name}_printed.toml").read_text(encoding="utf-8")
    consts, geom, exp = parse_config_text(text)
    betas = solve_betas(consts, geom, TABLE_D[name])
    geom = replace(geom, slit_half_widths=tuple(_dec(b, BETA_DIGITS) for b in betas))
    if name == "sim1":
        d = coupling_d(consts, geom, [mp.mpf(str(b)) for b in geom.slit_half_widths])
        geom = replace(geom, slit_centers=snap_centers(geom, d, exp.sampling_interval, SIM1_PERIOD, SIM1_OFFSET))
    path = out_dir / f"{name}.toml"
    header = f"# Generated by tools/reconstruct_configs.py from {name}_printed.toml.\n"
    path.write_text(header + dumps_config(consts, geom, exp), encoding="utf-8")
    return path


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(ROOT / "configs"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("sim1", "sim2"):
        print(rebuild(name, out))


if __name__ == "__main__":
    main()
