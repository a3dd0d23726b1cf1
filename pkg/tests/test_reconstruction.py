import importlib.util
from decimal import Decimal

import pytest
from gmpy2 import mpfr

from qpc.numerics import relative_difference

from conftest import CONFIGS, ROOT, coupling, load

spec = importlib.util.spec_from_file_location("reconstruct_configs", ROOT / "tools" / "reconstruct_configs.py")
reconstruct = importlib.util.module_from_spec(spec)
spec.loader.exec_module(reconstruct)


@pytest.mark.parametrize("name", ["sim1", "sim2"])
def test_rounds_to_printed_values(name):
    _, exact, _ = load(name)
    _, printed, _ = load(f"{name}_printed")
    nm = Decimal("1e-9")
    step = Decimal("0.1") if name == "sim1" else Decimal(1)
    for b, p in zip(exact.slit_half_widths, printed.slit_half_widths):
        assert (b / nm).quantize(step) == p / nm
    for plane, printed_plane in zip(exact.slit_centers, printed.slit_centers):
        for x, p in zip(plane, printed_plane):
            assert abs(x - p) <= Decimal("0.05") * nm
    assert exact.plane_distances == printed.plane_distances


@pytest.mark.parametrize("name", ["sim1", "sim2"])
def test_coupling_hits_table_exactly(name):
    for d, t in zip(coupling(name).d_vec, reconstruct.TABLE_D[name]):
        assert relative_difference(d, mpfr(t)) < mpfr("1e-20")


def test_tool_reproduces_configs(tmp_path):
    for name in ("sim1", "sim2"):
        out = reconstruct.rebuild(name, tmp_path)
        assert out.read_bytes() == (CONFIGS / f"{name}.toml").read_bytes()
