import dataclasses
import math

import numpy as np
import pytest

from pdcp_greeks import cli
from pdcp_greeks import experiments as ex
from pdcp_greeks.config import build_config, dump_config
from pdcp_greeks.market import PUT_1D, PUT_ON_AVERAGE_2D, InvalidParameterError, MarketParams2D
from pdcp_greeks.stepping import preset


def test_estimate_order_exact():
    Ns = [10, 20, 40, 80]
    assert ex.estimate_order([(n, 3.0 / n) for n in Ns]) == pytest.approx(1.0, abs=1e-12)
    assert ex.estimate_order([(n, 3.0 / n**2) for n in Ns]) == pytest.approx(2.0, abs=1e-12)


def test_estimate_order_noisy():
    rng = np.random.default_rng(0)
    Ns = np.arange(10, 101)
    pairs = [(n, 5.0 * n**-1.5 * (1 + 0.01 * rng.normal())) for n in Ns]
    assert ex.estimate_order(pairs) == pytest.approx(1.5, abs=0.05)


def test_estimate_order_rejects(caplog):
    with pytest.raises(ValueError):
        ex.estimate_order([(10, 1.0), (20, 0.5)])
    with pytest.raises(ValueError):
        ex.estimate_order([(10, 1.0), (20, 0.0), (40, 0.25)])
    assert "excluded" in caplog.text
    assert ex.estimate_order([(10, 1.0), (20, 0.0), (40, 0.25), (80, 0.125)]) > 0


def test_roi_defaults_and_errors(problem_1d):
    r1, r2 = ex.RegionOfInterest.default(1, 100.0), ex.RegionOfInterest.default(2, 100.0)
    assert (r1.lo, r1.hi) == pytest.approx((80.0, 120.0), rel=1e-15)
    assert (r2.lo, r2.hi) == pytest.approx((90.0, 110.0), rel=1e-15)
    with pytest.raises(ValueError):
        ex.RegionOfInterest(120.0, 80.0)
    with pytest.raises(ex.EmptyRegionError):
        ex.RegionOfInterest(100.1, 100.2).mask(problem_1d.grids)
    with pytest.raises(ValueError):
        ex.RegionOfInterest(80.0, 600.0).mask(problem_1d.grids)


def test_roi_max_error(problem_1d):
    g = problem_1d.grids
    s = g[0].points
    roi = ex.RegionOfInterest(80.0, 120.0)
    u = np.sin(s)
    assert ex.roi_max_error(u, u, g, roi) == 0.0
    v = u.copy()
    v[np.argmin(np.abs(s - 100))] += 1e-3
    assert ex.roi_max_error(u, v, g, roi) == pytest.approx(1e-3)
    w = v.copy()
    w[s < 80] += 5.0
    w[s > 120] -= 7.0
    assert ex.roi_max_error(u, w, g, roi) == ex.roi_max_error(u, v, g, roi)
    with pytest.raises(ValueError):
        ex.roi_max_error(u, u[:-1], g, roi)


def test_reference_cache_round_trip(tmp_path, problem_1d):
    cache = ex.ReferenceCache(tmp_path)
    r1 = ex.build_reference(PUT_1D, 200, cache, problem_1d, N_ref=200)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == [f"{r1.key}.bin", f"{r1.key}.txt"]
    u, meta = cache.load(r1.key)
    np.testing.assert_array_equal(u, r1.u_ref)
    assert meta["protocol"]["N"] == 200 and meta["length"] == 200
    r2 = ex.build_reference(PUT_1D, 200, cache, problem_1d, N_ref=200)
    np.testing.assert_array_equal(r2.u_ref, r1.u_ref)
    # the key depends on every protocol input
    assert ex.reference_key(PUT_1D, 200, 200) != ex.reference_key(PUT_1D, 201, 200)
    assert ex.reference_key(PUT_1D, 200, 200) != ex.reference_key(PUT_1D, 200)
    other = dataclasses.replace(PUT_1D, sigma=0.3)
    assert ex.reference_key(other, 200) != ex.reference_key(PUT_1D, 200)


def test_reference_cache_integrity(tmp_path, caplog):
    cache = ex.ReferenceCache(tmp_path)
    cache.store("abc", np.arange(4.0), {"x": 1})
    assert cache.load("abc")[0].tolist() == [0, 1, 2, 3]
    raw = bytearray((tmp_path / "abc.bin").read_bytes())
    raw[0] ^= 0xFF
    (tmp_path / "abc.bin").write_bytes(bytes(raw))
    assert cache.load("abc") is None
    assert "integrity" in caplog.text
    assert cache.load("missing") is None


def test_reference_1d_matches_penalty(problem_1d, reference_1d):
    from pdcp_greeks.stepping import solve_pdcp

    u, _ = solve_pdcp(problem_1d, preset("dirka", N=2000))
    mask = ex.RegionOfInterest.default(1, 100.0).mask(problem_1d.grids)
    assert np.abs(u - reference_1d.u_ref)[mask].max() <= 1e-5 * PUT_1D.K
    assert 0 < ex.value_at(problem_1d, reference_1d.u_ref, 100.0) < PUT_1D.K


def test_reference_2d_symmetry():
    prm = MarketParams2D(0.35, 0.35, 0.5, 0.01, 0.5, 100.0, 500.0)
    p = ex.assemble(prm, 30)
    ref = ex.build_reference(prm, 30, problem=p, N_ref=40)
    U = ref.u_ref.reshape(30, 30)
    np.testing.assert_allclose(U, U.T, atol=1e-8)
    assert np.all(ref.u_ref >= p.u0 - 1e-4 * prm.K)


def test_sweep_rows_and_failures(problem_1d, reference_1d, tmp_path):
    rep = ex.convergence_sweep(PUT_1D, 200, ["be", "dirka"], (10, 20, 40), reference=reference_1d,
                               problem=problem_1d)
    assert [(r.method, r.N, r.quantity) for r in rep.rows[:4]] == [
        ("be", 10, "value"), ("be", 10, "delta"), ("be", 10, "gamma"), ("be", 20, "value")]
    assert all(r.error >= 0 for r in rep.rows) and not rep.failed()
    bad = ex.convergence_sweep(PUT_1D, 200, ["cn"], (10,), reference=reference_1d, problem=problem_1d,
                               penalty=dataclasses.replace(ex.PenaltyConfig(), max_penalty_iters=1, tol=1e-30))
    assert len(bad.failed()) == 3 and all(math.isnan(r.error) for r in bad.rows)
    ex.write_errors_csv(bad, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[1].endswith(",nan")
    ex.write_orders_csv(rep, tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "method,m,grid_kind,quantity,n_min,n_max,order" and len(lines) == 7


def test_early_exercise_point(problem_1d, reference_1d):
    s_star = ex.early_exercise_point(problem_1d, reference_1d.u_ref, 1e-8 * PUT_1D.K)
    assert 57 <= s_star <= 59


# --------------------------------------------------------------------------- config / CLI


def test_config_defaults_match_presets():
    c1 = build_config(preset="1d")
    assert c1.params == PUT_1D and c1.m == 200 and c1.n_list == (10, 20, 40, 80)
    assert c1.methods == ("be", "cn", "dirka", "dirkb", "lobatto")
    c2 = build_config(preset="2d")
    assert c2.params == PUT_ON_AVERAGE_2D and c2.m == 100 and c2.dims == 2


def test_config_round_trip():
    cfg = build_config(preset="2d", m=60, methods="dirka,be", n_list="10..12", roi="95,105", grid="uniform")
    text = dump_config(cfg)
    again = build_config(text)
    assert again == cfg and dump_config(again) == text
    assert again.n_list == (10, 11, 12) and again.roi == (95.0, 105.0)


@pytest.mark.parametrize(
    "kwargs, word",
    [
        (dict(N=0), "N"),
        (dict(n_list="10,0"), "N"),
        (dict(m=2), "m"),
        (dict(methods="rk4"), "method"),
        (dict(grid="cubic"), "grid"),
        (dict(market={"s_max": "150"}), "s_max"),
        (dict(market={"vol": "0.2"}), "unknown"),
        (dict(roi="120,80"), "roi"),
        (dict(preset="3d"), "preset"),
    ],
)
def test_config_rejects(kwargs, word):
    with pytest.raises(InvalidParameterError, match=word):
        build_config(**kwargs)


def test_cli_invalid_exits_nonzero(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[market]\ns_max = 150\n")
    assert cli.main(["price", "--config", str(ini), "--out", str(tmp_path)]) != 0
    assert "s_max must exceed 2K" in capsys.readouterr().err
    assert cli.main(["price", "--N", "0", "--out", str(tmp_path / "x")]) != 0
    assert "N must be at least 1" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_cli_price_1d(tmp_path, capsys):
    from oracles import crr_american_put

    assert cli.main(["price", "--preset", "1d", "--method", "dirka", "--N", "100", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    value = float(out.split("u(K, T) = ")[1].split()[0])
    tree = crr_american_put(100.0, 100.0, 0.02, 0.4, 0.5, steps=50_000)
    assert abs(value - tree) <= 0.005 * tree
    assert (tmp_path / "surfaces.csv").exists() and (tmp_path / "traces.csv").exists()
    assert "penalty iterations" in out


def test_cli_show_config(capsys):
    assert cli.main(["show-config", "--preset", "1d"]) == 0
    text = capsys.readouterr().out
    assert "[market]" in text and "sigma = 0.4" in text and "large = 10000000.0" in text


def test_cli_converge_and_reference(tmp_path, capsys):
    args = ["--preset", "1d", "--m", "100", "--reference-n", "200", "--cache-dir", str(tmp_path / "cache")]
    assert cli.main(["reference", *args, "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "reference.csv").exists()
    assert cli.main(["converge", *args, "--methods", "be,dirka", "--n-list", "10,20,40",
                     "--jobs", "2", "--out", str(tmp_path / "c")]) == 0
    errors = (tmp_path / "c" / "errors.csv").read_text().splitlines()
    assert errors[0] == "method,m,N,grid_kind,quantity,error" and len(errors) == 1 + 2 * 3 * 3
    capsys.readouterr()
    # a failing run gives a nonzero exit but still writes the completed rows
    ini = tmp_path / "strict.ini"
    ini.write_text("[penalty]\nmax_penalty_iters = 1\ntol = 1e-30\n")
    rc = cli.main(["converge", *args, "--config", str(ini), "--methods", "cn,be", "--n-list", "10,20,40",
                   "--jobs", "1", "--out", str(tmp_path / "f")])
    assert rc != 0
    assert "FAILED" in capsys.readouterr().err
    rows = (tmp_path / "f" / "errors.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 3 * 3 and any(r.endswith(",nan") for r in rows)
