import json
import math

import numpy as np
import pytest

from diffenh.metrics import (
    SI_SDR_CAP,
    MetricReport,
    aggregate_reports,
    evaluate_pair,
    si_sdr,
    write_report,
)
from diffenh.signal import Waveform


def wf(x):
    return Waveform(np.asarray(x, dtype=np.float64), sample_rate=16000)


def test_perfect_and_scaled_estimates_hit_cap():
    rng = np.random.default_rng(0)
    ref = wf(rng.standard_normal(256))
    assert si_sdr(ref, ref) == SI_SDR_CAP
    scaled = wf(3.7 * ref.samples)
    assert si_sdr(scaled, ref) == SI_SDR_CAP


def test_orthogonal_noise_is_exact():
    # reference and disturbance orthogonal by construction, so the projection
    # leaves exactly the planted power ratio
    n = 1024
    t = np.arange(n)
    ref = np.sin(2 * np.pi * 5 * t / n)
    dist = np.sin(2 * np.pi * 11 * t / n)
    ref_p = float(np.dot(ref, ref))
    dist_p = float(np.dot(dist, dist))
    for target_db in (-10.0, 0.0, 7.5, 20.0):
        g = math.sqrt(ref_p / dist_p * 10 ** (-target_db / 10.0))
        got = si_sdr(wf(ref + g * dist), wf(ref))
        assert abs(got - target_db) < 1e-9


def test_negative_infinity_when_estimate_orthogonal():
    ref = wf([1.0, 1.0, 0.0, 0.0])
    est = wf([1.0, -1.0, 0.0, 0.0])
    assert si_sdr(est, ref) == -math.inf


def test_errors():
    with pytest.raises(ValueError):
        si_sdr(wf(np.ones(8)), wf(np.ones(9)))
    with pytest.raises(ValueError):
        si_sdr(wf(np.ones(8)), wf(np.zeros(8)))


def test_zero_mean_flag():
    rng = np.random.default_rng(1)
    ref = rng.standard_normal(128)
    est = ref + 0.1 * rng.standard_normal(128)
    base = si_sdr(wf(est), wf(ref), zero_mean=False)
    shifted = si_sdr(wf(est + 5.0), wf(ref + 2.0), zero_mean=True)
    ref0 = ref - ref.mean()
    est0 = est - est.mean()
    assert shifted == pytest.approx(si_sdr(wf(est0), wf(ref0)), abs=1e-12)
    assert shifted != pytest.approx(base, abs=1e-6) or np.allclose(ref.mean(), 0)


def test_report_delta_and_lines():
    r = MetricReport(si_sdr=8.25, input_si_sdr=3.0)
    assert r.delta == pytest.approx(5.25)
    lines = r.as_lines()
    assert "si_sdr_db=8.2500" in lines
    assert "delta_db=5.2500" in lines
    assert r.as_dict()["delta_db"] == pytest.approx(5.25)


def test_evaluate_pair():
    rng = np.random.default_rng(2)
    clean = wf(rng.standard_normal(200))
    noisy = wf(clean.samples + rng.standard_normal(200))
    rep = evaluate_pair(noisy, clean, clean)
    assert rep.si_sdr == SI_SDR_CAP
    assert rep.input_si_sdr < rep.si_sdr


def test_aggregate_halfwidth():
    reports = [MetricReport(si_sdr=v, input_si_sdr=0.0) for v in (1.0, 2.0, 3.0, 4.0)]
    agg = aggregate_reports(reports, labels=list("abcd"))
    a = agg["aggregate"]
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    assert a["count"] == 4
    assert a["si_sdr_mean_db"] == pytest.approx(2.5)
    assert a["si_sdr_halfwidth_db"] == pytest.approx(1.96 * vals.std(ddof=1) / 2.0)
    assert [f["file"] for f in agg["files"]] == list("abcd")


def test_write_report_roundtrip(tmp_path):
    payload = aggregate_reports([MetricReport(si_sdr=1.0, input_si_sdr=0.5)])
    out = tmp_path / "report.json"
    write_report(out, payload)
    loaded = json.loads(out.read_text())
    assert loaded["aggregate"]["count"] == 1
    assert loaded["files"][0]["si_sdr_db"] == pytest.approx(1.0)
