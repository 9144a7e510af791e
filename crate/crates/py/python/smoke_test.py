"""Smoke test for the qcavity extension module."""

import json
import math
import tempfile

import qcavity


def main():
    p = qcavity.SystemParams(Delta=50.0, kappa=0.0, tau=0.0)
    assert math.isclose(p.detuning(), 50.0)
    assert p.gate_time() > 0

    h = qcavity.hamiltonian("reduced", p, 2)
    assert len(h) == 9 and all(len(r) == 9 for r in h)
    assert len(qcavity.hamiltonian("full", p, 2)) == 27

    ideal = qcavity.ideal_phase_gate()
    assert math.isclose(qcavity.gate_fidelity(ideal, ideal), 1.0)

    report = qcavity.extract_gate("reduced", p)
    assert report.fidelity > 0.999999, report
    assert abs(report.extracted_gate[2][2] + 1) < 1e-6
    assert json.loads(report.to_json())["model"] == "reduced"

    area = qcavity.surface_integral(2 * math.pi / 3)
    assert math.isclose(area, 3 * math.pi, rel_tol=1e-6), area

    try:
        qcavity.parse_config('{"task": "gate", "params": {"kapa": 1}}')
    except ValueError as e:
        assert "params.kapa" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    cfg = '{"task": "gate", "model": "reduced"}'
    canonical = json.loads(qcavity.parse_config(cfg))
    assert canonical["task"] == "gate"
    with tempfile.TemporaryDirectory() as d:
        summary = qcavity.run_config(cfg, d)
        assert summary

    print("qcavity smoke test ok:", report)


if __name__ == "__main__":
    main()
