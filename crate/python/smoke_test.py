"""Smoke test for the ampsize extension module.

Build first:  pip install --no-build-isolation -e crates/python
"""
import pathlib

import ampsize

ROOT = pathlib.Path(__file__).resolve().parents[1]
CORE = ROOT / "crates" / "core"
NETLIST = (CORE / "fixtures" / "netlists" / "2smc_n.sp").read_text()
TARGETS = (CORE / "assets" / "targets" / "t180.cfg").read_text()


def main():
    net = ampsize.parse_netlist(NETLIST)
    print("netlist", net["name"], "devices", len(net["instances"]))

    op = (CORE / "fixtures" / "ops" / "triode_row_op.json").read_text()
    table = ampsize.calibrate_op(op)
    m1 = next(r for r in table["rows"] if r["device"] == "M1")
    assert abs(m1["agm"] - 0.356) < 5e-4, m1["agm"]
    print(ampsize.calibration_text(op).splitlines()[1])

    outcome = ampsize.plan_exec(NETLIST, TARGETS)
    gm1 = outcome["bindings"]["gm1"]
    assert abs(gm1 - 314.159e-6) < 1e-9, gm1
    print("gm1 =", gm1)

    meas = ampsize.simulate(NETLIST, gbw_target=100e6)
    print("metrics", {k: round(v, 4) for k, v in meas["metrics"].items() if v is not None})

    result = ampsize.run_campaign(NETLIST, TARGETS, max_rounds=6)
    print("converged", result["converged"], "rounds", result["rounds_used"])
    assert result["converged"]
    print("ok")


if __name__ == "__main__":
    main()
