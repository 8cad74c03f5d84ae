"""Smoke test for the msmstate extension.

Build first:  maturin develop -m crates/py/Cargo.toml --release
"""
import math
import pathlib
import sys

import msmstate

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def main():
    assert "transprob" in msmstate.analyses()

    vet = msmstate.Dataset.read_csv(FIXTURES / "veteran.csv")
    assert vet.n_rows == 137 and len(vet.preview(5)) == 5
    surv = msmstate.bind(vet, {"kind": "survival", "time": "time", "status": "status",
                               "covariates": ["celltype", "karno", "age"]})
    rank = surv.run("ranktest", {"group": "celltype"})["result"]
    assert rank["df"] == 3 and rank["p_value"] < 1e-4
    cox = surv.run("cox")["result"]
    for row in cox["coefficients"]:
        assert math.isclose(row["exp_coef"], math.exp(row["coef"]), rel_tol=1e-12)

    colon = msmstate.Dataset.read_csv(FIXTURES / "colonIDM.csv")
    idm = msmstate.bind(colon, '{"kind": "idm", "time1": "time1", "event1": "event1",'
                               ' "stime": "Stime", "event": "event"}')
    params = {"method": "aj", "s": 365, "grid": [730, 1095], "n_boot": 20}
    a = idm.run("transprob", params, seed=3)
    b = idm.run("transprob", params, seed=3)
    assert a == b and a["params"]["seed"] == 3
    for h in (1, 2):
        for k in range(2):
            total = sum(c["grid"][k]["est"] for c in a["result"]["curves"] if c["from"] == h)
            assert abs(total - 1) < 1e-10
    glob = idm.run("markov/global", {"transition": [2, 3]})["result"]["results"][0]
    assert abs(glob["p_value"] - 0.1543) <= 0.01

    sim = msmstate.simulate_idm(200, seed=1)
    assert sim.n_rows == 200
    msmstate.bind(sim, {"kind": "idm", "time1": "time1", "event1": "event1",
                        "stime": "Stime", "event": "event"}).run("counts")

    try:
        surv.run("ranktest", {"group": "missing"})
    except msmstate.ValidationError as e:
        assert "UnknownGroupColumn" in str(e)
    else:
        raise AssertionError("expected ValidationError")

    print("msmstate smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
