"""Regenerate reference_solutions.json from PYPOWER (independent of nminus1).

    python tests/data/make_reference.py

Stores, per case: the solved bus voltages, branch current magnitudes
|S_from| / Vm_from and |S_to| / Vm_to, and the dense Ybus.
"""

import json
import warnings
from pathlib import Path

import numpy as np
from pypower.api import case14, case118, ppoption, runpf
from pypower.ext2int import ext2int
from pypower.makeYbus import makeYbus

warnings.simplefilter("ignore")


def reference(ppc):
    res, ok = runpf(ppc, ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-13, PF_MAX_IT=30))
    assert ok
    bus, br = res["bus"], res["branch"]
    base = res["baseMVA"]
    idx = {int(b): i for i, b in enumerate(bus[:, 0])}
    vm = bus[:, 7]
    f = np.array([idx[int(b)] for b in br[:, 0]])
    t = np.array([idx[int(b)] for b in br[:, 1]])
    s_f = np.hypot(br[:, 13], br[:, 14]) / base
    s_t = np.hypot(br[:, 15], br[:, 16]) / base
    i_ppc = ext2int(ppc)
    ybus, _, _ = makeYbus(i_ppc["baseMVA"], i_ppc["bus"], i_ppc["branch"])
    y = ybus.toarray()
    return {
        "vm": vm.tolist(),
        "va": np.radians(bus[:, 8]).tolist(),
        "br_i_or": (s_f / vm[f]).tolist(),
        "br_i_ex": (s_t / vm[t]).tolist(),
        "ybus_re": y.real.tolist(),
        "ybus_im": y.imag.tolist(),
    }


if __name__ == "__main__":
    out = {"case14": reference(case14()), "case118": reference(case118())}
    Path(__file__).with_name("reference_solutions.json").write_text(json.dumps(out))
