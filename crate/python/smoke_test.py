"""Smoke test for the locklab_py extension.

Build first:  cargo build -p locklab-py --features extension-module
Then run:     python3 python/smoke_test.py
"""

import hashlib
import hmac
import importlib.machinery
import importlib.util
import json
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import locklab_py  # installed wheel
        return locklab_py
    except ImportError:
        pass
    for profile in ("debug", "release"):
        lib = ROOT / "target" / profile / "liblocklab_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("locklab_py", str(lib))
            spec = importlib.util.spec_from_loader("locklab_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("locklab_py not built; run: cargo build -p locklab-py --features extension-module")


def main():
    ll = load()

    assert ll.crc16(b"123456789") == 0x29B1
    frame = ll.encode_frame(0x04, b"\x01\x02")
    assert frame[:4] == b"\xa5\x04\x02\x00"
    assert ll.decode_frame(frame) == (0x04, b"\x01\x02")

    key, serial, nonce = bytes(range(16)), b"S" * 8, b"N" * 16
    want = hmac.new(key, serial + nonce, hashlib.sha256).digest()[:16]
    assert ll.derive_session_key(key, serial, nonce) == want
    assert ll.ecb_decrypt(key, ll.ecb_encrypt(key, b"hello")) == b"hello"

    assert "droplock_e2e" in ll.scenario_names()
    run = ll.run_scenario("droplock_e2e", "vulnerable", seed=1)
    assert run.outcome == "SUCCEEDS" and run.expectation_met
    assert run.harvested == 1 and run.cloud_registry_entries == 0
    assert json.loads(run.to_json())["schema"] == "locklab.scenario/1"
    assert run.to_json() == ll.run_scenario("droplock_e2e", "vulnerable", seed=1).to_json()

    blocked = ll.run_scenario("droplock_e2e", "hardened", ["session_auth", "dfu_integrity"])
    assert blocked.outcome == "FAILS_AT:harvest:BLOCKED_BY_ISOLATION", blocked.outcome

    profile = json.loads(ll.security_profile("hardened", ["C04"]))
    assert profile["sensor_class"] == 1

    m = ll.ablation_matrix(seed=1)
    assert m.sound
    assert m.cell("H", "ablate:H") == "FAILS_AT:dfu_receive:INTEGRITY_FAILED"
    assert m.cell("H", "vulnerable") == "SUCCEEDS"

    assert ll.scan("hardened") == "GENUINE"
    assert ll.scan(impostor=True) == "UNVERIFIED"

    try:
        ll.run_scenario("nope")
    except KeyError as e:
        assert "UNKNOWN_SCENARIO" in str(e)
    else:
        raise AssertionError("unknown scenario accepted")

    print("locklab_py smoke test passed")


if __name__ == "__main__":
    main()
