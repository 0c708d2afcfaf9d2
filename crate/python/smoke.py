"""Smoke test for the `gbe` extension module.

Build the module with `maturin develop -m crates/py/Cargo.toml`, or build
the cdylib with cargo and put `libgbe.so` on the path as `gbe.so`.
"""

import json
import math
import sys

import gbe


def main() -> int:
    w = gbe.World.generate(7, nodes=20, objects=4, regions=3)
    assert w.num_nodes == 20, w
    d = w.distances_from(0)
    assert d[0] == 0.0 and all(x >= 0.0 for x in d)
    for n, length in w.neighbors(0):
        assert math.isclose(d[n], length) or d[n] <= length
    assert gbe.World.from_json(w.to_json()).to_json() == w.to_json()

    h, e = gbe.pixel_to_polar(640.0, 240.0, 640.0, 480.0, math.pi / 2, math.pi / 2)
    assert abs(h - math.pi / 4) < 1e-12 and abs(e) < 1e-12

    cfg = {
        "world": {"nodes": 16, "regions": 3, "objects": 4},
        "train_houses": 1,
        "unseen_houses": 1,
        "held_out_objects": 1,
        "train_episodes_per_object": 2,
    }
    ds = gbe.Dataset.generate(json.dumps(cfg))
    sizes = ds.split_sizes()
    assert sizes["train"] == 6, sizes

    teacher = ds.baseline("val_unseen_house", agent="teacher")
    assert teacher["sr"] == 1.0 and teacher["spl"] == 1.0, teacher
    random = ds.baseline("val_unseen_house", agent="random", seed=3)
    assert 0.0 <= random["spl"] <= random["sr"] <= random["osr"] <= 1.0

    policy = gbe.Policy.train(ds, json.dumps({"iterations": 5, "lr": 1e-3}))
    assert len(policy.curve) == 5
    s = policy.evaluate(ds, "val_seen_instruction")
    assert s["sfpl"] <= s["sr"], s
    ckpt = json.loads(policy.checkpoint_json())
    assert sum(len(t["values"]) for t in ckpt["tensors"]) == policy.num_parameters

    print("gbe", gbe.__version__, "smoke ok:", w, "teacher", teacher["sr"], "random", random["sr"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
