"""Smoke test for the rgi extension.

Build and install first:  pip install ./crates/python
Then run:                 python python/smoke_test.py
"""

import json
import math
import os
import tempfile

import rgi

INPAINT = json.dumps({"ops": [{"kind": "inpaint", "level": "XS", "seed": 9}]})
SHORT = [(0.08, 20), (0.02, 20), (0.005, 20)]


def main():
    g = rgi.Generator.generate(seed=3, resolution=32, channels=8, latent_dim=16, mapping_layers=2)
    clean = g.sample(5)
    assert (clean.height, clean.width) == (32, 32)
    assert all(0.0 <= v <= 1.0 for v in clean.data())

    target = rgi.degrade(clean, INPAINT)
    assert rgi.fidelity(clean, target, INPAINT) == 0.0
    assert rgi.accuracy(clean, clean) == 0.0

    run = rgi.restore(g, target, INPAINT, seed=1, schedule=SHORT)
    assert len(run.losses) == 60
    assert all(math.isfinite(x) for x in run.losses)
    assert run.phase_objectives[2] <= run.initial_objective
    fid = rgi.patch_fid([clean, target], [clean, run.image], crops_per_image=4, crop_size=16, seed=2)
    assert math.isfinite(fid) and fid >= 0.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "restored.ppm")
        run.image.save(path)
        assert rgi.Image.load(path).width == 32
        g.save(os.path.join(d, "g.ckpt"))
        assert rgi.Generator.load(os.path.join(d, "g.ckpt")).resolution == 32

    try:
        rgi.degrade(clean, '{"ops":[{"kind":"blur"}]}')
    except ValueError:
        pass
    else:
        raise AssertionError("bad spec accepted")

    ok, report = rgi.gradcheck()
    assert ok, report
    print(f"ok: objective {run.initial_objective:.4f} -> {run.phase_objectives[2]:.4f}, patch-FID {fid:.4f}")


if __name__ == "__main__":
    main()
