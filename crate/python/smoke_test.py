"""Smoke test for the `sarsc` extension module.

Build and install the module first:

    pip install maturin
    pip install --no-build-isolation ./crates/python

then run `python python/smoke_test.py`.
"""

import json
import math
import os
import tempfile

import sarsc


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok    {what}")


def main():
    geom = sarsc.Geometry.benchmark(8)
    check(geom.n_samples == 64 and geom.n_cells == 64, "benchmark geometry shape")
    check(sarsc.Geometry.from_json(geom.to_json()) == geom, "geometry JSON round trip")

    d = sarsc.Dictionary(geom)
    check((d.rows, d.cols, d.domain) == (64, 64, "image"), "image-domain dictionary shape")
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.scdt")
        d.save(path)
        back = sarsc.Dictionary.load(path, geom)
        check(back.column(5) == d.column(5), "dictionary file round trip")

    out = sarsc.soft_threshold([3 + 4j, 0.5j], 1.0)
    check(abs(out[0] - (2.4 + 3.2j)) < 1e-12 and out[1] == 0, "complex soft threshold")

    scene = sarsc.Scene.random(geom, n_centers=1, seed=3)
    truth = scene.sparse_code()
    image = scene.image()
    check(len(image) == 64 and sum(abs(v) > 0 for v in truth) == 1, "one-scatterer scene")
    check(sarsc.Scene.from_json(scene.to_json()).centers == scene.centers, "scene JSON round trip")

    r = sarsc.omp(d, image, k_atoms=1)
    support = sarsc.support_match(scene, r.code)
    check(support["precision"] == 1.0 and support["recall"] == 1.0, "OMP finds the scatterer")
    check(sarsc.psnr(d, image, d.reconstruct(r.code)) > 100.0, "OMP reconstruction PSNR")

    step = 0.9 / d.lipschitz()
    r = sarsc.ista(d, image, step=step, lam=1.0, max_iters=300, tol=0.0)
    check(r.iterations == 300 and r.nnz >= 1, "ISTA runs every iteration with tol = 0")
    try:
        sarsc.ista(d, image, step=1000.0 / d.lipschitz(), threshold=0.0, max_iters=50)
        check(False, "unstable ISTA step raises")
    except RuntimeError as e:
        check("step size" in str(e), "unstable ISTA step raises")

    params = sarsc.UnfoldedParams.constant(3, step, step * 0.5)
    r = sarsc.unfolded(d, image, params, lam=1.0)
    check(r.iterations == 3, "unfolded runs a fixed number of stages")
    r = sarsc.amp(d, image, lam=1.0)
    check(all(math.isfinite(abs(v)) for v in r.code), "AMP returns a finite code")

    signals = [sarsc.Scene.random(geom, n_centers=2, snr_db=20.0, seed=s).image() for s in range(4)]
    trained, report = sarsc.train(d, signals, params, epochs=0, lam=1.0)
    check(trained.step_sizes == params.step_sizes, "zero-epoch training keeps the parameters")
    check(json.loads(report)["initial_loss"] == json.loads(report)["final_loss"], "training report")

    try:
        sarsc.psnr(d, [0j] * 64, image)
        check(False, "zero reference raises")
    except ValueError:
        check(True, "zero reference raises")

    print("smoke test passed")


if __name__ == "__main__":
    main()
